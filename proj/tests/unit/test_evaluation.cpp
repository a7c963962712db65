#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <filesystem>
#include <fstream>

#include "ciit/evaluation/evaluate.hpp"
#include "ciit/evaluation/pca.hpp"

using namespace ciit;
using namespace ciit::eval;
using tasks::Example;
using tasks::Task;

namespace {

Example ex(Task t, std::string in, std::string out) { return {t, "eval", std::move(in), std::move(out), {}}; }

struct Small {
    tok::SubwordVocab vocab = tok::train_bpe({"abab abab", "cdcd", "aaaa"}, {.vocab_size = 52});
    model::ModelConfig mc;
    Small() {
        mc.d_model = 16;
        mc.ff_dim = 16;
        mc.n_heads = 2;
        mc.slot_dim = 1;
        mc.src_vocab = mc.tgt_vocab = vocab.size();
        mc.seed = 4;
    }
};

}  // namespace

TEST(Metrics, ExactMatch) {
    tasks::CausalProgram p(Task::unscramble);
    auto r = score(p, "IV", {ex(Task::unscramble, "tkneti", "kitten")}, {"kitten"});
    EXPECT_EQ(r.sequence_accuracy(), 1.0);
    EXPECT_EQ(r.relaxed_accuracy(), 1.0);
}

TEST(Metrics, UnscrambleRelaxedRejectsInputCopy) {
    tasks::CausalProgram p(Task::unscramble);
    auto r = score(p, "IV", {ex(Task::unscramble, "tkneti", "kitten")}, {"tkneti"});
    EXPECT_EQ(r.relaxed, 0u);
    // a non-word anagram is not accepted either
    r = score(p, "IV", {ex(Task::unscramble, "tkneti", "kitten")}, {"nettik"});
    EXPECT_EQ(r.relaxed, 0u);
}

TEST(Metrics, SpellingRelaxedAcceptsOtherCorrection) {
    tasks::CausalProgram p(Task::spelling);
    auto r = score(p, "IV", {ex(Task::spelling, "actuall", "actual")}, {"actually"});
    EXPECT_EQ(r.exact, 0u);
    EXPECT_EQ(r.relaxed, 1u);
    r = score(p, "IV", {ex(Task::spelling, "actuall", "actual")}, {"kitten"});
    EXPECT_EQ(r.relaxed, 0u);
}

TEST(Metrics, WordSearchFixture) {
    tasks::CausalProgram p(Task::word_search);
    const std::vector<Example> xs(4, ex(Task::word_search, "color: augusthsilgneerg", "green"));
    auto r = score(p, "O", xs, {"english", "green", "blue", "xyz"});
    EXPECT_EQ(r.exact, 1u);
    EXPECT_EQ(r.char_match, 2u);  // english, green
    EXPECT_EQ(r.syn_match, 2u);   // green, blue
    EXPECT_DOUBLE_EQ(r.character_match(), 0.5);
    EXPECT_NE(r.line().find("\"synonym_match\":0.5"), std::string::npos);
}

TEST(Metrics, AllCorrectGivesFullMatches) {
    tasks::CausalProgram p(Task::word_search);
    const std::vector<Example> xs = {ex(Task::word_search, "color: augusthsilgneerg", "green")};
    auto r = score(p, "P", xs, {"green"});
    EXPECT_EQ(r.character_match(), 1.0);
    EXPECT_EQ(r.synonym_match(), 1.0);
    EXPECT_THROW(score(p, "P", xs, {}), DimensionError);
}

TEST(Reps, MeanAndCounts) {
    CharRepTable t;
    t.add({'a', "ab", 0, {1, 2}});
    EXPECT_EQ(t.average('a'), (std::vector<float>{1, 2}));
    t.add({'a', "a", 0, {3, 4}});
    t.add({'b', "ab", 1, {5, 5}});
    EXPECT_EQ(t.average('a'), (std::vector<float>{2, 3}));
    EXPECT_THROW(t.average('z'), SubstitutionError);
}

TEST(Reps, RowPerSlot) {
    Small s;
    model::Transformer m(s.mc);
    train::Codec codec(s.vocab, tok::parse_regime("subword"), s.mc);
    const std::vector<std::string> xs = {"abab", "cdcd a", "aaaa"};
    auto t = extract_char_reps(m, codec, xs, 2);
    EXPECT_EQ(t.rows.size(), 4u + 6u + 4u);
    EXPECT_EQ(t.counts.at('a'), 7u);
    auto cs = cosine_stats(t);
    EXPECT_LE(cs.intra, 1.0 + 1e-9);
}

TEST(Substitution, SeenInputUnchanged) {
    Small s;
    model::Transformer m(s.mc);
    train::Codec codec(s.vocab, tok::parse_regime("subword"), s.mc);
    std::vector<Example> train = {ex(Task::reversal, "abab", "baba"), ex(Task::reversal, "cdcd", "dcdc")};
    auto seen = seen_tokens(codec, train);
    auto reps = extract_char_reps(m, codec, {"abab", "cdcd"});
    Rng rng(1);
    auto p = oov_substitute(m, codec, "abab", seen, reps, rng);
    EXPECT_EQ(p.ids, codec.source("abab").token_ids);
    EXPECT_TRUE(p.refs.empty());
}

TEST(Substitution, UniformCharacterGetsUniformSlots) {
    Small s;
    model::Transformer m(s.mc);
    train::Codec codec(s.vocab, tok::parse_regime("subword"), s.mc);
    std::vector<Example> train = {ex(Task::reversal, "abab", "baba"), ex(Task::reversal, "a", "a"), ex(Task::reversal, "cd", "dc")};
    auto seen = seen_tokens(codec, train);
    const auto enc = codec.source("cdaaaa");
    ASSERT_EQ(enc.token_chars[0], "cd");
    ASSERT_EQ(enc.token_chars[1], "aaaa");
    ASSERT_FALSE(seen.contains(enc.token_ids[1]));
    auto reps = extract_char_reps(m, codec, {"abab", "cd"});
    Rng rng(2);
    auto p = oov_substitute(m, codec, "cdaaaa", seen, reps, rng);
    ASSERT_EQ(p.refs.size(), 4u);
    const auto a = reps.average('a');
    for (float v : p.values) EXPECT_EQ(v, a[0]);
    // steps before the unseen span are untouched
    EXPECT_EQ(p.ids[0], enc.token_ids[0]);
    for (const auto& r : p.refs) EXPECT_GE(r.row, 1);
    int covered = 0;
    for (std::size_t i = 1; i + 1 < p.ids.size(); ++i) covered += static_cast<int>(s.vocab.token(p.ids[i]).size());
    EXPECT_EQ(covered, 4);
    EXPECT_EQ(p.ids.back(), tok::SubwordVocab::kEos);
}

TEST(Substitution, MissingCharacter) {
    Small s;
    model::Transformer m(s.mc);
    train::Codec codec(s.vocab, tok::parse_regime("subword"), s.mc);
    std::vector<Example> train = {ex(Task::reversal, "abab", "baba")};
    auto seen = seen_tokens(codec, train);
    auto reps = extract_char_reps(m, codec, {"abab"});
    Rng rng(2);
    try {
        oov_substitute(m, codec, "xyz", seen, reps, rng);
        FAIL();
    } catch (const SubstitutionError& e) {
        EXPECT_NE(std::string(e.what()).find("xyz"), std::string::npos);
    }
}

TEST(Substitution, DonorCoverAddsUp) {
    SeenTokens s;
    s.by_len = {{}, {10, 11}, {}, {12}};
    s.lengths = {{10, 1}, {11, 1}, {12, 3}};
    Rng rng(3);
    for (int n = 1; n < 12; ++n) {
        int total = 0;
        for (int id : donor_cover(n, s, rng)) total += s.length(id);
        EXPECT_EQ(total, n);
    }
    SeenTokens only3;
    only3.by_len = {{}, {}, {}, {12}};
    only3.lengths = {{12, 3}};
    EXPECT_THROW(donor_cover(4, only3, rng), SubstitutionError);
}

TEST(Evaluate, SubstitutionOnIVChangesNothing) {
    Small s;
    model::Transformer m(s.mc);
    train::Codec codec(s.vocab, tok::parse_regime("subword"), s.mc);
    tasks::CausalProgram p(Task::reversal);
    std::vector<Example> train = {ex(Task::reversal, "abab", "baba"), ex(Task::reversal, "cdcd", "dcdc")};
    std::vector<Example> iv = {ex(Task::reversal, "cdcdabab", "babadcdc"), ex(Task::reversal, "abab", "baba")};
    EvalOptions o;
    auto plain = evaluate(m, codec, p, "IV", iv, train, o);
    o.oov_substitute = true;
    auto sub = evaluate(m, codec, p, "IV", iv, train, o);
    EXPECT_EQ(plain.predictions, sub.predictions);
    EXPECT_EQ(plain.report.n, 2u);
    EXPECT_THROW(evaluate(m, codec, p, "IV", {}, train, o), ConfigError);
}

namespace {

std::vector<std::vector<double>> random_rows(Rng& rng, int n, int d) {
    std::vector<double> scale(static_cast<std::size_t>(d));
    for (auto& s : scale) s = rng.uniform(0.2, 3.0);
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(d)));
    for (auto& r : rows)
        for (int j = 0; j < d; ++j) r[static_cast<std::size_t>(j)] = scale[static_cast<std::size_t>(j)] * rng.uniform(-1, 1) + (j % 3 ? 0 : 0.5 * r[0]);
    return rows;
}

double projected_variance(const Pca2d& p, int c) {
    double m = 0, s = 0;
    for (const auto& x : p.coords) m += x[static_cast<std::size_t>(c)];
    m /= static_cast<double>(p.coords.size());
    for (const auto& x : p.coords) s += (x[static_cast<std::size_t>(c)] - m) * (x[static_cast<std::size_t>(c)] - m);
    return s / static_cast<double>(p.coords.size() - 1);
}

}  // namespace

TEST(Pca, LineHasNoSecondComponent) {
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < 10; ++i) rows.push_back({static_cast<double>(i), 2.0 * i});
    auto p = pca_2d(rows);
    EXPECT_LT(projected_variance(p, 1), 1e-6 * p.total_variance);
    EXPECT_NEAR(p.eigenvalues[0], p.total_variance, 1e-9);
    EXPECT_GT(p.components[0][1], 0.0);
}

TEST(Pca, MatchesDenseEigensolver) {
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        const int d = rng.range(2, 32), n = rng.range(40, 200);
        auto rows = random_rows(rng, n, d);
        auto p = pca_2d(rows);
        Eigen::MatrixXd X(n, d);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) X(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        X.rowwise() -= X.colwise().mean();
        Eigen::MatrixXd C = X.transpose() * X / static_cast<double>(n - 1);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
        const auto& ev = es.eigenvalues();
        EXPECT_NEAR(projected_variance(p, 0), ev(d - 1), 1e-4);
        EXPECT_NEAR(projected_variance(p, 1), ev(d - 2), 1e-4);
    }
}

TEST(Pca, RowOrderInvariant) {
    Rng rng(4);
    auto rows = random_rows(rng, 50, 6);
    auto a = pca_2d(rows);
    std::reverse(rows.begin(), rows.end());
    auto b = pca_2d(rows);
    for (int i = 0; i < 50; ++i) {
        EXPECT_NEAR(a.coords[static_cast<std::size_t>(i)][0], b.coords[static_cast<std::size_t>(49 - i)][0], 1e-9);
        EXPECT_NEAR(a.coords[static_cast<std::size_t>(i)][1], b.coords[static_cast<std::size_t>(49 - i)][1], 1e-9);
    }
}

TEST(Pca, DegenerateInputs) {
    EXPECT_THROW(pca_2d(std::vector<std::vector<double>>{{1, 2}, {3, 4}}), DegenerateDataError);
    EXPECT_THROW(pca_2d(std::vector<std::vector<double>>(5, {1, 1})), DegenerateDataError);
}

TEST(Pca, CsvExport) {
    CharRepTable t;
    t.add({'a', "ab", 0, {1, 0, 0}});
    t.add({'b', "ab", 1, {0, 2, 0}});
    t.add({'c', "c", 0, {0, 0, 3}});
    t.add({' ', " a", 0, {1, 1, 1}});
    auto p = pca_2d(t);
    const auto path = (std::filesystem::temp_directory_path() / "ciit_pca_test.csv").string();
    write_pca_csv(path, t, p);
    std::ifstream f(path);
    std::string line;
    std::getline(f, line);
    EXPECT_EQ(line, "character,token,position,pc1,pc2");
    int n = 0;
    while (std::getline(f, line)) ++n;
    EXPECT_EQ(n, 4);
    std::filesystem::remove(path);
}
