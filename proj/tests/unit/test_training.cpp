#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "ciit/model/checkpoint.hpp"
#include "ciit/tasks/generate.hpp"
#include "ciit/training/trainer.hpp"

using namespace ciit;
using namespace ciit::train;
using tasks::Example;

namespace {

struct Fixture {
    tasks::CausalProgram prog{tasks::Task::reversal};
    std::vector<Example> D;
    tok::SubwordVocab vocab;
    model::ModelConfig mc;

    Fixture() {
        Rng rng(3);
        for (int i = 0; i < 48; ++i) {
            std::string s;
            const int n = rng.range(2, 5);
            for (int j = 0; j < n; ++j) s += "abcdefghij"[rng.below(10)];
            D.push_back({tasks::Task::reversal, "train", s, tasks::reversed(s), {}});
        }
        std::vector<std::string> corpus;
        for (const auto& e : D) corpus.push_back(e.input);
        vocab = tok::train_bpe(corpus, {.vocab_size = 70});
        mc.d_model = 16;
        mc.ff_dim = 32;
        mc.n_heads = 2;
        mc.slot_dim = 1;
        mc.src_vocab = mc.tgt_vocab = vocab.size();
        mc.seed = 11;
    }

    std::vector<iit::Triplet> triplets(std::size_t n = 48) const {
        iit::IITDataConfig c;
        c.count = n;
        c.seed = 5;
        return iit::sample_triplets(D, prog, c);
    }

    TrainConfig config(bool iit_on) const {
        TrainConfig c;
        c.epochs = 2;
        c.batch_size = 8;
        c.lr = 1e-3;
        c.seed = 2;
        c.iit_enabled = iit_on;
        c.regime = tok::parse_regime("subword");
        return c;
    }
};

std::string run_bytes(const Fixture& f, const TrainConfig& c, const std::vector<iit::Triplet>& ts, TrainLog* log = nullptr) {
    model::Transformer m(f.mc);
    Codec codec(f.vocab, c.regime, f.mc);
    auto r = train::train(m, codec, f.D, {}, ts, c);
    if (log) *log = r.log;
    return model::serialize_checkpoint(model::snapshot(m, c.to_map(), &r.optimizer, r.rng_state));
}

}  // namespace

TEST(Schedule, LinearHalving) {
    TrainConfig c;
    c.lr = 0.01;
    EXPECT_DOUBLE_EQ(c.lr_at(0, 100), 0.01);
    EXPECT_DOUBLE_EQ(c.lr_at(50, 100), 0.0075);
    EXPECT_DOUBLE_EQ(c.lr_at(100, 100), 0.005);
}

TEST(Schedule, LoggedLrFollowsSchedule) {
    Fixture f;
    TrainLog log;
    auto c = f.config(false);
    run_bytes(f, c, {}, &log);
    const long total = static_cast<long>(log.steps.size());
    ASSERT_EQ(total, 12);
    for (const auto& s : log.steps) {
        EXPECT_NEAR(s.lr, c.lr_at(s.step, total), 1e-9);
        EXPECT_TRUE(std::isfinite(s.base_loss));
    }
    for (long i = 0; i < total; ++i) EXPECT_EQ(log.steps[static_cast<std::size_t>(i)].step, i);
    ASSERT_EQ(log.epochs.size(), 2u);
}

TEST(IITLoss, IdentityTripletEqualsStandardLoss) {
    Fixture f;
    model::Transformer m(f.mc);
    Codec codec(f.vocab, tok::parse_regime("subword"), f.mc);
    std::vector<iit::Triplet> ts;
    for (int i = 0; i < 6; ++i) {
        const auto& e = f.D[static_cast<std::size_t>(i)];
        iit::Triplet t{e.input, e.input, {}, e.output};
        for (int j = 0; j < static_cast<int>(e.input.size()); ++j) t.pairs.push_back({j, j});
        ts.push_back(t);
    }
    std::vector<const iit::Triplet*> tb;
    std::vector<const Example*> sb;
    for (int i = 0; i < 6; ++i) {
        tb.push_back(&ts[static_cast<std::size_t>(i)]);
        sb.push_back(&f.D[static_cast<std::size_t>(i)]);
    }
    ad::Tape tape;
    auto a = iit_loss(tape, m, codec, tb);
    auto b = standard_loss(tape, m, codec, sb);
    EXPECT_EQ(a.used, 6);
    EXPECT_NEAR(a.loss.item(), b.item(), 1e-5);
}

TEST(IITLoss, SourceGradientIsNonzero) {
    Fixture f;
    model::Transformer m(f.mc);
    Codec codec(f.vocab, tok::parse_regime("char-st"), f.mc);
    iit::Triplet t{"abc", "hij", {{2, 0}}, "hba"};
    const iit::Triplet* tp = &t;
    ad::Tape tape;
    auto r = iit_loss(tape, m, codec, std::span(&tp, 1));
    tape.backward(r.loss);
    const auto& emb = m.param("src_embed");
    const int d = f.mc.d_model;
    for (char c : {'h', 'i', 'j'}) {
        double s = 0;
        for (int j = 0; j < d; ++j) s += std::abs(emb.grad()[static_cast<std::size_t>(f.vocab.char_id(c)) * d + j]);
        EXPECT_GT(s, 0.0) << c;
    }
}

TEST(IITLoss, BadTripletsAreSkipped) {
    Fixture f;
    model::Transformer m(f.mc);
    Codec codec(f.vocab, tok::parse_regime("char-st"), f.mc);
    iit::Triplet good{"abc", "hij", {{2, 0}}, "hba"}, bad{"abc", "hij", {{7, 0}}, "cba"};
    std::vector<const iit::Triplet*> tb = {&good, &bad};
    ad::Tape tape;
    auto r = iit_loss(tape, m, codec, tb);
    EXPECT_EQ(r.used, 1);
    EXPECT_EQ(r.skipped, 1);
}

TEST(Train, SkippedTripletRateFailsRun) {
    Fixture f;
    std::vector<iit::Triplet> ts(10, iit::Triplet{"abc", "hij", {{9, 0}}, "cba"});
    model::Transformer m(f.mc);
    auto c = f.config(true);
    Codec codec(f.vocab, c.regime, f.mc);
    EXPECT_THROW(train::train(m, codec, f.D, {}, ts, c), DataError);
}

TEST(Train, DeterministicGivenSeed) {
    Fixture f;
    const auto ts = f.triplets();
    const auto c = f.config(true);
    EXPECT_EQ(run_bytes(f, c, ts), run_bytes(f, c, ts));
    auto c2 = c;
    c2.seed = 3;
    EXPECT_NE(run_bytes(f, c, ts), run_bytes(f, c2, ts));
}

TEST(Train, ZeroLambda2MatchesNoIIT) {
    Fixture f;
    const auto ts = f.triplets();
    auto a = f.config(true);
    a.lambda2 = 0;
    auto b = f.config(false);
    TrainLog la, lb;
    model::Transformer ma(f.mc), mb(f.mc);
    Codec codec(f.vocab, a.regime, f.mc);
    train::train(ma, codec, f.D, {}, ts, a);
    train::train(mb, codec, f.D, {}, {}, b);
    EXPECT_EQ(model::serialize_checkpoint(model::snapshot(ma)), model::serialize_checkpoint(model::snapshot(mb)));
    run_bytes(f, a, ts, &la);
    run_bytes(f, b, {}, &lb);
    ASSERT_EQ(la.steps.size(), lb.steps.size());
    for (std::size_t i = 0; i < la.steps.size(); ++i) EXPECT_EQ(la.steps[i].base_loss, lb.steps[i].base_loss);
}

TEST(Train, IITTermContributes) {
    Fixture f;
    const auto ts = f.triplets();
    TrainLog log;
    run_bytes(f, f.config(true), ts, &log);
    for (const auto& s : log.steps) EXPECT_GT(s.iit_loss, 0.0);
}

TEST(Train, NaNAborts) {
    Fixture f;
    model::Transformer m(f.mc);
    for (auto& [n, t] : m.named_params())
        if (n == "out.b") t.data()[5] = std::numeric_limits<float>::quiet_NaN();
    auto c = f.config(false);
    Codec codec(f.vocab, c.regime, f.mc);
    EXPECT_THROW(train::train(m, codec, f.D, {}, {}, c), NumericError);
}

TEST(Train, ConfigChecks) {
    TrainConfig c;
    c.lambda1 = c.lambda2 = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrainConfig{};
    c.lambda2 = -1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = preset("paper-appendix-a3");
    EXPECT_EQ(c.epochs, 20);
    EXPECT_EQ(c.batch_size, 16);
    EXPECT_DOUBLE_EQ(c.lr, 5e-4);
    EXPECT_EQ(preset("desk").epochs, 10);
    EXPECT_THROW(preset("huge"), ConfigError);
    c.iit_enabled = true;
    c.regime = tok::parse_regime("char-t");
    EXPECT_EQ(TrainConfig::from_map(c.to_map()).to_map(), c.to_map());
}

TEST(Train, LearnsTinyReversal) {
    Fixture f;
    auto c = f.config(false);
    c.epochs = 40;
    c.lr = 3e-3;
    c.regime = tok::parse_regime("char-st");
    model::Transformer m(f.mc);
    Codec codec(f.vocab, c.regime, f.mc);
    auto r = train::train(m, codec, f.D, {}, {}, c);
    EXPECT_LT(r.log.steps.back().base_loss, 0.5 * r.log.steps.front().base_loss);
}
