// One PASS/FAIL line per acceptance criterion. Exit status is the number of
// failed criteria (0 when all pass).

#include <Eigen/Dense>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include "../support/gradcheck.hpp"
#include "ciit/evaluation/evaluate.hpp"
#include "ciit/evaluation/pca.hpp"
#include "ciit/iit/triplets.hpp"
#include "ciit/model/alignment.hpp"
#include "ciit/tasks/generate.hpp"
#include "ciit/training/trainer.hpp"

using namespace ciit;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// pinned tolerances and thresholds
constexpr double kGradTol = 1e-3;
constexpr int kGradInstances = 50;
constexpr double kGradSeconds = 30;
constexpr double kPatchTol = 1e-5;
constexpr int kPatchInputs = 100;
constexpr double kOracleSeconds = 60;
constexpr std::size_t kTriplets = 10000;
constexpr double kMinOffDiagonal = 0.30;
constexpr double kLearnAccuracy = 0.95;
constexpr int kLearnEpochs = 10;
constexpr double kLearnSeconds = 600;
constexpr double kSubwordGain = 0.05;
constexpr double kCharTGain = 0.20;
constexpr double kCosineMargin = 0.2;
constexpr double kPcaTol = 1e-4;
constexpr int kPcaDatasets = 20;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::map<int, std::pair<std::string, Outcome>> results;

void record(int id, const std::string& name, const std::function<Outcome()>& f) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
        o = f();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(Clock::now() - t0).count();
    std::fprintf(stderr, "  criterion %d done in %.1f s\n", id, s);
    results[id] = {name, o};
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// ---- 1

Outcome gradient_suite() {
    const auto t0 = Clock::now();
    Rng rng(2024);
    double worst = 0;
    std::string worst_op;
    int checks = 0;
    for (int i = 0; i < kGradInstances; ++i) {
        for (const auto& c : oracle::gradient_cases(rng)) {
            const auto r = oracle::check_gradients(c, rng);
            ++checks;
            if (r.max_rel_error > worst) {
                worst = r.max_rel_error;
                worst_op = c.name;
            }
        }
    }
    const double s = seconds_since(t0);
    return {worst < kGradTol && s < kGradSeconds,
            std::to_string(checks) + " op checks, max rel err " + fmt("%.2e", worst) + " (" + worst_op + "), " + fmt("%.2f s", s)};
}

// ---- 3

// reversal by index arithmetic
std::optional<std::string> reversal_oracle(std::string x) { return std::string(x.rbegin(), x.rend()); }

// unit conversion through an integer mantissa and a power of ten
std::optional<std::string> unit_oracle(const std::string& number, int shift) {
    const auto dot = number.find('.');
    if (number.empty() || number.find('.', dot == std::string::npos ? 0 : dot + 1) != std::string::npos) return std::nullopt;
    if (dot == 0 || dot + 1 == number.size()) return std::nullopt;
    long long mant = 0;
    int frac = 0;
    for (std::size_t i = 0; i < number.size(); ++i) {
        if (number[i] == '.') continue;
        mant = mant * 10 + (number[i] - '0');
        if (dot != std::string::npos && i > dot) ++frac;
    }
    int e = shift - frac;
    if (mant == 0) return "0";
    while (e < 0 && mant % 10 == 0) {
        mant /= 10;
        ++e;
    }
    std::string digits = std::to_string(mant);
    if (e >= 0) return digits + std::string(static_cast<std::size_t>(e), '0');
    const std::size_t k = static_cast<std::size_t>(-e);
    if (digits.size() <= k) return "0." + std::string(k - digits.size(), '0') + digits;
    return digits.substr(0, digits.size() - k) + "." + digits.substr(digits.size() - k);
}

void all_strings(const std::string& alphabet, int max_len, const std::function<void(const std::string&)>& f) {
    std::vector<std::string> layer = {""};
    for (int len = 1; len <= max_len; ++len) {
        std::vector<std::string> next;
        for (const auto& s : layer)
            for (char c : alphabet) next.push_back(s + c);
        for (const auto& s : next) f(s);
        layer = std::move(next);
    }
}

Outcome causal_oracle() {
    const auto t0 = Clock::now();
    std::size_t checked = 0, mismatched = 0;
    std::string first_bad;
    auto sweep = [&](const tasks::CausalProgram& p, const std::string& x, const std::function<std::optional<std::string>(const std::string&)>& oracle) {
        const auto vars = p.variables(x);
        const std::string values = p.value_alphabet();
        auto check = [&](const tasks::Assignment& a) {
            std::string y = x;
            for (const auto& [pos, c] : a) y[static_cast<std::size_t>(pos)] = c;
            ++checked;
            const auto want = oracle(y);
            const auto got = p.intervene(x, a);
            if (want != got) {
                ++mismatched;
                if (first_bad.empty()) first_bad = x + " -> " + y;
            }
        };
        for (std::size_t i = 0; i < vars.size(); ++i)
            for (char a : values) {
                check({{vars[i], a}});
                for (std::size_t j = i + 1; j < vars.size(); ++j)
                    for (char b : values) check({{vars[i], a}, {vars[j], b}});
            }
    };

    tasks::ProgramOptions ro;
    ro.reversal_alphabet = "abcdef";
    tasks::CausalProgram rev(tasks::Task::reversal, tasks::Lexicon::bundled(), tasks::Keyboard::bundled(), ro);
    std::size_t bases = 0;
    all_strings(ro.reversal_alphabet, 5, [&](const std::string& x) {
        ++bases;
        sweep(rev, x, reversal_oracle);
    });

    tasks::ProgramOptions uo;
    uo.unit_values = "01259.";
    tasks::CausalProgram unit(tasks::Task::unit_conversion, tasks::Lexicon::bundled(), tasks::Keyboard::bundled(), uo);
    const std::vector<std::tuple<std::string, std::string, std::string, int>> forms = {
        {"", "km", "m", 3}, {"convert ", "km", "m", 3}, {"", "cm", "km", -5}, {"", "million", "trillion", -6}};
    all_strings(uo.unit_values, 5, [&](const std::string& num) {
        if (!unit_oracle(num, 0)) return;  // not a well-formed base
        for (const auto& [prefix, from, to, shift] : forms) {
            {
                ++bases;
                const std::string x = prefix + num + " " + from + " to " + to;
                const std::size_t at = prefix.size(), len = num.size();
                const int sh = shift;
                sweep(unit, x, [&, at, len, sh](const std::string& y) -> std::optional<std::string> {
                    return unit_oracle(y.substr(at, len), sh);
                });
            }
        }
    });
    const double s = seconds_since(t0);
    return {mismatched == 0 && checked > 0 && s < kOracleSeconds,
            std::to_string(checked) + " interventions on " + std::to_string(bases) + " bases, " + std::to_string(mismatched) + " mismatches" +
                (first_bad.empty() ? "" : " (first " + first_bad + ")") + ", " + fmt("%.1f s", s)};
}

// ---- 4

Outcome triplet_validity() {
    std::ostringstream detail;
    bool ok = true;
    for (auto task : {tasks::Task::reversal, tasks::Task::unit_conversion, tasks::Task::unscramble, tasks::Task::spelling,
                      tasks::Task::contextual_spelling, tasks::Task::word_search}) {
        tasks::CausalProgram p(task);
        tasks::GenConfig g;
        g.seed = 11;
        g.n_eval = 50;
        const auto d = tasks::gen_dataset(p, g);
        iit::IITDataConfig c;
        c.count = kTriplets;
        c.seed = 12;
        const auto ts = iit::sample_triplets(d.train, p, c);
        std::size_t bad = 0, pairs = 0, off = 0;
        for (const auto& t : ts) {
            if (!iit::check_triplet(p, t).empty()) ++bad;
            for (const auto& sp : t.pairs) {
                ++pairs;
                off += sp.base_pos != sp.source_pos;
            }
        }
        const double frac = pairs ? static_cast<double>(off) / static_cast<double>(pairs) : 0.0;
        const bool t_ok = ts.size() == kTriplets && bad == 0 && frac >= kMinOffDiagonal;
        ok = ok && t_ok;
        detail << tasks::task_name(task) << " " << bad << "/" << ts.size() << " invalid, off-diag " << fmt("%.2f", frac) << "; ";
    }
    auto s = detail.str();
    s.resize(s.size() - 2);
    return {ok, s};
}

// ---- shared reversal experiments

struct Trained {
    std::string label;
    model::Transformer model;
    tok::Regime regime;
    double seconds = 0;
};

struct Reversal {
    tasks::CausalProgram program{tasks::Task::reversal};
    tasks::TaskData data;
    model::ModelConfig mc;
    std::vector<iit::Triplet> triplets;

    Reversal() {
        tasks::GenConfig g;
        g.seed = 1;
        data = tasks::gen_dataset(program, g);
        mc.src_vocab = mc.tgt_vocab = data.vocab.size();
        mc.seed = 1;
    }

    const std::vector<iit::Triplet>& iit_triplets() {
        if (triplets.empty()) {
            iit::IITDataConfig c;
            c.seed = 2;
            triplets = iit::sample_triplets(data.train, program, c);
        }
        return triplets;
    }

    Trained fit(const std::string& regime, bool iit_on, train::TrainConfig tc) {
        const auto t0 = Clock::now();
        tc.regime = tok::parse_regime(regime);
        tc.iit_enabled = iit_on;
        tc.dev_limit = 200;
        Trained t{regime + (iit_on ? "+iit" : ""), model::Transformer(mc), tc.regime};
        train::Codec codec(data.vocab, tc.regime, mc);
        train::train(t.model, codec, data.train, data.dev, iit_on ? iit_triplets() : std::vector<iit::Triplet>{}, tc);
        t.seconds = seconds_since(t0);
        std::fprintf(stderr, "  trained %s in %.0f s\n", t.label.c_str(), t.seconds);
        return t;
    }

    double accuracy(const Trained& t, const std::string& split, bool substitute) const {
        train::Codec codec(data.vocab, t.regime, mc);
        eval::EvalOptions eo;
        eo.oov_substitute = substitute;
        eo.seed = 5;
        return eval::evaluate(t.model, codec, program, split, data.splits.at(split), data.train, eo).report.sequence_accuracy();
    }

    eval::CosineStats cosine(const Trained& t) const {
        train::Codec codec(data.vocab, t.regime, mc);
        return eval::cosine_stats(eval::extract_char_reps(t.model, codec, eval::sample_inputs(data.train, 2000, 3)));
    }
};

// ---- 2

double self_patch_error(const Trained& t, const Reversal& r) {
    train::Codec codec(r.data.vocab, t.regime, r.mc);
    std::vector<std::string> xs;
    for (const auto* split : {"IV", "OOV"}) {
        for (const auto& x : eval::sample_inputs(r.data.splits.at(split), kPatchInputs / 2, 9)) xs.push_back(x);
    }
    model::PackedIds src;
    train::TargetBatch tgt;
    std::vector<tok::Encoding> encs;
    for (const auto& x : xs) {
        encs.push_back(codec.source(x));
        src.add(encs.back().token_ids);
        tgt.add(codec.target(tasks::reversed(x)));
    }
    ad::Tape tape(false);
    const auto plain_states = t.model.encode(tape, src);
    const auto plain = t.model.decoder_logits(tape, plain_states.memory, src.segs, tgt.input);
    const auto h = t.model.encode_prefix(tape, src);
    model::Patch self;
    for (std::size_t b = 0; b < encs.size(); ++b) {
        const auto a = model::build_char_slots(encs[b], r.mc);
        for (std::size_t i = 0; i < a.size(); ++i) self.refs.push_back(a.ref(static_cast<int>(i), src.segs[b].offset));
    }
    self.values = ad::gather_slices(tape, h, self.refs, r.mc.slot_dim);
    const auto patched_states = t.model.encode(tape, src, &self);
    const auto patched = t.model.decoder_logits(tape, patched_states.memory, src.segs, tgt.input);
    double worst = 0;
    for (std::size_t i = 0; i < plain.numel(); ++i) worst = std::max(worst, static_cast<double>(std::abs(plain[i] - patched[i])));
    return worst;
}

// ---- 8

Outcome word_search_metrics() {
    tasks::CausalProgram p(tasks::Task::word_search);
    struct Case {
        std::string input, label, pred;
        bool exact, chr, syn;
    };
    const std::vector<Case> cases = {
        {"color: augusthsilgneerg", "green", "green", true, true, true},
        {"color: augusthsilgneerg", "green", "english", false, true, false},
        {"color: augusthsilgneerg", "green", "blue", false, false, true},
        {"color: augusthsilgneerg", "green", "august", false, false, false},  // forward in the grid only
        {"color: augusthsilgneerg", "green", "xyz", false, false, false},
        {"color: augusthsilgneerg", "green", "color", false, false, true},
        {"language: augusthsilgneerg", "english", "english", true, true, true},
        {"language: augusthsilgneerg", "english", "green", false, true, false},
        {"language: augusthsilgneerg", "english", "french", false, false, true},
    };
    std::size_t wrong = 0;
    std::vector<tasks::Example> xs;
    std::vector<std::string> preds;
    for (const auto& c : cases) {
        const tasks::Example e{tasks::Task::word_search, "P", c.input, c.label, {}};
        const auto r = eval::score(p, "P", {e}, {c.pred});
        if ((r.exact == 1) != c.exact || (r.char_match == 1) != c.chr || (r.syn_match == 1) != c.syn || r.relaxed != r.exact) {
            ++wrong;
            std::fprintf(stderr, "  word search fixture '%s' / '%s' disagrees\n", c.input.c_str(), c.pred.c_str());
        }
        xs.push_back(e);
        preds.push_back(c.pred);
    }
    const auto all = eval::score(p, "P", xs, preds);
    // aggregate: 2 exact, 4 character hits, 5 synonym hits of 9
    const bool agg = all.exact == 2 && all.relaxed == 2 && all.char_match == 4 && all.syn_match == 5 && all.n == 9;
    return {wrong == 0 && agg, std::to_string(cases.size() - wrong) + "/" + std::to_string(cases.size()) + " fixtures; aggregate char " +
                                   fmt("%.4f syn %.4f relaxed %.4f", all.character_match(), all.synonym_match(), all.relaxed_accuracy())};
}

// ---- 9

struct Cli {
    std::string exe;
    fs::path work;

    void run(const std::string& args) const {
        const std::string cmd = exe + " " + args + " > /dev/null";
        const int rc = std::system(cmd.c_str());
        if (rc != 0) throw std::runtime_error("'" + cmd + "' exited with " + std::to_string(rc));
    }
};

std::map<std::string, std::string> snapshot_dir(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        std::ifstream f(e.path(), std::ios::binary);
        std::ostringstream ss;
        ss << f.rdbuf();
        files[e.path().filename().string()] = ss.str();
    }
    return files;
}

Outcome determinism(const Cli& cli) {
    fs::remove_all(cli.work);
    fs::create_directories(cli.work);
    const auto w = [&](const std::string& n) { return (cli.work / n).string(); };
    struct Step {
        std::string name, dir, args;
    };
    const std::vector<Step> steps = {
        {"gen-data", w("data"), "gen-data --task reversal --seed 7 --n-train 800 --n-dev 100 --n-eval 100 --vocab-size 90 --out " + w("data")},
        {"sample-triplets", w("trip"), "sample-triplets --data " + w("data") + " --seed 3 --count 3000 --out " + w("trip")},
        {"train", w("run"),
         "train --data " + w("data") + " --triplets " + w("trip") + "/triplets.tsv --regime char-t --iit --epochs 2 --d-model 32 --ff-dim 64 "
                                                                    "--slot-dim 2 --seed 5 --out " + w("run")},
        {"eval", w("eval"), "eval --checkpoint " + w("run") + "/model.ckpt --data " + w("data") + " --oov-substitute --seed 4 --out " + w("eval")},
    };
    std::string detail;
    bool ok = true;
    for (const auto& s : steps) {
        cli.run(s.args);
        const auto first = snapshot_dir(s.dir);
        const auto manifest = w(s.name + ".manifest");
        fs::copy_file(fs::path(s.dir) / "manifest.txt", manifest, fs::copy_options::overwrite_existing);
        bool same = true;
        for (int again = 0; again < 2; ++again) {
            fs::remove_all(s.dir);
            cli.run(s.name + " --config " + manifest);
            same = same && snapshot_dir(s.dir) == first;
        }
        ok = ok && same;
        detail += s.name + (same ? " identical" : " DIFFERS") + " (" + std::to_string(first.size()) + " files); ";
    }
    detail.resize(detail.size() - 2);
    return {ok, detail};
}

// ---- 10

Outcome pca_oracle() {
    Rng rng(99);
    double worst = 0;
    for (int trial = 0; trial < kPcaDatasets; ++trial) {
        const int d = rng.range(2, 32), n = rng.range(40, 200);
        std::vector<double> scale(static_cast<std::size_t>(d));
        for (auto& s : scale) s = rng.uniform(0.2, 3.0);
        std::vector<std::vector<double>> rows(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(d)));
        for (auto& r : rows)
            for (int j = 0; j < d; ++j) r[static_cast<std::size_t>(j)] = scale[static_cast<std::size_t>(j)] * rng.uniform(-1, 1) + (j % 3 ? 0 : 0.5 * r[0]);
        const auto p = eval::pca_2d(rows);
        Eigen::MatrixXd X(n, d);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) X(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        X.rowwise() -= X.colwise().mean();
        const Eigen::MatrixXd C = X.transpose() * X / static_cast<double>(n - 1);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
        for (int c = 0; c < 2; ++c) {
            double m = 0, v = 0;
            for (const auto& x : p.coords) m += x[static_cast<std::size_t>(c)];
            m /= n;
            for (const auto& x : p.coords) v += (x[static_cast<std::size_t>(c)] - m) * (x[static_cast<std::size_t>(c)] - m);
            v /= n - 1;
            worst = std::max(worst, std::abs(v - es.eigenvalues()(d - 1 - c)));
        }
    }
    return {worst < kPcaTol, std::to_string(kPcaDatasets) + " datasets, max |projected variance - eigenvalue| " + fmt("%.2e", worst)};
}

}  // namespace

int main(int argc, char** argv) {
    Cli cli{argc > 1 ? argv[1] : CIIT_CLI, fs::path(argc > 2 ? argv[2] : CIIT_WORK_DIR) / "determinism"};

    record(1, "autodiff gradient suite", gradient_suite);
    record(3, "causal oracle equivalence", causal_oracle);
    record(4, "triplet validity", triplet_validity);
    record(8, "word search metrics", word_search_metrics);
    record(10, "PCA oracle", pca_oracle);
    record(9, "determinism", [&] { return determinism(cli); });

    Reversal rev;
    std::deque<Trained> models;
    record(5, "desk-scale learnability", [&] {
        auto tc = train::preset("desk");
        tc.epochs = kLearnEpochs;
        models.push_back(rev.fit("char-st", false, tc));
        const double acc = rev.accuracy(models.back(), "IV", false);
        return Outcome{acc >= kLearnAccuracy && models.back().seconds < kLearnSeconds,
                       "char-st reversal IV accuracy " + fmt("%.4f after %.0f epochs, %.0f s", acc, kLearnEpochs, models.back().seconds)};
    });

    std::map<std::string, double> oov;
    std::map<std::string, eval::CosineStats> cos;
    auto run_pair = [&](const std::string& regime) {
        const auto tc = train::preset("paper-appendix-a3");
        for (bool on : {false, true}) {
            models.push_back(rev.fit(regime, on, tc));
            const auto& t = models.back();
            oov[t.label] = rev.accuracy(t, "OOV", false);
            oov[t.label + "+subst"] = rev.accuracy(t, "OOV", true);
            cos[t.label] = rev.cosine(t);
        }
    };
    record(6, "IIT OOV gain", [&] {
        run_pair("subword");
        run_pair("char-t");
        const double sub_gain = oov["subword+iit+subst"] - oov["subword"];
        const double ct_gain = oov["char-t+iit+subst"] - oov["char-t"];
        return Outcome{sub_gain >= kSubwordGain && ct_gain >= kCharTGain,
                       fmt("subword %.3f -> +iit %.3f (gain %+.3f); ", oov["subword"], oov["subword+iit+subst"], sub_gain) +
                           fmt("char-t %.3f -> +iit+subst %.3f (gain %+.3f)", oov["char-t"], oov["char-t+iit+subst"], ct_gain)};
    });
    record(7, "representation localization", [&] {
        if (cos.size() < 4) throw std::runtime_error("criterion 6 models missing");
        bool ok = true;
        std::string d;
        for (const auto* r : {"subword", "char-t"}) {
            const double base = cos.at(r).margin(), with = cos.at(std::string(r) + "+iit").margin();
            ok = ok && with >= kCosineMargin && base < kCosineMargin;
            d += std::string(r) + fmt(" margin %.3f, +iit %.3f; ", base, with);
        }
        d.resize(d.size() - 2);
        return Outcome{ok, d};
    });
    record(2, "intervention identity", [&] {
        if (models.empty()) throw std::runtime_error("no trained models");
        double worst = 0;
        for (const auto& t : models) worst = std::max(worst, self_patch_error(t, rev));
        return Outcome{worst <= kPatchTol, std::to_string(models.size()) + " trained models x " + std::to_string(kPatchInputs) +
                                               " inputs, max |logit diff| " + fmt("%.2e", worst)};
    });

    int failed = 0;
    for (const auto& [id, r] : results) {
        std::printf("[%s] criterion %d: %s (%s)\n", r.second.pass ? "PASS" : "FAIL", id, r.first.c_str(), r.second.detail.c_str());
        failed += !r.second.pass;
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(results.size()) - failed, results.size());
    return failed;
}
