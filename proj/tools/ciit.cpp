#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ciit/cli/manifest.hpp"
#include "ciit/evaluation/evaluate.hpp"
#include "ciit/evaluation/pca.hpp"
#include "ciit/iit/triplets.hpp"
#include "ciit/model/checkpoint.hpp"
#include "ciit/tasks/generate.hpp"
#include "ciit/training/trainer.hpp"

namespace fs = std::filesystem;
using namespace ciit;
using cli::Manifest;

namespace {

std::string key_of(const CLI::Option* o) {
    const auto& names = o->get_lnames();
    if (names.empty()) return "";
    std::string k = names[0];
    for (auto& c : k)
        if (c == '-') c = '_';
    return k;
}

bool is_flag(const CLI::Option* o) { return o->get_type_size() == 0; }

/// Fill options not given on the command line from a manifest or config file.
void apply_config(CLI::App* sub, const std::string& path) {
    const auto m = cli::read_manifest(path);
    for (const auto& [k, v] : m) {
        if (k == "config" || k.starts_with("resolved.")) continue;
        if (k == "command") {
            if (v != sub->get_name()) throw ConfigError(path + " is a manifest for '" + v + "', not '" + sub->get_name() + "'");
            continue;
        }
        std::string flag = k;
        for (auto& c : flag)
            if (c == '_') c = '-';
        auto* o = sub->get_option_no_throw("--" + flag);
        if (!o) throw ConfigError("unknown key '" + k + "' in " + path);
        if (o->count() > 0 || v.empty()) continue;
        if (is_flag(o)) {
            if (v != "true" && v != "false") throw ConfigError("flag '" + k + "' must be true or false");
            if (v == "false") continue;
        }
        o->add_result(v);
        o->run_callback();
    }
}

/// Every option of the subcommand with its effective value.
Manifest echo(const CLI::App* sub) {
    Manifest m{{"command", sub->get_name()}};
    for (const CLI::Option* o : sub->get_options()) {
        const auto k = key_of(o);
        if (k.empty() || k == "help" || k == "config") continue;
        if (is_flag(o)) {
            m[k] = o->count() ? "true" : "false";
        } else if (o->count()) {
            std::string v;
            for (const auto& r : o->results()) v += (v.empty() ? "" : ",") + r;
            m[k] = v;
        } else if (o->get_expected_max() > 1) {
            m[k] = "";  // unset list
        } else {
            m[k] = o->get_default_str();
        }
    }
    return m;
}

void need(bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
}

std::string join(const fs::path& dir, const std::string& name) { return (dir / name).string(); }

std::string split_file(const std::string& split) {
    if (split == "train" || split == "dev") return split + ".tsv";
    return "split_" + split + ".tsv";
}

/// A directory written by gen-data.
struct DataDir {
    fs::path dir;
    Manifest manifest;
    tasks::Task task;
    std::vector<std::string> splits;

    explicit DataDir(const std::string& d) : dir(d) {
        need(!d.empty(), "--data is required");
        manifest = cli::read_manifest(join(dir, "manifest.txt"));
        auto it = manifest.find("task");
        if (it == manifest.end()) throw DataError(join(dir, "manifest.txt") + " names no task");
        task = tasks::parse_task(it->second);
        std::string cur;
        std::istringstream is(manifest["resolved.splits"]);
        while (std::getline(is, cur, ','))
            if (!cur.empty()) splits.push_back(cur);
    }

    std::vector<tasks::Example> load(const std::string& split) const { return tasks::read_examples(join(dir, split_file(split))); }
    tok::SubwordVocab vocab() const { return tok::SubwordVocab::load(join(dir, "vocab.txt")); }
};

struct Loaded {
    model::Checkpoint ckpt;
    tok::SubwordVocab vocab;
    tok::Regime regime;
};

Loaded load_run(const std::string& path, const DataDir& data) {
    need(!path.empty(), "--checkpoint is required");
    Loaded l{model::load_checkpoint(path), {}, {}};
    const auto& meta = l.ckpt.meta;
    auto get = [&](const char* k) {
        auto it = meta.find(k);
        if (it == meta.end()) throw DataError(path + " lacks '" + k + "' metadata");
        return it->second;
    };
    l.vocab = tok::SubwordVocab::deserialize(get("vocab"));
    l.regime = tok::parse_regime(get("train.regime"));
    if (get("task") != tasks::task_name(data.task))
        throw ConfigError("checkpoint was trained on " + get("task") + ", data directory holds " + tasks::task_name(data.task));
    return l;
}

// ---- gen-data

struct GenOpts {
    std::string task, out;
    std::uint64_t seed = 0;
    int n_train = 0, n_dev = 0, n_eval = 500, vocab_size = 512, max_token_len = 8;
    double holdout_fraction = 0.1;
    bool audit = false;
};

void cmd_gen_data(const GenOpts& o, Manifest manifest) {
    need(!o.task.empty(), "--task is required");
    need(!o.out.empty(), "--out is required");
    tasks::CausalProgram p(tasks::parse_task(o.task));
    tasks::GenConfig g;
    g.seed = o.seed;
    g.n_train = o.n_train;
    g.n_dev = o.n_dev;
    g.n_eval = o.n_eval;
    g.vocab_size = o.vocab_size;
    g.max_token_len = o.max_token_len;
    g.holdout_fraction = o.holdout_fraction;
    const auto d = tasks::gen_dataset(p, g);

    if (o.audit) {
        std::vector<std::string> bad;
        auto run = [&](const std::vector<tasks::Example>& xs) {
            auto b = tasks::audit(p, xs);
            bad.insert(bad.end(), b.begin(), b.end());
        };
        run(d.train);
        run(d.dev);
        for (const auto& [n, xs] : d.splits) run(xs);
        if (!bad.empty()) throw DataError("audit found " + std::to_string(bad.size()) + " violations, first: " + bad[0]);
    }

    const fs::path out(o.out);
    fs::create_directories(out);
    tasks::write_examples(join(out, "train.tsv"), d.train);
    tasks::write_examples(join(out, "dev.tsv"), d.dev);
    std::string names;
    for (const auto& [n, xs] : d.splits) {
        tasks::write_examples(join(out, split_file(n)), xs);
        names += (names.empty() ? "" : ",") + n;
    }
    d.vocab.save(join(out, "vocab.txt"));
    manifest["task"] = tasks::task_name(p.task());
    manifest["resolved.splits"] = names;
    manifest["resolved.vocab_size"] = std::to_string(d.vocab.size());
    cli::write_manifest(join(out, "manifest.txt"), manifest);

    std::cout << "task " << tasks::task_name(p.task()) << ": train " << d.train.size() << ", dev " << d.dev.size();
    for (const auto& [n, xs] : d.splits) std::cout << ", " << n << ' ' << xs.size();
    std::cout << ", vocab " << d.vocab.size() << (o.audit ? ", audit passed" : "") << '\n';
}

// ---- sample-triplets

struct TripletOpts {
    std::string data, out;
    std::uint64_t seed = 0;
    std::size_t count = 0;
    int max_intervened = 8, retry_budget = 1000;
};

void cmd_sample_triplets(const TripletOpts& o, const Manifest& manifest) {
    need(!o.out.empty(), "--out is required");
    DataDir data(o.data);
    tasks::CausalProgram p(data.task);
    iit::IITDataConfig c;
    c.seed = o.seed;
    c.count = o.count;
    c.max_intervened = o.max_intervened;
    c.retry_budget = o.retry_budget;
    iit::TripletDiagnostics diag;
    const auto ts = iit::sample_triplets(data.load("train"), p, c, &diag);
    std::size_t pairs = 0, off = 0;
    for (const auto& t : ts)
        for (const auto& sp : t.pairs) {
            ++pairs;
            off += sp.base_pos != sp.source_pos;
        }
    const fs::path out(o.out);
    fs::create_directories(out);
    iit::write_triplets(join(out, "triplets.tsv"), ts);
    cli::write_manifest(join(out, "manifest.txt"), manifest);
    std::cout << ts.size() << " triplets, off-diagonal pairs " << off << "/" << pairs << ", " << diag.str() << '\n';
}

// ---- train

struct TrainOpts {
    std::string data, out, triplets, regime = "subword", preset = "desk";
    bool iit = false;
    double lambda1 = 1, lambda2 = 1, max_skipped_fraction = 0.05;
    std::optional<int> epochs, batch_size;
    std::optional<double> lr;
    std::uint64_t seed = 0, triplet_seed = 0;
    std::size_t triplet_count = 0, dev_limit = 0;
    model::ModelConfig model;
};

void cmd_train(const TrainOpts& o, Manifest manifest) {
    need(!o.out.empty(), "--out is required");
    DataDir data(o.data);
    const auto D = data.load("train");
    const auto dev = data.load("dev");
    const auto vocab = data.vocab();

    auto tc = train::preset(o.preset);
    tc.lambda1 = o.lambda1;
    tc.lambda2 = o.lambda2;
    if (o.epochs) tc.epochs = *o.epochs;
    if (o.batch_size) tc.batch_size = *o.batch_size;
    if (o.lr) tc.lr = *o.lr;
    tc.seed = o.seed;
    tc.iit_enabled = o.iit;
    tc.regime = tok::parse_regime(o.regime);
    tc.max_skipped_fraction = o.max_skipped_fraction;
    tc.dev_limit = o.dev_limit;
    tc.validate();

    auto mc = o.model;
    mc.src_vocab = mc.tgt_vocab = vocab.size();
    mc.seed = o.seed;
    mc.validate();

    std::vector<iit::Triplet> triplets;
    if (tc.iit_enabled && tc.lambda2 > 0) {
        if (!o.triplets.empty()) {
            triplets = iit::read_triplets(o.triplets);
        } else {
            iit::IITDataConfig ic;
            ic.seed = o.triplet_seed;
            ic.count = o.triplet_count;
            triplets = iit::sample_triplets(D, tasks::CausalProgram(data.task), ic);
        }
    }

    const fs::path out(o.out);
    fs::create_directories(out);
    std::map<std::string, std::string> meta = {{"task", tasks::task_name(data.task)}, {"vocab", vocab.serialize()}};
    for (const auto& [k, v] : tc.to_map()) {
        meta["train." + k] = v;
        manifest["resolved.train." + k] = v;
    }
    for (const auto& [k, v] : mc.to_map()) manifest["resolved.model." + k] = v;
    cli::write_manifest(join(out, "manifest.txt"), manifest);

    std::ofstream log(join(out, "train_log.jsonl"), std::ios::binary | std::ios::trunc);
    if (!log) throw PathError("cannot write " + join(out, "train_log.jsonl"));
    model::Transformer m(mc);
    train::Codec codec(vocab, tc.regime, mc);
    train::TrainResult r;
    try {
        r = train::train(m, codec, D, dev, triplets, tc, [&](const std::string& line) {
            log << line << '\n';
            log.flush();
            if (line.find("dev_accuracy") != std::string::npos) std::cout << line << std::endl;
        });
    } catch (const NumericError&) {
        // parameters still hold the last finite update
        model::save_checkpoint(join(out, "last_good.ckpt"), model::snapshot(m, meta));
        std::cerr << "saved " << join(out, "last_good.ckpt") << '\n';
        throw;
    }
    const auto path = join(out, "model.ckpt");
    model::save_checkpoint(path, model::snapshot(m, meta, &r.optimizer, r.rng_state));
    std::cout << "checkpoint " << path << " digest " << cli::file_digest(path) << '\n';
}

// ---- eval

struct EvalOpts {
    std::string checkpoint, data, out, regime;
    std::vector<std::string> splits;
    bool oov_substitute = false;
    std::size_t rep_sample = 1000;
    std::uint64_t seed = 0;
};

void cmd_eval(const EvalOpts& o, const Manifest& manifest) {
    need(!o.out.empty(), "--out is required");
    DataDir data(o.data);
    const auto run = load_run(o.checkpoint, data);
    if (!o.regime.empty() && tok::regime_name(tok::parse_regime(o.regime)) != tok::regime_name(run.regime))
        throw ConfigError("checkpoint regime " + tok::regime_name(run.regime) + " does not match --regime " + o.regime);
    const auto m = model::restore(run.ckpt);
    train::Codec codec(run.vocab, run.regime, run.ckpt.config);
    tasks::CausalProgram p(data.task);
    const auto names = o.splits.empty() ? data.splits : o.splits;
    need(!names.empty(), "no splits to evaluate");
    const auto trainset = o.oov_substitute ? data.load("train") : std::vector<tasks::Example>{};

    eval::EvalOptions eo;
    eo.oov_substitute = o.oov_substitute;
    eo.rep_sample = o.rep_sample;
    eo.seed = o.seed;
    const fs::path out(o.out);
    fs::create_directories(out);
    std::string report;
    for (const auto& name : names) {
        const auto xs = data.load(name);
        const auto r = eval::evaluate(m, codec, p, name, xs, trainset, eo);
        report += r.report.line() + '\n';
        std::ofstream pf(join(out, "predictions_" + name + ".tsv"), std::ios::binary);
        if (!pf) throw PathError("cannot write predictions for " + name);
        for (std::size_t i = 0; i < xs.size(); ++i) pf << xs[i].input << '\t' << xs[i].output << '\t' << r.predictions[i] << '\n';
        std::cout << r.report.table();
    }
    std::ofstream rf(join(out, "report.jsonl"), std::ios::binary);
    if (!rf) throw PathError("cannot write " + join(out, "report.jsonl"));
    rf << report;
    cli::write_manifest(join(out, "manifest.txt"), manifest);
}

// ---- export-reps

struct RepOpts {
    std::string checkpoint, data, out;
    std::size_t sample = 2000;
    std::uint64_t seed = 0;
};

void cmd_export_reps(const RepOpts& o, const Manifest& manifest) {
    need(!o.out.empty(), "--out is required");
    DataDir data(o.data);
    const auto run = load_run(o.checkpoint, data);
    const auto m = model::restore(run.ckpt);
    train::Codec codec(run.vocab, run.regime, run.ckpt.config);
    const auto table = eval::extract_char_reps(m, codec, eval::sample_inputs(data.load("train"), o.sample, o.seed));
    const auto pca = eval::pca_2d(table);
    const fs::path out(o.out);
    fs::create_directories(out);
    eval::write_pca_csv(join(out, "reps.csv"), table, pca);
    cli::write_manifest(join(out, "manifest.txt"), manifest);
    const auto cs = eval::cosine_stats(table);
    std::cout << table.rows.size() << " slot vectors; cosine intra " << cs.intra << " inter " << cs.inter << " margin " << cs.margin()
              << "; pc variance " << pca.eigenvalues[0] << ", " << pca.eigenvalues[1] << " of " << pca.total_variance << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Character-level interchange intervention training on synthetic tasks"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();

    std::map<CLI::App*, std::string> configs;
    auto add_sub = [&](const char* name, const char* desc) {
        auto* s = app.add_subcommand(name, desc);
        s->add_option("--config", configs[s], "key=value file (a manifest of an earlier run); flags override it");
        return s;
    };

    GenOpts gen;
    auto* g = add_sub("gen-data", "generate a task dataset and its split files");
    g->add_option("--task", gen.task, "reversal, unit, unscramble, spelling, contextual, wordsearch");
    g->add_option("--seed", gen.seed);
    g->add_option("--out", gen.out, "output directory");
    g->add_option("--n-train", gen.n_train, "0 picks the task default");
    g->add_option("--n-dev", gen.n_dev, "0 picks the task default");
    g->add_option("--n-eval", gen.n_eval, "cap per evaluation split");
    g->add_option("--vocab-size", gen.vocab_size);
    g->add_option("--max-token-len", gen.max_token_len);
    g->add_option("--holdout-fraction", gen.holdout_fraction);
    g->add_flag("--audit", gen.audit, "check every record against the task program");

    TripletOpts trip;
    auto* t = add_sub("sample-triplets", "sample IIT triplets from a training split");
    t->add_option("--data", trip.data, "gen-data output directory");
    t->add_option("--out", trip.out, "output directory");
    t->add_option("--seed", trip.seed);
    t->add_option("--count", trip.count, "0 means 5 x |train|");
    t->add_option("--max-intervened", trip.max_intervened);
    t->add_option("--retry-budget", trip.retry_budget);

    TrainOpts tr;
    auto* r = add_sub("train", "train a model, optionally with interchange interventions");
    r->add_option("--data", tr.data, "gen-data output directory");
    r->add_option("--out", tr.out, "run directory");
    r->add_option("--regime", tr.regime, "subword, char-s, char-t, char-st");
    r->add_flag("--iit", tr.iit, "add the intervention loss");
    r->add_option("--triplets", tr.triplets, "triplet file; sampled on the fly when absent");
    r->add_option("--triplet-seed", tr.triplet_seed);
    r->add_option("--triplet-count", tr.triplet_count, "0 means 5 x |train|");
    r->add_option("--preset", tr.preset, "desk or paper-appendix-a3");
    r->add_option("--lambda1", tr.lambda1);
    r->add_option("--lambda2", tr.lambda2);
    r->add_option("--epochs", tr.epochs, "default from the preset");
    r->add_option("--batch-size", tr.batch_size, "default from the preset");
    r->add_option("--lr", tr.lr, "default from the preset");
    r->add_option("--seed", tr.seed);
    r->add_option("--max-skipped-fraction", tr.max_skipped_fraction);
    r->add_option("--dev-limit", tr.dev_limit, "dev items scored per epoch, 0 = all");
    r->add_option("--d-model", tr.model.d_model);
    r->add_option("--enc-layers", tr.model.enc_layers);
    r->add_option("--dec-layers", tr.model.dec_layers);
    r->add_option("--heads", tr.model.n_heads);
    r->add_option("--ff-dim", tr.model.ff_dim);
    r->add_option("--max-src-len", tr.model.max_src_len);
    r->add_option("--max-tgt-len", tr.model.max_tgt_len);
    r->add_option("--intervention-layer", tr.model.intervention_layer);
    r->add_option("--slot-dim", tr.model.slot_dim);
    r->add_option("--max-chars-per-token", tr.model.max_chars_per_token);

    EvalOpts ev;
    auto* e = add_sub("eval", "greedy-decode splits and score them");
    e->add_option("--checkpoint", ev.checkpoint);
    e->add_option("--data", ev.data, "gen-data output directory");
    e->add_option("--split", ev.splits, "split names (default: every evaluation split)")->delimiter(',');
    e->add_option("--out", ev.out, "output directory");
    e->add_option("--regime", ev.regime, "must match the checkpoint when given");
    e->add_flag("--oov-substitute", ev.oov_substitute, "replace unseen tokens by averaged character representations");
    e->add_option("--rep-sample", ev.rep_sample, "training inputs averaged per character");
    e->add_option("--seed", ev.seed);

    RepOpts rp;
    auto* x = add_sub("export-reps", "write 2d PCA coordinates of character slot vectors");
    x->add_option("--checkpoint", rp.checkpoint);
    x->add_option("--data", rp.data, "gen-data output directory");
    x->add_option("--out", rp.out, "output directory");
    x->add_option("--sample", rp.sample, "training inputs to read");
    x->add_option("--seed", rp.seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        return app.exit(err) == 0 ? 0 : 2;
    }

    try {
        auto* sub = app.get_subcommands().front();
        if (!configs[sub].empty()) apply_config(sub, configs[sub]);
        const auto manifest = echo(sub);
        if (sub == g) cmd_gen_data(gen, manifest);
        else if (sub == t) cmd_sample_triplets(trip, manifest);
        else if (sub == r) cmd_train(tr, manifest);
        else if (sub == e) cmd_eval(ev, manifest);
        else cmd_export_reps(rp, manifest);
    } catch (const Error& err) {
        std::cerr << "error: " << err.what() << '\n';
        return err.exit_code();
    } catch (const fs::filesystem_error& err) {
        std::cerr << "error: " << err.what() << '\n';
        return 2;
    }
    return 0;
}
