#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "ciit/autodiff/adam.hpp"
#include "ciit/errors.hpp"
#include "ciit/evaluation/predict.hpp"
#include "ciit/iit/triplets.hpp"
#include "ciit/rng.hpp"
#include "ciit/training/batch.hpp"

namespace ciit::train {

struct TrainConfig {
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    int epochs = 10;
    int batch_size = 16;
    double lr = 5e-4;
    std::uint64_t seed = 0;
    bool iit_enabled = false;
    tok::Regime regime;
    double max_skipped_fraction = 0.05;
    std::size_t dev_limit = 0;  // dev items scored per epoch, 0 = all

    void validate() const {
        if (lambda1 < 0 || lambda2 < 0) throw ConfigError("loss coefficients must be non-negative");
        if (lambda1 == 0 && lambda2 == 0) throw ConfigError("lambda1 and lambda2 cannot both be zero");
        if (epochs < 1 || batch_size < 1) throw ConfigError("epochs and batch_size must be positive");
        if (!(lr > 0)) throw ConfigError("lr must be positive");
    }

    /// Linear decay reaching lr/2 at the end of training.
    double lr_at(long step, long total) const { return lr * (1.0 - static_cast<double>(step) / (2.0 * static_cast<double>(total))); }

    std::map<std::string, std::string> to_map() const {
        auto num = [](double x) {
            std::ostringstream os;
            os.precision(17);
            os << x;
            return os.str();
        };
        return {{"lambda1", num(lambda1)},
                {"lambda2", num(lambda2)},
                {"epochs", std::to_string(epochs)},
                {"batch_size", std::to_string(batch_size)},
                {"lr", num(lr)},
                {"seed", std::to_string(seed)},
                {"iit", iit_enabled ? "true" : "false"},
                {"regime", tok::regime_name(regime)},
                {"max_skipped_fraction", num(max_skipped_fraction)},
                {"dev_limit", std::to_string(dev_limit)}};
    }

    static TrainConfig from_map(const std::map<std::string, std::string>& m) {
        TrainConfig c;
        auto get = [&](const char* k) -> const std::string* {
            auto it = m.find(k);
            return it == m.end() ? nullptr : &it->second;
        };
        try {
            if (auto v = get("lambda1")) c.lambda1 = std::stod(*v);
            if (auto v = get("lambda2")) c.lambda2 = std::stod(*v);
            if (auto v = get("epochs")) c.epochs = std::stoi(*v);
            if (auto v = get("batch_size")) c.batch_size = std::stoi(*v);
            if (auto v = get("lr")) c.lr = std::stod(*v);
            if (auto v = get("seed")) c.seed = std::stoull(*v);
            if (auto v = get("max_skipped_fraction")) c.max_skipped_fraction = std::stod(*v);
            if (auto v = get("dev_limit")) c.dev_limit = std::stoull(*v);
        } catch (const std::exception&) {
            throw ConfigError("non-numeric training option");
        }
        if (auto v = get("iit")) c.iit_enabled = *v == "true" || *v == "1";
        if (auto v = get("regime")) c.regime = tok::parse_regime(*v);
        return c;
    }
};

/// Named hyperparameter presets. "desk" is the default.
inline TrainConfig preset(const std::string& name) {
    TrainConfig c;
    if (name == "desk") return c;
    if (name == "paper-appendix-a3") {
        c.epochs = 20;
        return c;
    }
    throw ConfigError("unknown preset '" + name + "' (expected desk or paper-appendix-a3)");
}

struct StepRecord {
    long step = 0;
    int epoch = 0;
    double base_loss = 0;
    double iit_loss = 0;
    double lr = 0;
};

struct EpochRecord {
    int epoch = 0;
    double dev_accuracy = 0;
    std::size_t skipped_triplets = 0;
};

struct TrainLog {
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;

    static std::string line(const StepRecord& s) {
        nlohmann::ordered_json j = {{"step", s.step}, {"epoch", s.epoch}, {"base_loss", s.base_loss}, {"iit_loss", s.iit_loss}, {"lr", s.lr}};
        return j.dump();
    }
    static std::string line(const EpochRecord& e) {
        nlohmann::ordered_json j = {{"epoch", e.epoch}, {"dev_accuracy", e.dev_accuracy}, {"skipped_triplets", e.skipped_triplets}};
        return j.dump();
    }
};

struct TrainResult {
    TrainLog log;
    ad::AdamState optimizer;
    std::string rng_state;
};

inline double sequence_accuracy(const model::Transformer& m, const Codec& codec, const std::vector<tasks::Example>& xs, std::size_t limit = 0) {
    const std::size_t n = limit ? std::min(limit, xs.size()) : xs.size();
    if (n == 0) return 0.0;
    std::vector<std::string> inputs;
    for (std::size_t i = 0; i < n; ++i) inputs.push_back(xs[i].input);
    const auto pred = eval::predict(m, codec, inputs);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < n; ++i) ok += pred[i] == xs[i].output;
    return static_cast<double>(ok) / static_cast<double>(n);
}

/// Each optimizer step takes one standard batch and, with IIT on, one triplet
/// batch: loss = lambda1 * standard + lambda2 * counterfactual. `sink`
/// receives every log record as one line.
inline TrainResult train(model::Transformer& m, const Codec& codec, const std::vector<tasks::Example>& D, const std::vector<tasks::Example>& dev,
                         const std::vector<iit::Triplet>& triplets, const TrainConfig& cfg,
                         const std::function<void(const std::string&)>& sink = {}) {
    cfg.validate();
    if (D.empty()) throw ConfigError("empty training set");
    const bool use_iit = cfg.iit_enabled && cfg.lambda2 > 0;
    if (use_iit && triplets.empty()) throw ConfigError("IIT enabled but no triplets given");

    Rng rng(cfg.seed);
    Rng trip_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    auto params = m.params();
    TrainResult res;
    res.optimizer = ad::AdamState::for_params(params);
    const std::size_t B = static_cast<std::size_t>(cfg.batch_size);
    const long per_epoch = static_cast<long>((D.size() + B - 1) / B);
    const long total = per_epoch * cfg.epochs;

    std::vector<std::size_t> order(D.size()), torder(triplets.size());
    std::iota(order.begin(), order.end(), 0);
    std::iota(torder.begin(), torder.end(), 0);
    std::size_t tcursor = triplets.size();
    std::size_t used_triplets = 0, skipped = 0;
    long step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t lo = 0; lo < D.size(); lo += B) {
            std::vector<const tasks::Example*> batch;
            for (std::size_t i = lo; i < std::min(D.size(), lo + B); ++i) batch.push_back(&D[order[i]]);
            m.zero_grad();
            ad::Tape tape;
            ad::Tensor std_loss = standard_loss(tape, m, codec, batch);
            ad::Tensor total_loss = ad::scale(tape, std_loss, static_cast<float>(cfg.lambda1));
            double iit_value = 0.0;
            if (use_iit) {
                std::vector<const iit::Triplet*> tb;
                while (tb.size() < B) {
                    if (tcursor == triplets.size()) {
                        trip_rng.shuffle(torder);
                        tcursor = 0;
                    }
                    tb.push_back(&triplets[torder[tcursor++]]);
                }
                auto r = iit_loss(tape, m, codec, tb);
                used_triplets += static_cast<std::size_t>(r.used);
                skipped += static_cast<std::size_t>(r.skipped);
                if (r.loss.defined()) {
                    iit_value = r.loss.item();
                    total_loss = ad::add(tape, total_loss, ad::scale(tape, r.loss, static_cast<float>(cfg.lambda2)));
                }
            }
            const double base_value = std_loss.item();
            if (!std::isfinite(base_value) || !std::isfinite(iit_value))
                throw NumericError("non-finite loss at step " + std::to_string(step) + " (base " + std::to_string(base_value) + ", iit " +
                                   std::to_string(iit_value) + ")");
            tape.backward(total_loss);
            ad::AdamOptions opt;
            opt.lr = static_cast<float>(cfg.lr_at(step, total));
            ad::adam_step(params, res.optimizer, opt);
            StepRecord rec{step, epoch, base_value, iit_value, opt.lr};
            if (sink) sink(TrainLog::line(rec));
            res.log.steps.push_back(rec);
            ++step;
        }
        if (use_iit) {
            const std::size_t seen = used_triplets + skipped;
            if (seen > 0 && static_cast<double>(skipped) > cfg.max_skipped_fraction * static_cast<double>(seen))
                throw DataError(std::to_string(skipped) + " of " + std::to_string(seen) + " triplets skipped, above the " +
                                std::to_string(cfg.max_skipped_fraction) + " limit");
        }
        EpochRecord er{epoch, dev.empty() ? 0.0 : sequence_accuracy(m, codec, dev, cfg.dev_limit), skipped};
        if (sink) sink(TrainLog::line(er));
        res.log.epochs.push_back(er);
    }
    res.rng_state = rng.state();
    return res;
}

}  // namespace ciit::train
