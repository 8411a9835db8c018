// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "sbrlab/data.hpp"
#include "sbrlab/losses.hpp"
#include "sbrlab/model.hpp"
#include "sbrlab/optim.hpp"

namespace sbrlab {

using json = nlohmann::json;

inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdULL;
    x ^= x >> 33;
    return x;
}

enum class Method { baseline_l2, l2sp, delta_lite, sbr };

inline Method parse_method(const std::string& s) {
    if (s == "baseline_l2") return Method::baseline_l2;
    if (s == "l2sp") return Method::l2sp;
    if (s == "delta_lite") return Method::delta_lite;
    if (s == "sbr") return Method::sbr;
    throw ConfigError("unknown method: " + s);
}

inline std::string method_name(Method m) {
    switch (m) {
        case Method::baseline_l2: return "baseline_l2";
        case Method::l2sp: return "l2sp";
        case Method::delta_lite: return "delta_lite";
        case Method::sbr: return "sbr";
    }
    return "?";
}

struct TrainConfig {
    ModelSpec model;
    Method method = Method::sbr;
    Measure measure = Measure::squared_euclidean();
    double alpha = -1.0;   // <0: resolved per method (1 baselines, 0.1 sbr)
    double beta = 1e-4;    // SBR / delta-lite strength
    double kappa = -1.0;   // <0: resolved per method (10 baselines, 1 sbr)
    double sp_alpha = 0.01;
    double sp_beta = 0.01;
    double weight_decay = 1e-4;
    double feature_weight_decay = -1.0;  // <0: same as weight_decay
    double base_lr = 0.05;
    double momentum = 0.0;
    std::size_t epochs = 200;
    BatchPlan plan;  // P=8, K=4 by default
    bool uniform_batches = false;
    double sampling_rate = 1.0;
    std::uint64_t seed = 0;
    std::size_t seeds_for_report = 5;
    bool schedule_per_iteration = false;

    TrainConfig resolved() const {
        TrainConfig c = *this;
        if (c.alpha < 0.0) c.alpha = (c.method == Method::sbr) ? 0.1 : 1.0;
        if (c.kappa < 0.0) c.kappa = (c.method == Method::sbr) ? 1.0 : 10.0;
        c.validate();
        return c;
    }

    void validate() const {
        model.validate();
        if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in (0, 1]");
        if (beta < 0.0) throw ConfigError("beta must be >= 0");
        if (kappa < 1.0) throw ConfigError("kappa must be >= 1");
        if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
        if (base_lr <= 0.0) throw ConfigError("base_lr must be positive");
        if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
        if (epochs == 0) throw ConfigError("epochs must be positive");
        if (!(sampling_rate > 0.0 && sampling_rate <= 1.0))
            throw ConfigError("sampling_rate must be in (0, 1]");
        if (seeds_for_report == 0) throw ConfigError("seeds_for_report must be positive");
        plan.validate();
    }

    json echo() const {
        json j;
        j["method"] = method_name(method);
        j["measure"] = measure.name();
        j["alpha"] = alpha;
        j["beta"] = beta;
        j["kappa"] = kappa;
        j["sp_alpha"] = sp_alpha;
        j["sp_beta"] = sp_beta;
        j["weight_decay"] = weight_decay;
        j["base_lr"] = base_lr;
        j["momentum"] = momentum;
        j["epochs"] = epochs;
        j["batch_classes"] = plan.classes_per_batch;
        j["batch_per_class"] = plan.samples_per_class;
        j["uniform_batches"] = uniform_batches;
        j["sampling_rate"] = sampling_rate;
        j["seed"] = seed;
        j["seeds_for_report"] = seeds_for_report;
        j["schedule_per_iteration"] = schedule_per_iteration;
        j["input_dim"] = model.input_dim;
        j["hidden"] = model.feature_layer_widths;
        j["num_classes"] = model.num_classes;
        return j;
    }
};

struct EpochRecord {
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_cls_loss = 0.0;
    double train_sbr_loss = 0.0;
    double reg_loss = 0.0;
    double train_acc = 0.0;
    double test_acc = 0.0;
};

struct RunReport {
    std::vector<EpochRecord> epochs;
    double final_test_acc = 0.0;
    double wall_time_sec = 0.0;
    json config_echo;
};

struct MultiSeedReport {
    std::vector<RunReport> runs;
    double test_acc_mean = 0.0;
    double test_acc_std = 0.0;
};

// Fraction of argmax-correct predictions; ties break toward the lowest
// class index.
inline double evaluate(const Model& model, const Dataset& ds) {
    ds.validate();
    Tensor logits = model.logits(ds.features);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < logits.cols(); ++j)
            if (logits.at(i, j) > logits.at(i, best)) best = j;
        if (best == static_cast<std::size_t>(ds.labels[i])) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

namespace detail {

struct BatchTensors {
    Tensor x;
    std::vector<int> labels;
};

inline BatchTensors gather_batch(const Dataset& ds, const std::vector<std::size_t>& idx) {
    BatchTensors b;
    b.x = Tensor({idx.size(), ds.input_dim()});
    b.labels.resize(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        for (std::size_t j = 0; j < ds.input_dim(); ++j)
            b.x.at(r, j) = ds.features.at(idx[r], j);
        b.labels[r] = ds.labels[idx[r]];
    }
    return b;
}

struct StepLosses {
    double cls = 0.0;
    double sbr = 0.0;
    double reg = 0.0;
};

// One optimizer step on one minibatch; returns the logged loss values.
inline StepLosses train_step(Model& model, const Model* source_model,
                             const TrainConfig& cfg, const SourceSnapshot* snapshot,
                             const BatchTensors& batch, Sgd& opt,
                             const std::vector<ParamGroup>& groups, double lr) {
    Tape tape;
    ForwardPass fp = model.forward(tape, batch.x);
    NodeId cls = cross_entropy(tape, fp.logits, batch.labels);
    NodeId total = cls;
    StepLosses out;
    out.cls = tape.value(cls).item();

    if (cfg.method == Method::sbr) {
        NodeId sbr = (cfg.measure.kind == Measure::Kind::squared_euclidean)
                         ? sbr_center(tape, fp.features, batch.labels)
                         : sbr_pairwise(tape, fp.features, batch.labels, cfg.measure);
        out.sbr = tape.value(sbr).item();
        total = tape.add(total, tape.scale(sbr, cfg.beta));
    } else if (cfg.method == Method::l2sp) {
        std::vector<std::pair<NodeId, const Tensor*>> wf;
        std::vector<NodeId> wg;
        for (const auto& name : model.feature_param_names())
            wf.push_back({fp.params.at(name), &snapshot->w_f_star.at(name)});
        for (const auto& name : model.classifier_param_names())
            wg.push_back(fp.params.at(name));
        NodeId reg = l2sp_reg(tape, wf, wg, cfg.sp_alpha, cfg.sp_beta);
        out.reg = tape.value(reg).item();
        total = tape.add(total, reg);
    } else if (cfg.method == Method::delta_lite) {
        if (source_model == nullptr)
            throw ConfigError("delta_lite requires a source model for reference features");
        Tensor src_feat = source_model->features(batch.x);
        NodeId reg = delta_lite_reg(tape, fp.features, src_feat);
        out.reg = tape.value(reg).item();
        total = tape.add(total, tape.scale(reg, cfg.beta));
    }

    tape.backward(total);
    GradMap grads;
    for (const auto& [name, node] : fp.params) grads[name] = tape.grad(node);
    opt.step(model, grads, groups, lr);
    return out;
}

inline std::vector<ParamGroup> make_groups(const Model& model, const TrainConfig& cfg) {
    const bool optimizer_wd = cfg.method != Method::l2sp;  // L2-SP replaces L2
    const double wd_f = cfg.feature_weight_decay >= 0.0 ? cfg.feature_weight_decay
                                                        : cfg.weight_decay;
    ParamGroup classifier{model.classifier_param_names(), 1.0,
                          optimizer_wd ? cfg.weight_decay : 0.0};
    ParamGroup feature{model.feature_param_names(), 1.0 / cfg.kappa,
                       optimizer_wd ? wd_f : 0.0};
    return {classifier, feature};
}

}  // namespace detail

struct FinetuneResult {
    Model model;
    RunReport report;
};

// Fine-tunes from a source snapshot per the two-loss framework: stratified
// batches, SBR (or a baseline regularizer) on features, gradient-reduce,
// cross-entropy, grouped SGD under a cosine schedule.
inline FinetuneResult finetune_with_model(const TrainConfig& config,
                                          const SourceSnapshot& snapshot,
                                          const Dataset& target_train,
                                          const Dataset& target_test) {
    const TrainConfig cfg = config.resolved();
    const auto t0 = std::chrono::steady_clock::now();

    Dataset train = cfg.sampling_rate < 1.0
                        ? subsample(target_train, cfg.sampling_rate, mix64(cfg.seed, 0x5ab5))
                        : target_train;
    Model model = Model::init(cfg.model, cfg.seed, &snapshot, cfg.alpha);
    Model source_model;
    if (cfg.method == Method::delta_lite)
        source_model = Model::init(cfg.model, cfg.seed, &snapshot, 1.0);
    Sgd opt(cfg.momentum);
    const std::vector<ParamGroup> groups = detail::make_groups(model, cfg);

    const std::size_t batches_per_epoch =
        cfg.uniform_batches
            ? uniform_batches(train, cfg.plan.classes_per_batch * cfg.plan.samples_per_class,
                              mix64(cfg.seed, 1))
                  .size()
            : stratified_batches(train, cfg.plan, mix64(cfg.seed, 1)).size();
    CosineSchedule sched{cfg.base_lr, 0.0,
                         cfg.schedule_per_iteration ? cfg.epochs * batches_per_epoch
                                                    : cfg.epochs};

    RunReport report;
    report.config_echo = cfg.echo();
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const std::uint64_t eseed = mix64(cfg.seed, epoch + 1);
        auto batches = cfg.uniform_batches
                           ? uniform_batches(train,
                                             cfg.plan.classes_per_batch *
                                                 cfg.plan.samples_per_class,
                                             eseed)
                           : stratified_batches(train, cfg.plan, eseed);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = sched.lr_at(cfg.schedule_per_iteration ? step : epoch);
        for (const auto& idx : batches) {
            const double lr = sched.lr_at(cfg.schedule_per_iteration ? step : epoch);
            auto batch = detail::gather_batch(train, idx);
            auto losses = detail::train_step(model, &source_model, cfg, &snapshot, batch,
                                             opt, groups, lr);
            rec.train_cls_loss += losses.cls;
            rec.train_sbr_loss += losses.sbr;
            rec.reg_loss += losses.reg;
            ++step;
        }
        const double nb = static_cast<double>(batches.size());
        rec.train_cls_loss /= nb;
        rec.train_sbr_loss /= nb;
        rec.reg_loss /= nb;
        rec.train_acc = evaluate(model, train);
        rec.test_acc = evaluate(model, target_test);
        report.epochs.push_back(rec);
    }
    report.final_test_acc = report.epochs.back().test_acc;
    report.wall_time_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(model), std::move(report)};
}

inline RunReport finetune(const TrainConfig& config, const SourceSnapshot& snapshot,
                          const Dataset& target_train, const Dataset& target_test) {
    return finetune_with_model(config, snapshot, target_train, target_test).report;
}

// Trains the source model (feature extractor + source classifier) with
// plain cross-entropy + L2 and returns it; callers persist the snapshot.
inline Model pretrain(const TrainConfig& config, const Dataset& source) {
    TrainConfig cfg = config;
    cfg.method = Method::baseline_l2;
    cfg.alpha = 1.0;
    cfg.kappa = 1.0;
    cfg = cfg.resolved();
    source.validate();

    Model model = Model::init(cfg.model, cfg.seed, nullptr, 1.0);
    Sgd opt(cfg.momentum);
    const std::vector<ParamGroup> groups = detail::make_groups(model, cfg);
    CosineSchedule sched{cfg.base_lr, 0.0, cfg.epochs};
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = sched.lr_at(epoch);
        auto batches = stratified_batches(source, cfg.plan, mix64(cfg.seed, epoch + 1));
        for (const auto& idx : batches) {
            auto batch = detail::gather_batch(source, idx);
            detail::train_step(model, nullptr, cfg, nullptr, batch, opt, groups, lr);
        }
    }
    return model;
}

inline MultiSeedReport finetune_multi(const TrainConfig& config,
                                      const SourceSnapshot& snapshot,
                                      const Dataset& target_train,
                                      const Dataset& target_test) {
    MultiSeedReport out;
    for (std::size_t s = 0; s < config.seeds_for_report; ++s) {
        TrainConfig cfg = config;
        cfg.seed = config.seed + s;
        out.runs.push_back(finetune(cfg, snapshot, target_train, target_test));
    }
    double sum = 0.0;
    for (const auto& r : out.runs) sum += r.final_test_acc;
    out.test_acc_mean = sum / static_cast<double>(out.runs.size());
    double var = 0.0;
    for (const auto& r : out.runs) {
        const double d = r.final_test_acc - out.test_acc_mean;
        var += d * d;
    }
    out.test_acc_std = out.runs.size() > 1
                           ? std::sqrt(var / static_cast<double>(out.runs.size() - 1))
                           : 0.0;
    return out;
}

// --- sweeps ----------------------------------------------------------------

enum class SweepAxis { beta_grid, measure, sampling_rate };

inline SweepAxis parse_axis(const std::string& s) {
    if (s == "beta_grid") return SweepAxis::beta_grid;
    if (s == "measure") return SweepAxis::measure;
    if (s == "sampling_rate") return SweepAxis::sampling_rate;
    throw ConfigError("unknown sweep axis: " + s);
}

struct SweepCell {
    std::string value;
    bool ok = false;
    std::string error;
    MultiSeedReport report;
};

inline std::size_t sweep_workers() {
    std::size_t n = std::thread::hardware_concurrency();
    if (n == 0) n = 1;
    if (const char* env = std::getenv("SBR_LAB_THREADS")) {
        const long cap = std::strtol(env, nullptr, 10);
        if (cap > 0) n = std::min<std::size_t>(n, static_cast<std::size_t>(cap));
    }
    return n;
}

// One multi-seed run per axis value; failed cells are recorded, not fatal.
inline std::vector<SweepCell> sweep(const TrainConfig& base, SweepAxis axis,
                                    const std::vector<std::string>& values,
                                    const SourceSnapshot& snapshot,
                                    const Dataset& target_train, const Dataset& target_test) {
    if (values.empty()) throw ConfigError("sweep values must be nonempty");
    std::vector<SweepCell> cells(values.size());
    std::atomic<std::size_t> next{0};
    auto work = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= values.size()) return;
            SweepCell& cell = cells[i];
            cell.value = values[i];
            try {
                TrainConfig cfg = base;
                switch (axis) {
                    case SweepAxis::beta_grid: cfg.beta = std::stod(values[i]); break;
                    case SweepAxis::measure: cfg.measure = Measure::parse(values[i]); break;
                    case SweepAxis::sampling_rate:
                        cfg.sampling_rate = std::stod(values[i]);
                        break;
                }
                cell.report = finetune_multi(cfg, snapshot, target_train, target_test);
                cell.ok = true;
            } catch (const std::exception& e) {
                cell.error = e.what();
            }
        }
    };
    const std::size_t nworkers = std::min(sweep_workers(), values.size());
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t + 1 < nworkers; ++t) threads.emplace_back(work);
    work();
    for (auto& t : threads) t.join();
    return cells;
}

// --- report serialization --------------------------------------------------

inline json epoch_to_json(const EpochRecord& r) {
    json j;
    j["epoch"] = r.epoch;
    j["lr"] = r.lr;
    j["train_cls_loss"] = r.train_cls_loss;
    j["train_sbr_loss"] = r.train_sbr_loss;
    j["reg_loss"] = r.reg_loss;
    j["train_acc"] = r.train_acc;
    j["test_acc"] = r.test_acc;
    return j;
}

// Line-delimited records; written to a temp file and renamed into place.
inline void write_report_jsonl(const std::vector<json>& records, const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp);
        if (!f) throw IoError("cannot open for writing: " + tmp);
        for (const auto& r : records) f << r.dump() << "\n";
        if (!f) throw IoError("write failed: " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp + " -> " + path + ": " + ec.message());
}

inline std::vector<json> report_records(const MultiSeedReport& rep) {
    std::vector<json> out;
    for (std::size_t s = 0; s < rep.runs.size(); ++s) {
        for (const auto& e : rep.runs[s].epochs) {
            json j = epoch_to_json(e);
            j["run"] = s;
            out.push_back(j);
        }
    }
    json fin;
    fin["final"] = true;
    fin["test_acc_mean"] = rep.test_acc_mean;
    fin["test_acc_std"] = rep.test_acc_std;
    if (!rep.runs.empty()) {
        fin["config"] = rep.runs.front().config_echo;
        double wall = 0.0;
        for (const auto& r : rep.runs) wall += r.wall_time_sec;
        fin["wall_time_sec"] = wall;
    }
    out.push_back(fin);
    return out;
}

// Raw feature-extractor outputs for external plotting.
inline void dump_features(const Model& model, const Dataset& ds, const std::string& path) {
    ds.validate();
    Tensor feats = model.features(ds.features);
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << "label";
    for (std::size_t j = 0; j < feats.cols(); ++j) f << ",f" << j;
    f << "\n";
    char buf[64];
    for (std::size_t i = 0; i < ds.size(); ++i) {
        f << ds.labels[i];
        for (std::size_t j = 0; j < feats.cols(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", feats.at(i, j));
            f << ',' << buf;
        }
        f << "\n";
    }
    if (!f) throw IoError("write failed: " + path);
}

}  // namespace sbrlab
