// SPDX-License-Identifier: Apache-2.0
//
// Experiment CLI: synthetic data generation, pretraining, fine-tuning,
// evaluation, sweeps, self checks, feature dumps.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sbrlab/harness.hpp"
#include "sbrlab/selfcheck.hpp"

namespace fs = std::filesystem;
using namespace sbrlab;

namespace {

constexpr const char* kConfigKeys[] = {
    "method",        "measure",       "alpha",
    "beta",          "kappa",         "sp_alpha",
    "sp_beta",       "weight_decay",  "feature_weight_decay",
    "base_lr",       "momentum",      "epochs",
    "batch_classes", "batch_per_class", "drop_incomplete",
    "uniform_batches", "sampling_rate", "seeds",
    "schedule_per_iteration", "hidden", "input_dim",
    "num_classes",
};

using KvMap = std::map<std::string, std::string>;

KvMap parse_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file: " + path);
    KvMap kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config parse error at " + path + ":" +
                              std::to_string(lineno) + ": expected key=value");
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("bad numeric value for " + key + ": '" + v + "'");
    }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const unsigned long long x = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("bad integer value for " + key + ": '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    throw ConfigError("bad boolean value for " + key + ": '" + v + "'");
}

std::vector<std::size_t> to_widths(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string cell;
    while (std::getline(ss, cell, ','))
        out.push_back(static_cast<std::size_t>(to_u64(key, cell)));
    if (out.empty()) throw ConfigError("empty width list for " + key);
    return out;
}

TrainConfig config_from(const KvMap& kv) {
    TrainConfig cfg;
    cfg.model.input_dim = 20;
    cfg.model.feature_layer_widths = {32, 16};
    cfg.model.num_classes = 10;
    for (const auto& [key, v] : kv) {
        if (key == "method") cfg.method = parse_method(v);
        else if (key == "measure") cfg.measure = Measure::parse(v);
        else if (key == "alpha") cfg.alpha = to_double(key, v);
        else if (key == "beta") cfg.beta = to_double(key, v);
        else if (key == "kappa") cfg.kappa = to_double(key, v);
        else if (key == "sp_alpha") cfg.sp_alpha = to_double(key, v);
        else if (key == "sp_beta") cfg.sp_beta = to_double(key, v);
        else if (key == "weight_decay") cfg.weight_decay = to_double(key, v);
        else if (key == "feature_weight_decay") cfg.feature_weight_decay = to_double(key, v);
        else if (key == "base_lr") cfg.base_lr = to_double(key, v);
        else if (key == "momentum") cfg.momentum = to_double(key, v);
        else if (key == "epochs") cfg.epochs = static_cast<std::size_t>(to_u64(key, v));
        else if (key == "batch_classes")
            cfg.plan.classes_per_batch = static_cast<std::size_t>(to_u64(key, v));
        else if (key == "batch_per_class")
            cfg.plan.samples_per_class = static_cast<std::size_t>(to_u64(key, v));
        else if (key == "drop_incomplete") cfg.plan.drop_incomplete = to_bool(key, v);
        else if (key == "uniform_batches") cfg.uniform_batches = to_bool(key, v);
        else if (key == "sampling_rate") cfg.sampling_rate = to_double(key, v);
        else if (key == "seeds") cfg.seeds_for_report = static_cast<std::size_t>(to_u64(key, v));
        else if (key == "schedule_per_iteration") cfg.schedule_per_iteration = to_bool(key, v);
        else if (key == "hidden") cfg.model.feature_layer_widths = to_widths(key, v);
        else if (key == "input_dim") cfg.model.input_dim = static_cast<std::size_t>(to_u64(key, v));
        else if (key == "num_classes") cfg.model.num_classes = static_cast<std::size_t>(to_u64(key, v));
        else throw ConfigError("unknown config key: " + key);
    }
    return cfg;
}

struct TrainArgs {
    std::string config_path;
    KvMap overrides;
    std::uint64_t seed = 0;
};

void add_config_options(CLI::App* cmd, TrainArgs& args, bool require_seed) {
    cmd->add_option("--config", args.config_path, "key=value config file");
    for (const char* key : kConfigKeys) {
        cmd->add_option_function<std::string>(
            std::string("--") + key,
            [&args, key](const std::string& v) { args.overrides[key] = v; },
            std::string("override config key ") + key);
    }
    auto* seed_opt = cmd->add_option("--seed", args.seed, "base RNG seed");
    if (require_seed) seed_opt->required();
}

TrainConfig resolve_config(const TrainArgs& args) {
    KvMap kv;
    if (!args.config_path.empty()) kv = parse_config_file(args.config_path);
    for (const auto& [k, v] : args.overrides) kv[k] = v;
    TrainConfig cfg = config_from(kv);
    cfg.seed = args.seed;
    return cfg;
}

Dataset load_dataset(const std::string& path) {
    if (!fs::exists(path)) throw IoError("dataset not found: " + path);
    return load_csv(path);
}

void print_multi(const MultiSeedReport& rep) {
    std::printf("test_acc %.4f +/- %.4f over %zu seeds\n", rep.test_acc_mean,
                rep.test_acc_std, rep.runs.size());
}

int run(int argc, char** argv) {
    CLI::App app{"sbr-lab: small-scale transfer-learning experiments"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic transfer benchmark");
    SyntheticTransferSpec gspec;
    std::string gen_out;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--input_dim", gspec.input_dim);
    gen->add_option("--source_classes", gspec.source_classes);
    gen->add_option("--target_classes", gspec.target_classes);
    gen->add_option("--source_per_class", gspec.source_samples_per_class);
    gen->add_option("--train_per_class", gspec.target_train_per_class);
    gen->add_option("--test_per_class", gspec.target_test_per_class);
    gen->add_option("--spread", gspec.cluster_spread);
    gen->add_option("--rotation", gspec.rotation_strength);
    gen->add_option("--noise", gspec.noise_scale);
    gen->add_option("--seed", gspec.seed)->required();

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "train the source model");
    TrainArgs pre_args;
    std::string pre_data, pre_out;
    pre->add_option("--data", pre_data, "benchmark directory (gen-data output)")->required();
    pre->add_option("--out", pre_out, "checkpoint output path")->required();
    add_config_options(pre, pre_args, true);

    // finetune
    auto* fin = app.add_subcommand("finetune", "fine-tune from a source checkpoint");
    TrainArgs fin_args;
    std::string fin_data, fin_src, fin_report, fin_model_out;
    fin->add_option("--data", fin_data, "benchmark directory")->required();
    fin->add_option("--source", fin_src, "source checkpoint")->required();
    fin->add_option("--report", fin_report, "JSONL report output path");
    fin->add_option("--model-out", fin_model_out, "save the last seed's model here");
    add_config_options(fin, fin_args, true);

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    std::string ev_ckpt, ev_data;
    ev->add_option("--checkpoint", ev_ckpt)->required();
    ev->add_option("--data", ev_data, "CSV dataset")->required();

    // sweep
    auto* sw = app.add_subcommand("sweep", "run a hyperparameter sweep");
    TrainArgs sw_args;
    std::string sw_data, sw_src, sw_axis, sw_values, sw_report;
    sw->add_option("--data", sw_data)->required();
    sw->add_option("--source", sw_src)->required();
    sw->add_option("--axis", sw_axis, "beta_grid | measure | sampling_rate")->required();
    sw->add_option("--values", sw_values, "comma-separated axis values")->required();
    sw->add_option("--report", sw_report, "JSONL report output path");
    add_config_options(sw, sw_args, true);

    // selfcheck
    auto* sc = app.add_subcommand("selfcheck", "run the identity/equivalence check suite");

    // dump-features
    auto* df = app.add_subcommand("dump-features", "write feature-extractor outputs as CSV");
    std::string df_ckpt, df_data, df_out;
    df->add_option("--checkpoint", df_ckpt)->required();
    df->add_option("--data", df_data)->required();
    df->add_option("--out", df_out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // map parse failures onto the usage/config exit code; --help stays 0
        return app.exit(e) == 0 ? 0 : 1;
    }

    if (gen->parsed()) {
        gspec.validate();
        if (!fs::exists(gen_out)) throw IoError("output directory does not exist: " + gen_out);
        auto data = gen_synthetic_transfer(gspec);
        save_csv(data.source, gen_out + "/source.csv");
        save_csv(data.target_train, gen_out + "/target_train.csv");
        save_csv(data.target_test, gen_out + "/target_test.csv");
        std::map<std::string, std::string> meta{
            {"input_dim", std::to_string(gspec.input_dim)},
            {"source_classes", std::to_string(gspec.source_classes)},
            {"target_classes", std::to_string(gspec.target_classes)},
            {"source_per_class", std::to_string(gspec.source_samples_per_class)},
            {"train_per_class", std::to_string(gspec.target_train_per_class)},
            {"test_per_class", std::to_string(gspec.target_test_per_class)},
            {"spread", std::to_string(gspec.cluster_spread)},
            {"rotation", std::to_string(gspec.rotation_strength)},
            {"noise", std::to_string(gspec.noise_scale)},
            {"seed", std::to_string(gspec.seed)},
        };
        save_metadata(meta, gen_out + "/benchmark.meta");
        std::printf("wrote %s/{source,target_train,target_test}.csv\n", gen_out.c_str());
        return 0;
    }

    if (pre->parsed()) {
        Dataset source = load_dataset(pre_data + "/source.csv");
        TrainConfig cfg = resolve_config(pre_args);
        cfg.model.input_dim = source.input_dim();
        cfg.model.num_classes = source.num_classes;
        const fs::path out_dir = fs::path(pre_out).parent_path();
        if (!out_dir.empty() && !fs::exists(out_dir))
            throw IoError("output directory does not exist: " + out_dir.string());
        Model model = pretrain(cfg, source);
        model.save(pre_out);
        std::printf("source train_acc %.4f, checkpoint %s\n", evaluate(model, source),
                    pre_out.c_str());
        return 0;
    }

    if (fin->parsed()) {
        Dataset train = load_dataset(fin_data + "/target_train.csv");
        Dataset test = load_dataset(fin_data + "/target_test.csv");
        SourceSnapshot snap = Model::load_snapshot(fin_src);
        TrainConfig cfg = resolve_config(fin_args);
        cfg.model.input_dim = train.input_dim();
        cfg.model.num_classes = train.num_classes;
        MultiSeedReport rep = finetune_multi(cfg, snap, train, test);
        if (!fin_report.empty()) write_report_jsonl(report_records(rep), fin_report);
        if (!fin_model_out.empty()) {
            TrainConfig last = cfg;
            last.seed = cfg.seed + cfg.seeds_for_report - 1;
            FinetuneResult res = finetune_with_model(last, snap, train, test);
            res.model.save(fin_model_out);
        }
        print_multi(rep);
        return 0;
    }

    if (ev->parsed()) {
        Model model = Model::load(ev_ckpt);
        Dataset ds = load_dataset(ev_data);
        std::printf("accuracy %.6f\n", evaluate(model, ds));
        return 0;
    }

    if (sw->parsed()) {
        Dataset train = load_dataset(sw_data + "/target_train.csv");
        Dataset test = load_dataset(sw_data + "/target_test.csv");
        SourceSnapshot snap = Model::load_snapshot(sw_src);
        TrainConfig cfg = resolve_config(sw_args);
        cfg.model.input_dim = train.input_dim();
        cfg.model.num_classes = train.num_classes;
        std::vector<std::string> values;
        std::stringstream ss(sw_values);
        std::string cell;
        while (std::getline(ss, cell, ',')) values.push_back(cell);
        auto cells = sweep(cfg, parse_axis(sw_axis), values, snap, train, test);
        std::vector<json> records;
        for (const auto& c : cells) {
            json j;
            j["axis"] = sw_axis;
            j["value"] = c.value;
            if (c.ok) {
                j["test_acc_mean"] = c.report.test_acc_mean;
                j["test_acc_std"] = c.report.test_acc_std;
                std::printf("%-12s %-22s %.4f +/- %.4f\n", sw_axis.c_str(), c.value.c_str(),
                            c.report.test_acc_mean, c.report.test_acc_std);
            } else {
                j["error"] = c.error;
                std::printf("%-12s %-22s FAILED: %s\n", sw_axis.c_str(), c.value.c_str(),
                            c.error.c_str());
            }
            records.push_back(j);
        }
        if (!sw_report.empty()) write_report_jsonl(records, sw_report);
        return 0;
    }

    if (sc->parsed()) {
        bool all_pass = true;
        for (const auto& r : selfcheck()) {
            std::printf("[%s] %s (%s)\n", r.pass ? "PASS" : "FAIL", r.name.c_str(),
                        r.detail.c_str());
            all_pass = all_pass && r.pass;
        }
        return all_pass ? 0 : 2;
    }

    if (df->parsed()) {
        Model model = Model::load(df_ckpt);
        Dataset ds = load_dataset(df_data);
        dump_features(model, ds, df_out);
        std::printf("wrote %s\n", df_out.c_str());
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 3;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
