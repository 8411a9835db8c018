// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sbrlab/common.hpp"
#include "sbrlab/tensor.hpp"

namespace sbrlab {

struct Dataset {
    Tensor features;          // [N, input_dim]
    std::vector<int> labels;  // length N
    std::size_t num_classes = 0;

    std::size_t size() const { return labels.size(); }
    std::size_t input_dim() const { return features.cols(); }

    void validate() const {
        if (labels.empty()) throw ConfigError("dataset is empty");
        if (features.rows() != labels.size())
            throw ShapeError("dataset features/labels length mismatch");
        for (int y : labels)
            if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
                throw ConfigError("dataset label " + std::to_string(y) +
                                  " out of range [0, " + std::to_string(num_classes) + ")");
    }

    Tensor row(std::size_t i) const {
        const std::size_t d = input_dim();
        Tensor t({1, d});
        for (std::size_t j = 0; j < d; ++j) t.at(0, j) = features.at(i, j);
        return t;
    }

    Dataset select(const std::vector<std::size_t>& idx) const {
        Dataset out;
        out.num_classes = num_classes;
        out.features = Tensor({idx.size(), input_dim()});
        out.labels.resize(idx.size());
        for (std::size_t r = 0; r < idx.size(); ++r) {
            for (std::size_t j = 0; j < input_dim(); ++j)
                out.features.at(r, j) = features.at(idx[r], j);
            out.labels[r] = labels[idx[r]];
        }
        return out;
    }
};

struct SyntheticTransferSpec {
    std::size_t input_dim = 20;
    std::size_t source_classes = 15;
    std::size_t target_classes = 10;
    std::size_t source_samples_per_class = 60;
    std::size_t target_train_per_class = 30;
    std::size_t target_test_per_class = 100;
    double cluster_spread = 1.0;
    double rotation_strength = 0.3;  // radians per Givens plane
    double noise_scale = 0.05;       // map perturbation magnitude
    std::uint64_t seed = 0;

    void validate() const {
        if (input_dim == 0 || source_classes == 0 || target_classes == 0 ||
            source_samples_per_class == 0 || target_train_per_class == 0 ||
            target_test_per_class == 0)
            throw ConfigError("synthetic spec counts must be positive");
        if (cluster_spread < 0.0 || rotation_strength < 0.0 || noise_scale < 0.0)
            throw ConfigError("spread/shift parameters must be nonnegative");
    }
};

// Class-balanced minibatch composition: P classes x K samples per batch.
struct BatchPlan {
    std::size_t classes_per_batch = 8;   // P
    std::size_t samples_per_class = 4;   // K
    bool drop_incomplete = true;

    void validate() const {
        if (classes_per_batch < 1 || samples_per_class < 1)
            throw ConfigError("batch plan P and K must be >= 1");
    }
};

struct SyntheticTransfer {
    Dataset source;
    Dataset target_train;
    Dataset target_test;
};

namespace detail {

// Square matrix as flat row-major vector.
inline std::vector<double> random_map(std::size_t n, Rng& rng) {
    std::vector<double> m(n * n);
    const double s = 1.0 / std::sqrt(static_cast<double>(n));
    for (double& v : m) v = s * rng.normal();
    return m;
}

// Compose a map with Givens rotations of a fixed angle on random planes.
inline std::vector<double> rotate_map(const std::vector<double>& m, std::size_t n,
                                      double angle, Rng& rng) {
    std::vector<double> r = m;  // result = m * R, applied plane by plane
    const double c = std::cos(angle), s = std::sin(angle);
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t p = rng.index(n);
        std::size_t q = rng.index(n - 1);
        if (q >= p) ++q;
        if (angle == 0.0) continue;
        for (std::size_t i = 0; i < n; ++i) {
            const double a = r[i * n + p], b = r[i * n + q];
            r[i * n + p] = c * a - s * b;
            r[i * n + q] = s * a + c * b;
        }
    }
    return r;
}

inline Dataset sample_clusters(const std::vector<std::vector<double>>& centers,
                               const std::vector<double>& map, std::size_t dim,
                               std::size_t per_class, double spread, Rng& rng) {
    Dataset ds;
    ds.num_classes = centers.size();
    ds.features = Tensor({centers.size() * per_class, dim});
    ds.labels.resize(centers.size() * per_class);
    std::size_t row = 0;
    std::vector<double> z(dim);
    for (std::size_t c = 0; c < centers.size(); ++c) {
        for (std::size_t s = 0; s < per_class; ++s, ++row) {
            for (std::size_t j = 0; j < dim; ++j)
                z[j] = centers[c][j] + spread * rng.normal();
            for (std::size_t i = 0; i < dim; ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < dim; ++j) acc += map[i * dim + j] * z[j];
                ds.features.at(row, i) = acc;
            }
            ds.labels[row] = static_cast<int>(c);
        }
    }
    return ds;
}

inline std::vector<std::vector<double>> draw_centers(std::size_t classes, std::size_t dim,
                                                     double scale, Rng& rng) {
    std::vector<std::vector<double>> centers(classes, std::vector<double>(dim));
    for (auto& c : centers)
        for (double& v : c) v = scale * rng.normal();
    return centers;
}

}  // namespace detail

// Source and target live in the same latent cluster space; the target's
// observation map is the source map composed with a rotation plus noise,
// so source pretraining transfers partially.
inline SyntheticTransfer gen_synthetic_transfer(const SyntheticTransferSpec& spec) {
    spec.validate();
    const std::size_t n = spec.input_dim;
    Rng root(spec.seed);
    Rng map_rng = root.fork(1);
    Rng src_centers_rng = root.fork(2);
    Rng tgt_centers_rng = root.fork(3);
    Rng src_sample_rng = root.fork(4);
    Rng tgt_train_rng = root.fork(5);
    Rng tgt_test_rng = root.fork(6);

    const std::vector<double> source_map = detail::random_map(n, map_rng);
    std::vector<double> target_map =
        detail::rotate_map(source_map, n, spec.rotation_strength, map_rng);
    for (double& v : target_map) v += spec.noise_scale * map_rng.normal() /
                                      std::sqrt(static_cast<double>(n));

    const double center_scale = 3.0;
    auto src_centers =
        detail::draw_centers(spec.source_classes, n, center_scale, src_centers_rng);
    auto tgt_centers =
        detail::draw_centers(spec.target_classes, n, center_scale, tgt_centers_rng);

    SyntheticTransfer out;
    out.source = detail::sample_clusters(src_centers, source_map, n,
                                         spec.source_samples_per_class,
                                         spec.cluster_spread, src_sample_rng);
    out.target_train = detail::sample_clusters(tgt_centers, target_map, n,
                                               spec.target_train_per_class,
                                               spec.cluster_spread, tgt_train_rng);
    out.target_test = detail::sample_clusters(tgt_centers, target_map, n,
                                              spec.target_test_per_class,
                                              spec.cluster_spread, tgt_test_rng);
    return out;
}

// Per class keep max(1, round-half-even(rate * N_class)) examples without
// replacement.
inline Dataset subsample(const Dataset& ds, double rate, std::uint64_t seed) {
    if (!(rate > 0.0 && rate <= 1.0))
        throw ConfigError("sampling rate must be in (0, 1], got " + std::to_string(rate));
    ds.validate();
    Rng rng(seed);
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);
    std::vector<std::size_t> keep;
    for (auto& [lab, idx] : by_class) {
        const double exact = rate * static_cast<double>(idx.size());
        // nearbyint under the default rounding mode is round-half-to-even
        std::size_t k = static_cast<std::size_t>(std::nearbyint(exact));
        k = std::max<std::size_t>(1, std::min(k, idx.size()));
        rng.shuffle(idx);
        keep.insert(keep.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    }
    std::sort(keep.begin(), keep.end());
    return ds.select(keep);
}

// One epoch of P x K batches. Each batch holds samples_per_class examples
// from classes_per_batch distinct classes; every example appears at most
// once per epoch.
inline std::vector<std::vector<std::size_t>> stratified_batches(const Dataset& ds,
                                                                const BatchPlan& plan,
                                                                std::uint64_t seed) {
    plan.validate();
    ds.validate();
    Rng rng(seed);
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);

    // Chunk each class into groups of K.
    struct Chunk {
        int label;
        std::vector<std::size_t> idx;
    };
    std::vector<Chunk> chunks;
    bool any_full = false;
    for (auto& [lab, idx] : by_class) {
        if (idx.size() >= plan.samples_per_class) any_full = true;
        rng.shuffle(idx);
        std::size_t pos = 0;
        while (idx.size() - pos >= plan.samples_per_class) {
            Chunk c{lab, {idx.begin() + static_cast<std::ptrdiff_t>(pos),
                          idx.begin() + static_cast<std::ptrdiff_t>(pos + plan.samples_per_class)}};
            chunks.push_back(std::move(c));
            pos += plan.samples_per_class;
        }
        if (!plan.drop_incomplete && pos < idx.size()) {
            Chunk c{lab, {idx.begin() + static_cast<std::ptrdiff_t>(pos), idx.end()}};
            chunks.push_back(std::move(c));
        }
    }
    if (chunks.empty() || !any_full)
        throw ConfigError("infeasible batch plan: no class has " +
                          std::to_string(plan.samples_per_class) + " examples");

    // Greedily form batches of P chunks with distinct classes, preferring
    // the classes with the most remaining chunks.
    std::map<int, std::vector<Chunk>> pool;
    for (auto& c : chunks) pool[c.label].push_back(std::move(c));
    std::vector<int> class_order;
    for (auto& [lab, v] : pool) {
        rng.shuffle(v);
        class_order.push_back(lab);
    }
    std::vector<std::vector<std::size_t>> batches;
    for (;;) {
        std::vector<int> avail;
        for (int lab : class_order)
            if (!pool[lab].empty()) avail.push_back(lab);
        if (avail.empty()) break;
        std::stable_sort(avail.begin(), avail.end(), [&](int a, int b) {
            return pool[a].size() > pool[b].size();
        });
        const std::size_t take = std::min(plan.classes_per_batch, avail.size());
        std::vector<std::size_t> batch;
        for (std::size_t k = 0; k < take; ++k) {
            Chunk c = std::move(pool[avail[k]].back());
            pool[avail[k]].pop_back();
            batch.insert(batch.end(), c.idx.begin(), c.idx.end());
        }
        batches.push_back(std::move(batch));
    }
    rng.shuffle(batches);
    return batches;
}

// Plain uniform shuffling into fixed-size batches; pairless classes are
// absorbed by the SBR singleton rule.
inline std::vector<std::vector<std::size_t>> uniform_batches(const Dataset& ds,
                                                             std::size_t batch_size,
                                                             std::uint64_t seed) {
    ds.validate();
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    Rng rng(seed);
    std::vector<std::size_t> idx(ds.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    rng.shuffle(idx);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t pos = 0; pos < idx.size(); pos += batch_size) {
        const std::size_t end = std::min(pos + batch_size, idx.size());
        batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(pos),
                             idx.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

// --- CSV persistence -------------------------------------------------------

inline void save_csv(const Dataset& ds, const std::string& path) {
    ds.validate();
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << "label";
    for (std::size_t j = 0; j < ds.input_dim(); ++j) f << ",f" << j;
    f << "\n";
    char buf[64];
    for (std::size_t i = 0; i < ds.size(); ++i) {
        f << ds.labels[i];
        for (std::size_t j = 0; j < ds.input_dim(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", ds.features.at(i, j));
            f << ',' << buf;
        }
        f << "\n";
    }
    if (!f) throw IoError("write failed: " + path);
}

inline Dataset load_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    std::string line;
    if (!std::getline(f, line) || line.rfind("label", 0) != 0)
        throw IoError("parse error in " + path + " line 1: expected 'label,f0,...' header");
    std::size_t dim = 0;
    for (char ch : line)
        if (ch == ',') ++dim;
    if (dim == 0) throw IoError("parse error in " + path + " line 1: no feature columns");

    std::vector<double> values;
    std::vector<int> labels;
    std::size_t lineno = 1;
    int max_label = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::size_t col = 0;
        int label = 0;
        std::vector<double> row;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                if (col == 0) {
                    label = std::stoi(cell, &used);
                } else {
                    row.push_back(std::stod(cell, &used));
                }
                if (used != cell.size()) throw std::invalid_argument(cell);
            } catch (const std::exception&) {
                throw IoError("parse error in " + path + " line " + std::to_string(lineno) +
                              ": bad value '" + cell + "'");
            }
            ++col;
        }
        if (col != dim + 1)
            throw IoError("parse error in " + path + " line " + std::to_string(lineno) +
                          ": expected " + std::to_string(dim + 1) + " columns, got " +
                          std::to_string(col));
        if (label < 0)
            throw IoError("label out of range in " + path + " line " + std::to_string(lineno));
        labels.push_back(label);
        max_label = std::max(max_label, label);
        values.insert(values.end(), row.begin(), row.end());
    }
    if (labels.empty()) throw IoError("parse error in " + path + ": no data rows");
    Dataset ds;
    ds.features = Tensor({labels.size(), dim}, std::move(values));
    ds.labels = std::move(labels);
    ds.num_classes = static_cast<std::size_t>(max_label) + 1;
    ds.validate();
    return ds;
}

// Line-delimited key=value sidecar describing how a dataset was produced.
inline void save_metadata(const std::map<std::string, std::string>& kv,
                          const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path);
    for (const auto& [k, v] : kv) f << k << '=' << v << '\n';
    if (!f) throw IoError("write failed: " + path);
}

}  // namespace sbrlab
