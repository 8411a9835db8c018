// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "sbrlab/tape.hpp"

namespace sbrlab {

// Dissimilarity measure between two feature vectors.
struct Measure {
    enum class Kind { squared_euclidean, neg_cosine, neg_inner };

    Kind kind = Kind::squared_euclidean;
    double eps = 1e-12;  // cosine denominator guard

    static Measure squared_euclidean() { return {Kind::squared_euclidean, 1e-12}; }
    static Measure neg_cosine() { return {Kind::neg_cosine, 1e-12}; }
    static Measure neg_inner() { return {Kind::neg_inner, 1e-12}; }

    static Measure parse(const std::string& s) {
        if (s == "squared_euclidean") return squared_euclidean();
        if (s == "neg_cosine") return neg_cosine();
        if (s == "neg_inner") return neg_inner();
        throw ConfigError("unknown measure: " + s);
    }

    std::string name() const {
        switch (kind) {
            case Kind::squared_euclidean: return "squared_euclidean";
            case Kind::neg_cosine: return "neg_cosine";
            case Kind::neg_inner: return "neg_inner";
        }
        return "?";
    }

    // D(a, b) for d-dimensional rows starting at a and b.
    double operator()(const double* a, const double* b, std::size_t d) const {
        switch (kind) {
            case Kind::squared_euclidean: {
                double s = 0.0;
                for (std::size_t i = 0; i < d; ++i) {
                    const double t = a[i] - b[i];
                    s += t * t;
                }
                return 0.5 * s;
            }
            case Kind::neg_inner: {
                double s = 0.0;
                for (std::size_t i = 0; i < d; ++i) s += a[i] * b[i];
                return -s;
            }
            case Kind::neg_cosine: {
                double s = 0.0, na = 0.0, nb = 0.0;
                for (std::size_t i = 0; i < d; ++i) {
                    s += a[i] * b[i];
                    na += a[i] * a[i];
                    nb += b[i] * b[i];
                }
                return -s / (std::sqrt(na) * std::sqrt(nb) + eps);
            }
        }
        return 0.0;
    }

    // Accumulates w * dD(a, b)/da into ga and w * dD(a, b)/db into gb.
    void accumulate_grad(const double* a, const double* b, std::size_t d, double w,
                         double* ga, double* gb) const {
        switch (kind) {
            case Kind::squared_euclidean:
                for (std::size_t i = 0; i < d; ++i) {
                    const double t = a[i] - b[i];
                    ga[i] += w * t;
                    gb[i] -= w * t;
                }
                return;
            case Kind::neg_inner:
                for (std::size_t i = 0; i < d; ++i) {
                    ga[i] -= w * b[i];
                    gb[i] -= w * a[i];
                }
                return;
            case Kind::neg_cosine: {
                double s = 0.0, na2 = 0.0, nb2 = 0.0;
                for (std::size_t i = 0; i < d; ++i) {
                    s += a[i] * b[i];
                    na2 += a[i] * a[i];
                    nb2 += b[i] * b[i];
                }
                const double na = std::sqrt(na2), nb = std::sqrt(nb2);
                const double den = na * nb + eps;
                // d/da [-s/den] = -b/den + s * (nb * a / na) / den^2
                for (std::size_t i = 0; i < d; ++i) {
                    double t = -b[i] / den;
                    if (na > 0.0) t += s * (nb * a[i] / na) / (den * den);
                    ga[i] += w * t;
                }
                for (std::size_t i = 0; i < d; ++i) {
                    double t = -a[i] / den;
                    if (nb > 0.0) t += s * (na * b[i] / nb) / (den * den);
                    gb[i] += w * t;
                }
                return;
            }
        }
    }
};

// Per-class index groups of a batch, in ascending label order.
struct ClassGroups {
    struct Group {
        int label;
        std::vector<std::size_t> indices;
        std::size_t count() const { return indices.size(); }
        double pair_count() const {
            return static_cast<double>(indices.size()) *
                   static_cast<double>(indices.size() - 1);
        }
    };
    std::vector<Group> groups;

    static ClassGroups build(const std::vector<int>& labels) {
        std::map<int, std::vector<std::size_t>> by_label;
        for (std::size_t i = 0; i < labels.size(); ++i) by_label[labels[i]].push_back(i);
        ClassGroups cg;
        for (auto& [lab, idx] : by_label) cg.groups.push_back({lab, std::move(idx)});
        return cg;
    }

    // Mean feature of one group; features is [batch, d] row-major.
    static std::vector<double> center(const Group& g, const Tensor& features) {
        const std::size_t d = features.cols();
        std::vector<double> c(d, 0.0);
        for (std::size_t i : g.indices)
            for (std::size_t j = 0; j < d; ++j) c[j] += features.at(i, j);
        for (double& v : c) v /= static_cast<double>(g.count());
        return c;
    }
};

// Mean over the batch of -log softmax(logits)[label], max-stabilized.
inline NodeId cross_entropy(Tape& tape, NodeId logits, const std::vector<int>& labels) {
    const Tensor& L = tape.value(logits);
    if (L.rank() != 2 || L.rows() != labels.size())
        throw ShapeError("cross_entropy: logits " + shape_str(L.shape) + " vs " +
                         std::to_string(labels.size()) + " labels");
    const std::size_t m = L.rows(), C = L.cols();
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= C)
            throw ConfigError("label " + std::to_string(y) + " out of range [0, " +
                              std::to_string(C) + ")");
    Tensor softmax({m, C});
    double loss = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        double mx = L.at(i, 0);
        for (std::size_t j = 1; j < C; ++j) mx = std::max(mx, L.at(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < C; ++j) z += std::exp(L.at(i, j) - mx);
        const double lse = mx + std::log(z);
        loss += lse - L.at(i, static_cast<std::size_t>(labels[i]));
        for (std::size_t j = 0; j < C; ++j) softmax.at(i, j) = std::exp(L.at(i, j) - mx) / z;
    }
    loss /= static_cast<double>(m);
    return tape.custom(
        Tensor::scalar(loss), {logits},
        [sm = std::move(softmax), labels, m, C](Tape& t, NodeId self) {
            const double g = t.grad(self)[0] / static_cast<double>(m);
            auto& gl = t.grad_mut(t.parents(self)[0]);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < C; ++j) {
                    double v = sm.at(i, j);
                    if (j == static_cast<std::size_t>(labels[i])) v -= 1.0;
                    gl[i * C + j] += g * v;
                }
        });
}

// Eq-style pairwise form: per class, mean dissimilarity over ordered pairs.
// Classes with fewer than two members contribute exactly 0.
inline NodeId sbr_pairwise(Tape& tape, NodeId features, const std::vector<int>& labels,
                           const Measure& measure) {
    const Tensor& F = tape.value(features);
    if (F.rank() != 2 || F.rows() != labels.size())
        throw ShapeError("sbr_pairwise: features " + shape_str(F.shape) + " vs " +
                         std::to_string(labels.size()) + " labels");
    const std::size_t d = F.cols();
    ClassGroups cg = ClassGroups::build(labels);
    double loss = 0.0;
    for (const auto& g : cg.groups) {
        if (g.count() < 2) continue;
        double s = 0.0;
        for (std::size_t i : g.indices)
            for (std::size_t j : g.indices) {
                if (i == j) continue;
                s += measure(&F.data[i * d], &F.data[j * d], d);
            }
        loss += s / g.pair_count();
    }
    return tape.custom(
        Tensor::scalar(loss), {features},
        [cg = std::move(cg), measure, d](Tape& t, NodeId self) {
            const double up = t.grad(self)[0];
            const Tensor& F = t.value(t.parents(self)[0]);
            auto& gf = t.grad_mut(t.parents(self)[0]);
            for (const auto& g : cg.groups) {
                if (g.count() < 2) continue;
                const double w = up / g.pair_count();
                for (std::size_t i : g.indices)
                    for (std::size_t j : g.indices) {
                        if (i == j) continue;
                        measure.accumulate_grad(&F.data[i * d], &F.data[j * d], d, w,
                                                &gf[i * d], &gf[j * d]);
                    }
            }
        });
}

// O(N_c) center form of squared-Euclidean SBR:
//   sum_c 1/(N_c - 1) * sum_{i in B_c} ||f_i - C_c||^2.
// The full gradient through the batch mean collapses to
//   2/(N_c - 1) * (f_i - C_c).
inline NodeId sbr_center(Tape& tape, NodeId features, const std::vector<int>& labels) {
    const Tensor& F = tape.value(features);
    if (F.rank() != 2 || F.rows() != labels.size())
        throw ShapeError("sbr_center: features " + shape_str(F.shape) + " vs " +
                         std::to_string(labels.size()) + " labels");
    const std::size_t d = F.cols();
    ClassGroups cg = ClassGroups::build(labels);
    double loss = 0.0;
    for (const auto& g : cg.groups) {
        if (g.count() < 2) continue;
        const std::vector<double> c = ClassGroups::center(g, F);
        double s = 0.0;
        for (std::size_t i : g.indices)
            for (std::size_t j = 0; j < d; ++j) {
                const double t = F.at(i, j) - c[j];
                s += t * t;
            }
        loss += s / static_cast<double>(g.count() - 1);
    }
    return tape.custom(
        Tensor::scalar(loss), {features},
        [cg = std::move(cg), d](Tape& t, NodeId self) {
            const double up = t.grad(self)[0];
            const Tensor& F = t.value(t.parents(self)[0]);
            auto& gf = t.grad_mut(t.parents(self)[0]);
            for (const auto& g : cg.groups) {
                if (g.count() < 2) continue;
                const std::vector<double> c = ClassGroups::center(g, F);
                const double w = up * 2.0 / static_cast<double>(g.count() - 1);
                for (std::size_t i : g.indices)
                    for (std::size_t j = 0; j < d; ++j)
                        gf[i * d + j] += w * (F.at(i, j) - c[j]);
            }
        });
}

// Sum of squared entries over a set of parameter nodes.
inline NodeId l2_reg(Tape& tape, const std::vector<NodeId>& params) {
    if (params.empty()) return tape.leaf(Tensor::scalar(0.0));
    NodeId acc = tape.squared_l2(params[0]);
    for (std::size_t i = 1; i < params.size(); ++i)
        acc = tape.add(acc, tape.squared_l2(params[i]));
    return acc;
}

// L2-SP: sp_alpha * ||w_f - w_f*||^2 + sp_beta * ||w_g||^2. Snapshot
// tensors enter as constants.
inline NodeId l2sp_reg(Tape& tape, const std::vector<std::pair<NodeId, const Tensor*>>& wf_and_ref,
                       const std::vector<NodeId>& wg, double sp_alpha, double sp_beta) {
    NodeId acc = tape.leaf(Tensor::scalar(0.0));
    for (const auto& [node, ref] : wf_and_ref) {
        if (tape.value(node).shape != ref->shape)
            throw ShapeError("l2sp snapshot shape mismatch: " +
                             shape_str(tape.value(node).shape) + " vs " + shape_str(ref->shape));
        NodeId diff = tape.sub(node, tape.leaf(*ref));
        acc = tape.add(acc, tape.squared_l2(diff));
    }
    acc = tape.scale(acc, sp_alpha);
    if (!wg.empty()) acc = tape.add(acc, tape.scale(l2_reg(tape, wg), sp_beta));
    return acc;
}

// DELTA-lite: mean over the batch of half squared distance between target
// features and frozen source features on the same inputs.
inline NodeId delta_lite_reg(Tape& tape, NodeId features, const Tensor& source_features) {
    // note: tape.value() references are invalidated by node creation, so
    // read the shape up front
    const Shape fshape = tape.value(features).shape;
    if (fshape != source_features.shape)
        throw ShapeError("delta_lite shape mismatch: " + shape_str(fshape) + " vs " +
                         shape_str(source_features.shape));
    const double rows = static_cast<double>(fshape[0]);
    NodeId diff = tape.sub(features, tape.leaf(source_features));
    return tape.scale(tape.squared_l2(diff), 0.5 / rows);
}

}  // namespace sbrlab
