// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "sbrlab/harness.hpp"

namespace sbrlab {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

namespace detail {

struct FeatureBatch {
    Tensor features;
    std::vector<int> labels;
};

// Random [batch, d] feature batch with mixed class multiplicities,
// including singletons.
inline FeatureBatch random_feature_batch(Rng& rng, std::size_t max_batch = 64,
                                         std::size_t max_d = 32, std::size_t max_c = 10) {
    FeatureBatch b;
    const std::size_t batch = 1 + rng.index(max_batch);
    const std::size_t d = 1 + rng.index(max_d);
    const std::size_t C = 1 + rng.index(max_c);
    b.features = Tensor({batch, d});
    for (double& v : b.features.data) {
        v = rng.normal();
        // keep entries away from zero so measures with norm terms stay in
        // their smooth region for finite differences
        if (std::abs(v) < 1e-4) v = v < 0.0 ? -1e-4 : 1e-4;
    }
    b.labels.resize(batch);
    for (auto& y : b.labels) y = static_cast<int>(rng.index(C));
    return b;
}

inline double max_rel_gap(const std::vector<double>& a, const std::vector<double>& b,
                          double floor = 1e-12) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
        m = std::max(m, std::abs(a[i] - b[i]) / denom);
    }
    return m;
}

}  // namespace detail

// Maximum per-step relative gap between the w_f trajectories of the config
// pair (eta_g / kappa, alpha, beta, lambda_f) vs (eta_g, alpha/kappa,
// beta/kappa, lambda_f/kappa), run in lockstep on identical batches.
inline std::vector<double> kappa_equivalence_gaps(const TrainConfig& base, double kappa,
                                                  double momentum, std::size_t steps,
                                                  const SourceSnapshot& snapshot,
                                                  const Dataset& train) {
    TrainConfig a = base.resolved();
    a.momentum = momentum;
    a.kappa = kappa;

    TrainConfig b = a;
    b.kappa = 1.0;
    b.alpha = a.alpha / kappa;
    b.beta = a.beta / kappa;
    b.feature_weight_decay = a.weight_decay / kappa;

    Model ma = Model::init(a.model, a.seed, &snapshot, a.alpha);
    Model mb = Model::init(b.model, b.seed, &snapshot, b.alpha);
    Sgd oa(momentum), ob(momentum);
    const auto ga = detail::make_groups(ma, a);
    const auto gb = detail::make_groups(mb, b);
    const auto fnames = ma.feature_param_names();

    CosineSchedule sched{a.base_lr, 0.0, steps};
    std::vector<double> gaps;
    std::size_t step = 0;
    for (std::size_t epoch = 0; step < steps; ++epoch) {
        auto batches = stratified_batches(train, a.plan, mix64(a.seed, epoch + 1));
        for (const auto& idx : batches) {
            if (step >= steps) break;
            const double lr = sched.lr_at(step);
            auto batch = detail::gather_batch(train, idx);
            detail::train_step(ma, nullptr, a, &snapshot, batch, oa, ga, lr);
            detail::train_step(mb, nullptr, b, &snapshot, batch, ob, gb, lr);
            double gap = 0.0;
            for (const auto& name : fnames)
                gap = std::max(gap, detail::max_rel_gap(ma.param(name).data,
                                                        mb.param(name).data));
            gaps.push_back(gap);
            ++step;
        }
    }
    return gaps;
}

namespace detail {

inline TrainConfig selfcheck_config() {
    TrainConfig cfg;
    cfg.model.input_dim = 12;
    cfg.model.feature_layer_widths = {16, 8};
    cfg.model.num_classes = 6;
    cfg.method = Method::sbr;
    cfg.alpha = 0.1;
    cfg.beta = 1e-2;
    cfg.kappa = 1.0;
    cfg.weight_decay = 1e-4;
    cfg.base_lr = 0.05;
    cfg.epochs = 1;
    cfg.plan = {3, 4, true};
    cfg.seed = 7;
    return cfg;
}

inline SyntheticTransferSpec selfcheck_data_spec() {
    SyntheticTransferSpec s;
    s.input_dim = 12;
    s.source_classes = 8;
    s.target_classes = 6;
    s.source_samples_per_class = 20;
    s.target_train_per_class = 12;
    s.target_test_per_class = 20;
    s.seed = 11;
    return s;
}

}  // namespace detail

// (1) gradient oracle battery over the primitive and loss families.
inline CheckResult check_grad_battery() {
    CheckResult res{"autodiff grad battery", true, ""};
    Rng rng(101);
    double worst = 0.0;
    for (int it = 0; it < 100; ++it) {
        const std::size_t n = 2 + rng.index(6);
        Tensor x({n, n});
        // keep entries away from the relu kink so the central difference
        // never straddles it
        for (double& v : x.data) {
            v = rng.normal();
            if (std::abs(v) < 1e-4) v = v < 0.0 ? -1e-4 : 1e-4;
        }
        auto fns = std::vector<std::function<NodeId(Tape&, NodeId)>>{
            [](Tape& t, NodeId a) { return t.squared_l2(t.relu(a)); },
            [](Tape& t, NodeId a) { return t.mean(t.mul(a, a)); },
            [n](Tape& t, NodeId a) { return t.sum(t.row_sum(t.matmul(a, a))); },
            [](Tape& t, NodeId a) { return t.squared_l2(t.sub(t.scale(a, 1.7), t.relu(a))); },
        };
        for (auto& fn : fns) {
            auto rep = grad_check(fn, x, 1e-5);
            worst = std::max(worst, rep.max_rel_err);
            if (!rep.pass) res.pass = false;
        }
    }
    // composite losses on random batches
    for (int it = 0; it < 30; ++it) {
        auto b = detail::random_feature_batch(rng, 12, 6, 4);
        for (auto measure : {Measure::squared_euclidean(), Measure::neg_cosine(),
                             Measure::neg_inner()}) {
            // step 1e-5: the pairwise sum is O(batch) while single gradient
            // components can be tiny, so a 1e-6 step is roundoff-limited
            auto rep = grad_check(
                [&](Tape& t, NodeId a) { return sbr_pairwise(t, a, b.labels, measure); },
                b.features, 1e-5, 1e-5);
            worst = std::max(worst, rep.max_rel_err);
            if (!rep.pass) res.pass = false;
        }
        auto rep_c = grad_check(
            [&](Tape& t, NodeId a) { return sbr_center(t, a, b.labels); }, b.features, 1e-5);
        auto rep_ce = grad_check(
            [&](Tape& t, NodeId a) { return cross_entropy(t, a, b.labels); },
            [&] {
                Tensor logits({b.labels.size(), 5});
                for (double& v : logits.data) v = rng.normal();
                for (auto& y : b.labels) y = y % 5;
                return logits;
            }(),
            1e-5);
        worst = std::max({worst, rep_c.max_rel_err, rep_ce.max_rel_err});
        if (!rep_c.pass || !rep_ce.pass) res.pass = false;
    }
    std::ostringstream os;
    os << "max rel err " << worst;
    res.detail = os.str();
    return res;
}

// (2) pairwise/center value and gradient equivalence on random batches.
inline CheckResult check_pairwise_center_equivalence(std::size_t batches = 200) {
    CheckResult res{"pairwise/center equivalence", true, ""};
    Rng rng(202);
    double worst_v = 0.0, worst_g = 0.0;
    for (std::size_t it = 0; it < batches; ++it) {
        auto b = detail::random_feature_batch(rng);
        Tape tp, tc;
        NodeId fp = tp.leaf(b.features);
        NodeId fc = tc.leaf(b.features);
        NodeId lp = sbr_pairwise(tp, fp, b.labels, Measure::squared_euclidean());
        NodeId lc = sbr_center(tc, fc, b.labels);
        worst_v = std::max(worst_v, std::abs(tp.value(lp).item() - tc.value(lc).item()));
        tp.backward(lp);
        tc.backward(lc);
        const auto& gp = tp.grad(fp);
        const auto& gc = tc.grad(fc);
        for (std::size_t i = 0; i < gp.size(); ++i)
            worst_g = std::max(worst_g, std::abs(gp[i] - gc[i]));
    }
    std::ostringstream os;
    os << "max |value gap| " << worst_v << ", max |grad gap| " << worst_g;
    res.detail = os.str();
    res.pass = worst_v <= 1e-9 && worst_g <= 1e-9;
    return res;
}

// (3) tape gradient of sbr_center vs the closed form 2/(N_c-1)(f_i - C_c).
inline CheckResult check_sbr_closed_form(std::size_t batches = 50) {
    CheckResult res{"sbr closed-form gradient", true, ""};
    Rng rng(303);
    double worst = 0.0;
    for (std::size_t it = 0; it < batches; ++it) {
        auto b = detail::random_feature_batch(rng);
        Tape t;
        NodeId f = t.leaf(b.features);
        NodeId l = sbr_center(t, f, b.labels);
        t.backward(l);
        const auto& g = t.grad(f);
        const std::size_t d = b.features.cols();
        ClassGroups cg = ClassGroups::build(b.labels);
        std::vector<double> expect(g.size(), 0.0);
        for (const auto& grp : cg.groups) {
            if (grp.count() < 2) continue;
            const auto c = ClassGroups::center(grp, b.features);
            const double w = 2.0 / static_cast<double>(grp.count() - 1);
            for (std::size_t i : grp.indices)
                for (std::size_t j = 0; j < d; ++j)
                    expect[i * d + j] = w * (b.features.at(i, j) - c[j]);
        }
        for (std::size_t i = 0; i < g.size(); ++i)
            worst = std::max(worst, std::abs(g[i] - expect[i]));
    }
    std::ostringstream os;
    os << "max |gap| " << worst;
    res.detail = os.str();
    res.pass = worst <= 1e-9;
    return res;
}

// (4) kappa-rescaled 50-step trajectory agreement under momentum=0.
inline CheckResult check_kappa_equivalence() {
    CheckResult res{"kappa equivalence (momentum=0)", true, ""};
    auto data = gen_synthetic_transfer(detail::selfcheck_data_spec());
    Model src = pretrain([] {
        auto c = detail::selfcheck_config();
        c.model.num_classes = detail::selfcheck_data_spec().source_classes;
        c.epochs = 5;
        return c;
    }(), data.source);
    auto snap = src.snapshot();
    auto gaps = kappa_equivalence_gaps(detail::selfcheck_config(), 10.0, 0.0, 50, snap,
                                       data.target_train);
    double worst = 0.0;
    for (double g : gaps) worst = std::max(worst, g);
    std::ostringstream os;
    os << "max per-step rel gap " << worst << " over " << gaps.size() << " steps";
    res.detail = os.str();
    res.pass = worst <= 1e-9 && gaps.size() == 50;
    return res;
}

// (5) gradient-reduce scaling: w_f grads scale by alpha on the classifier
// path, w_g grads are untouched.
inline CheckResult check_gradient_reduce_scaling() {
    CheckResult res{"gradient-reduce scaling", true, ""};
    ModelSpec spec{10, {12, 6}, 5};
    Rng rng(404);
    Tensor x({8, 10});
    for (double& v : x.data) v = rng.normal();
    std::vector<int> labels(8);
    for (auto& y : labels) y = static_cast<int>(rng.index(5));

    const double alpha = 0.1;
    GradMap grads_a, grads_1;
    for (double a : {alpha, 1.0}) {
        Model m = Model::init(spec, 99, nullptr, a);
        Tape t;
        auto fp = m.forward(t, x);
        t.backward(cross_entropy(t, fp.logits, labels));
        auto& dst = a == 1.0 ? grads_1 : grads_a;
        for (const auto& [name, node] : fp.params) dst[name] = t.grad(node);
    }
    double worst_f = 0.0;
    bool wg_identical = true;
    Model probe = Model::init(spec, 99, nullptr, 1.0);
    for (const auto& name : probe.feature_param_names()) {
        const auto& ga = grads_a.at(name);
        const auto& g1 = grads_1.at(name);
        for (std::size_t i = 0; i < ga.size(); ++i)
            worst_f = std::max(worst_f, std::abs(ga[i] - alpha * g1[i]));
    }
    for (const auto& name : probe.classifier_param_names())
        if (grads_a.at(name) != grads_1.at(name)) wg_identical = false;
    std::ostringstream os;
    os << "max |w_f gap| " << worst_f << ", w_g bitwise " << (wg_identical ? "yes" : "no");
    res.detail = os.str();
    res.pass = worst_f <= 1e-12 && wg_identical;
    return res;
}

inline std::vector<CheckResult> selfcheck() {
    return {check_grad_battery(), check_pairwise_center_equivalence(),
            check_sbr_closed_form(), check_kappa_equivalence(),
            check_gradient_reduce_scaling()};
}

}  // namespace sbrlab
