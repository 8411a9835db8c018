// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "sbrlab/optim.hpp"

using namespace sbrlab;

namespace {

// Single-parameter toy model for optimizer tests.
Model scalarish_model(double w) {
    ModelSpec s;
    s.input_dim = 1;
    s.feature_layer_widths = {1};
    s.num_classes = 2;
    Model m = Model::init(s, 0);
    m.param("f.0.W") = Tensor::matrix(1, 1, {w});
    return m;
}

double w_of(const Model& m) { return m.param("f.0.W").data[0]; }
double& w_of(Model& m) { return m.param("f.0.W").data[0]; }

GradMap grad_of(double g) { return {{"f.0.W", {g}}}; }

ParamGroup group(double lr_scale, double wd) { return {{"f.0.W"}, lr_scale, wd}; }

}  // namespace

TEST_CASE("cosine schedule endpoints and midpoint") {
    CosineSchedule s{0.1, 0.001, 200};
    CHECK_THAT(s.lr_at(0), Catch::Matchers::WithinAbs(0.1, 1e-15));
    CHECK_THAT(s.lr_at(200), Catch::Matchers::WithinAbs(0.001, 1e-15));
    CHECK_THAT(s.lr_at(100), Catch::Matchers::WithinAbs(0.0505, 1e-15));
    CHECK_THROWS_AS(s.lr_at(201), ConfigError);
}

TEST_CASE("cosine schedule is monotone decreasing") {
    CosineSchedule s{0.05, 0.0, 50};
    for (std::size_t i = 0; i < 50; ++i) CHECK(s.lr_at(i) > s.lr_at(i + 1));
}

TEST_CASE("plain sgd step: w=1, g=2, lr=0.1 -> 0.8") {
    Model m = scalarish_model(1.0);
    Sgd opt;
    opt.step(m, grad_of(2.0), {group(1.0, 0.0)}, 0.1);
    CHECK(w_of(m) == 1.0 - 0.1 * 2.0);
}

TEST_CASE("pure weight decay: w=1, g=0, lr=0.1, wd=0.5 -> 0.95") {
    Model m = scalarish_model(1.0);
    Sgd opt;
    opt.step(m, grad_of(0.0), {group(1.0, 0.5)}, 0.1);
    CHECK_THAT(w_of(m), Catch::Matchers::WithinAbs(0.95, 1e-15));
}

TEST_CASE("momentum-free no-decay update is bitwise w - lr*g") {
    Model m = scalarish_model(0.3712951);
    const double w0 = w_of(m), g = -1.77215, lr = 0.0173;
    Sgd opt;
    opt.step(m, grad_of(g), {group(1.0, 0.0)}, lr);
    CHECK(w_of(m) == w0 - lr * g);
}

TEST_CASE("two momentum steps match the hand-unrolled recurrence") {
    const double w0 = 1.0, m9 = 0.9, lr = 0.1, g1 = 2.0, g2 = -0.5, wd = 0.01;
    Model m = scalarish_model(w0);
    Sgd opt(m9);
    opt.step(m, grad_of(g1), {group(1.0, wd)}, lr);
    // v1 = g1 + wd*w0; w1 = w0 - lr*v1
    const double v1 = g1 + wd * w0;
    const double w1 = w0 - lr * v1;
    CHECK_THAT(w_of(m), Catch::Matchers::WithinAbs(w1, 1e-15));
    opt.step(m, grad_of(g2), {group(1.0, wd)}, lr);
    // v2 = m*v1 + g2 + wd*w1; w2 = w1 - lr*v2
    const double v2 = m9 * v1 + g2 + wd * w1;
    CHECK_THAT(w_of(m), Catch::Matchers::WithinAbs(w1 - lr * v2, 1e-15));
}

TEST_CASE("lr_scale multiplies the base rate") {
    Model a = scalarish_model(1.0);
    Model b = scalarish_model(1.0);
    Sgd oa, ob;
    oa.step(a, grad_of(2.0), {group(0.1, 0.0)}, 0.1);
    ob.step(b, grad_of(2.0), {group(1.0, 0.0)}, 0.01);
    CHECK(w_of(a) == w_of(b));
}

TEST_CASE("momentum buffers are per parameter") {
    ModelSpec s;
    s.input_dim = 1;
    s.feature_layer_widths = {1};
    s.num_classes = 2;
    Model m = Model::init(s, 0);
    m.param("f.0.W") = Tensor::matrix(1, 1, {0.0});
    m.param("g.b") = Tensor({2});
    Sgd opt(0.9);
    GradMap g = {{"f.0.W", {1.0}}, {"g.b", {0.0, 0.0}}};
    ParamGroup both{{"f.0.W", "g.b"}, 1.0, 0.0};
    opt.step(m, g, {both}, 0.1);
    opt.step(m, g, {both}, 0.1);
    // f.0.W accumulated velocity; g.b never moved
    CHECK_THAT(w_of(m), Catch::Matchers::WithinAbs(-0.1 - 0.1 * 1.9, 1e-15));
    CHECK(m.param("g.b").data == std::vector<double>{0, 0});
}

TEST_CASE("invalid momentum and missing gradients are rejected") {
    CHECK_THROWS_AS(Sgd(-0.1), ConfigError);
    CHECK_THROWS_AS(Sgd(1.0), ConfigError);
    Model m = scalarish_model(1.0);
    Sgd opt;
    GradMap empty;
    CHECK_THROWS_AS(opt.step(m, empty, {group(1.0, 0.0)}, 0.1), ConfigError);
}
