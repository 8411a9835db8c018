// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "sbrlab/harness.hpp"
#include "sbrlab/selfcheck.hpp"

using namespace sbrlab;

namespace {

SyntheticTransferSpec desk_data(std::uint64_t seed) {
    SyntheticTransferSpec s;
    s.input_dim = 10;
    s.source_classes = 6;
    s.target_classes = 5;
    s.source_samples_per_class = 24;
    s.target_train_per_class = 12;
    s.target_test_per_class = 20;
    s.seed = seed;
    return s;
}

TrainConfig desk_config() {
    TrainConfig c;
    c.model.input_dim = 10;
    c.model.feature_layer_widths = {12, 6};
    c.model.num_classes = 5;
    c.plan = {3, 4, true};
    c.epochs = 15;
    c.seed = 3;
    return c;
}

Model toy_identity_model(std::size_t classes) {
    ModelSpec s;
    s.input_dim = classes;
    s.feature_layer_widths = {classes};
    s.num_classes = classes;
    Model m = Model::init(s, 0);
    Tensor eye({classes, classes});
    for (std::size_t i = 0; i < classes; ++i) eye.at(i, i) = 1.0;
    m.param("f.0.W") = eye;
    m.param("g.W") = eye;
    std::fill(m.param("f.0.b").data.begin(), m.param("f.0.b").data.end(), 0.0);
    std::fill(m.param("g.b").data.begin(), m.param("g.b").data.end(), 0.0);
    return m;
}

}  // namespace

TEST_CASE("evaluate scores an all-correct toy set as 1.0") {
    Model m = toy_identity_model(3);
    Dataset ds;
    ds.num_classes = 3;
    ds.features = Tensor::matrix(3, 3, {5, 0, 0, 0, 5, 0, 0, 0, 5});
    ds.labels = {0, 1, 2};
    CHECK(evaluate(m, ds) == 1.0);
}

TEST_CASE("evaluate counts collisions under permuted labels by brute force") {
    Model m = toy_identity_model(4);
    Dataset ds;
    ds.num_classes = 4;
    ds.features = Tensor({8, 4});
    std::vector<int> argmax = {0, 1, 2, 3, 0, 1, 2, 3};
    for (std::size_t i = 0; i < 8; ++i) ds.features.at(i, static_cast<std::size_t>(argmax[i])) = 9.0;
    ds.labels = {1, 1, 2, 0, 0, 3, 2, 3};  // adversarial permutation

    std::size_t collisions = 0;
    for (std::size_t i = 0; i < 8; ++i)
        if (argmax[i] == ds.labels[i]) ++collisions;
    CHECK(evaluate(m, ds) == static_cast<double>(collisions) / 8.0);
}

TEST_CASE("evaluate breaks ties toward the lowest class index") {
    Model m = toy_identity_model(3);
    Dataset ds;
    ds.num_classes = 3;
    ds.features = Tensor::matrix(1, 3, {0, 0, 0});  // all logits equal
    ds.labels = {0};
    CHECK(evaluate(m, ds) == 1.0);
    ds.labels = {1};
    CHECK(evaluate(m, ds) == 0.0);
}

TEST_CASE("evaluate rejects an empty dataset") {
    Model m = toy_identity_model(3);
    Dataset ds;
    ds.num_classes = 3;
    ds.features = Tensor({0, 3});
    CHECK_THROWS_AS(evaluate(m, ds), ConfigError);
}

TEST_CASE("config defaults resolve per method") {
    TrainConfig c = desk_config();
    c.method = Method::sbr;
    TrainConfig r = c.resolved();
    CHECK(r.alpha == 0.1);
    CHECK(r.kappa == 1.0);

    c.method = Method::baseline_l2;
    r = c.resolved();
    CHECK(r.alpha == 1.0);
    CHECK(r.kappa == 10.0);

    c.alpha = 0.37;
    c.kappa = 3.0;
    r = c.resolved();
    CHECK(r.alpha == 0.37);
    CHECK(r.kappa == 3.0);
}

TEST_CASE("config validation rejects bad values") {
    TrainConfig c = desk_config();
    c.alpha = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = desk_config();
    c.kappa = 0.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = desk_config();
    c.beta = -1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = desk_config();
    c.sampling_rate = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("pretrain fits a zero-shift source at desk scale") {
    SyntheticTransferSpec dspec = desk_data(19);
    dspec.rotation_strength = 0.0;
    dspec.noise_scale = 0.0;
    dspec.cluster_spread = 0.6;
    auto data = gen_synthetic_transfer(dspec);

    TrainConfig c = desk_config();
    c.model.num_classes = dspec.source_classes;
    c.epochs = 30;
    Model m = pretrain(c, data.source);
    const double acc = evaluate(m, data.source);
    INFO("source train accuracy " << acc);
    CHECK(acc > 0.9);
}

TEST_CASE("pretrain is deterministic per config and seed") {
    auto data = gen_synthetic_transfer(desk_data(20));
    TrainConfig c = desk_config();
    c.model.num_classes = 6;
    c.epochs = 5;
    Model a = pretrain(c, data.source);
    Model b = pretrain(c, data.source);
    for (const auto& [name, t] : a.params()) CHECK(t.data == b.params().at(name).data);
}

TEST_CASE("finetune is deterministic per config and seed") {
    auto data = gen_synthetic_transfer(desk_data(21));
    TrainConfig pc = desk_config();
    pc.model.num_classes = 6;
    pc.epochs = 5;
    SourceSnapshot snap = pretrain(pc, data.source).snapshot();

    TrainConfig c = desk_config();
    c.epochs = 6;
    auto ra = finetune_with_model(c, snap, data.target_train, data.target_test);
    auto rb = finetune_with_model(c, snap, data.target_train, data.target_test);
    CHECK(ra.report.final_test_acc == rb.report.final_test_acc);
    for (const auto& [name, t] : ra.model.params())
        CHECK(t.data == rb.model.params().at(name).data);
    REQUIRE(ra.report.epochs.size() == 6);
    for (std::size_t e = 0; e < 6; ++e)
        CHECK(ra.report.epochs[e].train_cls_loss == rb.report.epochs[e].train_cls_loss);
}

TEST_CASE("sbr with beta=0 equals baseline_l2 step for step") {
    auto data = gen_synthetic_transfer(desk_data(22));
    TrainConfig pc = desk_config();
    pc.model.num_classes = 6;
    pc.epochs = 5;
    SourceSnapshot snap = pretrain(pc, data.source).snapshot();

    TrainConfig sbr = desk_config();
    sbr.method = Method::sbr;
    sbr.beta = 0.0;
    sbr.alpha = 0.5;
    sbr.kappa = 2.0;
    sbr.epochs = 8;
    TrainConfig base = sbr;
    base.method = Method::baseline_l2;

    auto ra = finetune_with_model(sbr, snap, data.target_train, data.target_test);
    auto rb = finetune_with_model(base, snap, data.target_train, data.target_test);
    for (const auto& [name, t] : ra.model.params()) {
        const auto& other = rb.model.params().at(name).data;
        REQUIRE(t.data.size() == other.size());
        for (std::size_t i = 0; i < t.data.size(); ++i)
            CHECK_THAT(t.data[i], Catch::Matchers::WithinAbs(other[i], 1e-12));
    }
}

TEST_CASE("sampling_rate shrinks the training set used") {
    auto data = gen_synthetic_transfer(desk_data(23));
    Dataset sub = subsample(data.target_train, 0.5, mix64(3, 0x5ab5));
    CHECK(sub.size() == data.target_train.size() / 2);
}

TEST_CASE("finetune improves over the initial classifier") {
    auto data = gen_synthetic_transfer(desk_data(24));
    TrainConfig pc = desk_config();
    pc.model.num_classes = 6;
    pc.epochs = 20;
    Model src = pretrain(pc, data.source);
    SourceSnapshot snap = src.snapshot();

    TrainConfig c = desk_config();
    c.epochs = 25;
    Model init = Model::init(c.model, c.seed, &snap, 0.1);
    const double before = evaluate(init, data.target_test);
    auto res = finetune_with_model(c, snap, data.target_train, data.target_test);
    INFO("before " << before << " after " << res.report.final_test_acc);
    CHECK(res.report.final_test_acc > before);
    CHECK(res.report.final_test_acc > 1.0 / 5.0);
}

TEST_CASE("multi-seed report aggregates mean and sample std") {
    auto data = gen_synthetic_transfer(desk_data(25));
    TrainConfig pc = desk_config();
    pc.model.num_classes = 6;
    pc.epochs = 4;
    SourceSnapshot snap = pretrain(pc, data.source).snapshot();

    TrainConfig c = desk_config();
    c.epochs = 4;
    c.seeds_for_report = 3;
    MultiSeedReport rep = finetune_multi(c, snap, data.target_train, data.target_test);
    REQUIRE(rep.runs.size() == 3);
    double mean = 0.0;
    for (const auto& r : rep.runs) mean += r.final_test_acc / 3.0;
    CHECK_THAT(rep.test_acc_mean, Catch::Matchers::WithinAbs(mean, 1e-12));
    double var = 0.0;
    for (const auto& r : rep.runs) {
        const double d = r.final_test_acc - mean;
        var += d * d;
    }
    CHECK_THAT(rep.test_acc_std, Catch::Matchers::WithinAbs(std::sqrt(var / 2.0), 1e-12));
}

TEST_CASE("report records carry per-epoch rows plus a final summary") {
    auto data = gen_synthetic_transfer(desk_data(26));
    TrainConfig pc = desk_config();
    pc.model.num_classes = 6;
    pc.epochs = 3;
    SourceSnapshot snap = pretrain(pc, data.source).snapshot();

    TrainConfig c = desk_config();
    c.epochs = 3;
    c.seeds_for_report = 2;
    MultiSeedReport rep = finetune_multi(c, snap, data.target_train, data.target_test);
    auto records = report_records(rep);
    REQUIRE(records.size() == 2 * 3 + 1);
    CHECK(records.back().contains("test_acc_mean"));
    CHECK(records.back()["config"]["method"] == "sbr");
    CHECK(records.front().contains("train_cls_loss"));
}

TEST_CASE("selfcheck battery passes on a fresh build") {
    auto results = selfcheck();
    REQUIRE(results.size() == 5);
    for (const auto& r : results) {
        INFO(r.name << ": " << r.detail);
        CHECK(r.pass);
    }
}
