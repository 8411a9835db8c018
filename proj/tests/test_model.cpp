// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "sbrlab/model.hpp"

using namespace sbrlab;

namespace {

ModelSpec small_spec() {
    ModelSpec s;
    s.input_dim = 6;
    s.feature_layer_widths = {8, 4};
    s.num_classes = 3;
    return s;
}

Tensor random_input(std::size_t n, std::size_t d, Rng& rng) {
    Tensor t({n, d});
    for (double& v : t.data) v = rng.normal();
    return t;
}

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) : path("/tmp/sbrlab_test_" + name) {}
    ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("spec validation") {
    ModelSpec s = small_spec();
    CHECK_NOTHROW(s.validate());
    s.num_classes = 1;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = small_spec();
    s.feature_layer_widths.clear();
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = small_spec();
    s.input_dim = 0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("same spec and seed give bitwise identical models") {
    Model a = Model::init(small_spec(), 123);
    Model b = Model::init(small_spec(), 123);
    for (const auto& [name, t] : a.params()) CHECK(t.data == b.params().at(name).data);

    Model c = Model::init(small_spec(), 124);
    CHECK(a.param("f.0.W").data != c.param("f.0.W").data);
}

TEST_CASE("biases start at zero") {
    Model m = Model::init(small_spec(), 5);
    for (const std::string& name : {"f.0.b", "f.1.b", "g.b"})
        for (double v : m.param(name).data) CHECK(v == 0.0);
}

TEST_CASE("source snapshot copies w_f exactly, w_g stays per-seed") {
    Model src = Model::init(small_spec(), 7);
    SourceSnapshot snap = src.snapshot();

    Model a = Model::init(small_spec(), 100, &snap);
    Model b = Model::init(small_spec(), 101, &snap);
    for (const std::string& name : src.feature_param_names()) {
        CHECK(a.param(name).data == src.param(name).data);
        CHECK(b.param(name).data == src.param(name).data);
    }
    CHECK(a.param("g.W").data != b.param("g.W").data);
    CHECK(a.param("g.W").data != src.param("g.W").data);
}

TEST_CASE("snapshot with mismatched architecture is rejected") {
    Model src = Model::init(small_spec(), 7);
    SourceSnapshot snap = src.snapshot();
    ModelSpec wider = small_spec();
    wider.feature_layer_widths = {16, 4};
    CHECK_THROWS_AS(Model::init(wider, 1, &snap), ConfigError);
}

TEST_CASE("zero weights give all-zero features and logits") {
    Model m = Model::init(small_spec(), 1);
    for (auto& [name, t] : m.params()) std::fill(t.data.begin(), t.data.end(), 0.0);
    Rng rng(2);
    Tensor x = random_input(3, 6, rng);
    for (double v : m.features(x).data) CHECK(v == 0.0);
    for (double v : m.logits(x).data) CHECK(v == 0.0);
}

TEST_CASE("identity network maps input through unchanged") {
    ModelSpec s;
    s.input_dim = 2;
    s.feature_layer_widths = {2};
    s.num_classes = 2;
    Model m = Model::init(s, 0);
    m.param("f.0.W") = Tensor::matrix(2, 2, {1, 0, 0, 1});
    std::fill(m.param("f.0.b").data.begin(), m.param("f.0.b").data.end(), 0.0);
    m.param("g.W") = Tensor::matrix(2, 2, {1, 0, 0, 1});
    std::fill(m.param("g.b").data.begin(), m.param("g.b").data.end(), 0.0);

    Tensor x = Tensor::matrix(1, 2, {1, 0});
    CHECK(m.features(x).data == std::vector<double>{1, 0});
    CHECK(m.logits(x).data == std::vector<double>{1, 0});
}

TEST_CASE("forward has no cross-example coupling") {
    Model m = Model::init(small_spec(), 9);
    Rng rng(10);
    Tensor batch = random_input(5, 6, rng);
    Tensor feats = m.features(batch);
    for (std::size_t i = 0; i < 5; ++i) {
        Tensor row({1, 6});
        for (std::size_t j = 0; j < 6; ++j) row.at(0, j) = batch.at(i, j);
        Tensor single = m.features(row);
        for (std::size_t j = 0; j < feats.cols(); ++j)
            CHECK_THAT(single.at(0, j), Catch::Matchers::WithinAbs(feats.at(i, j), 1e-12));
    }
}

TEST_CASE("tape forward matches the tape-free evaluation path") {
    Model m = Model::init(small_spec(), 21);
    Rng rng(22);
    Tensor x = random_input(4, 6, rng);
    Tape t;
    ForwardPass fp = m.forward(t, x);
    CHECK(t.value(fp.features).data == m.features(x).data);
    CHECK(t.value(fp.logits).data == m.logits(x).data);
    // gradient_reduce is an identity in the forward direction
    CHECK(t.value(fp.reduced).data == t.value(fp.features).data);
}

TEST_CASE("logits match a manual affine map of the features") {
    Model m = Model::init(small_spec(), 33);
    Rng rng(34);
    Tensor x = random_input(3, 6, rng);
    Tensor f = m.features(x);
    const Tensor& W = m.param("g.W");
    const Tensor& b = m.param("g.b");
    Tensor logits = m.logits(x);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            double s = b.data[j];
            for (std::size_t p = 0; p < f.cols(); ++p) s += f.at(i, p) * W.at(p, j);
            CHECK_THAT(logits.at(i, j), Catch::Matchers::WithinAbs(s, 1e-12));
        }
}

TEST_CASE("checkpoint round trip is bitwise exact") {
    TempFile tf("roundtrip.ckpt");
    Model m = Model::init(small_spec(), 55, nullptr, 0.1);
    m.save(tf.path);
    Model r = Model::load(tf.path);
    CHECK(r.spec().input_dim == m.spec().input_dim);
    CHECK(r.spec().feature_layer_widths == m.spec().feature_layer_widths);
    CHECK(r.spec().num_classes == m.spec().num_classes);
    CHECK(r.alpha() == m.alpha());
    for (const auto& [name, t] : m.params()) CHECK(r.params().at(name).data == t.data);
}

TEST_CASE("snapshot load from checkpoint") {
    TempFile tf("snap.ckpt");
    Model m = Model::init(small_spec(), 56);
    m.save(tf.path);
    SourceSnapshot s = Model::load_snapshot(tf.path);
    CHECK(s.spec_hash == small_spec().feature_hash());
    CHECK(s.w_f_star.size() == 4);  // two layers, W and b each
    CHECK(s.w_f_star.at("f.0.W").data == m.param("f.0.W").data);
}

TEST_CASE("truncated checkpoint is rejected") {
    TempFile tf("trunc.ckpt");
    Model m = Model::init(small_spec(), 57);
    m.save(tf.path);
    std::ifstream in(tf.path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out(tf.path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    out.close();
    CHECK_THROWS_AS(Model::load(tf.path), IoError);
}

TEST_CASE("bad magic and missing file are rejected") {
    TempFile tf("badmagic.ckpt");
    std::ofstream out(tf.path, std::ios::binary);
    out << "NOTACKPTxxxxxxxxxxxxxxxx";
    out.close();
    CHECK_THROWS_AS(Model::load(tf.path), IoError);
    CHECK_THROWS_AS(Model::load("/tmp/sbrlab_no_such_file.ckpt"), IoError);
}

TEST_CASE("snapshot from a different architecture fails at init") {
    TempFile tf("otherarch.ckpt");
    ModelSpec other = small_spec();
    other.feature_layer_widths = {8, 5};
    Model::init(other, 58).save(tf.path);
    SourceSnapshot s = Model::load_snapshot(tf.path);
    CHECK_THROWS_AS(Model::init(small_spec(), 1, &s), ConfigError);
}

TEST_CASE("input shape and finiteness are checked") {
    Model m = Model::init(small_spec(), 60);
    CHECK_THROWS_AS(m.features(Tensor::matrix(1, 5, {1, 2, 3, 4, 5})), ShapeError);
    Tensor bad({1, 6});
    bad.data[3] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(m.features(bad), NonFiniteError);
}
