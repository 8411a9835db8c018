// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sbrlab/tape.hpp"

namespace sbrlab {

// Architecture of the target network: MLP feature extractor plus a single
// affine classifier head.
struct ModelSpec {
    std::size_t input_dim = 0;
    std::vector<std::size_t> feature_layer_widths;  // last entry = feature dim d
    std::size_t num_classes = 0;

    void validate() const {
        if (input_dim == 0) throw ConfigError("input_dim must be positive");
        if (feature_layer_widths.empty())
            throw ConfigError("feature_layer_widths must be non-empty");
        for (std::size_t w : feature_layer_widths)
            if (w == 0) throw ConfigError("feature layer width must be positive");
        if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    }

    std::size_t feature_dim() const { return feature_layer_widths.back(); }

    // Content hash of the feature-extractor part; used to pair snapshots
    // with compatible models.
    std::uint64_t feature_hash() const {
        std::uint64_t h = 1469598103934665603ULL;
        auto mix = [&h](std::uint64_t v) {
            for (int i = 0; i < 8; ++i) {
                h ^= (v >> (8 * i)) & 0xff;
                h *= 1099511628211ULL;
            }
        };
        mix(input_dim);
        for (std::size_t w : feature_layer_widths) mix(w);
        return h;
    }
};

// Frozen copy of pretrained feature-extractor parameters.
struct SourceSnapshot {
    std::map<std::string, Tensor> w_f_star;
    std::uint64_t spec_hash = 0;
};

// Nodes produced by one differentiable forward pass.
struct ForwardPass {
    std::map<std::string, NodeId> params;  // name -> leaf node
    NodeId features = 0;                   // pre gradient-reduce
    NodeId reduced = 0;                    // post gradient-reduce
    NodeId logits = 0;
};

class Model {
public:
    Model() = default;

    // w_f copied from source when given, otherwise He-uniform; w_g always
    // fresh per seed, biases zero.
    static Model init(const ModelSpec& spec, std::uint64_t seed,
                      const SourceSnapshot* source = nullptr, double alpha = 1.0) {
        spec.validate();
        if (!(alpha > 0.0 && alpha <= 1.0))
            throw ConfigError("alpha must be in (0, 1], got " + std::to_string(alpha));
        Model m;
        m.spec_ = spec;
        m.alpha_ = alpha;
        Rng rng(seed);
        std::size_t in = spec.input_dim;
        for (std::size_t l = 0; l < spec.feature_layer_widths.size(); ++l) {
            const std::size_t out = spec.feature_layer_widths[l];
            m.params_["f." + std::to_string(l) + ".W"] = he_uniform(in, out, rng);
            m.params_["f." + std::to_string(l) + ".b"] = Tensor({out});
            in = out;
        }
        m.params_["g.W"] = he_uniform(in, spec.num_classes, rng);
        m.params_["g.b"] = Tensor({spec.num_classes});
        if (source) {
            if (source->spec_hash != spec.feature_hash())
                throw ConfigError("source snapshot does not match model spec (hash mismatch)");
            for (const auto& [name, t] : source->w_f_star) {
                auto it = m.params_.find(name);
                if (it == m.params_.end() || it->second.shape != t.shape)
                    throw ConfigError("source snapshot parameter mismatch: " + name);
                it->second = t;
            }
        }
        return m;
    }

    const ModelSpec& spec() const { return spec_; }
    double alpha() const { return alpha_; }
    void set_alpha(double a) {
        if (!(a > 0.0 && a <= 1.0)) throw ConfigError("alpha must be in (0, 1]");
        alpha_ = a;
    }

    std::map<std::string, Tensor>& params() { return params_; }
    const std::map<std::string, Tensor>& params() const { return params_; }

    Tensor& param(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
        return it->second;
    }
    const Tensor& param(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
        return it->second;
    }

    std::vector<std::string> feature_param_names() const {
        std::vector<std::string> out;
        for (const auto& [name, t] : params_)
            if (name.rfind("f.", 0) == 0) out.push_back(name);
        return out;
    }
    std::vector<std::string> classifier_param_names() const {
        std::vector<std::string> out;
        for (const auto& [name, t] : params_)
            if (name.rfind("g.", 0) == 0) out.push_back(name);
        return out;
    }

    std::size_t num_feature_layers() const { return spec_.feature_layer_widths.size(); }

    // --- differentiable forward ------------------------------------------

    // Builds leaves for all parameters and the full features -> reduce ->
    // logits chain on the given tape.
    ForwardPass forward(Tape& tape, const Tensor& x) const {
        check_input(x);
        ForwardPass fp;
        for (const auto& [name, t] : params_) fp.params[name] = tape.leaf(t);
        NodeId h = tape.leaf(x);
        for (std::size_t l = 0; l < num_feature_layers(); ++l) {
            h = tape.matmul(h, fp.params.at("f." + std::to_string(l) + ".W"));
            h = tape.add(h, fp.params.at("f." + std::to_string(l) + ".b"));
            h = tape.relu(h);
        }
        fp.features = h;
        fp.reduced = tape.gradient_reduce(h, alpha_);
        fp.logits = tape.add(tape.matmul(fp.reduced, fp.params.at("g.W")),
                             fp.params.at("g.b"));
        return fp;
    }

    // --- tape-free forward (evaluation path) -----------------------------

    Tensor features(const Tensor& x) const {
        check_input(x);
        Tensor h = x;
        for (std::size_t l = 0; l < num_feature_layers(); ++l) {
            h = affine(h, params_.at("f." + std::to_string(l) + ".W"),
                       params_.at("f." + std::to_string(l) + ".b"));
            for (double& v : h.data) v = v > 0.0 ? v : 0.0;
        }
        return h;
    }

    Tensor logits(const Tensor& x) const {
        return affine(features(x), params_.at("g.W"), params_.at("g.b"));
    }

    // --- snapshots and checkpoints ---------------------------------------

    SourceSnapshot snapshot() const {
        SourceSnapshot s;
        s.spec_hash = spec_.feature_hash();
        for (const auto& [name, t] : params_)
            if (name.rfind("f.", 0) == 0) s.w_f_star[name] = t;
        return s;
    }

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot open checkpoint for writing: " + path);
        f.write(kMagic, 8);
        std::vector<std::pair<std::string, const Tensor*>> entries;
        Tensor meta = spec_meta();
        Tensor hash = hash_tensor(spec_.feature_hash());
        Tensor alpha = Tensor::scalar(alpha_);
        entries.push_back({"__spec__", &meta});
        entries.push_back({"__spec_hash__", &hash});
        entries.push_back({"__alpha__", &alpha});
        for (const auto& [name, t] : params_) entries.push_back({name, &t});
        write_u64(f, entries.size());
        for (const auto& [name, t] : entries) {
            write_u64(f, name.size());
            f.write(name.data(), static_cast<std::streamsize>(name.size()));
            write_u64(f, t->rank());
            for (std::size_t dsz : t->shape) write_u64(f, dsz);
            f.write(reinterpret_cast<const char*>(t->data.data()),
                    static_cast<std::streamsize>(t->data.size() * sizeof(double)));
        }
        if (!f) throw IoError("write failed: " + path);
    }

    static Model load(const std::string& path) {
        std::map<std::string, Tensor> entries = read_entries(path);
        Model m;
        auto meta = entries.find("__spec__");
        if (meta == entries.end()) throw IoError("corrupt checkpoint (missing spec): " + path);
        m.spec_ = spec_from_meta(meta->second);
        auto al = entries.find("__alpha__");
        m.alpha_ = al != entries.end() ? al->second.item() : 1.0;
        entries.erase("__spec__");
        entries.erase("__spec_hash__");
        entries.erase("__alpha__");
        m.params_ = std::move(entries);
        Model fresh = Model::init(m.spec_, 0);
        for (const auto& [name, t] : fresh.params()) {
            auto it = m.params_.find(name);
            if (it == m.params_.end() || it->second.shape != t.shape)
                throw IoError("checkpoint parameter mismatch for " + name + ": " + path);
        }
        return m;
    }

    static SourceSnapshot load_snapshot(const std::string& path) {
        std::map<std::string, Tensor> entries = read_entries(path);
        auto hash = entries.find("__spec_hash__");
        if (hash == entries.end())
            throw IoError("corrupt checkpoint (missing spec hash): " + path);
        SourceSnapshot s;
        std::memcpy(&s.spec_hash, hash->second.data.data(), 8);
        for (auto& [name, t] : entries)
            if (name.rfind("f.", 0) == 0) s.w_f_star[name] = std::move(t);
        if (s.w_f_star.empty())
            throw IoError("checkpoint carries no feature-extractor parameters: " + path);
        return s;
    }

private:
    static constexpr const char kMagic[9] = "SBRCKPT1";

    static Tensor he_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
        Tensor t({fan_in, fan_out});
        for (double& v : t.data) v = rng.uniform(-limit, limit);
        return t;
    }

    static Tensor affine(const Tensor& x, const Tensor& W, const Tensor& b) {
        if (x.cols() != W.rows())
            throw ShapeError("affine shape mismatch: " + shape_str(x.shape) + " x " +
                             shape_str(W.shape));
        const std::size_t m = x.rows(), k = x.cols(), n = W.cols();
        Tensor out({m, n});
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) out.at(i, j) = b.data[j];
            for (std::size_t p = 0; p < k; ++p) {
                const double xv = x.at(i, p);
                for (std::size_t j = 0; j < n; ++j) out.at(i, j) += xv * W.at(p, j);
            }
        }
        return out;
    }

    void check_input(const Tensor& x) const {
        if (x.rank() != 2 || x.cols() != spec_.input_dim)
            throw ShapeError("model input must be [batch, " +
                             std::to_string(spec_.input_dim) + "], got " +
                             shape_str(x.shape));
        require_finite(x, "model input");
    }

    Tensor spec_meta() const {
        std::vector<double> v;
        v.push_back(static_cast<double>(spec_.input_dim));
        v.push_back(static_cast<double>(spec_.num_classes));
        for (std::size_t w : spec_.feature_layer_widths)
            v.push_back(static_cast<double>(w));
        return Tensor::vector(std::move(v));
    }

    static ModelSpec spec_from_meta(const Tensor& t) {
        if (t.size() < 3) throw IoError("corrupt checkpoint spec entry");
        ModelSpec s;
        s.input_dim = static_cast<std::size_t>(t.data[0]);
        s.num_classes = static_cast<std::size_t>(t.data[1]);
        for (std::size_t i = 2; i < t.size(); ++i)
            s.feature_layer_widths.push_back(static_cast<std::size_t>(t.data[i]));
        s.validate();
        return s;
    }

    static Tensor hash_tensor(std::uint64_t h) {
        Tensor t({1});
        std::memcpy(t.data.data(), &h, 8);
        return t;
    }

    static void write_u64(std::ofstream& f, std::uint64_t v) {
        unsigned char buf[8];
        for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
        f.write(reinterpret_cast<const char*>(buf), 8);
    }

    static std::uint64_t read_u64(std::ifstream& f, const std::string& path) {
        unsigned char buf[8];
        f.read(reinterpret_cast<char*>(buf), 8);
        if (!f) throw IoError("corrupt checkpoint (truncated): " + path);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
        return v;
    }

    static std::map<std::string, Tensor> read_entries(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot open checkpoint: " + path);
        char magic[8];
        f.read(magic, 8);
        if (!f || std::memcmp(magic, kMagic, 8) != 0)
            throw IoError("corrupt checkpoint (bad magic): " + path);
        const std::uint64_t count = read_u64(f, path);
        if (count > (1ULL << 20)) throw IoError("corrupt checkpoint (entry count): " + path);
        std::map<std::string, Tensor> entries;
        for (std::uint64_t e = 0; e < count; ++e) {
            const std::uint64_t name_len = read_u64(f, path);
            if (name_len > (1ULL << 16)) throw IoError("corrupt checkpoint (name): " + path);
            std::string name(name_len, '\0');
            f.read(name.data(), static_cast<std::streamsize>(name_len));
            const std::uint64_t rank = read_u64(f, path);
            if (rank > 8) throw IoError("corrupt checkpoint (rank): " + path);
            Shape shape(rank);
            std::uint64_t n = 1;
            for (std::uint64_t i = 0; i < rank; ++i) {
                shape[i] = read_u64(f, path);
                n *= shape[i];
            }
            if (n > (1ULL << 28)) throw IoError("corrupt checkpoint (size): " + path);
            Tensor t(shape);
            f.read(reinterpret_cast<char*>(t.data.data()),
                   static_cast<std::streamsize>(n * sizeof(double)));
            if (!f) throw IoError("corrupt checkpoint (truncated): " + path);
            entries[name] = std::move(t);
        }
        return entries;
    }

    ModelSpec spec_;
    std::map<std::string, Tensor> params_;
    double alpha_ = 1.0;
};

}  // namespace sbrlab
