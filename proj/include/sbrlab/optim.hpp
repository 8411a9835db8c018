// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "sbrlab/model.hpp"

namespace sbrlab {

// Parameter names sharing one learning-rate scale and weight decay.
struct ParamGroup {
    std::vector<std::string> names;
    double lr_scale = 1.0;
    double weight_decay = 0.0;
};

struct CosineSchedule {
    double eta_max = 0.0;
    double eta_min = 0.0;
    std::size_t total_steps = 1;

    double lr_at(std::size_t step) const {
        if (step > total_steps)
            throw ConfigError("schedule step " + std::to_string(step) + " > total_steps " +
                              std::to_string(total_steps));
        const double t = static_cast<double>(step) / static_cast<double>(total_steps);
        return eta_min + 0.5 * (eta_max - eta_min) *
                             (1.0 + std::cos(3.141592653589793238462643383279502884 * t));
    }
};

using GradMap = std::map<std::string, std::vector<double>>;

// Plain SGD with optional momentum buffering and coupled weight decay:
//   g      <- grad + wd * w
//   v      <- momentum * v + g          (when momentum > 0)
//   w      <- w - base_lr * lr_scale * v
class Sgd {
public:
    explicit Sgd(double momentum = 0.0) : momentum_(momentum) {
        if (momentum < 0.0 || momentum >= 1.0)
            throw ConfigError("momentum must be in [0, 1)");
    }

    void step(Model& model, const GradMap& grads, const std::vector<ParamGroup>& groups,
              double base_lr) {
        for (const ParamGroup& group : groups) {
            const double lr = base_lr * group.lr_scale;
            for (const std::string& name : group.names) {
                Tensor& w = model.param(name);
                auto git = grads.find(name);
                if (git == grads.end() || git->second.size() != w.size())
                    throw ConfigError("missing gradient for parameter " + name);
                const std::vector<double>& g = git->second;
                if (momentum_ > 0.0) {
                    auto& v = velocity_[name];
                    if (v.size() != w.size()) v.assign(w.size(), 0.0);
                    for (std::size_t i = 0; i < w.size(); ++i) {
                        const double eff = g[i] + group.weight_decay * w.data[i];
                        v[i] = momentum_ * v[i] + eff;
                        w.data[i] -= lr * v[i];
                    }
                } else if (group.weight_decay != 0.0) {
                    for (std::size_t i = 0; i < w.size(); ++i)
                        w.data[i] -= lr * (g[i] + group.weight_decay * w.data[i]);
                } else {
                    for (std::size_t i = 0; i < w.size(); ++i) w.data[i] -= lr * g[i];
                }
            }
        }
    }

    double momentum() const { return momentum_; }

private:
    double momentum_;
    std::map<std::string, std::vector<double>> velocity_;
};

}  // namespace sbrlab
