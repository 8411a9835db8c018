// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sbrlab/tensor.hpp"

namespace sbrlab {

using NodeId = std::size_t;

// Linear tape for reverse-mode differentiation. Nodes are appended in
// topological order by construction; backward() walks the tape once in
// reverse.
class Tape {
public:
    NodeId leaf(Tensor t) {
        require_finite(t, "leaf tensor");
        return push(std::move(t), {}, nullptr);
    }

    const Tensor& value(NodeId id) const { return nodes_[id].value; }
    const std::vector<double>& grad(NodeId id) const { return nodes_[id].grad; }
    std::vector<double>& grad_mut(NodeId id) { return nodes_[id].grad; }
    std::size_t size() const { return nodes_.size(); }

    // --- primitives -------------------------------------------------------

    NodeId matmul(NodeId a, NodeId b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows()) {
            throw ShapeError("matmul shape mismatch: " + shape_str(A.shape) + " x " +
                             shape_str(B.shape));
        }
        const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
        Tensor out({m, n});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
                const double av = A.at(i, p);
                for (std::size_t j = 0; j < n; ++j) out.at(i, j) += av * B.at(p, j);
            }
        return push(std::move(out), {a, b}, [m, k, n](Tape& t, NodeId self) {
            const auto& g = t.nodes_[self].grad;
            const Tensor& A = t.value(t.nodes_[self].parents[0]);
            const Tensor& B = t.value(t.nodes_[self].parents[1]);
            auto& ga = t.nodes_[t.nodes_[self].parents[0]].grad;
            auto& gb = t.nodes_[t.nodes_[self].parents[1]].grad;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const double gv = g[i * n + j];
                    for (std::size_t p = 0; p < k; ++p) {
                        ga[i * k + p] += gv * B.at(p, j);
                        gb[p * n + j] += gv * A.at(i, p);
                    }
                }
        });
    }

    // Elementwise add; also accepts a rank-1 right operand broadcast over
    // the leading batch dimension of a rank-2 left operand (bias add).
    NodeId add(NodeId a, NodeId b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (A.shape == B.shape) {
            Tensor out = A;
            for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += B.data[i];
            return push(std::move(out), {a, b}, [](Tape& t, NodeId self) {
                const auto& g = t.nodes_[self].grad;
                auto& ga = t.nodes_[t.nodes_[self].parents[0]].grad;
                auto& gb = t.nodes_[t.nodes_[self].parents[1]].grad;
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i];
                    gb[i] += g[i];
                }
            });
        }
        if (A.rank() == 2 && B.rank() == 1 && A.cols() == B.shape[0]) {
            const std::size_t m = A.rows(), n = A.cols();
            Tensor out = A;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) out.at(i, j) += B.data[j];
            return push(std::move(out), {a, b}, [m, n](Tape& t, NodeId self) {
                const auto& g = t.nodes_[self].grad;
                auto& ga = t.nodes_[t.nodes_[self].parents[0]].grad;
                auto& gb = t.nodes_[t.nodes_[self].parents[1]].grad;
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        ga[i * n + j] += g[i * n + j];
                        gb[j] += g[i * n + j];
                    }
            });
        }
        throw ShapeError("add shape mismatch: " + shape_str(A.shape) + " vs " +
                         shape_str(B.shape));
    }

    NodeId sub(NodeId a, NodeId b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (A.shape != B.shape)
            throw ShapeError("sub shape mismatch: " + shape_str(A.shape) + " vs " +
                             shape_str(B.shape));
        Tensor out = A;
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= B.data[i];
        return push(std::move(out), {a, b}, [](Tape& t, NodeId self) {
            const auto& g = t.nodes_[self].grad;
            auto& ga = t.nodes_[t.nodes_[self].parents[0]].grad;
            auto& gb = t.nodes_[t.nodes_[self].parents[1]].grad;
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i];
                gb[i] -= g[i];
            }
        });
    }

    NodeId mul(NodeId a, NodeId b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (A.shape != B.shape)
            throw ShapeError("mul shape mismatch: " + shape_str(A.shape) + " vs " +
                             shape_str(B.shape));
        Tensor out = A;
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= B.data[i];
        return push(std::move(out), {a, b}, [](Tape& t, NodeId self) {
            const auto& g = t.nodes_[self].grad;
            const Tensor& A = t.value(t.nodes_[self].parents[0]);
            const Tensor& B = t.value(t.nodes_[self].parents[1]);
            auto& ga = t.nodes_[t.nodes_[self].parents[0]].grad;
            auto& gb = t.nodes_[t.nodes_[self].parents[1]].grad;
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i] * B.data[i];
                gb[i] += g[i] * A.data[i];
            }
        });
    }

    NodeId scale(NodeId a, double c) {
        Tensor out = value(a);
        for (double& v : out.data) v *= c;
        return push(std::move(out), {a}, [c](Tape& t, NodeId self) {
            const auto& g = t.nodes_[self].grad;
            auto& ga = t.nodes_[t.nodes_[self].parents[0]].grad;
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
        });
    }

    // Subgradient at 0 is 0.
    NodeId relu(NodeId a) {
        Tensor out = value(a);
        for (double& v : out.data) v = v > 0.0 ? v : 0.0;
        return push(std::move(out), {a}, [](Tape& t, NodeId self) {
            const auto& g = t.nodes_[self].grad;
            const Tensor& A = t.value(t.nodes_[self].parents[0]);
            auto& ga = t.nodes_[t.nodes_[self].parents[0]].grad;
            for (std::size_t i = 0; i < g.size(); ++i)
                if (A.data[i] > 0.0) ga[i] += g[i];
        });
    }

    NodeId sum(NodeId a) {
        double s = 0.0;
        for (double v : value(a).data) s += v;
        return push(Tensor::scalar(s), {a}, [](Tape& t, NodeId self) {
            const double g = t.nodes_[self].grad[0];
            auto& ga = t.nodes_[t.nodes_[self].parents[0]].grad;
            for (double& v : ga) v += g;
        });
    }

    NodeId mean(NodeId a) {
        const std::size_t n = value(a).size();
        double s = 0.0;
        for (double v : value(a).data) s += v;
        return push(Tensor::scalar(s / static_cast<double>(n)), {a},
                    [n](Tape& t, NodeId self) {
                        const double g = t.nodes_[self].grad[0] / static_cast<double>(n);
                        auto& ga = t.nodes_[t.nodes_[self].parents[0]].grad;
                        for (double& v : ga) v += g;
                    });
    }

    // [m, n] -> [m], sum over the trailing dimension.
    NodeId row_sum(NodeId a) {
        const Tensor& A = value(a);
        if (A.rank() != 2) throw ShapeError("row_sum expects rank-2, got " + shape_str(A.shape));
        const std::size_t m = A.rows(), n = A.cols();
        Tensor out({m});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out.data[i] += A.at(i, j);
        return push(std::move(out), {a}, [m, n](Tape& t, NodeId self) {
            const auto& g = t.nodes_[self].grad;
            auto& ga = t.nodes_[t.nodes_[self].parents[0]].grad;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i];
        });
    }

    // Sum of squares of all entries, as a scalar.
    NodeId squared_l2(NodeId a) {
        double s = 0.0;
        for (double v : value(a).data) s += v * v;
        return push(Tensor::scalar(s), {a}, [](Tape& t, NodeId self) {
            const double g = t.nodes_[self].grad[0];
            const Tensor& A = t.value(t.nodes_[self].parents[0]);
            auto& ga = t.nodes_[t.nodes_[self].parents[0]].grad;
            for (std::size_t i = 0; i < A.size(); ++i) ga[i] += g * 2.0 * A.data[i];
        });
    }

    // Identity forward; multiplies the incoming gradient by alpha on the
    // way back. Gradients reaching the input through other paths are not
    // touched.
    NodeId gradient_reduce(NodeId a, double alpha) {
        if (!(alpha > 0.0 && alpha <= 1.0))
            throw ConfigError("gradient_reduce alpha must be in (0, 1], got " +
                              std::to_string(alpha));
        Tensor out = value(a);
        return push(std::move(out), {a}, [alpha](Tape& t, NodeId self) {
            const auto& g = t.nodes_[self].grad;
            auto& ga = t.nodes_[t.nodes_[self].parents[0]].grad;
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += alpha * g[i];
        });
    }

    // Custom composite node: forward value computed by the caller, backward
    // supplied as a closure over the saved context. Used for fused losses.
    NodeId custom(Tensor value, std::vector<NodeId> parents,
                  std::function<void(Tape&, NodeId)> backprop) {
        return push(std::move(value), std::move(parents), std::move(backprop));
    }

    const std::vector<NodeId>& parents(NodeId id) const { return nodes_[id].parents; }

    // --- backward ---------------------------------------------------------

    void backward(NodeId loss) {
        if (backward_done_)
            throw Error("backward() called twice on the same tape without reset");
        if (!value(loss).is_scalar())
            throw ShapeError("backward() requires a scalar loss, got " +
                             shape_str(value(loss).shape));
        if (loss >= nodes_.size()) throw Error("loss node not on this tape");
        backward_done_ = true;
        nodes_[loss].grad[0] = 1.0;
        for (std::size_t i = loss + 1; i-- > 0;) {
            if (nodes_[i].backprop) nodes_[i].backprop(*this, i);
        }
    }

    void reset_grads() {
        backward_done_ = false;
        for (auto& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
    }

private:
    struct Node {
        Tensor value;
        std::vector<double> grad;
        std::vector<NodeId> parents;
        std::function<void(Tape&, NodeId)> backprop;
    };

    NodeId push(Tensor v, std::vector<NodeId> parents,
                std::function<void(Tape&, NodeId)> backprop) {
        Node n;
        n.grad.assign(v.size(), 0.0);
        n.value = std::move(v);
        n.parents = std::move(parents);
        n.backprop = std::move(backprop);
        nodes_.push_back(std::move(n));
        return nodes_.size() - 1;
    }

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

// --- finite-difference gradient oracle ------------------------------------

struct GradCheckReport {
    bool pass = false;
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
};

// Central finite differences of a scalar-valued tensor function, compared
// against the tape gradient at `point`.
template <typename Fn>
GradCheckReport grad_check(Fn&& fn, const Tensor& point, double tol,
                           double step = 1e-6) {
    Tape tape;
    NodeId x = tape.leaf(point);
    NodeId loss = fn(tape, x);
    tape.backward(loss);
    const std::vector<double> g = tape.grad(x);

    GradCheckReport rep;
    for (std::size_t i = 0; i < point.size(); ++i) {
        Tensor hi = point, lo = point;
        hi.data[i] += step;
        lo.data[i] -= step;
        Tape th, tl;
        const double fhi = th.value(fn(th, th.leaf(hi))).item();
        const double flo = tl.value(fn(tl, tl.leaf(lo))).item();
        const double fd = (fhi - flo) / (2.0 * step);
        const double denom = std::max({std::abs(g[i]), std::abs(fd), 1e-6});
        const double rel = std::abs(g[i] - fd) / denom;
        if (rel > rep.max_rel_err) {
            rep.max_rel_err = rel;
            rep.worst_index = i;
        }
    }
    rep.pass = rep.max_rel_err <= tol;
    return rep;
}

}  // namespace sbrlab
