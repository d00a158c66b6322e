#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "peftlad/errors.hpp"
#include "peftlad/rng.hpp"

namespace peftlad {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << 'x';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

// Thread-local switch that disables tape recording, used for inference
// paths where no backward pass will follow.
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    NoGradGuard() : previous_(grad_mode_flag()) { grad_mode_flag() = false; }
    ~NoGradGuard() { grad_mode_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Dense row-major tensor with a dynamic tape for reverse-mode gradients.
// A Tensor is a cheap shared handle; ops build fresh nodes that link back
// to their inputs, and backward() walks that graph once and then frees it.
// One graph must only ever be touched from a single thread.
template <typename T>
class Tensor {
public:
    struct Node {
        Shape shape;
        std::vector<T> values;
        std::vector<T> grad; // empty until backward touches this node
        bool requires_grad = false;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backprop;

        std::size_t size() const { return values.size(); }
        void ensure_grad() {
            if (grad.empty()) grad.assign(values.size(), T(0));
        }
    };

    Tensor() = default;

    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
        : node_(std::make_shared<Node>()) {
        if (shape_size(shape) != values.size()) {
            throw DimensionError("tensor shape " + shape_str(shape) + " does not match value count " +
                                 std::to_string(values.size()));
        }
        node_->shape = std::move(shape);
        node_->values = std::move(values);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::vector<T> values(shape_size(shape), T(0));
        return Tensor(std::move(shape), std::move(values), requires_grad);
    }

    static Tensor full(Shape shape, T value, bool requires_grad = false) {
        std::vector<T> values(shape_size(shape), value);
        return Tensor(std::move(shape), std::move(values), requires_grad);
    }

    static Tensor scalar(T value, bool requires_grad = false) {
        return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape[i]; }
    std::size_t size() const { return node_->values.size(); }

    const std::vector<T>& values() const { return node_->values; }
    // In-place mutation is reserved for leaf tensors (parameters, probe
    // inputs); mutating an op result invalidates its recorded backward.
    std::vector<T>& mutable_values() { return node_->values; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool flag) { node_->requires_grad = flag; }

    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<T>& grad() const {
        if (node_->grad.empty()) throw NumericError("tensor has no gradient");
        return node_->grad;
    }
    void zero_grad() { node_->grad.clear(); }

    T item() const {
        if (size() != 1) throw DimensionError("item() on non-scalar tensor " + shape_str(shape()));
        return node_->values[0];
    }

    // Reverse-mode sweep from a scalar. Frees the recorded graph afterwards;
    // leaf gradients survive until zero_grad().
    void backward() {
        if (size() != 1) throw DimensionError("backward() requires a scalar, got " + shape_str(shape()));
        if (!std::isfinite(static_cast<double>(node_->values[0]))) {
            throw NumericError("backward() from non-finite value");
        }
        std::vector<std::shared_ptr<Node>> order;
        topo_collect(node_, order);
        node_->ensure_grad();
        node_->grad[0] = T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node& node = **it;
            if (node.backprop && !node.grad.empty()) node.backprop(node);
        }
        for (auto& node : order) {
            const bool leaf = node->parents.empty() && !node->backprop;
            node->parents.clear();
            node->backprop = nullptr;
            if (!leaf || !node->requires_grad) node->grad.clear();
        }
    }

    std::shared_ptr<Node> node() const { return node_; }
    static Tensor from_node(std::shared_ptr<Node> node) { return Tensor(std::move(node)); }

private:
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static void topo_collect(const std::shared_ptr<Node>& root, std::vector<std::shared_ptr<Node>>& order) {
        // Iterative post-order over parents that participate in the gradient.
        std::unordered_set<Node*> visited;
        std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack;
        if (!root->requires_grad) return;
        stack.emplace_back(root, 0);
        visited.insert(root.get());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                auto parent = node->parents[next++];
                if (parent->requires_grad && visited.insert(parent.get()).second) {
                    stack.emplace_back(std::move(parent), 0);
                }
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<Node> node_;
};

namespace detail {

template <typename T>
std::shared_ptr<typename Tensor<T>::Node> make_result(Shape shape, std::vector<T> values,
                                                      std::vector<Tensor<T>> inputs,
                                                      std::function<void(typename Tensor<T>::Node&)> backprop) {
    auto node = std::make_shared<typename Tensor<T>::Node>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    bool track = false;
    if (grad_mode_flag()) {
        for (const auto& input : inputs) {
            if (input.requires_grad()) {
                track = true;
                break;
            }
        }
    }
    if (track) {
        node->requires_grad = true;
        node->parents.reserve(inputs.size());
        for (const auto& input : inputs) node->parents.push_back(input.node());
        node->backprop = std::move(backprop);
    }
    return node;
}

// c (m x n) = op_a(a) * op_b(b), accumulating when accumulate is set.
// Transposition is folded into the loop order; all operands are row-major.
template <typename T>
void gemm(T* c, const T* a, const T* b, std::size_t m, std::size_t k, std::size_t n, bool ta, bool tb,
          bool accumulate) {
    if (!accumulate) std::fill(c, c + m * n, T(0));
    if (!ta && !tb) {
        for (std::size_t i = 0; i < m; ++i) {
            T* crow = c + i * n;
            const T* arow = a + i * k;
            for (std::size_t p = 0; p < k; ++p) {
                const T aip = arow[p];
                if (aip == T(0)) continue;
                const T* brow = b + p * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
            }
        }
    } else if (!ta && tb) {
        for (std::size_t i = 0; i < m; ++i) {
            const T* arow = a + i * k;
            T* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                const T* brow = b + j * k;
                T acc = T(0);
                for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
                crow[j] += acc;
            }
        }
    } else if (ta && !tb) {
        // a is stored (k x m)
        for (std::size_t p = 0; p < k; ++p) {
            const T* arow = a + p * m;
            const T* brow = b + p * n;
            for (std::size_t i = 0; i < m; ++i) {
                const T api = arow[i];
                if (api == T(0)) continue;
                T* crow = c + i * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
            }
        }
    } else {
        // a stored (k x m), b stored (n x k)
        for (std::size_t i = 0; i < m; ++i) {
            T* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                const T* brow = b + j * k;
                T acc = T(0);
                for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * brow[p];
                crow[j] += acc;
            }
        }
    }
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + " tensor, got " +
                             shape_str(t.shape()));
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_a = false, bool transpose_b = false) {
    detail::require_rank(a, 2, "matmul");
    detail::require_rank(b, 2, "matmul");
    const std::size_t m = transpose_a ? a.dim(1) : a.dim(0);
    const std::size_t k = transpose_a ? a.dim(0) : a.dim(1);
    const std::size_t kb = transpose_b ? b.dim(1) : b.dim(0);
    const std::size_t n = transpose_b ? b.dim(0) : b.dim(1);
    if (k != kb) {
        throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) +
                             (transpose_a ? "^T" : "") + " x " + shape_str(b.shape()) +
                             (transpose_b ? "^T" : ""));
    }
    std::vector<T> out(m * n);
    detail::gemm(out.data(), a.values().data(), b.values().data(), m, k, n, transpose_a, transpose_b, false);

    auto an = a.node();
    auto bn = b.node();
    auto node = detail::make_result<T>(
        Shape{m, n}, std::move(out), {a, b},
        [an, bn, m, k, n, transpose_a, transpose_b](typename Tensor<T>::Node& self) {
            const T* dc = self.grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                if (!transpose_a) {
                    // da = dC * op(B)^T
                    if (!transpose_b)
                        detail::gemm(an->grad.data(), dc, bn->values.data(), m, n, k, false, true, true);
                    else
                        detail::gemm(an->grad.data(), dc, bn->values.data(), m, n, k, false, false, true);
                } else {
                    // da = (dC * op(B)^T)^T = op(B) * dC^T
                    if (!transpose_b)
                        detail::gemm(an->grad.data(), bn->values.data(), dc, k, n, m, false, true, true);
                    else
                        detail::gemm(an->grad.data(), bn->values.data(), dc, k, n, m, true, true, true);
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                if (!transpose_b) {
                    // db = op(A)^T * dC
                    if (!transpose_a)
                        detail::gemm(bn->grad.data(), an->values.data(), dc, k, m, n, true, false, true);
                    else
                        detail::gemm(bn->grad.data(), an->values.data(), dc, k, m, n, false, false, true);
                } else {
                    // db = dC^T * op(A)
                    if (!transpose_a)
                        detail::gemm(bn->grad.data(), dc, an->values.data(), n, m, k, true, false, true);
                    else
                        detail::gemm(bn->grad.data(), dc, an->values.data(), n, m, k, true, true, true);
                }
            }
        });
    return Tensor<T>::from_node(node);
}

// y = op(A) * x for a rank-1 x.
template <typename T>
Tensor<T> matvec(const Tensor<T>& a, const Tensor<T>& x, bool transpose_a = false) {
    detail::require_rank(a, 2, "matvec");
    detail::require_rank(x, 1, "matvec");
    const std::size_t m = transpose_a ? a.dim(1) : a.dim(0);
    const std::size_t k = transpose_a ? a.dim(0) : a.dim(1);
    if (k != x.dim(0)) {
        throw DimensionError("matvec: " + shape_str(a.shape()) + (transpose_a ? "^T" : "") + " x " +
                             shape_str(x.shape()));
    }
    std::vector<T> out(m, T(0));
    const T* av = a.values().data();
    const T* xv = x.values().data();
    if (!transpose_a) {
        for (std::size_t i = 0; i < m; ++i) {
            const T* row = av + i * k;
            T acc = T(0);
            for (std::size_t j = 0; j < k; ++j) acc += row[j] * xv[j];
            out[i] = acc;
        }
    } else {
        for (std::size_t j = 0; j < k; ++j) {
            const T xj = xv[j];
            const T* row = av + j * m;
            for (std::size_t i = 0; i < m; ++i) out[i] += row[i] * xj;
        }
    }

    auto an = a.node();
    auto xn = x.node();
    auto node = detail::make_result<T>(
        Shape{m}, std::move(out), {a, x}, [an, xn, m, k, transpose_a](typename Tensor<T>::Node& self) {
            const T* dy = self.grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                T* da = an->grad.data();
                if (!transpose_a) {
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < k; ++j) da[i * k + j] += dy[i] * xn->values[j];
                } else {
                    for (std::size_t j = 0; j < k; ++j)
                        for (std::size_t i = 0; i < m; ++i) da[j * m + i] += dy[i] * xn->values[j];
                }
            }
            if (xn->requires_grad) {
                xn->ensure_grad();
                T* dx = xn->grad.data();
                const T* av2 = an->values.data();
                if (!transpose_a) {
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < k; ++j) dx[j] += av2[i * k + j] * dy[i];
                } else {
                    for (std::size_t j = 0; j < k; ++j) {
                        T acc = T(0);
                        for (std::size_t i = 0; i < m; ++i) acc += av2[j * m + i] * dy[i];
                        dx[j] += acc;
                    }
                }
            }
        });
    return Tensor<T>::from_node(node);
}

// ---------------------------------------------------------------------------
// Elementwise ops. Broadcasting is restricted to a rank-1 right operand
// matched against the trailing axis of the left one.
// ---------------------------------------------------------------------------

namespace detail {

enum class EwKind { same, trailing };

template <typename T>
EwKind classify_broadcast(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() == b.shape()) return EwKind::same;
    if (b.rank() == 1 && a.rank() >= 1 && a.dim(a.rank() - 1) == b.dim(0)) return EwKind::trailing;
    throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
}

} // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    const auto kind = detail::classify_broadcast(a, b, "add");
    std::vector<T> out(a.values());
    const std::size_t cols = b.size();
    if (kind == detail::EwKind::same) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.values()[i];
    } else {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.values()[i % cols];
    }
    auto an = a.node();
    auto bn = b.node();
    auto node = detail::make_result<T>(
        a.shape(), std::move(out), {a, b}, [an, bn, kind, cols](typename Tensor<T>::Node& self) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                if (kind == detail::EwKind::same) {
                    for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
                } else {
                    for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i % cols] += self.grad[i];
                }
            }
        });
    return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    const auto kind = detail::classify_broadcast(a, b, "sub");
    std::vector<T> out(a.values());
    const std::size_t cols = b.size();
    if (kind == detail::EwKind::same) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.values()[i];
    } else {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.values()[i % cols];
    }
    auto an = a.node();
    auto bn = b.node();
    auto node = detail::make_result<T>(
        a.shape(), std::move(out), {a, b}, [an, bn, kind, cols](typename Tensor<T>::Node& self) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                if (kind == detail::EwKind::same) {
                    for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
                } else {
                    for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i % cols] -= self.grad[i];
                }
            }
        });
    return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    const auto kind = detail::classify_broadcast(a, b, "mul");
    std::vector<T> out(a.values());
    const std::size_t cols = b.size();
    if (kind == detail::EwKind::same) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.values()[i];
    } else {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.values()[i % cols];
    }
    auto an = a.node();
    auto bn = b.node();
    auto node = detail::make_result<T>(
        a.shape(), std::move(out), {a, b}, [an, bn, kind, cols](typename Tensor<T>::Node& self) {
            if (an->requires_grad) {
                an->ensure_grad();
                if (kind == detail::EwKind::same) {
                    for (std::size_t i = 0; i < self.grad.size(); ++i)
                        an->grad[i] += self.grad[i] * bn->values[i];
                } else {
                    for (std::size_t i = 0; i < self.grad.size(); ++i)
                        an->grad[i] += self.grad[i] * bn->values[i % cols];
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                if (kind == detail::EwKind::same) {
                    for (std::size_t i = 0; i < self.grad.size(); ++i)
                        bn->grad[i] += self.grad[i] * an->values[i];
                } else {
                    for (std::size_t i = 0; i < self.grad.size(); ++i)
                        bn->grad[i % cols] += self.grad[i] * an->values[i];
                }
            }
        });
    return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    std::vector<T> out(a.values());
    for (auto& v : out) v *= factor;
    auto an = a.node();
    auto node = detail::make_result<T>(a.shape(), std::move(out), {a},
                                       [an, factor](typename Tensor<T>::Node& self) {
                                           if (!an->requires_grad) return;
                                           an->ensure_grad();
                                           for (std::size_t i = 0; i < self.grad.size(); ++i)
                                               an->grad[i] += factor * self.grad[i];
                                       });
    return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    std::vector<T> out(a.values());
    for (auto& v : out) v = v > T(0) ? v : T(0);
    auto an = a.node();
    auto node = detail::make_result<T>(a.shape(), std::move(out), {a}, [an](typename Tensor<T>::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (an->values[i] > T(0)) an->grad[i] += self.grad[i];
    });
    return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    // Exact erf form; the derivative is Phi(x) + x*phi(x).
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = static_cast<double>(a.values()[i]);
        out[i] = static_cast<T>(x * 0.5 * (1.0 + std::erf(x * inv_sqrt2)));
    }
    auto an = a.node();
    auto node = detail::make_result<T>(a.shape(), std::move(out), {a}, [an](typename Tensor<T>::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double x = static_cast<double>(an->values[i]);
            const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            an->grad[i] += self.grad[i] * static_cast<T>(cdf + x * pdf);
        }
    });
    return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> sqrt_elem(const Tensor<T>& a) {
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(a.values()[i]);
    auto an = a.node();
    auto node = detail::make_result<T>(a.shape(), std::move(out), {a}, [an](typename Tensor<T>::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            an->grad[i] += self.grad[i] * T(0.5) / self.values[i];
    });
    return Tensor<T>::from_node(node);
}

// Softmax over the last axis of a rank-2 tensor, max-subtracted per row.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
    detail::require_rank(a, 2, "softmax_rows");
    const std::size_t rows = a.dim(0), cols = a.dim(1);
    std::vector<T> out(a.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = a.values().data() + r * cols;
        T* o = out.data() + r * cols;
        T mx = in[0];
        for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
        T sum = T(0);
        for (std::size_t c = 0; c < cols; ++c) {
            o[c] = std::exp(in[c] - mx);
            sum += o[c];
        }
        const T inv = T(1) / sum;
        for (std::size_t c = 0; c < cols; ++c) o[c] *= inv;
    }
    auto an = a.node();
    auto node = detail::make_result<T>(
        a.shape(), std::move(out), {a}, [an, rows, cols](typename Tensor<T>::Node& self) {
            if (!an->requires_grad) return;
            an->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const T* y = self.values.data() + r * cols;
                const T* dy = self.grad.data() + r * cols;
                T dot = T(0);
                for (std::size_t c = 0; c < cols; ++c) dot += y[c] * dy[c];
                T* dx = an->grad.data() + r * cols;
                for (std::size_t c = 0; c < cols; ++c) dx[c] += y[c] * (dy[c] - dot);
            }
        });
    return Tensor<T>::from_node(node);
}

// Per-row normalization over the last axis with affine terms:
// y = gamma * (x - mean) / sqrt(var + eps) + beta.
template <typename T>
Tensor<T> layer_norm_rows(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                          T eps = T(1e-5)) {
    detail::require_rank(x, 2, "layer_norm_rows");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    if (gamma.rank() != 1 || gamma.dim(0) != cols || beta.rank() != 1 || beta.dim(0) != cols) {
        throw DimensionError("layer_norm_rows: affine shapes " + shape_str(gamma.shape()) + ", " +
                             shape_str(beta.shape()) + " do not match row width " + std::to_string(cols));
    }
    std::vector<T> out(x.size());
    std::vector<T> normalized(x.size());
    std::vector<T> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = x.values().data() + r * cols;
        T mean = T(0);
        for (std::size_t c = 0; c < cols; ++c) mean += in[c];
        mean /= static_cast<T>(cols);
        T var = T(0);
        for (std::size_t c = 0; c < cols; ++c) {
            const T d = in[c] - mean;
            var += d * d;
        }
        var /= static_cast<T>(cols);
        const T istd = T(1) / std::sqrt(var + eps);
        inv_std[r] = istd;
        T* nrow = normalized.data() + r * cols;
        T* orow = out.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) {
            nrow[c] = (in[c] - mean) * istd;
            orow[c] = gamma.values()[c] * nrow[c] + beta.values()[c];
        }
    }
    auto xn = x.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    auto norm = std::make_shared<std::vector<T>>(std::move(normalized));
    auto istd = std::make_shared<std::vector<T>>(std::move(inv_std));
    auto node = detail::make_result<T>(
        x.shape(), std::move(out), {x, gamma, beta},
        [xn, gn, bn, norm, istd, rows, cols](typename Tensor<T>::Node& self) {
            const std::vector<T>& xhat = *norm;
            if (gn->requires_grad) {
                gn->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < cols; ++c)
                        gn->grad[c] += self.grad[r * cols + c] * xhat[r * cols + c];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < cols; ++c) bn->grad[c] += self.grad[r * cols + c];
            }
            if (xn->requires_grad) {
                xn->ensure_grad();
                const T invc = T(1) / static_cast<T>(cols);
                for (std::size_t r = 0; r < rows; ++r) {
                    const T* dy = self.grad.data() + r * cols;
                    const T* nrow = xhat.data() + r * cols;
                    T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
                    for (std::size_t c = 0; c < cols; ++c) {
                        const T dxhat = dy[c] * gn->values[c];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * nrow[c];
                    }
                    T* dx = xn->grad.data() + r * cols;
                    for (std::size_t c = 0; c < cols; ++c) {
                        const T dxhat = dy[c] * gn->values[c];
                        dx[c] += (*istd)[r] * (dxhat - invc * sum_dxhat - nrow[c] * invc * sum_dxhat_xhat);
                    }
                }
            }
        });
    return Tensor<T>::from_node(node);
}

// ---------------------------------------------------------------------------
// Gather / scatter style ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> embedding_rows(const Tensor<T>& table, const std::vector<int>& ids) {
    detail::require_rank(table, 2, "embedding_rows");
    const std::size_t vocab = table.dim(0), width = table.dim(1);
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
            throw InputError("embedding_rows: id " + std::to_string(id) + " outside table of " +
                             std::to_string(vocab) + " rows");
        }
    }
    std::vector<T> out(ids.size() * width);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const T* src = table.values().data() + static_cast<std::size_t>(ids[i]) * width;
        std::copy(src, src + width, out.data() + i * width);
    }
    auto tn = table.node();
    auto node = detail::make_result<T>(
        Shape{ids.size(), width}, std::move(out), {table}, [tn, ids, width](typename Tensor<T>::Node& self) {
            if (!tn->requires_grad) return;
            tn->ensure_grad();
            for (std::size_t i = 0; i < ids.size(); ++i) {
                T* dst = tn->grad.data() + static_cast<std::size_t>(ids[i]) * width;
                const T* src = self.grad.data() + i * width;
                for (std::size_t c = 0; c < width; ++c) dst[c] += src[c];
            }
        });
    return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> select_row(const Tensor<T>& x, std::size_t row) {
    detail::require_rank(x, 2, "select_row");
    if (row >= x.dim(0)) {
        throw DimensionError("select_row: row " + std::to_string(row) + " outside " + shape_str(x.shape()));
    }
    const std::size_t cols = x.dim(1);
    std::vector<T> out(x.values().begin() + row * cols, x.values().begin() + (row + 1) * cols);
    auto xn = x.node();
    auto node = detail::make_result<T>(Shape{cols}, std::move(out), {x},
                                       [xn, row, cols](typename Tensor<T>::Node& self) {
                                           if (!xn->requires_grad) return;
                                           xn->ensure_grad();
                                           T* dst = xn->grad.data() + row * cols;
                                           for (std::size_t c = 0; c < cols; ++c) dst[c] += self.grad[c];
                                       });
    return Tensor<T>::from_node(node);
}

// Functional row replacement: rows other than `row` flow from x, row `row`
// flows from `replacement`.
template <typename T>
Tensor<T> replace_row(const Tensor<T>& x, std::size_t row, const Tensor<T>& replacement) {
    detail::require_rank(x, 2, "replace_row");
    detail::require_rank(replacement, 1, "replace_row");
    const std::size_t cols = x.dim(1);
    if (row >= x.dim(0) || replacement.dim(0) != cols) {
        throw DimensionError("replace_row: row " + std::to_string(row) + ", " + shape_str(replacement.shape()) +
                             " into " + shape_str(x.shape()));
    }
    std::vector<T> out(x.values());
    std::copy(replacement.values().begin(), replacement.values().end(), out.begin() + row * cols);
    auto xn = x.node();
    auto rn = replacement.node();
    auto node = detail::make_result<T>(
        x.shape(), std::move(out), {x, replacement}, [xn, rn, row, cols](typename Tensor<T>::Node& self) {
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) {
                    if (i / cols == row) continue;
                    xn->grad[i] += self.grad[i];
                }
            }
            if (rn->requires_grad) {
                rn->ensure_grad();
                const T* src = self.grad.data() + row * cols;
                for (std::size_t c = 0; c < cols; ++c) rn->grad[c] += src[c];
            }
        });
    return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> rows_stack(const std::vector<Tensor<T>>& rows) {
    if (rows.empty()) throw DimensionError("rows_stack: empty input");
    const std::size_t cols = rows.front().dim(0);
    for (const auto& r : rows) {
        detail::require_rank(r, 1, "rows_stack");
        if (r.dim(0) != cols) {
            throw DimensionError("rows_stack: mixed widths " + shape_str(rows.front().shape()) + " and " +
                                 shape_str(r.shape()));
        }
    }
    std::vector<T> out;
    out.reserve(rows.size() * cols);
    for (const auto& r : rows) out.insert(out.end(), r.values().begin(), r.values().end());
    std::vector<std::shared_ptr<typename Tensor<T>::Node>> parents;
    parents.reserve(rows.size());
    for (const auto& r : rows) parents.push_back(r.node());
    auto node = detail::make_result<T>(Shape{rows.size(), cols}, std::move(out), rows,
                                       [parents, cols](typename Tensor<T>::Node& self) {
                                           for (std::size_t i = 0; i < parents.size(); ++i) {
                                               auto& p = parents[i];
                                               if (!p->requires_grad) continue;
                                               p->ensure_grad();
                                               const T* src = self.grad.data() + i * cols;
                                               for (std::size_t c = 0; c < cols; ++c) p->grad[c] += src[c];
                                           }
                                       });
    return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t first, std::size_t last) {
    detail::require_rank(x, 2, "slice_cols");
    if (first >= last || last > x.dim(1)) {
        throw DimensionError("slice_cols: [" + std::to_string(first) + ", " + std::to_string(last) +
                             ") outside " + shape_str(x.shape()));
    }
    const std::size_t rows = x.dim(0), cols = x.dim(1), width = last - first;
    std::vector<T> out(rows * width);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* src = x.values().data() + r * cols + first;
        std::copy(src, src + width, out.data() + r * width);
    }
    auto xn = x.node();
    auto node = detail::make_result<T>(
        Shape{rows, width}, std::move(out), {x}, [xn, rows, cols, first, width](typename Tensor<T>::Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                T* dst = xn->grad.data() + r * cols + first;
                const T* src = self.grad.data() + r * width;
                for (std::size_t c = 0; c < width; ++c) dst[c] += src[c];
            }
        });
    return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: empty input");
    const std::size_t rows = parts.front().dim(0);
    std::size_t total = 0;
    for (const auto& p : parts) {
        detail::require_rank(p, 2, "concat_cols");
        if (p.dim(0) != rows) {
            throw DimensionError("concat_cols: mixed row counts " + shape_str(parts.front().shape()) +
                                 " and " + shape_str(p.shape()));
        }
        total += p.dim(1);
    }
    std::vector<T> out(rows * total);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.dim(1);
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy(p.values().data() + r * w, p.values().data() + (r + 1) * w,
                      out.data() + r * total + offset);
        }
        offset += w;
    }
    std::vector<std::shared_ptr<typename Tensor<T>::Node>> parents;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        parents.push_back(p.node());
        widths.push_back(p.dim(1));
    }
    auto node = detail::make_result<T>(
        Shape{rows, total}, std::move(out), parts,
        [parents, widths, rows, total](typename Tensor<T>::Node& self) {
            std::size_t offset = 0;
            for (std::size_t i = 0; i < parents.size(); ++i) {
                auto& p = parents[i];
                const std::size_t w = widths[i];
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (std::size_t r = 0; r < rows; ++r) {
                        const T* src = self.grad.data() + r * total + offset;
                        T* dst = p->grad.data() + r * w;
                        for (std::size_t c = 0; c < w; ++c) dst[c] += src[c];
                    }
                }
                offset += w;
            }
        });
    return Tensor<T>::from_node(node);
}

// ---------------------------------------------------------------------------
// Reductions and losses
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T total = T(0);
    for (T v : x.values()) total += v;
    auto xn = x.node();
    auto node = detail::make_result<T>(Shape{1}, std::vector<T>{total}, {x},
                                       [xn](typename Tensor<T>::Node& self) {
                                           if (!xn->requires_grad) return;
                                           xn->ensure_grad();
                                           for (auto& g : xn->grad) g += self.grad[0];
                                       });
    return Tensor<T>::from_node(node);
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    T total = T(0);
    for (T v : x.values()) total += v;
    const T inv = T(1) / static_cast<T>(x.size());
    auto xn = x.node();
    auto node = detail::make_result<T>(Shape{1}, std::vector<T>{total * inv}, {x},
                                       [xn, inv](typename Tensor<T>::Node& self) {
                                           if (!xn->requires_grad) return;
                                           xn->ensure_grad();
                                           for (auto& g : xn->grad) g += self.grad[0] * inv;
                                       });
    return Tensor<T>::from_node(node);
}

// Mean cross-entropy from raw logits, computed via a stable log-sum-exp.
template <typename T>
Tensor<T> cross_entropy_mean(const Tensor<T>& logits, const std::vector<int>& labels) {
    detail::require_rank(logits, 2, "cross_entropy_mean");
    const std::size_t rows = logits.dim(0), cols = logits.dim(1);
    if (labels.size() != rows) {
        throw InputError("cross_entropy_mean: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(rows) + " rows");
    }
    for (int label : labels) {
        if (label < 0 || static_cast<std::size_t>(label) >= cols) {
            throw InputError("cross_entropy_mean: label " + std::to_string(label) + " outside [0, " +
                             std::to_string(cols) + ")");
        }
    }
    for (T v : logits.values()) {
        if (!std::isfinite(static_cast<double>(v))) throw InputError("cross_entropy_mean: non-finite logit");
    }
    T total = T(0);
    std::vector<T> probs(logits.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* z = logits.values().data() + r * cols;
        T mx = z[0];
        for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, z[c]);
        T sum_exp = T(0);
        for (std::size_t c = 0; c < cols; ++c) {
            probs[r * cols + c] = std::exp(z[c] - mx);
            sum_exp += probs[r * cols + c];
        }
        const T inv = T(1) / sum_exp;
        for (std::size_t c = 0; c < cols; ++c) probs[r * cols + c] *= inv;
        total += std::log(sum_exp) + mx - z[labels[r]];
    }
    const T inv_rows = T(1) / static_cast<T>(rows);
    auto ln = logits.node();
    auto probs_keep = std::make_shared<std::vector<T>>(std::move(probs));
    auto node = detail::make_result<T>(
        Shape{1}, std::vector<T>{total * inv_rows}, {logits},
        [ln, labels, probs_keep, rows, cols, inv_rows](typename Tensor<T>::Node& self) {
            if (!ln->requires_grad) return;
            ln->ensure_grad();
            const T upstream = self.grad[0] * inv_rows;
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < cols; ++c) {
                    T g = (*probs_keep)[r * cols + c];
                    if (static_cast<std::size_t>(labels[r]) == c) g -= T(1);
                    ln->grad[r * cols + c] += upstream * g;
                }
            }
        });
    return Tensor<T>::from_node(node);
}

// Inverted dropout; identity when rate is zero.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Rng& rng) {
    if (rate <= 0.0) return x;
    if (rate >= 1.0) throw ConfigError("dropout rate must be below 1, got " + std::to_string(rate));
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    std::vector<T> mask(x.size());
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        mask[i] = rng.uniform() < rate ? T(0) : keep_scale;
        out[i] = x.values()[i] * mask[i];
    }
    auto xn = x.node();
    auto mask_keep = std::make_shared<std::vector<T>>(std::move(mask));
    auto node = detail::make_result<T>(x.shape(), std::move(out), {x},
                                       [xn, mask_keep](typename Tensor<T>::Node& self) {
                                           if (!xn->requires_grad) return;
                                           xn->ensure_grad();
                                           for (std::size_t i = 0; i < self.grad.size(); ++i)
                                               xn->grad[i] += self.grad[i] * (*mask_keep)[i];
                                       });
    return Tensor<T>::from_node(node);
}

// ---------------------------------------------------------------------------
// Random initializers
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> random_normal(Shape shape, double stddev, Rng& rng, bool requires_grad = false) {
    std::vector<T> values(shape_size(shape));
    for (auto& v : values) v = static_cast<T>(rng.normal() * stddev);
    return Tensor<T>(std::move(shape), std::move(values), requires_grad);
}

template <typename T>
Tensor<T> random_uniform(Shape shape, double bound, Rng& rng, bool requires_grad = false) {
    std::vector<T> values(shape_size(shape));
    for (auto& v : values) v = static_cast<T>(rng.uniform(-bound, bound));
    return Tensor<T>(std::move(shape), std::move(values), requires_grad);
}

} // namespace peftlad
