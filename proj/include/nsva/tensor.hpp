#pragma once

// Dense double-precision tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto a shared node. Every differentiable
// operation records the node it produced together with a closure that knows
// how to push gradients back into its inputs; backward() replays those
// closures in reverse topological order. Gradients accumulate: calling
// backward() twice without zeroing adds the second pass on top of the first.
// Zeroing is always explicit (Tensor::zero_grad / optimizer zero_grad).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace nsva {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

// Deterministic RNG. mt19937_64 output is fixed by the standard and the
// distributions below are hand-rolled, so streams reproduce across platforms
// and standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0x9e3779b97f4a7c15ull) : state_(seed) {}

    std::uint64_t next_u64() { return state_(); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(state_() >> 11) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Uniform integer in [0, n), rejection-sampled so the draw is unbiased.
    std::size_t uniform_index(std::size_t n) {
        if (n == 0) throw std::invalid_argument("Rng::uniform_index: n must be positive");
        std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x = state_();
        while (x >= limit) x = state_();
        return static_cast<std::size_t>(x % n);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[uniform_index(i)]);
        }
    }

private:
    std::mt19937_64 state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

namespace detail {

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // allocated lazily, same length as data
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<NodePtr> inputs;
    // Receives the node itself (for its populated grad) and scatters into inputs.
    std::function<void(TensorNode&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

inline bool& grad_enabled_flag() {
    thread_local bool enabled = true;
    return enabled;
}

inline void accumulate(TensorNode& n, const std::vector<double>& delta) {
    n.ensure_grad();
    for (std::size_t i = 0; i < delta.size(); ++i) n.grad[i] += delta[i];
}

}  // namespace detail

// RAII guard that disables graph recording, for inference paths.
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
    ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

class Tensor {
public:
    Tensor() : node_(std::make_shared<detail::TensorNode>()) {}

    explicit Tensor(Shape shape) : node_(std::make_shared<detail::TensorNode>()) {
        node_->shape = std::move(shape);
        node_->data.assign(shape_numel(node_->shape), 0.0);
    }

    Tensor(Shape shape, std::vector<double> data)
        : node_(std::make_shared<detail::TensorNode>()) {
        if (shape_numel(shape) != data.size()) {
            throw std::invalid_argument("Tensor: shape " + shape_str(shape) + " expects " +
                                        std::to_string(shape_numel(shape)) + " values, got " +
                                        std::to_string(data.size()));
        }
        node_->shape = std::move(shape);
        node_->data = std::move(data);
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, double v) {
        Tensor t(std::move(shape));
        std::fill(t.data().begin(), t.data().end(), v);
        return t;
    }

    static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0) {
        Tensor t(std::move(shape));
        for (double& v : t.data()) v = rng.normal() * stddev;
        return t;
    }

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->data.size(); }

    // rank-1 tensors are treated as a single row where a matrix is expected
    std::size_t rows() const {
        if (rank() == 1) return 1;
        require_rank(2, "rows");
        return node_->shape[0];
    }
    std::size_t cols() const {
        if (rank() == 1) return node_->shape[0];
        require_rank(2, "cols");
        return node_->shape[1];
    }

    std::vector<double>& data() { return node_->data; }
    const std::vector<double>& data() const { return node_->data; }

    double& at(std::size_t i) { return node_->data.at(i); }
    double at(std::size_t i) const { return node_->data.at(i); }
    double& at(std::size_t r, std::size_t c) { return node_->data.at(r * cols() + c); }
    double at(std::size_t r, std::size_t c) const { return node_->data.at(r * cols() + c); }

    double value() const {
        if (numel() != 1) {
            throw std::runtime_error("Tensor::value: tensor " + shape_str(shape()) +
                                     " is not scalar");
        }
        return node_->data[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool b) {
        node_->requires_grad = b;
        if (b) node_->ensure_grad();
        return *this;
    }

    bool has_grad() const { return node_->grad.size() == node_->data.size(); }
    const std::vector<double>& grad() const {
        if (!has_grad()) {
            throw std::runtime_error("Tensor::grad: gradient not populated; run backward() first");
        }
        return node_->grad;
    }
    std::vector<double>& grad_mut() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() {
        if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }

    // Value copy detached from the graph.
    Tensor detach() const {
        Tensor t;
        t.node_->shape = node_->shape;
        t.node_->data = node_->data;
        return t;
    }

    const char* op() const { return node_->op; }
    detail::NodePtr node() const { return node_; }

    void require_rank(std::size_t r, const char* what) const {
        if (rank() != r) {
            throw std::invalid_argument(std::string(what) + ": expected rank " +
                                        std::to_string(r) + " tensor, got shape " +
                                        shape_str(shape()));
        }
    }

private:
    detail::NodePtr node_;
};

// Builds a result node; the backward closure is attached only when grad mode
// is on and at least one input requires grad.
inline Tensor make_op(const char* op, Shape shape, std::vector<double> data,
                      const std::vector<Tensor>& inputs,
                      std::function<void(detail::TensorNode&)> bwd) {
    Tensor out(std::move(shape), std::move(data));
    out.node()->op = op;
    bool any_grad = false;
    for (const Tensor& t : inputs) any_grad = any_grad || t.requires_grad();
    if (detail::grad_enabled_flag() && any_grad && bwd) {
        auto n = out.node();
        n->requires_grad = true;
        n->inputs.reserve(inputs.size());
        for (const Tensor& t : inputs) n->inputs.push_back(t.node());
        n->backward_fn = std::move(bwd);
    }
    return out;
}

// Populates gradients of every requires_grad tensor reachable from `loss`.
// Iterative DFS topological order; each node's rule runs exactly once.
inline void backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                    shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) {
        throw std::invalid_argument("backward: loss is not connected to any differentiable input");
    }

    using detail::TensorNode;
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            TensorNode* child = node->inputs[next++].get();
            if (child->requires_grad && !seen.count(child)) {
                seen.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Interior nodes start each pass from zero; only leaf (parameter/input)
    // gradients accumulate across repeated backward() calls.
    for (TensorNode* n : order) {
        if (n->backward_fn) {
            if (n->grad.size() == n->data.size()) {
                std::fill(n->grad.begin(), n->grad.end(), 0.0);
            } else {
                n->grad.assign(n->data.size(), 0.0);
            }
        }
    }

    TensorNode* root = loss.node().get();
    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        n->ensure_grad();
        if (n->backward_fn) n->backward_fn(*n);
    }
}

// --- raw matrix kernels (row-major) ----------------------------------------

namespace detail {

// C += A(m,k) * B(k,n)
inline void mm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                  std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C += A(m,k) * B(n,k)^T
inline void mm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                  std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            crow[j] += s;
        }
    }
}

// C += A(k,m)^T * B(k,n)
inline void mm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                  std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a + p * m;
        const double* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            double av = arow[i];
            if (av == 0.0) continue;
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace detail

// --- core ops ---------------------------------------------------------------

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

// Standard matrix product; dA = dC * B^T, dB = A^T * dC.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    a.require_rank(2, "matmul lhs");
    b.require_rank(2, "matmul rhs");
    std::size_t m = a.shape()[0], k = a.shape()[1];
    if (b.shape()[0] != k) {
        throw std::invalid_argument("matmul: inner extents disagree, " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    }
    std::size_t n = b.shape()[1];
    std::vector<double> out(m * n, 0.0);
    detail::mm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
    auto an = a.node(), bn = b.node();
    return make_op("matmul", {m, n}, std::move(out), {a, b},
                   [an, bn, m, k, n](detail::TensorNode& r) {
                       if (an->requires_grad) {
                           an->ensure_grad();
                           detail::mm_nt(r.grad.data(), bn->data.data(), an->grad.data(), m, n, k);
                       }
                       if (bn->requires_grad) {
                           bn->ensure_grad();
                           detail::mm_tn(an->data.data(), r.grad.data(), bn->grad.data(), k, m, n);
                       }
                   });
}

inline Tensor transpose(const Tensor& a) {
    a.require_rank(2, "transpose");
    std::size_t m = a.shape()[0], n = a.shape()[1];
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
    auto an = a.node();
    return make_op("transpose", {n, m}, std::move(out), {a},
                   [an, m, n](detail::TensorNode& r) {
                       an->ensure_grad();
                       for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j)
                               an->grad[i * n + j] += r.grad[j * m + i];
                   });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    auto an = a.node(), bn = b.node();
    return make_op("add", a.shape(), std::move(out), {a, b},
                   [an, bn](detail::TensorNode& r) {
                       if (an->requires_grad) detail::accumulate(*an, r.grad);
                       if (bn->requires_grad) detail::accumulate(*bn, r.grad);
                   });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    auto an = a.node(), bn = b.node();
    return make_op("sub", a.shape(), std::move(out), {a, b},
                   [an, bn](detail::TensorNode& r) {
                       if (an->requires_grad) detail::accumulate(*an, r.grad);
                       if (bn->requires_grad) {
                           bn->ensure_grad();
                           for (std::size_t i = 0; i < r.grad.size(); ++i)
                               bn->grad[i] -= r.grad[i];
                       }
                   });
}

// Adds row vector b [n] to every row of a [m,n].
inline Tensor add_rowvec(const Tensor& a, const Tensor& b) {
    a.require_rank(2, "add_rowvec");
    if (b.rank() != 1 || b.numel() != a.shape()[1]) {
        throw std::invalid_argument("add_rowvec: bias " + shape_str(b.shape()) +
                                    " does not match columns of " + shape_str(a.shape()));
    }
    std::size_t m = a.shape()[0], n = a.shape()[1];
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a.data()[i * n + j] + b.data()[j];
    auto an = a.node(), bn = b.node();
    return make_op("add_rowvec", a.shape(), std::move(out), {a, b},
                   [an, bn, m, n](detail::TensorNode& r) {
                       if (an->requires_grad) detail::accumulate(*an, r.grad);
                       if (bn->requires_grad) {
                           bn->ensure_grad();
                           for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t j = 0; j < n; ++j)
                                   bn->grad[j] += r.grad[i * n + j];
                       }
                   });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    auto an = a.node(), bn = b.node();
    return make_op("mul", a.shape(), std::move(out), {a, b},
                   [an, bn](detail::TensorNode& r) {
                       if (an->requires_grad) {
                           an->ensure_grad();
                           for (std::size_t i = 0; i < r.grad.size(); ++i)
                               an->grad[i] += r.grad[i] * bn->data[i];
                       }
                       if (bn->requires_grad) {
                           bn->ensure_grad();
                           for (std::size_t i = 0; i < r.grad.size(); ++i)
                               bn->grad[i] += r.grad[i] * an->data[i];
                       }
                   });
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
    auto an = a.node();
    return make_op("scale", a.shape(), std::move(out), {a},
                   [an, c](detail::TensorNode& r) {
                       an->ensure_grad();
                       for (std::size_t i = 0; i < r.grad.size(); ++i)
                           an->grad[i] += r.grad[i] * c;
                   });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }

inline Tensor gelu(const Tensor& a) {
    // exact form: 0.5 x (1 + erf(x / sqrt(2)))
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double x = a.data()[i];
        out[i] = 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475));
    }
    auto an = a.node();
    return make_op("gelu", a.shape(), std::move(out), {a},
                   [an](detail::TensorNode& r) {
                       an->ensure_grad();
                       constexpr double inv_sqrt2 = 0.7071067811865475;
                       constexpr double inv_sqrt2pi = 0.3989422804014327;
                       for (std::size_t i = 0; i < r.grad.size(); ++i) {
                           double x = an->data[i];
                           double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
                           double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
                           an->grad[i] += r.grad[i] * (cdf + x * pdf);
                       }
                   });
}

// Softmax along `axis` with max-subtraction. Rows whose entries are all -inf
// (fully masked) produce exactly zero rows rather than NaN; entries at -inf
// receive exactly zero weight.
inline Tensor softmax(const Tensor& a, std::size_t axis) {
    if (a.rank() == 0 || axis >= a.rank()) {
        throw std::invalid_argument("softmax: axis " + std::to_string(axis) +
                                    " invalid for shape " + shape_str(a.shape()));
    }
    if (a.rank() == 1) {
        // treat as a single row
        std::size_t n = a.numel();
        Tensor row = make_op("view", {1, n}, std::vector<double>(a.data()), {a},
                             [an = a.node()](detail::TensorNode& r) {
                                 detail::accumulate(*an, r.grad);
                             });
        Tensor sm = softmax(row, 1);
        return make_op("view", {n}, std::vector<double>(sm.data()), {sm},
                       [sn = sm.node()](detail::TensorNode& r) {
                           detail::accumulate(*sn, r.grad);
                       });
    }
    a.require_rank(2, "softmax");
    if (axis == 0) return transpose(softmax(transpose(a), 1));

    std::size_t m = a.shape()[0], n = a.shape()[1];
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = a.data().data() + i * n;
        double* orow = out.data() + i * n;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            if (!(row[j] == row[j])) {
                throw std::domain_error("softmax: non-finite (NaN) input");
            }
            mx = std::max(mx, row[j]);
        }
        if (mx == std::numeric_limits<double>::infinity()) {
            throw std::domain_error("softmax: +inf input");
        }
        if (mx == -std::numeric_limits<double>::infinity()) continue;  // fully masked row
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            orow[j] = std::exp(row[j] - mx);
            s += orow[j];
        }
        for (std::size_t j = 0; j < n; ++j) orow[j] /= s;
    }
    auto an = a.node();
    std::vector<double> saved = out;
    return make_op("softmax", a.shape(), std::move(out), {a},
                   [an, m, n, y = std::move(saved)](detail::TensorNode& r) {
                       an->ensure_grad();
                       for (std::size_t i = 0; i < m; ++i) {
                           const double* yr = y.data() + i * n;
                           const double* gr = r.grad.data() + i * n;
                           double dot = 0.0;
                           for (std::size_t j = 0; j < n; ++j) dot += yr[j] * gr[j];
                           double* ar = an->grad.data() + i * n;
                           for (std::size_t j = 0; j < n; ++j)
                               ar[j] += yr[j] * (gr[j] - dot);
                       }
                   });
}

inline Tensor softmax(const Tensor& a) { return softmax(a, a.rank() - 1); }

// Per-row normalization over the last axis, then affine with gain/bias [n].
inline Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
    a.require_rank(2, "layer_norm");
    std::size_t m = a.shape()[0], n = a.shape()[1];
    if (gain.numel() != n || bias.numel() != n) {
        throw std::invalid_argument("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                                    shape_str(bias.shape()) + " do not match normalized extent " +
                                    std::to_string(n));
    }
    std::vector<double> out(m * n);
    std::vector<double> xhat(m * n);
    std::vector<double> inv_sigma(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = a.data().data() + i * n;
        double mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) mean += row[j];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            double d = row[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        double is = 1.0 / std::sqrt(var + eps);
        inv_sigma[i] = is;
        for (std::size_t j = 0; j < n; ++j) {
            double xh = (row[j] - mean) * is;
            xhat[i * n + j] = xh;
            out[i * n + j] = xh * gain.data()[j] + bias.data()[j];
        }
    }
    auto an = a.node(), gn = gain.node(), bn = bias.node();
    return make_op("layer_norm", a.shape(), std::move(out), {a, gain, bias},
                   [an, gn, bn, m, n, xh = std::move(xhat),
                    is = std::move(inv_sigma)](detail::TensorNode& r) {
                       for (std::size_t i = 0; i < m; ++i) {
                           const double* gr = r.grad.data() + i * n;
                           const double* xr = xh.data() + i * n;
                           if (gn->requires_grad) {
                               gn->ensure_grad();
                               for (std::size_t j = 0; j < n; ++j)
                                   gn->grad[j] += gr[j] * xr[j];
                           }
                           if (bn->requires_grad) {
                               bn->ensure_grad();
                               for (std::size_t j = 0; j < n; ++j) bn->grad[j] += gr[j];
                           }
                           if (an->requires_grad) {
                               an->ensure_grad();
                               double sum_h = 0.0, sum_hx = 0.0;
                               for (std::size_t j = 0; j < n; ++j) {
                                   double h = gr[j] * gn->data[j];
                                   sum_h += h;
                                   sum_hx += h * xr[j];
                               }
                               double inv_n = 1.0 / static_cast<double>(n);
                               double* ar = an->grad.data() + i * n;
                               for (std::size_t j = 0; j < n; ++j) {
                                   double h = gr[j] * gn->data[j];
                                   ar[j] += is[i] * (h - inv_n * sum_h - xr[j] * inv_n * sum_hx);
                               }
                           }
                       }
                   });
}

// Sum of negative log likelihood over timesteps (a sum, not a mean).
// Targets with index ignore_index are skipped (used for PAD positions).
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                            int ignore_index = -1) {
    logits.require_rank(2, "cross_entropy");
    std::size_t t_count = logits.shape()[0], v = logits.shape()[1];
    if (targets.size() != t_count) {
        throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) +
                                    " targets for " + std::to_string(t_count) + " logit rows");
    }
    for (int id : targets) {
        if (id != ignore_index && (id < 0 || static_cast<std::size_t>(id) >= v)) {
            throw std::out_of_range("cross_entropy: target index " + std::to_string(id) +
                                    " out of range for vocabulary of " + std::to_string(v));
        }
    }
    double loss = 0.0;
    std::vector<double> lse(t_count, 0.0);
    for (std::size_t t = 0; t < t_count; ++t) {
        if (targets[t] == ignore_index) continue;
        const double* row = logits.data().data() + t * v;
        double mx = row[0];
        for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < v; ++j) s += std::exp(row[j] - mx);
        lse[t] = mx + std::log(s);
        loss += lse[t] - row[targets[t]];
    }
    auto ln = logits.node();
    return make_op("cross_entropy", {1}, {loss}, {logits},
                   [ln, targets, t_count, v, lse = std::move(lse),
                    ignore_index](detail::TensorNode& r) {
                       ln->ensure_grad();
                       double g = r.grad[0];
                       for (std::size_t t = 0; t < t_count; ++t) {
                           if (targets[t] == ignore_index) continue;
                           const double* row = ln->data.data() + t * v;
                           double* gr = ln->grad.data() + t * v;
                           for (std::size_t j = 0; j < v; ++j)
                               gr[j] += g * std::exp(row[j] - lse[t]);
                           gr[targets[t]] -= g;
                       }
                   });
}

inline Tensor sum(const Tensor& a) {
    double s = std::accumulate(a.data().begin(), a.data().end(), 0.0);
    auto an = a.node();
    return make_op("sum", {1}, {s}, {a},
                   [an](detail::TensorNode& r) {
                       an->ensure_grad();
                       for (double& g : an->grad) g += r.grad[0];
                   });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

// Mean over all rows of a [m,n] matrix -> [n].
inline Tensor mean_rows(const Tensor& a) {
    a.require_rank(2, "mean_rows");
    std::size_t m = a.shape()[0], n = a.shape()[1];
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j] += a.data()[i * n + j];
    double inv_m = 1.0 / static_cast<double>(m);
    for (double& v : out) v *= inv_m;
    auto an = a.node();
    return make_op("mean_rows", {n}, std::move(out), {a},
                   [an, m, n, inv_m](detail::TensorNode& r) {
                       an->ensure_grad();
                       for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j)
                               an->grad[i * n + j] += r.grad[j] * inv_m;
                   });
}

// Contiguous row slice [r0, r1) of a [m,n] matrix.
inline Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1) {
    a.require_rank(2, "slice_rows");
    std::size_t m = a.shape()[0], n = a.shape()[1];
    if (r0 > r1 || r1 > m) {
        throw std::out_of_range("slice_rows: range [" + std::to_string(r0) + "," +
                                std::to_string(r1) + ") exceeds " + shape_str(a.shape()));
    }
    std::vector<double> out(a.data().begin() + r0 * n, a.data().begin() + r1 * n);
    auto an = a.node();
    return make_op("slice_rows", {r1 - r0, n}, std::move(out), {a},
                   [an, r0, n](detail::TensorNode& r) {
                       an->ensure_grad();
                       for (std::size_t i = 0; i < r.grad.size(); ++i)
                           an->grad[r0 * n + i] += r.grad[i];
                   });
}

// Column slice [c0, c1) of a [m,n] matrix.
inline Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
    a.require_rank(2, "slice_cols");
    std::size_t m = a.shape()[0], n = a.shape()[1];
    if (c0 > c1 || c1 > n) {
        throw std::out_of_range("slice_cols: range [" + std::to_string(c0) + "," +
                                std::to_string(c1) + ") exceeds " + shape_str(a.shape()));
    }
    std::size_t w = c1 - c0;
    std::vector<double> out(m * w);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * w + j] = a.data()[i * n + c0 + j];
    auto an = a.node();
    return make_op("slice_cols", {m, w}, std::move(out), {a},
                   [an, m, n, c0, w](detail::TensorNode& r) {
                       an->ensure_grad();
                       for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < w; ++j)
                               an->grad[i * n + c0 + j] += r.grad[i * w + j];
                   });
}

// Stacks matrices (or row vectors) on top of each other; all inputs must share
// the column extent.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
    std::size_t n = parts[0].cols();
    std::size_t m = 0;
    for (const Tensor& p : parts) {
        if (p.cols() != n) {
            throw std::invalid_argument("concat_rows: column mismatch " +
                                        shape_str(p.shape()) + " vs expected " +
                                        std::to_string(n) + " columns");
        }
        m += p.rows();
    }
    std::vector<double> out;
    out.reserve(m * n);
    for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    std::vector<detail::NodePtr> nodes;
    nodes.reserve(parts.size());
    for (const Tensor& p : parts) nodes.push_back(p.node());
    return make_op("concat_rows", {m, n}, std::move(out), parts,
                   [nodes](detail::TensorNode& r) {
                       std::size_t off = 0;
                       for (const auto& nd : nodes) {
                           std::size_t len = nd->data.size();
                           if (nd->requires_grad) {
                               nd->ensure_grad();
                               for (std::size_t i = 0; i < len; ++i)
                                   nd->grad[i] += r.grad[off + i];
                           }
                           off += len;
                       }
                   });
}

// Concatenates along columns; all inputs must share the row extent.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    std::size_t m = parts[0].rows();
    std::size_t n = 0;
    for (const Tensor& p : parts) {
        if (p.rows() != m) {
            throw std::invalid_argument("concat_cols: row mismatch " + shape_str(p.shape()) +
                                        " vs expected " + std::to_string(m) + " rows");
        }
        n += p.cols();
    }
    std::vector<double> out(m * n);
    std::size_t coff = 0;
    for (const Tensor& p : parts) {
        std::size_t w = p.cols();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j)
                out[i * n + coff + j] = p.data()[i * w + j];
        coff += w;
    }
    std::vector<detail::NodePtr> nodes;
    std::vector<std::size_t> widths;
    for (const Tensor& p : parts) {
        nodes.push_back(p.node());
        widths.push_back(p.cols());
    }
    return make_op("concat_cols", {m, n}, std::move(out), parts,
                   [nodes, widths, m, n](detail::TensorNode& r) {
                       std::size_t coff = 0;
                       for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
                           std::size_t w = widths[pi];
                           auto& nd = nodes[pi];
                           if (nd->requires_grad) {
                               nd->ensure_grad();
                               for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t j = 0; j < w; ++j)
                                       nd->grad[i * w + j] += r.grad[i * n + coff + j];
                           }
                           coff += w;
                       }
                   });
}

// Gathers rows of a [m,n] matrix by index (duplicates allowed); the backward
// rule scatter-adds. Doubles as the embedding lookup.
inline Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& idx) {
    a.require_rank(2, "gather_rows");
    std::size_t m = a.shape()[0], n = a.shape()[1];
    for (std::size_t i : idx) {
        if (i >= m) {
            throw std::out_of_range("gather_rows: row " + std::to_string(i) + " out of " +
                                    std::to_string(m));
        }
    }
    std::vector<double> out(idx.size() * n);
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy_n(a.data().data() + idx[i] * n, n, out.data() + i * n);
    auto an = a.node();
    return make_op("gather_rows", {idx.size(), n}, std::move(out), {a},
                   [an, idx, n](detail::TensorNode& r) {
                       an->ensure_grad();
                       for (std::size_t i = 0; i < idx.size(); ++i)
                           for (std::size_t j = 0; j < n; ++j)
                               an->grad[idx[i] * n + j] += r.grad[i * n + j];
                   });
}

// Block-diagonal multi-head self-attention: rows of q/k/v [G*L, d] form G
// independent groups of length L; attention runs within each group and head,
// never across. One graph node regardless of group count, which keeps tapes
// small when many crops or frames share attention weights.
inline Tensor grouped_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                std::size_t group_len, std::size_t heads) {
    q.require_rank(2, "grouped_attention q");
    check_same_shape(q, k, "grouped_attention q/k");
    check_same_shape(q, v, "grouped_attention q/v");
    std::size_t rows = q.shape()[0], d = q.shape()[1];
    if (group_len == 0 || rows % group_len != 0) {
        throw std::invalid_argument("grouped_attention: rows " + std::to_string(rows) +
                                    " not divisible by group length " +
                                    std::to_string(group_len));
    }
    if (heads == 0 || d % heads != 0) {
        throw std::invalid_argument("grouped_attention: dim not divisible by heads");
    }
    std::size_t groups = rows / group_len, dh = d / heads, len = group_len;
    double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    std::vector<double> out(rows * d, 0.0);
    std::vector<double> attn(groups * heads * len * len);
    const double* qd = q.data().data();
    const double* kd = k.data().data();
    const double* vd = v.data().data();
    for (std::size_t g = 0; g < groups; ++g) {
        for (std::size_t h = 0; h < heads; ++h) {
            double* a = attn.data() + (g * heads + h) * len * len;
            // scores + stable softmax, row by row
            for (std::size_t i = 0; i < len; ++i) {
                const double* qi = qd + (g * len + i) * d + h * dh;
                double* arow = a + i * len;
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < len; ++j) {
                    const double* kj = kd + (g * len + j) * d + h * dh;
                    double s = 0.0;
                    for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
                    arow[j] = s * inv_sqrt;
                    mx = std::max(mx, arow[j]);
                }
                double sum = 0.0;
                for (std::size_t j = 0; j < len; ++j) {
                    arow[j] = std::exp(arow[j] - mx);
                    sum += arow[j];
                }
                for (std::size_t j = 0; j < len; ++j) arow[j] /= sum;
                // context
                double* orow = out.data() + (g * len + i) * d + h * dh;
                for (std::size_t j = 0; j < len; ++j) {
                    const double* vj = vd + (g * len + j) * d + h * dh;
                    double w = arow[j];
                    for (std::size_t c = 0; c < dh; ++c) orow[c] += w * vj[c];
                }
            }
        }
    }
    auto qn = q.node(), kn = k.node(), vn = v.node();
    return make_op(
        "grouped_attention", q.shape(), std::move(out), {q, k, v},
        [qn, kn, vn, groups, heads, len, d, dh, inv_sqrt,
         a_saved = std::move(attn)](detail::TensorNode& r) {
            qn->ensure_grad();
            kn->ensure_grad();
            vn->ensure_grad();
            std::vector<double> ds_row(len);
            for (std::size_t g = 0; g < groups; ++g) {
                for (std::size_t h = 0; h < heads; ++h) {
                    const double* a = a_saved.data() + (g * heads + h) * len * len;
                    for (std::size_t i = 0; i < len; ++i) {
                        const double* go = r.grad.data() + (g * len + i) * d + h * dh;
                        const double* arow = a + i * len;
                        // dA and dV
                        double dot_sum = 0.0;
                        for (std::size_t j = 0; j < len; ++j) {
                            const double* vj = vn->data.data() + (g * len + j) * d + h * dh;
                            double da = 0.0;
                            for (std::size_t c = 0; c < dh; ++c) da += go[c] * vj[c];
                            ds_row[j] = da;
                            dot_sum += da * arow[j];
                            double* dvj = vn->grad.data() + (g * len + j) * d + h * dh;
                            double w = arow[j];
                            for (std::size_t c = 0; c < dh; ++c) dvj[c] += w * go[c];
                        }
                        // softmax backward then dQ/dK
                        const double* qi = qn->data.data() + (g * len + i) * d + h * dh;
                        double* dqi = qn->grad.data() + (g * len + i) * d + h * dh;
                        for (std::size_t j = 0; j < len; ++j) {
                            double dscore = arow[j] * (ds_row[j] - dot_sum) * inv_sqrt;
                            if (dscore == 0.0) continue;
                            const double* kj = kn->data.data() + (g * len + j) * d + h * dh;
                            double* dkj = kn->grad.data() + (g * len + j) * d + h * dh;
                            for (std::size_t c = 0; c < dh; ++c) {
                                dqi[c] += dscore * kj[c];
                                dkj[c] += dscore * qi[c];
                            }
                        }
                    }
                }
            }
        });
}

// Reshape that preserves element order (used to view a row vector as a matrix).
inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " +
                                    shape_str(shape));
    }
    auto an = a.node();
    return make_op("reshape", std::move(shape), std::vector<double>(a.data()), {a},
                   [an](detail::TensorNode& r) { detail::accumulate(*an, r.grad); });
}

}  // namespace nsva
