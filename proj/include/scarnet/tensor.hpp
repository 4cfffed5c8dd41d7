#ifndef SCARNET_TENSOR_HPP
#define SCARNET_TENSOR_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

#include "scarnet/errors.hpp"
#include "scarnet/rng.hpp"

namespace scarnet {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) {
        if (d < 0)
            throw shape_error("negative dimension in shape");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i)
        os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

namespace detail {

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

inline std::atomic<std::uint64_t> g_node_seq{0};

// Reverse-mode tape node. `backward` consumes this node's grad and scatters
// into the parents' grads. Parents are held by shared_ptr so a live loss
// tensor keeps its whole graph alive; releasing the root frees everything
// except leaves still referenced elsewhere (parameters).
struct TensorNode {
    std::vector<double> value;
    std::vector<double> grad; // empty until gradient first touches this node
    Shape shape;
    bool requires_grad = false;
    std::uint64_t seq = 0;
    std::vector<NodePtr> parents;
    std::function<void(TensorNode&)> backward;

    void ensure_grad() {
        if (grad.empty())
            grad.assign(value.size(), 0.0);
    }
};

inline thread_local bool g_grad_enabled = true;

} // namespace detail

inline bool grad_enabled() { return detail::g_grad_enabled; }

// RAII scope that disables tape recording (inference / finite differences).
struct NoGradGuard {
    NoGradGuard() : prev_(detail::g_grad_enabled) { detail::g_grad_enabled = false; }
    ~NoGradGuard() { detail::g_grad_enabled = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

class Tensor {
public:
    Tensor() = default;

    static Tensor uninit(Shape shape) {
        Tensor t;
        t.n_ = std::make_shared<detail::TensorNode>();
        t.n_->shape = std::move(shape);
        t.n_->value.resize(shape_numel(t.n_->shape));
        t.n_->seq = detail::g_node_seq.fetch_add(1, std::memory_order_relaxed);
        return t;
    }

    static Tensor zeros(Shape shape) {
        Tensor t = uninit(std::move(shape));
        std::fill(t.n_->value.begin(), t.n_->value.end(), 0.0);
        return t;
    }

    static Tensor full(Shape shape, double v) {
        Tensor t = uninit(std::move(shape));
        std::fill(t.n_->value.begin(), t.n_->value.end(), v);
        return t;
    }

    static Tensor scalar(double v) { return full({1}, v); }

    static Tensor from_data(Shape shape, std::vector<double> data) {
        if (shape_numel(shape) != data.size())
            throw shape_error("from_data: shape " + shape_str(shape) + " does not match data size");
        Tensor t;
        t.n_ = std::make_shared<detail::TensorNode>();
        t.n_->shape = std::move(shape);
        t.n_->value = std::move(data);
        t.n_->seq = detail::g_node_seq.fetch_add(1, std::memory_order_relaxed);
        return t;
    }

    static Tensor uniform(Shape shape, Rng& rng, double lo, double hi) {
        Tensor t = uninit(std::move(shape));
        for (double& v : t.n_->value)
            v = rng.uniform(lo, hi);
        return t;
    }

    static Tensor randn(Shape shape, Rng& rng, double sigma = 1.0, double mean = 0.0) {
        Tensor t = uninit(std::move(shape));
        for (double& v : t.n_->value)
            v = rng.normal(mean, sigma);
        return t;
    }

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    int dim(std::size_t i) const { return n_->shape.at(i); }
    std::size_t ndim() const { return n_->shape.size(); }
    std::size_t numel() const { return n_->value.size(); }

    double* data() { return n_->value.data(); }
    const double* data() const { return n_->value.data(); }
    std::vector<double>& values() { return n_->value; }
    const std::vector<double>& values() const { return n_->value; }

    double operator[](std::size_t i) const { return n_->value[i]; }
    double& operator[](std::size_t i) { return n_->value[i]; }

    // Scalar extraction (numel()==1 tensors produced by reductions).
    double item() const {
        if (numel() != 1)
            throw shape_error("item(): tensor has " + std::to_string(numel()) + " elements");
        return n_->value[0];
    }

    Tensor& set_requires_grad(bool b) {
        n_->requires_grad = b;
        return *this;
    }
    bool requires_grad() const { return n_->requires_grad; }

    bool has_grad() const { return !n_->grad.empty(); }
    const std::vector<double>& grad() const {
        if (n_->grad.empty())
            throw numeric_error("grad(): no gradient accumulated on this tensor");
        return n_->grad;
    }
    std::vector<double>& grad_mut() {
        n_->ensure_grad();
        return n_->grad;
    }
    void zero_grad() {
        if (!n_->grad.empty())
            std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
    }

    // Reverse sweep from a scalar root. Nodes were created in topological
    // (forward) order, so visiting reachable nodes by descending sequence id
    // is a valid reverse topological order.
    void backward() {
        if (numel() != 1)
            throw shape_error("backward(): root must be a scalar");
        std::vector<detail::TensorNode*> nodes;
        collect(n_.get(), nodes);
        std::sort(nodes.begin(), nodes.end(),
                  [](const detail::TensorNode* a, const detail::TensorNode* b) { return a->seq > b->seq; });
        n_->ensure_grad();
        n_->grad[0] += 1.0;
        for (detail::TensorNode* node : nodes) {
            if (node->backward && !node->grad.empty())
                node->backward(*node);
        }
    }

    detail::NodePtr node() const { return n_; }

    // Detached copy of the values (no graph link).
    Tensor detach_copy() const { return from_data(n_->shape, n_->value); }

private:
    static void collect(detail::TensorNode* root, std::vector<detail::TensorNode*>& out) {
        std::unordered_set<detail::TensorNode*> seen;
        std::vector<detail::TensorNode*> stack{root};
        while (!stack.empty()) {
            detail::TensorNode* n = stack.back();
            stack.pop_back();
            if (!seen.insert(n).second)
                continue;
            out.push_back(n);
            for (auto& p : n->parents)
                stack.push_back(p.get());
        }
    }

    detail::NodePtr n_;
};

namespace detail {

inline bool wants_grad(const Tensor& t) { return t.defined() && t.node()->requires_grad; }

// Wire a freshly computed output into the tape.
inline void record(Tensor& out, std::vector<Tensor> parents, std::function<void(TensorNode&)> fn) {
    if (!g_grad_enabled)
        return;
    bool any = false;
    for (const Tensor& p : parents)
        any = any || wants_grad(p);
    if (!any)
        return;
    auto node = out.node();
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const Tensor& p : parents)
        node->parents.push_back(p.node());
    node->backward = std::move(fn);
}

inline void add_into(TensorNode& dst, const std::vector<double>& src) {
    dst.ensure_grad();
    const std::size_t n = src.size();
    double* d = dst.grad.data();
    const double* s = src.data();
    for (std::size_t i = 0; i < n; ++i)
        d[i] += s[i];
}

} // namespace detail

// ---------------------------------------------------------------------------
// Eigen interop (row-major maps over the flat buffers)
// ---------------------------------------------------------------------------

using EMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMatrix>;
using ECMap = Eigen::Map<const EMatrix>;

inline EMap mat_map(Tensor& t, int rows, int cols) { return EMap(t.data(), rows, cols); }
inline ECMap mat_map(const Tensor& t, int rows, int cols) { return ECMap(t.data(), rows, cols); }
inline EMap mat_map(std::vector<double>& v, int rows, int cols) { return EMap(v.data(), rows, cols); }
inline ECMap mat_map(const std::vector<double>& v, int rows, int cols) {
    return ECMap(v.data(), rows, cols);
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw shape_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = Tensor::uninit(a.shape());
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i)
        out[i] = a[i] + b[i];
    detail::record(out, {a, b}, [an = a.node(), bn = b.node()](detail::TensorNode& self) {
        if (an->requires_grad)
            detail::add_into(*an, self.grad);
        if (bn->requires_grad)
            detail::add_into(*bn, self.grad);
    });
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out = Tensor::uninit(a.shape());
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i)
        out[i] = a[i] - b[i];
    detail::record(out, {a, b}, [an = a.node(), bn = b.node()](detail::TensorNode& self) {
        if (an->requires_grad)
            detail::add_into(*an, self.grad);
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                bn->grad[i] -= self.grad[i];
        }
    });
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out = Tensor::uninit(a.shape());
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i)
        out[i] = a[i] * b[i];
    detail::record(out, {a, b}, [an = a.node(), bn = b.node()](detail::TensorNode& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                an->grad[i] += self.grad[i] * bn->value[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                bn->grad[i] += self.grad[i] * an->value[i];
        }
    });
    return out;
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "div");
    Tensor out = Tensor::uninit(a.shape());
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i)
        out[i] = a[i] / b[i];
    detail::record(out, {a, b}, [an = a.node(), bn = b.node()](detail::TensorNode& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                an->grad[i] += self.grad[i] / bn->value[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double bv = bn->value[i];
                bn->grad[i] -= self.grad[i] * an->value[i] / (bv * bv);
            }
        }
    });
    return out;
}

inline Tensor add_scalar(const Tensor& a, double s) {
    Tensor out = Tensor::uninit(a.shape());
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i)
        out[i] = a[i] + s;
    detail::record(out, {a}, [an = a.node()](detail::TensorNode& self) {
        if (an->requires_grad)
            detail::add_into(*an, self.grad);
    });
    return out;
}

inline Tensor mul_scalar(const Tensor& a, double s) {
    Tensor out = Tensor::uninit(a.shape());
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i)
        out[i] = a[i] * s;
    detail::record(out, {a}, [an = a.node(), s](detail::TensorNode& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                an->grad[i] += self.grad[i] * s;
        }
    });
    return out;
}

// s - t, used for convex-combination complements (1 - gate).
inline Tensor sub_from_scalar(double s, const Tensor& a) {
    Tensor out = Tensor::uninit(a.shape());
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i)
        out[i] = s - a[i];
    detail::record(out, {a}, [an = a.node()](detail::TensorNode& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                an->grad[i] -= self.grad[i];
        }
    });
    return out;
}

inline Tensor pow_scalar(const Tensor& a, double p) {
    Tensor out = Tensor::uninit(a.shape());
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i)
        out[i] = std::pow(a[i], p);
    detail::record(out, {a}, [an = a.node(), p](detail::TensorNode& self) {
        if (!an->requires_grad)
            return;
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double x = an->value[i];
            // Subgradient 0 at x==0 for p<1: keeps focal exponents finite when
            // the loss has already reached exactly zero.
            const double d = (x == 0.0 && p < 1.0) ? 0.0 : p * std::pow(x, p - 1.0);
            an->grad[i] += self.grad[i] * d;
        }
    });
    return out;
}

// log(max(x, floor)); gradient is 1/x on the unclamped region, 0 below it.
inline Tensor clamped_log(const Tensor& a, double floor_val) {
    Tensor out = Tensor::uninit(a.shape());
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i)
        out[i] = std::log(std::max(a[i], floor_val));
    detail::record(out, {a}, [an = a.node(), floor_val](detail::TensorNode& self) {
        if (!an->requires_grad)
            return;
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double x = an->value[i];
            if (x > floor_val)
                an->grad[i] += self.grad[i] / x;
        }
    });
    return out;
}

inline Tensor relu(const Tensor& a) {
    Tensor out = Tensor::uninit(a.shape());
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i)
        out[i] = a[i] > 0.0 ? a[i] : 0.0;
    detail::record(out, {a}, [an = a.node()](detail::TensorNode& self) {
        if (!an->requires_grad)
            return;
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (an->value[i] > 0.0)
                an->grad[i] += self.grad[i];
    });
    return out;
}

inline Tensor gelu(const Tensor& a) {
    Tensor out = Tensor::uninit(a.shape());
    const std::size_t n = out.numel();
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = a[i];
        out[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
    }
    detail::record(out, {a}, [an = a.node()](detail::TensorNode& self) {
        if (!an->requires_grad)
            return;
        an->ensure_grad();
        constexpr double inv_sqrt2pi = 0.3989422804014326779;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double x = an->value[i];
            const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            an->grad[i] += self.grad[i] * (cdf + x * pdf);
        }
    });
    return out;
}

inline Tensor sigmoid(const Tensor& a) {
    Tensor out = Tensor::uninit(a.shape());
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) {
        const double x = a[i];
        out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    detail::record(out, {a}, [an = a.node(), on = out.node()](detail::TensorNode& self) {
        if (!an->requires_grad)
            return;
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double s = on->value[i];
            an->grad[i] += self.grad[i] * s * (1.0 - s);
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
    Tensor out = Tensor::uninit({1});
    out[0] = std::accumulate(a.values().begin(), a.values().end(), 0.0);
    detail::record(out, {a}, [an = a.node()](detail::TensorNode& self) {
        if (!an->requires_grad)
            return;
        an->ensure_grad();
        const double g = self.grad[0];
        for (double& v : an->grad)
            v += g;
    });
    return out;
}

inline Tensor mean(const Tensor& a) {
    const double inv = 1.0 / static_cast<double>(a.numel());
    Tensor out = Tensor::uninit({1});
    out[0] = std::accumulate(a.values().begin(), a.values().end(), 0.0) * inv;
    detail::record(out, {a}, [an = a.node(), inv](detail::TensorNode& self) {
        if (!an->requires_grad)
            return;
        an->ensure_grad();
        const double g = self.grad[0] * inv;
        for (double& v : an->grad)
            v += g;
    });
    return out;
}

// ---------------------------------------------------------------------------
// Linear algebra / layout
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw shape_error("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                          shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = Tensor::uninit({m, n});
    mat_map(out, m, n).noalias() = mat_map(a, m, k) * mat_map(b, k, n);
    detail::record(out, {a, b}, [an = a.node(), bn = b.node(), m, k, n](detail::TensorNode& self) {
        ECMap g(self.grad.data(), m, n);
        if (an->requires_grad) {
            an->ensure_grad();
            EMap(an->grad.data(), m, k).noalias() += g * ECMap(bn->value.data(), k, n).transpose();
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            EMap(bn->grad.data(), k, n).noalias() += ECMap(an->value.data(), m, k).transpose() * g;
        }
    });
    return out;
}

inline Tensor transpose2d(const Tensor& a) {
    if (a.ndim() != 2)
        throw shape_error("transpose2d: need rank-2 tensor, got " + shape_str(a.shape()));
    const int m = a.dim(0), n = a.dim(1);
    Tensor out = Tensor::uninit({n, m});
    mat_map(out, n, m) = mat_map(a, m, n).transpose();
    detail::record(out, {a}, [an = a.node(), m, n](detail::TensorNode& self) {
        if (!an->requires_grad)
            return;
        an->ensure_grad();
        EMap(an->grad.data(), m, n) += ECMap(self.grad.data(), n, m).transpose();
    });
    return out;
}

// Copy-reshape with pass-through gradient.
inline Tensor reshape(const Tensor& a, Shape new_shape) {
    if (shape_numel(new_shape) != a.numel())
        throw shape_error("reshape: numel mismatch " + shape_str(a.shape()) + " -> " +
                          shape_str(new_shape));
    Tensor out = Tensor::from_data(std::move(new_shape), a.values());
    detail::record(out, {a}, [an = a.node()](detail::TensorNode& self) {
        if (an->requires_grad)
            detail::add_into(*an, self.grad);
    });
    return out;
}

// x[N,m] + b[m] broadcast over rows.
inline Tensor add_rowvec(const Tensor& x, const Tensor& b) {
    if (x.ndim() != 2 || b.ndim() != 1 || x.dim(1) != b.dim(0))
        throw shape_error("add_rowvec: " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
    const int n = x.dim(0), m = x.dim(1);
    Tensor out = Tensor::uninit({n, m});
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < m; ++c)
            out[static_cast<std::size_t>(r) * m + c] = x[static_cast<std::size_t>(r) * m + c] + b[c];
    detail::record(out, {x, b}, [xn = x.node(), bn = b.node(), n, m](detail::TensorNode& self) {
        if (xn->requires_grad)
            detail::add_into(*xn, self.grad);
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (int r = 0; r < n; ++r)
                for (int c = 0; c < m; ++c)
                    bn->grad[c] += self.grad[static_cast<std::size_t>(r) * m + c];
        }
    });
    return out;
}

inline Tensor slice_cols(const Tensor& x, int c0, int c1) {
    if (x.ndim() != 2 || c0 < 0 || c1 > x.dim(1) || c0 >= c1)
        throw shape_error("slice_cols: bad range on " + shape_str(x.shape()));
    const int n = x.dim(0), m = x.dim(1), w = c1 - c0;
    Tensor out = Tensor::uninit({n, w});
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < w; ++c)
            out[static_cast<std::size_t>(r) * w + c] = x[static_cast<std::size_t>(r) * m + c0 + c];
    detail::record(out, {x}, [xn = x.node(), n, m, w, c0](detail::TensorNode& self) {
        if (!xn->requires_grad)
            return;
        xn->ensure_grad();
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < w; ++c)
                xn->grad[static_cast<std::size_t>(r) * m + c0 + c] +=
                    self.grad[static_cast<std::size_t>(r) * w + c];
    });
    return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty())
        throw shape_error("concat_cols: empty input");
    const int n = parts[0].dim(0);
    int total = 0;
    for (const Tensor& p : parts) {
        if (p.ndim() != 2 || p.dim(0) != n)
            throw shape_error("concat_cols: row mismatch");
        total += p.dim(1);
    }
    Tensor out = Tensor::uninit({n, total});
    int off = 0;
    for (const Tensor& p : parts) {
        const int w = p.dim(1);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < w; ++c)
                out[static_cast<std::size_t>(r) * total + off + c] =
                    p[static_cast<std::size_t>(r) * w + c];
        off += w;
    }
    std::vector<detail::NodePtr> nodes;
    for (const Tensor& p : parts)
        nodes.push_back(p.node());
    detail::record(out, parts, [nodes, n, total](detail::TensorNode& self) {
        int off = 0;
        for (const auto& pn : nodes) {
            const int w = pn->shape[1];
            if (pn->requires_grad) {
                pn->ensure_grad();
                for (int r = 0; r < n; ++r)
                    for (int c = 0; c < w; ++c)
                        pn->grad[static_cast<std::size_t>(r) * w + c] +=
                            self.grad[static_cast<std::size_t>(r) * total + off + c];
            }
            off += w;
        }
    });
    return out;
}

// Row-wise softmax with the usual max-shift stabilization.
inline Tensor softmax_rows(const Tensor& x) {
    if (x.ndim() != 2)
        throw shape_error("softmax_rows: need rank-2, got " + shape_str(x.shape()));
    const int n = x.dim(0), m = x.dim(1);
    Tensor out = Tensor::uninit({n, m});
    for (int r = 0; r < n; ++r) {
        const double* xr = x.data() + static_cast<std::size_t>(r) * m;
        double* yr = out.data() + static_cast<std::size_t>(r) * m;
        double mx = xr[0];
        for (int c = 1; c < m; ++c)
            mx = std::max(mx, xr[c]);
        double s = 0.0;
        for (int c = 0; c < m; ++c) {
            yr[c] = std::exp(xr[c] - mx);
            s += yr[c];
        }
        const double inv = 1.0 / s;
        for (int c = 0; c < m; ++c)
            yr[c] *= inv;
    }
    detail::record(out, {x}, [xn = x.node(), on = out.node(), n, m](detail::TensorNode& self) {
        if (!xn->requires_grad)
            return;
        xn->ensure_grad();
        for (int r = 0; r < n; ++r) {
            const double* y = on->value.data() + static_cast<std::size_t>(r) * m;
            const double* g = self.grad.data() + static_cast<std::size_t>(r) * m;
            double dot = 0.0;
            for (int c = 0; c < m; ++c)
                dot += y[c] * g[c];
            double* gx = xn->grad.data() + static_cast<std::size_t>(r) * m;
            for (int c = 0; c < m; ++c)
                gx[c] += y[c] * (g[c] - dot);
        }
    });
    return out;
}

} // namespace scarnet

#endif
