#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace glassdet {

// Error taxonomy used across the library.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ValueError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

namespace detail {

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    bool needs_grad() const { return requires_grad || static_cast<bool>(backward_fn); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

inline thread_local bool g_grad_enabled = true;

}  // namespace detail

struct GradMode {
    static bool enabled() { return detail::g_grad_enabled; }
    static void set(bool on) { detail::g_grad_enabled = on; }
};

// RAII scope that disables graph recording (eval-mode forward).
class NoGradGuard {
  public:
    NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set(false); }
    ~NoGradGuard() { GradMode::set(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

/// Dense real tensor handle. Copies are shallow (shared node); the value of a
/// node is never mutated by operators, so sharing is safe for forward reads.
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false)
        : node_(std::make_shared<detail::TensorNode>()) {
        for (int d : shape)
            if (d <= 0) throw ShapeError("tensor extent must be positive, got " + shape_str(shape));
        node_->shape = std::move(shape);
        node_->data.assign(static_cast<size_t>(shape_numel(node_->shape)), fill);
        node_->requires_grad = requires_grad;
    }

    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false) {
        if (shape_numel(shape) != static_cast<int64_t>(data.size()))
            throw ShapeError("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        Tensor t;
        t.node_ = std::make_shared<detail::TensorNode>();
        t.node_->shape = std::move(shape);
        t.node_->data = std::move(data);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return Tensor(std::move(shape), 0.0, requires_grad);
    }
    static Tensor ones(Shape shape, bool requires_grad = false) {
        return Tensor(std::move(shape), 1.0, requires_grad);
    }
    static Tensor scalar(double v) { return Tensor(Shape{1}, v, false); }

    static Tensor rand_uniform(Shape shape, double lo, double hi, std::mt19937_64& rng,
                               bool requires_grad = false) {
        Tensor t(std::move(shape), 0.0, requires_grad);
        std::uniform_real_distribution<double> d(lo, hi);
        for (double& v : t.data()) v = d(rng);
        return t;
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape.at(static_cast<size_t>(i)); }
    int64_t numel() const { return static_cast<int64_t>(node_->data.size()); }

    std::vector<double>& data() { return node_->data; }
    const std::vector<double>& data() const { return node_->data; }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool on) {
        node_->requires_grad = on;
        return *this;
    }

    /// Gradient buffer; allocated (zero-filled) on first access.
    std::vector<double>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    const std::vector<double>& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }
    bool has_grad() const { return !node_->grad.empty(); }
    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }

    double value() const {
        if (numel() != 1) throw ValueError("value() requires a scalar tensor");
        return node_->data[0];
    }

    double& at(std::initializer_list<int> idx) { return node_->data[flat_index(idx)]; }
    double at(std::initializer_list<int> idx) const { return node_->data[flat_index(idx)]; }

    /// Value copy detached from the graph.
    Tensor detach() const {
        Tensor t;
        t.node_ = std::make_shared<detail::TensorNode>();
        t.node_->shape = node_->shape;
        t.node_->data = node_->data;
        return t;
    }

    /// Reverse-mode sweep from this scalar. Leaf gradients accumulate across
    /// repeated calls until zeroed.
    void backward() const {
        if (numel() != 1) throw ValueError("backward() requires a scalar loss tensor");
        // Iterative topological order over the recorded graph.
        std::vector<detail::TensorNode*> order;
        std::unordered_set<detail::TensorNode*> seen;
        struct Frame {
            detail::TensorNode* n;
            size_t next_child;
        };
        std::vector<Frame> stack;
        stack.push_back({node_.get(), 0});
        seen.insert(node_.get());
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.next_child < f.n->parents.size()) {
                detail::TensorNode* p = f.n->parents[f.next_child++].get();
                if (p->backward_fn && !seen.count(p)) {
                    seen.insert(p);
                    stack.push_back({p, 0});
                }
            } else {
                order.push_back(f.n);
                stack.pop_back();
            }
        }
        node_->ensure_grad();
        node_->grad[0] += 1.0;
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            detail::TensorNode* n = *it;
            if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
            // Interior grads are per-sweep scratch; only explicit leaves retain.
            if (n->backward_fn && !n->requires_grad) n->grad.clear();
        }
    }

    std::shared_ptr<detail::TensorNode>& node() { return node_; }
    const std::shared_ptr<detail::TensorNode>& node() const { return node_; }

  private:
    size_t flat_index(std::initializer_list<int> idx) const {
        if (static_cast<int>(idx.size()) != rank())
            throw ShapeError("index rank mismatch for shape " + shape_str(node_->shape));
        size_t flat = 0;
        int i = 0;
        for (int v : idx) {
            int ext = node_->shape[static_cast<size_t>(i)];
            if (v < 0 || v >= ext) throw ShapeError("index out of range");
            flat = flat * static_cast<size_t>(ext) + static_cast<size_t>(v);
            ++i;
        }
        return flat;
    }

    std::shared_ptr<detail::TensorNode> node_;
};

inline bool all_finite(const Tensor& t) {
    for (double v : t.data())
        if (!std::isfinite(v)) return false;
    return true;
}

namespace detail {

inline bool track(std::initializer_list<const Tensor*> inputs) {
    if (!g_grad_enabled) return false;
    for (const Tensor* t : inputs)
        if (t->node()->needs_grad()) return true;
    return false;
}

inline void attach(Tensor& out, std::initializer_list<const Tensor*> inputs,
                   std::function<void(TensorNode&)> fn) {
    auto& n = out.node();
    n->parents.reserve(inputs.size());
    for (const Tensor* t : inputs) n->parents.push_back(t->node());
    n->backward_fn = std::move(fn);
}

// ---------------------------------------------------------------- matmul ---
// Row-major kernels on raw buffers; deterministic accumulation order.

inline void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n) {
    std::fill(c, c + static_cast<size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        double* crow = c + static_cast<size_t>(i) * n;
        const double* arow = a + static_cast<size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            if (av == 0.0) continue;
            const double* brow = b + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[m,n] = sum_k a[m,k] * b[n,k]
inline void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        double* crow = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + static_cast<size_t>(j) * k;
            double acc = 0.0;
            for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            crow[j] = acc;
        }
    }
}

// c[m,n] = sum_k a[k,m] * b[k,n]
inline void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
    std::fill(c, c + static_cast<size_t>(m) * n, 0.0);
    for (int kk = 0; kk < k; ++kk) {
        const double* arow = a + static_cast<size_t>(kk) * m;
        const double* brow = b + static_cast<size_t>(kk) * n;
        for (int i = 0; i < m; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* crow = c + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// ------------------------------------------------------------- broadcast ---

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    const size_t rank = std::max(a.size(), b.size());
    Shape out(rank);
    for (size_t i = 0; i < rank; ++i) {
        const int da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const int db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1)
            throw ShapeError("shapes not broadcastable: " + shape_str(a) + " vs " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides of `in` aligned to an output of rank `out_rank`; 0 on broadcast dims.
inline std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out) {
    std::vector<int64_t> st(out.size(), 0);
    int64_t stride = 1;
    for (size_t i = in.size(); i-- > 0;) {
        const size_t oi = i + (out.size() - in.size());
        st[oi] = (in[i] == 1 && out[oi] != 1) ? 0 : stride;
        stride *= in[i];
    }
    return st;
}

// Iterates an output index space, producing linear offsets for two aligned
// broadcast inputs. f(out_idx, a_idx, b_idx).
template <typename F>
inline void for_each_broadcast(const Shape& out, const std::vector<int64_t>& sa,
                               const std::vector<int64_t>& sb, F&& f) {
    const size_t rank = out.size();
    const int64_t total = shape_numel(out);
    std::vector<int> coord(rank, 0);
    int64_t ia = 0, ib = 0;
    for (int64_t io = 0; io < total; ++io) {
        f(io, ia, ib);
        for (size_t d = rank; d-- > 0;) {
            ++coord[d];
            ia += sa[d];
            ib += sb[d];
            if (coord[d] < out[d]) break;
            ia -= static_cast<int64_t>(coord[d]) * sa[d];
            ib -= static_cast<int64_t>(coord[d]) * sb[d];
            coord[d] = 0;
        }
    }
}

enum class BinOp { add, sub, mul, div };

inline Tensor binary_op(const Tensor& a, const Tensor& b, BinOp op) {
    const Shape out_shape = broadcast_shape(a.shape(), b.shape());
    const auto sa = broadcast_strides(a.shape(), out_shape);
    const auto sb = broadcast_strides(b.shape(), out_shape);
    std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
    const double* pa = a.data().data();
    const double* pb = b.data().data();

    if (a.shape() == b.shape()) {  // fast path, also keeps bit-exact adds tight
        const size_t n = out.size();
        switch (op) {
            case BinOp::add:
                for (size_t i = 0; i < n; ++i) out[i] = pa[i] + pb[i];
                break;
            case BinOp::sub:
                for (size_t i = 0; i < n; ++i) out[i] = pa[i] - pb[i];
                break;
            case BinOp::mul:
                for (size_t i = 0; i < n; ++i) out[i] = pa[i] * pb[i];
                break;
            case BinOp::div:
                for (size_t i = 0; i < n; ++i) out[i] = pa[i] / pb[i];
                break;
        }
    } else {
        for_each_broadcast(out_shape, sa, sb, [&](int64_t io, int64_t ia, int64_t ib) {
            switch (op) {
                case BinOp::add: out[io] = pa[ia] + pb[ib]; break;
                case BinOp::sub: out[io] = pa[ia] - pb[ib]; break;
                case BinOp::mul: out[io] = pa[ia] * pb[ib]; break;
                case BinOp::div: out[io] = pa[ia] / pb[ib]; break;
            }
        });
    }

    Tensor res = Tensor::from_data(out_shape, std::move(out));
    if (track({&a, &b})) {
        attach(res, {&a, &b}, [op, out_shape, sa, sb](TensorNode& self) {
            TensorNode& na = *self.parents[0];
            TensorNode& nb = *self.parents[1];
            const bool wa = na.needs_grad(), wb = nb.needs_grad();
            if (wa) na.ensure_grad();
            if (wb) nb.ensure_grad();
            const double* g = self.grad.data();
            const double* pa = na.data.data();
            const double* pb = nb.data.data();
            for_each_broadcast(out_shape, sa, sb, [&](int64_t io, int64_t ia, int64_t ib) {
                const double gv = g[io];
                switch (op) {
                    case BinOp::add:
                        if (wa) na.grad[ia] += gv;
                        if (wb) nb.grad[ib] += gv;
                        break;
                    case BinOp::sub:
                        if (wa) na.grad[ia] += gv;
                        if (wb) nb.grad[ib] -= gv;
                        break;
                    case BinOp::mul:
                        if (wa) na.grad[ia] += gv * pb[ib];
                        if (wb) nb.grad[ib] += gv * pa[ia];
                        break;
                    case BinOp::div:
                        if (wa) na.grad[ia] += gv / pb[ib];
                        if (wb) nb.grad[ib] -= gv * pa[ia] / (pb[ib] * pb[ib]);
                        break;
                }
            });
        });
    }
    return res;
}

}  // namespace detail

inline Tensor operator+(const Tensor& a, const Tensor& b) {
    return detail::binary_op(a, b, detail::BinOp::add);
}
inline Tensor operator-(const Tensor& a, const Tensor& b) {
    return detail::binary_op(a, b, detail::BinOp::sub);
}
inline Tensor operator*(const Tensor& a, const Tensor& b) {
    return detail::binary_op(a, b, detail::BinOp::mul);
}
inline Tensor operator/(const Tensor& a, const Tensor& b) {
    return detail::binary_op(a, b, detail::BinOp::div);
}

/// out = scale * x + shift, elementwise.
inline Tensor affine(const Tensor& x, double scale, double shift) {
    std::vector<double> out(x.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = scale * x.data()[i] + shift;
    Tensor res = Tensor::from_data(x.shape(), std::move(out));
    if (detail::track({&x})) {
        detail::attach(res, {&x}, [scale](detail::TensorNode& self) {
            detail::TensorNode& nx = *self.parents[0];
            nx.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) nx.grad[i] += scale * self.grad[i];
        });
    }
    return res;
}

inline Tensor operator*(const Tensor& x, double s) { return affine(x, s, 0.0); }
inline Tensor operator*(double s, const Tensor& x) { return affine(x, s, 0.0); }
inline Tensor operator+(const Tensor& x, double s) { return affine(x, 1.0, s); }
inline Tensor operator-(const Tensor& x, double s) { return affine(x, 1.0, -s); }
inline Tensor operator-(double s, const Tensor& x) { return affine(x, -1.0, s); }

inline Tensor sqrt(const Tensor& x) {
    std::vector<double> out(x.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(x.data()[i]);
    Tensor res = Tensor::from_data(x.shape(), std::move(out));
    if (detail::track({&x})) {
        detail::attach(res, {&x}, [](detail::TensorNode& self) {
            detail::TensorNode& nx = *self.parents[0];
            nx.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                nx.grad[i] += self.grad[i] * 0.5 / self.data[i];
        });
    }
    return res;
}

inline Tensor relu(const Tensor& x) {
    std::vector<double> out(x.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
    Tensor res = Tensor::from_data(x.shape(), std::move(out));
    if (detail::track({&x})) {
        detail::attach(res, {&x}, [](detail::TensorNode& self) {
            detail::TensorNode& nx = *self.parents[0];
            nx.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                if (nx.data[i] > 0.0) nx.grad[i] += self.grad[i];
        });
    }
    return res;
}

inline Tensor sigmoid(const Tensor& x) {
    std::vector<double> out(x.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x.data()[i]));
    Tensor res = Tensor::from_data(x.shape(), std::move(out));
    if (detail::track({&x})) {
        detail::attach(res, {&x}, [](detail::TensorNode& self) {
            detail::TensorNode& nx = *self.parents[0];
            nx.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) {
                const double y = self.data[i];
                nx.grad[i] += self.grad[i] * y * (1.0 - y);
            }
        });
    }
    return res;
}

/// Softmax along the last axis; rows sum to 1.
inline Tensor softmax_last_axis(const Tensor& x) {
    if (x.rank() < 1) throw ShapeError("softmax_last_axis: rank must be >= 1");
    const int width = x.dim(x.rank() - 1);
    const int64_t rows = x.numel() / width;
    std::vector<double> out(x.data().size());
    const double* px = x.data().data();
    for (int64_t r = 0; r < rows; ++r) {
        const double* in = px + r * width;
        double* o = out.data() + r * width;
        double mx = in[0];
        for (int j = 1; j < width; ++j) mx = std::max(mx, in[j]);
        double sum = 0.0;
        for (int j = 0; j < width; ++j) {
            o[j] = std::exp(in[j] - mx);
            sum += o[j];
        }
        for (int j = 0; j < width; ++j) o[j] /= sum;
    }
    Tensor res = Tensor::from_data(x.shape(), std::move(out));
    if (detail::track({&x})) {
        detail::attach(res, {&x}, [width, rows](detail::TensorNode& self) {
            detail::TensorNode& nx = *self.parents[0];
            nx.ensure_grad();
            for (int64_t r = 0; r < rows; ++r) {
                const double* y = self.data.data() + r * width;
                const double* g = self.grad.data() + r * width;
                double dot = 0.0;
                for (int j = 0; j < width; ++j) dot += y[j] * g[j];
                double* gx = nx.grad.data() + r * width;
                for (int j = 0; j < width; ++j) gx[j] += y[j] * (g[j] - dot);
            }
        });
    }
    return res;
}

inline Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    Tensor res = Tensor::from_data({1}, {s});
    if (detail::track({&x})) {
        detail::attach(res, {&x}, [](detail::TensorNode& self) {
            detail::TensorNode& nx = *self.parents[0];
            nx.ensure_grad();
            const double g = self.grad[0];
            for (double& gv : nx.grad) gv += g;
        });
    }
    return res;
}

inline Tensor mean_all(const Tensor& x) { return sum_all(x) * (1.0 / static_cast<double>(x.numel())); }

/// Per-channel mean over batch and spatial axes: [B,C,H,W] -> [1,C,1,1].
inline Tensor batch_channel_mean(const Tensor& x) {
    if (x.rank() != 4) throw ShapeError("batch_channel_mean expects rank-4, got " + shape_str(x.shape()));
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t hw = static_cast<int64_t>(H) * W;
    const double inv = 1.0 / (static_cast<double>(B) * hw);
    std::vector<double> out(static_cast<size_t>(C), 0.0);
    const double* px = x.data().data();
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const double* p = px + (static_cast<int64_t>(b) * C + c) * hw;
            double s = 0.0;
            for (int64_t i = 0; i < hw; ++i) s += p[i];
            out[static_cast<size_t>(c)] += s;
        }
    for (double& v : out) v *= inv;
    Tensor res = Tensor::from_data({1, C, 1, 1}, std::move(out));
    if (detail::track({&x})) {
        detail::attach(res, {&x}, [B, C, hw, inv](detail::TensorNode& self) {
            detail::TensorNode& nx = *self.parents[0];
            nx.ensure_grad();
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) {
                    const double g = self.grad[static_cast<size_t>(c)] * inv;
                    double* p = nx.grad.data() + (static_cast<int64_t>(b) * C + c) * hw;
                    for (int64_t i = 0; i < hw; ++i) p[i] += g;
                }
        });
    }
    return res;
}

inline Tensor reshape(const Tensor& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel())
        throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(new_shape) +
                         " changes element count");
    Tensor res = Tensor::from_data(std::move(new_shape), x.data());
    if (detail::track({&x})) {
        detail::attach(res, {&x}, [](detail::TensorNode& self) {
            detail::TensorNode& nx = *self.parents[0];
            nx.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) nx.grad[i] += self.grad[i];
        });
    }
    return res;
}

/// Concatenate rank-4 tensors along the channel axis.
inline Tensor concat_channels(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ShapeError("concat_channels: empty input list");
    const int B = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
    int c_total = 0;
    for (const Tensor& t : xs) {
        if (t.rank() != 4 || t.dim(0) != B || t.dim(2) != H || t.dim(3) != W)
            throw ShapeError("concat_channels: incompatible shape " + shape_str(t.shape()));
        c_total += t.dim(1);
    }
    const int64_t hw = static_cast<int64_t>(H) * W;
    std::vector<double> out(static_cast<size_t>(B) * c_total * hw);
    std::vector<int> channels(xs.size());
    for (int b = 0; b < B; ++b) {
        int64_t off = static_cast<int64_t>(b) * c_total * hw;
        for (size_t i = 0; i < xs.size(); ++i) {
            const int ci = xs[i].dim(1);
            channels[i] = ci;
            const double* src = xs[i].data().data() + static_cast<int64_t>(b) * ci * hw;
            std::copy(src, src + ci * hw, out.begin() + off);
            off += ci * hw;
        }
    }
    Tensor res = Tensor::from_data({B, c_total, H, W}, std::move(out));
    bool needs = false;
    for (const Tensor& t : xs)
        if (GradMode::enabled() && t.node()->needs_grad()) needs = true;
    if (needs) {
        auto& n = res.node();
        for (const Tensor& t : xs) n->parents.push_back(t.node());
        n->backward_fn = [B, c_total, hw, channels](detail::TensorNode& self) {
            for (int b = 0; b < B; ++b) {
                int64_t off = static_cast<int64_t>(b) * c_total * hw;
                for (size_t i = 0; i < self.parents.size(); ++i) {
                    detail::TensorNode& p = *self.parents[i];
                    const int ci = channels[i];
                    if (p.needs_grad()) {
                        p.ensure_grad();
                        double* dst = p.grad.data() + static_cast<int64_t>(b) * ci * hw;
                        const double* src = self.grad.data() + off;
                        for (int64_t j = 0; j < ci * hw; ++j) dst[j] += src[j];
                    }
                    off += ci * hw;
                }
            }
        };
    }
    return res;
}

/// Repeat each channel `r` times: [B,G,1,1] -> [B,G*r,1,1]. Used to broadcast
/// one context weight across the channels of its group.
inline Tensor repeat_channels(const Tensor& w, int r) {
    if (w.rank() != 4 || w.dim(2) != 1 || w.dim(3) != 1)
        throw ShapeError("repeat_channels expects [B,G,1,1], got " + shape_str(w.shape()));
    if (r <= 0) throw ConfigError("repeat_channels: repeat count must be positive");
    const int B = w.dim(0), G = w.dim(1);
    std::vector<double> out(static_cast<size_t>(B) * G * r);
    for (int b = 0; b < B; ++b)
        for (int g = 0; g < G; ++g) {
            const double v = w.data()[static_cast<size_t>(b) * G + g];
            for (int t = 0; t < r; ++t) out[(static_cast<size_t>(b) * G + g) * r + t] = v;
        }
    Tensor res = Tensor::from_data({B, G * r, 1, 1}, std::move(out));
    if (detail::track({&w})) {
        detail::attach(res, {&w}, [B, G, r](detail::TensorNode& self) {
            detail::TensorNode& nw = *self.parents[0];
            nw.ensure_grad();
            for (int b = 0; b < B; ++b)
                for (int g = 0; g < G; ++g) {
                    double s = 0.0;
                    for (int t = 0; t < r; ++t)
                        s += self.grad[(static_cast<size_t>(b) * G + g) * r + t];
                    nw.grad[static_cast<size_t>(b) * G + g] += s;
                }
        });
    }
    return res;
}

// -------------------------------------------------------------------- conv ---

namespace detail {

inline void im2col(const double* x, int C, int H, int W, int k, int stride, int pad, int dilation,
                   int Ho, int Wo, double* col) {
    const int64_t L = static_cast<int64_t>(Ho) * Wo;
    for (int c = 0; c < C; ++c) {
        const double* xc = x + static_cast<int64_t>(c) * H * W;
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                double* row = col + ((static_cast<int64_t>(c) * k + ki) * k + kj) * L;
                for (int oh = 0; oh < Ho; ++oh) {
                    const int ih = oh * stride - pad + ki * dilation;
                    double* r = row + static_cast<int64_t>(oh) * Wo;
                    if (ih < 0 || ih >= H) {
                        std::fill(r, r + Wo, 0.0);
                        continue;
                    }
                    const double* xrow = xc + static_cast<int64_t>(ih) * W;
                    for (int ow = 0; ow < Wo; ++ow) {
                        const int iw = ow * stride - pad + kj * dilation;
                        r[ow] = (iw < 0 || iw >= W) ? 0.0 : xrow[iw];
                    }
                }
            }
        }
    }
}

inline void col2im_add(const double* col, int C, int H, int W, int k, int stride, int pad,
                       int dilation, int Ho, int Wo, double* dx) {
    const int64_t L = static_cast<int64_t>(Ho) * Wo;
    for (int c = 0; c < C; ++c) {
        double* xc = dx + static_cast<int64_t>(c) * H * W;
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                const double* row = col + ((static_cast<int64_t>(c) * k + ki) * k + kj) * L;
                for (int oh = 0; oh < Ho; ++oh) {
                    const int ih = oh * stride - pad + ki * dilation;
                    if (ih < 0 || ih >= H) continue;
                    const double* r = row + static_cast<int64_t>(oh) * Wo;
                    double* xrow = xc + static_cast<int64_t>(ih) * W;
                    for (int ow = 0; ow < Wo; ++ow) {
                        const int iw = ow * stride - pad + kj * dilation;
                        if (iw >= 0 && iw < W) xrow[iw] += r[ow];
                    }
                }
            }
        }
    }
}

}  // namespace detail

/// 2-D convolution. weight [Cout,Cin,k,k], bias [Cout].
inline Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride = 1,
                     int padding = 0, int dilation = 1) {
    if (x.rank() != 4) throw ShapeError("conv2d: input must be rank-4, got " + shape_str(x.shape()));
    if (weight.rank() != 4 || weight.dim(2) != weight.dim(3))
        throw ShapeError("conv2d: weight must be [Cout,Cin,k,k], got " + shape_str(weight.shape()));
    if (stride < 1 || dilation < 1 || padding < 0)
        throw ConfigError("conv2d: stride/dilation must be >= 1 and padding >= 0");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Cout = weight.dim(0), k = weight.dim(2);
    if (weight.dim(1) != C)
        throw ShapeError("conv2d: in_channels mismatch, input " + shape_str(x.shape()) +
                         " vs weight " + shape_str(weight.shape()));
    if (bias.rank() != 1 || bias.dim(0) != Cout)
        throw ShapeError("conv2d: bias must be [Cout], got " + shape_str(bias.shape()));
    const int Ho = (H + 2 * padding - dilation * (k - 1) - 1) / stride + 1;
    const int Wo = (W + 2 * padding - dilation * (k - 1) - 1) / stride + 1;
    if (Ho < 1 || Wo < 1)
        throw ConfigError("conv2d: non-positive output extent for input " + shape_str(x.shape()));

    const int CK = C * k * k;
    const int64_t L = static_cast<int64_t>(Ho) * Wo;
    std::vector<double> col(static_cast<size_t>(CK) * L);
    std::vector<double> out(static_cast<size_t>(B) * Cout * L);
    for (int b = 0; b < B; ++b) {
        detail::im2col(x.data().data() + static_cast<int64_t>(b) * C * H * W, C, H, W, k, stride,
                       padding, dilation, Ho, Wo, col.data());
        double* ob = out.data() + static_cast<int64_t>(b) * Cout * L;
        detail::matmul_nn(weight.data().data(), col.data(), ob, Cout, CK, static_cast<int>(L));
        for (int co = 0; co < Cout; ++co) {
            const double bv = bias.data()[static_cast<size_t>(co)];
            double* row = ob + static_cast<int64_t>(co) * L;
            for (int64_t i = 0; i < L; ++i) row[i] += bv;
        }
    }
    Tensor res = Tensor::from_data({B, Cout, Ho, Wo}, std::move(out));
    if (detail::track({&x, &weight, &bias})) {
        detail::attach(res, {&x, &weight, &bias},
                       [B, C, H, W, Cout, k, stride, padding, dilation, Ho, Wo,
                        CK, L](detail::TensorNode& self) {
            detail::TensorNode& nx = *self.parents[0];
            detail::TensorNode& nw = *self.parents[1];
            detail::TensorNode& nb = *self.parents[2];
            const bool want_x = nx.needs_grad(), want_w = nw.needs_grad(), want_b = nb.needs_grad();
            if (want_x) nx.ensure_grad();
            if (want_w) nw.ensure_grad();
            if (want_b) nb.ensure_grad();
            std::vector<double> col(static_cast<size_t>(CK) * L);
            std::vector<double> dw_tmp(want_w ? static_cast<size_t>(Cout) * CK : 0);
            std::vector<double> dcol(want_x ? static_cast<size_t>(CK) * L : 0);
            for (int b = 0; b < B; ++b) {
                const double* gb = self.grad.data() + static_cast<int64_t>(b) * Cout * L;
                if (want_w || want_x)
                    detail::im2col(nx.data.data() + static_cast<int64_t>(b) * C * H * W, C, H, W, k,
                                   stride, padding, dilation, Ho, Wo, col.data());
                if (want_w) {
                    detail::matmul_nt(gb, col.data(), dw_tmp.data(), Cout, static_cast<int>(L), CK);
                    for (size_t i = 0; i < dw_tmp.size(); ++i) nw.grad[i] += dw_tmp[i];
                }
                if (want_x) {
                    detail::matmul_tn(nw.data.data(), gb, dcol.data(), CK, Cout,
                                      static_cast<int>(L));
                    detail::col2im_add(dcol.data(), C, H, W, k, stride, padding, dilation, Ho, Wo,
                                       nx.grad.data() + static_cast<int64_t>(b) * C * H * W);
                }
                if (want_b) {
                    for (int co = 0; co < Cout; ++co) {
                        double s = 0.0;
                        const double* row = gb + static_cast<int64_t>(co) * L;
                        for (int64_t i = 0; i < L; ++i) s += row[i];
                        nb.grad[static_cast<size_t>(co)] += s;
                    }
                }
            }
        });
    }
    return res;
}

// -------------------------------------------------------------------- pool ---

/// 2x2 max pooling, stride 2. Requires even spatial extents. Gradient goes to
/// the argmax; ties to the first occurrence in row-major window order.
inline Tensor max_pool_2x2(const Tensor& x) {
    if (x.rank() != 4) throw ShapeError("max_pool_2x2: input must be rank-4");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % 2 != 0 || W % 2 != 0)
        throw ShapeError("max_pool_2x2: odd spatial extent " + shape_str(x.shape()));
    const int Ho = H / 2, Wo = W / 2;
    std::vector<double> out(static_cast<size_t>(B) * C * Ho * Wo);
    std::vector<int64_t> argmax(out.size());
    const double* px = x.data().data();
    int64_t o = 0;
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const double* plane = px + (static_cast<int64_t>(b) * C + c) * H * W;
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow, ++o) {
                    const int64_t base = static_cast<int64_t>(2 * oh) * W + 2 * ow;
                    const int64_t cand[4] = {base, base + 1, base + W, base + W + 1};
                    int64_t best = cand[0];
                    double bv = plane[cand[0]];
                    for (int t = 1; t < 4; ++t)
                        if (plane[cand[t]] > bv) {
                            bv = plane[cand[t]];
                            best = cand[t];
                        }
                    out[o] = bv;
                    argmax[o] = (static_cast<int64_t>(b) * C + c) * H * W + best;
                }
        }
    Tensor res = Tensor::from_data({B, C, Ho, Wo}, std::move(out));
    if (detail::track({&x})) {
        detail::attach(res, {&x}, [argmax](detail::TensorNode& self) {
            detail::TensorNode& nx = *self.parents[0];
            nx.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) nx.grad[argmax[i]] += self.grad[i];
        });
    }
    return res;
}

/// Global average pool: [B,C,H,W] -> [B,C,1,1].
inline Tensor global_avg_pool(const Tensor& x) {
    if (x.rank() != 4) throw ShapeError("global_avg_pool: input must be rank-4");
    const int B = x.dim(0), C = x.dim(1);
    const int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    const double inv = 1.0 / static_cast<double>(hw);
    std::vector<double> out(static_cast<size_t>(B) * C);
    const double* px = x.data().data();
    for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
        double s = 0.0;
        const double* p = px + bc * hw;
        for (int64_t i = 0; i < hw; ++i) s += p[i];
        out[bc] = s * inv;
    }
    Tensor res = Tensor::from_data({B, C, 1, 1}, std::move(out));
    if (detail::track({&x})) {
        detail::attach(res, {&x}, [B, C, hw, inv](detail::TensorNode& self) {
            detail::TensorNode& nx = *self.parents[0];
            nx.ensure_grad();
            for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
                const double g = self.grad[bc] * inv;
                double* p = nx.grad.data() + bc * hw;
                for (int64_t i = 0; i < hw; ++i) p[i] += g;
            }
        });
    }
    return res;
}

// ------------------------------------------------------------------ resize ---

/// Bilinear resize with corner alignment. Same-size resize is an exact copy.
inline Tensor resize_bilinear(const Tensor& x, int h, int w) {
    if (x.rank() != 4) throw ShapeError("resize_bilinear: input must be rank-4");
    if (h < 1 || w < 1) throw ConfigError("resize_bilinear: target extents must be >= 1");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (h == H && w == W) {
        Tensor res = Tensor::from_data(x.shape(), x.data());
        if (detail::track({&x})) {
            detail::attach(res, {&x}, [](detail::TensorNode& self) {
                detail::TensorNode& nx = *self.parents[0];
                nx.ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) nx.grad[i] += self.grad[i];
            });
        }
        return res;
    }
    const double sy = h > 1 ? static_cast<double>(H - 1) / (h - 1) : 0.0;
    const double sx = w > 1 ? static_cast<double>(W - 1) / (w - 1) : 0.0;
    struct Tap {
        int i0, i1;
        double w0, w1;
    };
    std::vector<Tap> ty(static_cast<size_t>(h)), tx(static_cast<size_t>(w));
    for (int i = 0; i < h; ++i) {
        const double src = i * sy;
        const int i0 = std::min(static_cast<int>(src), H - 1);
        const int i1 = std::min(i0 + 1, H - 1);
        const double f = src - i0;
        ty[static_cast<size_t>(i)] = {i0, i1, 1.0 - f, f};
    }
    for (int j = 0; j < w; ++j) {
        const double src = j * sx;
        const int j0 = std::min(static_cast<int>(src), W - 1);
        const int j1 = std::min(j0 + 1, W - 1);
        const double f = src - j0;
        tx[static_cast<size_t>(j)] = {j0, j1, 1.0 - f, f};
    }
    std::vector<double> out(static_cast<size_t>(B) * C * h * w);
    const double* px = x.data().data();
    int64_t o = 0;
    for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
        const double* plane = px + bc * H * W;
        for (int i = 0; i < h; ++i) {
            const Tap& a = ty[static_cast<size_t>(i)];
            for (int j = 0; j < w; ++j, ++o) {
                const Tap& b = tx[static_cast<size_t>(j)];
                out[o] = a.w0 * (b.w0 * plane[static_cast<int64_t>(a.i0) * W + b.i0] +
                                 b.w1 * plane[static_cast<int64_t>(a.i0) * W + b.i1]) +
                         a.w1 * (b.w0 * plane[static_cast<int64_t>(a.i1) * W + b.i0] +
                                 b.w1 * plane[static_cast<int64_t>(a.i1) * W + b.i1]);
            }
        }
    }
    Tensor res = Tensor::from_data({B, C, h, w}, std::move(out));
    if (detail::track({&x})) {
        detail::attach(res, {&x}, [B, C, H, W, h, w, ty, tx](detail::TensorNode& self) {
            detail::TensorNode& nx = *self.parents[0];
            nx.ensure_grad();
            int64_t o = 0;
            for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
                double* plane = nx.grad.data() + bc * H * W;
                for (int i = 0; i < h; ++i) {
                    const auto& a = ty[static_cast<size_t>(i)];
                    for (int j = 0; j < w; ++j, ++o) {
                        const auto& b = tx[static_cast<size_t>(j)];
                        const double g = self.grad[o];
                        plane[static_cast<int64_t>(a.i0) * W + b.i0] += g * a.w0 * b.w0;
                        plane[static_cast<int64_t>(a.i0) * W + b.i1] += g * a.w0 * b.w1;
                        plane[static_cast<int64_t>(a.i1) * W + b.i0] += g * a.w1 * b.w0;
                        plane[static_cast<int64_t>(a.i1) * W + b.i1] += g * a.w1 * b.w1;
                    }
                }
            }
        });
    }
    return res;
}

/// Nearest-neighbor resize (half-pixel centers). Preserves binary maps.
inline Tensor resize_nearest(const Tensor& x, int h, int w) {
    if (x.rank() != 4) throw ShapeError("resize_nearest: input must be rank-4");
    if (h < 1 || w < 1) throw ConfigError("resize_nearest: target extents must be >= 1");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    std::vector<int> iy(static_cast<size_t>(h)), ix(static_cast<size_t>(w));
    for (int i = 0; i < h; ++i)
        iy[static_cast<size_t>(i)] =
            std::min(H - 1, static_cast<int>((i + 0.5) * H / h));
    for (int j = 0; j < w; ++j)
        ix[static_cast<size_t>(j)] =
            std::min(W - 1, static_cast<int>((j + 0.5) * W / w));
    std::vector<double> out(static_cast<size_t>(B) * C * h * w);
    const double* px = x.data().data();
    int64_t o = 0;
    for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
        const double* plane = px + bc * H * W;
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j, ++o)
                out[o] = plane[static_cast<int64_t>(iy[static_cast<size_t>(i)]) * W +
                               ix[static_cast<size_t>(j)]];
    }
    Tensor res = Tensor::from_data({B, C, h, w}, std::move(out));
    if (detail::track({&x})) {
        detail::attach(res, {&x}, [B, C, H, W, h, w, iy, ix](detail::TensorNode& self) {
            detail::TensorNode& nx = *self.parents[0];
            nx.ensure_grad();
            int64_t o = 0;
            for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
                double* plane = nx.grad.data() + bc * H * W;
                for (int i = 0; i < h; ++i)
                    for (int j = 0; j < w; ++j, ++o)
                        plane[static_cast<int64_t>(iy[static_cast<size_t>(i)]) * W +
                              ix[static_cast<size_t>(j)]] += self.grad[o];
            }
        });
    }
    return res;
}

// --------------------------------------------------------- attention moves ---

/// [B,C,H,W] -> [B,H*W,C] sequence view for spatial self-attention.
inline Tensor spatial_to_seq(const Tensor& x) {
    if (x.rank() != 4) throw ShapeError("spatial_to_seq: input must be rank-4");
    const int B = x.dim(0), C = x.dim(1);
    const int64_t L = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    std::vector<double> out(x.data().size());
    const double* px = x.data().data();
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const double* src = px + (static_cast<int64_t>(b) * C + c) * L;
            double* dst = out.data() + static_cast<int64_t>(b) * L * C + c;
            for (int64_t l = 0; l < L; ++l) dst[l * C] = src[l];
        }
    Tensor res = Tensor::from_data({B, static_cast<int>(L), C}, std::move(out));
    if (detail::track({&x})) {
        detail::attach(res, {&x}, [B, C, L](detail::TensorNode& self) {
            detail::TensorNode& nx = *self.parents[0];
            nx.ensure_grad();
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) {
                    double* dst = nx.grad.data() + (static_cast<int64_t>(b) * C + c) * L;
                    const double* src = self.grad.data() + static_cast<int64_t>(b) * L * C + c;
                    for (int64_t l = 0; l < L; ++l) dst[l] += src[l * C];
                }
        });
    }
    return res;
}

/// [B,H*W,C] -> [B,C,H,W].
inline Tensor seq_to_spatial(const Tensor& x, int h, int w) {
    if (x.rank() != 3) throw ShapeError("seq_to_spatial: input must be rank-3");
    const int B = x.dim(0), C = x.dim(2);
    const int64_t L = static_cast<int64_t>(h) * w;
    if (x.dim(1) != L) throw ShapeError("seq_to_spatial: sequence length mismatch");
    std::vector<double> out(x.data().size());
    const double* px = x.data().data();
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            double* dst = out.data() + (static_cast<int64_t>(b) * C + c) * L;
            const double* src = px + static_cast<int64_t>(b) * L * C + c;
            for (int64_t l = 0; l < L; ++l) dst[l] = src[l * C];
        }
    Tensor res = Tensor::from_data({B, C, h, w}, std::move(out));
    if (detail::track({&x})) {
        detail::attach(res, {&x}, [B, C, L](detail::TensorNode& self) {
            detail::TensorNode& nx = *self.parents[0];
            nx.ensure_grad();
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) {
                    const double* src = self.grad.data() + (static_cast<int64_t>(b) * C + c) * L;
                    double* dst = nx.grad.data() + static_cast<int64_t>(b) * L * C + c;
                    for (int64_t l = 0; l < L; ++l) dst[l * C] += src[l];
                }
        });
    }
    return res;
}

/// Batched matmul [B,M,K] x [B,K,N] -> [B,M,N].
inline Tensor bmm(const Tensor& a, const Tensor& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
        throw ShapeError("bmm: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const int B = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(2);
    std::vector<double> out(static_cast<size_t>(B) * M * N);
    for (int i = 0; i < B; ++i)
        detail::matmul_nn(a.data().data() + static_cast<int64_t>(i) * M * K,
                          b.data().data() + static_cast<int64_t>(i) * K * N,
                          out.data() + static_cast<int64_t>(i) * M * N, M, K, N);
    Tensor res = Tensor::from_data({B, M, N}, std::move(out));
    if (detail::track({&a, &b})) {
        detail::attach(res, {&a, &b}, [B, M, K, N](detail::TensorNode& self) {
            detail::TensorNode& na = *self.parents[0];
            detail::TensorNode& nb = *self.parents[1];
            std::vector<double> tmp;
            if (na.needs_grad()) {
                na.ensure_grad();
                tmp.resize(static_cast<size_t>(M) * K);
                for (int i = 0; i < B; ++i) {
                    detail::matmul_nt(self.grad.data() + static_cast<int64_t>(i) * M * N,
                                      nb.data.data() + static_cast<int64_t>(i) * K * N, tmp.data(),
                                      M, N, K);
                    double* dst = na.grad.data() + static_cast<int64_t>(i) * M * K;
                    for (size_t j = 0; j < tmp.size(); ++j) dst[j] += tmp[j];
                }
            }
            if (nb.needs_grad()) {
                nb.ensure_grad();
                tmp.assign(static_cast<size_t>(K) * N, 0.0);
                for (int i = 0; i < B; ++i) {
                    detail::matmul_tn(na.data.data() + static_cast<int64_t>(i) * M * K,
                                      self.grad.data() + static_cast<int64_t>(i) * M * N,
                                      tmp.data(), K, M, N);
                    double* dst = nb.grad.data() + static_cast<int64_t>(i) * K * N;
                    for (size_t j = 0; j < tmp.size(); ++j) dst[j] += tmp[j];
                }
            }
        });
    }
    return res;
}

/// Batched matmul with transposed rhs: [B,M,K] x [B,N,K] -> [B,M,N].
inline Tensor bmm_nt(const Tensor& a, const Tensor& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2))
        throw ShapeError("bmm_nt: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const int B = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(1);
    std::vector<double> out(static_cast<size_t>(B) * M * N);
    for (int i = 0; i < B; ++i)
        detail::matmul_nt(a.data().data() + static_cast<int64_t>(i) * M * K,
                          b.data().data() + static_cast<int64_t>(i) * N * K,
                          out.data() + static_cast<int64_t>(i) * M * N, M, K, N);
    Tensor res = Tensor::from_data({B, M, N}, std::move(out));
    if (detail::track({&a, &b})) {
        detail::attach(res, {&a, &b}, [B, M, K, N](detail::TensorNode& self) {
            detail::TensorNode& na = *self.parents[0];
            detail::TensorNode& nb = *self.parents[1];
            std::vector<double> tmp;
            if (na.needs_grad()) {
                na.ensure_grad();
                tmp.resize(static_cast<size_t>(M) * K);
                for (int i = 0; i < B; ++i) {
                    detail::matmul_nn(self.grad.data() + static_cast<int64_t>(i) * M * N,
                                      nb.data.data() + static_cast<int64_t>(i) * N * K, tmp.data(),
                                      M, N, K);
                    double* dst = na.grad.data() + static_cast<int64_t>(i) * M * K;
                    for (size_t j = 0; j < tmp.size(); ++j) dst[j] += tmp[j];
                }
            }
            if (nb.needs_grad()) {
                nb.ensure_grad();
                tmp.resize(static_cast<size_t>(N) * K);
                for (int i = 0; i < B; ++i) {
                    detail::matmul_tn(self.grad.data() + static_cast<int64_t>(i) * M * N,
                                      na.data.data() + static_cast<int64_t>(i) * M * K, tmp.data(),
                                      N, M, K);
                    double* dst = nb.grad.data() + static_cast<int64_t>(i) * N * K;
                    for (size_t j = 0; j < tmp.size(); ++j) dst[j] += tmp[j];
                }
            }
        });
    }
    return res;
}

// -------------------------------------------------------------------- loss ---

/// Numerically stable mean binary cross-entropy on logits. Target is treated
/// as a constant.
inline Tensor bce_with_logits_mean(const Tensor& logits, const Tensor& target) {
    if (logits.shape() != target.shape())
        throw ShapeError("bce_with_logits_mean: shape mismatch " + shape_str(logits.shape()) +
                         " vs " + shape_str(target.shape()));
    for (double g : target.data())
        if (g != 0.0 && g != 1.0)
            throw ValueError("bce_with_logits_mean: target must be binary");
    const size_t n = logits.data().size();
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double z = logits.data()[i];
        const double g = target.data()[i];
        acc += std::max(z, 0.0) - z * g + std::log1p(std::exp(-std::abs(z)));
    }
    Tensor res = Tensor::from_data({1}, {acc / static_cast<double>(n)});
    if (detail::track({&logits})) {
        detail::attach(res, {&logits, &target}, [n](detail::TensorNode& self) {
            detail::TensorNode& nz = *self.parents[0];
            const detail::TensorNode& ng = *self.parents[1];
            if (!nz.needs_grad()) return;
            nz.ensure_grad();
            const double g0 = self.grad[0] / static_cast<double>(n);
            for (size_t i = 0; i < n; ++i) {
                const double s = 1.0 / (1.0 + std::exp(-nz.data[i]));
                nz.grad[i] += g0 * (s - ng.data[i]);
            }
        });
    }
    return res;
}

}  // namespace glassdet
