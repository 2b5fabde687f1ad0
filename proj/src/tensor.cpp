#include "maskclu/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "maskclu/errors.hpp"

namespace maskclu {

namespace {

thread_local bool g_grad_enabled = true;
thread_local StopGradientTrace* g_trace = nullptr;
Precision g_matmul_precision = Precision::f64;

// Largest argument for which exp() is finite in double precision.
constexpr double kMaxExpArgument = 709.782712893384;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

using BackwardFn = std::function<void(TapeNode&)>;

Tensor record(Shape shape, std::vector<double> data, const char* op,
              std::initializer_list<const Tensor*> inputs, BackwardFn fn) {
    auto node = std::make_shared<TapeNode>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    bool needs = false;
    if (g_grad_enabled) {
        for (const Tensor* t : inputs) {
            needs = needs || t->requires_grad();
        }
    }
    if (needs) {
        node->requires_grad = true;
        for (const Tensor* t : inputs) {
            node->parents.push_back(t->node());
        }
        node->backward = std::move(fn);
    }
    return Tensor(std::move(node));
}

Tensor record_many(Shape shape, std::vector<double> data, const char* op,
                   const std::vector<Tensor>& inputs, BackwardFn fn) {
    auto node = std::make_shared<TapeNode>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    bool needs = false;
    if (g_grad_enabled) {
        for (const Tensor& t : inputs) {
            needs = needs || t.requires_grad();
        }
    }
    if (needs) {
        node->requires_grad = true;
        for (const Tensor& t : inputs) {
            node->parents.push_back(t.node());
        }
        node->backward = std::move(fn);
    }
    return Tensor(std::move(node));
}

void require_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(op) + ": expected a 2-D tensor, got " +
                             shape_str(t.shape()));
    }
}

// How one operand of a binary op maps onto the output index space.
enum class Bcast { same, scalar, row, col };

struct BinaryLayout {
    Shape out;
    Bcast a = Bcast::same;
    Bcast b = Bcast::same;
    std::size_t a_numel = 0;
    std::size_t b_numel = 0;
    std::size_t out_cols = 1;
};

bool is_suffix_of(const Shape& small, const Shape& big) {
    Shape s = small;
    if (s.size() == big.size() && !s.empty() && s.front() == 1) {
        s.erase(s.begin());
    }
    if (s.size() > big.size()) {
        return false;
    }
    return std::equal(s.rbegin(), s.rend(), big.rbegin());
}

// Classifies how `small` expands to `big`; returns false if it cannot.
bool classify(const Shape& small, const Shape& big, Bcast& mode) {
    if (small == big) {
        mode = Bcast::same;
        return true;
    }
    if (shape_numel(small) == 1) {
        mode = Bcast::scalar;
        return true;
    }
    if (is_suffix_of(small, big)) {
        mode = Bcast::row;
        return true;
    }
    if (big.size() == 2 && small.size() == 2 && small[0] == big[0] && small[1] == 1) {
        mode = Bcast::col;
        return true;
    }
    return false;
}

BinaryLayout layout(const Tensor& a, const Tensor& b, const char* op) {
    BinaryLayout l;
    l.a_numel = a.numel();
    l.b_numel = b.numel();
    const bool a_big = a.numel() >= b.numel();
    const Shape& big = a_big ? a.shape() : b.shape();
    const Shape& small = a_big ? b.shape() : a.shape();
    Bcast mode{};
    if (!classify(small, big, mode)) {
        throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a.shape()) +
                             " with " + shape_str(b.shape()));
    }
    l.out = big;
    (a_big ? l.b : l.a) = mode;
    l.out_cols = big.empty() ? 1 : big.back();
    return l;
}

inline std::size_t map_index(Bcast mode, std::size_t i, std::size_t numel, std::size_t out_cols) {
    switch (mode) {
        case Bcast::same:
            return i;
        case Bcast::scalar:
            return 0;
        case Bcast::row:
            return i % numel;
        case Bcast::col:
            return i / out_cols;
    }
    return i;
}

template <typename Fwd, typename DA, typename DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, DA da, DB db) {
    const BinaryLayout l = layout(a, b, op);
    const std::size_t n = shape_numel(l.out);
    std::vector<double> out(n);
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = fwd(ad[map_index(l.a, i, l.a_numel, l.out_cols)],
                     bd[map_index(l.b, i, l.b_numel, l.out_cols)]);
    }
    return record(l.out, std::move(out), op, {&a, &b}, [l, n, da, db](TapeNode& self) {
        TapeNode& pa = *self.parents[0];
        TapeNode& pb = *self.parents[1];
        if (pa.requires_grad) {
            auto& g = pa.ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t ia = map_index(l.a, i, l.a_numel, l.out_cols);
                const std::size_t ib = map_index(l.b, i, l.b_numel, l.out_cols);
                g[ia] += self.grad[i] * da(pa.data[ia], pb.data[ib], self.data[i]);
            }
        }
        if (pb.requires_grad) {
            auto& g = pb.ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t ia = map_index(l.a, i, l.a_numel, l.out_cols);
                const std::size_t ib = map_index(l.b, i, l.b_numel, l.out_cols);
                g[ib] += self.grad[i] * db(pa.data[ia], pb.data[ib], self.data[i]);
            }
        }
    });
}

// Elementwise unary op; `deriv(x, y)` is dy/dx given input x and output y.
template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, const char* op, Fwd fwd, Deriv deriv) {
    std::vector<double> out(x.numel());
    const auto xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = fwd(xd[i]);
    }
    return record(x.shape(), std::move(out), op, {&x}, [deriv](TapeNode& self) {
        TapeNode& p = *self.parents[0];
        auto& g = p.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[i] * deriv(p.data[i], self.data[i]);
        }
    });
}

// C = A * B with optional transposes, honoring the matmul precision setting.
RowMatrix gemm(const ConstMap& a, bool ta, const ConstMap& b, bool tb) {
    if (g_matmul_precision == Precision::f32) {
        RowMatrixF af = a.cast<float>();
        RowMatrixF bf = b.cast<float>();
        RowMatrixF cf;
        if (ta && tb) {
            cf.noalias() = af.transpose() * bf.transpose();
        } else if (ta) {
            cf.noalias() = af.transpose() * bf;
        } else if (tb) {
            cf.noalias() = af * bf.transpose();
        } else {
            cf.noalias() = af * bf;
        }
        return cf.cast<double>();
    }
    RowMatrix c;
    if (ta && tb) {
        c.noalias() = a.transpose() * b.transpose();
    } else if (ta) {
        c.noalias() = a.transpose() * b;
    } else if (tb) {
        c.noalias() = a * b.transpose();
    } else {
        c.noalias() = a * b;
    }
    return c;
}

void add_into(std::vector<double>& dst, const RowMatrix& src) {
    const double* s = src.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] += s[i];
    }
}

}  // namespace

// ---------------------------------------------------------------------------

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? ", " : "") << shape[i];
    }
    os << ']';
    return os.str();
}

std::vector<double>& TapeNode::ensure_grad() {
    if (grad.empty()) {
        grad.assign(data.size(), 0.0);
    }
    return grad;
}

Tensor::Tensor() : node_(std::make_shared<TapeNode>()) { node_->shape = {0}; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("Tensor::from: shape " + shape_str(shape) + " needs " +
                             std::to_string(shape_numel(shape)) + " values, got " +
                             std::to_string(values.size()));
    }
    auto node = std::make_shared<TapeNode>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= rank()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
    }
    return shape()[axis];
}

std::size_t Tensor::rows() const { return rank() == 2 ? shape()[0] : (rank() == 1 ? 1 : dim(0)); }

std::size_t Tensor::cols() const { return rank() == 0 ? 1 : shape().back(); }

double Tensor::item() const {
    if (numel() != 1) {
        throw ContractError("item() on tensor of shape " + shape_str(shape()));
    }
    return node_->data[0];
}

double Tensor::at(std::size_t i, std::size_t j) const { return node_->data[i * cols() + j]; }

Tensor& Tensor::set_requires_grad(bool flag) {
    node_->requires_grad = flag;
    return *this;
}

std::vector<double> Tensor::grad() const {
    if (node_->grad.empty()) {
        return std::vector<double>(numel(), 0.0);
    }
    return node_->grad;
}

void Tensor::backward() const {
    if (numel() != 1) {
        throw ContractError("backward() requires a scalar root, got shape " + shape_str(shape()));
    }
    if (!node_->requires_grad) {
        return;
    }
    // Iterative post-order DFS; stop-gradient nodes are never expanded.
    std::vector<TapeNode*> order;
    std::unordered_set<TapeNode*> visited;
    std::vector<std::pair<TapeNode*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (n->backward && next < n->parents.size()) {
            TapeNode* p = n->parents[next++].get();
            if (p->requires_grad && !visited.contains(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
            continue;
        }
        order.push_back(n);
        stack.pop_back();
    }
    node_->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TapeNode* n = *it;
        if (n->backward && !n->grad.empty()) {
            n->backward(*n);
        }
    }
    for (TapeNode* n : order) {
        if (n->backward) {
            n->grad.clear();
            n->grad.shrink_to_fit();
            n->parents.clear();
            n->backward = nullptr;
            n->requires_grad = false;
        }
    }
}

Tensor Tensor::detach() const { return from(shape(), values(), false); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void set_matmul_precision(Precision p) { g_matmul_precision = p; }
Precision matmul_precision() { return g_matmul_precision; }

std::vector<double> StopGradientTrace::pass(const Shape& shape, std::span<const double> values) {
    if (mode_ == Mode::record) {
        values_.emplace_back(shape, std::vector<double>(values.begin(), values.end()));
        return values_.back().second;
    }
    if (cursor_ >= values_.size()) {
        throw ContractError("StopGradientTrace: replay requested more values than were recorded");
    }
    const auto& [s, v] = values_[cursor_++];
    if (s != shape) {
        throw ContractError("StopGradientTrace: replay shape " + shape_str(shape) +
                            " does not match recorded " + shape_str(s));
    }
    return v;
}

std::vector<std::size_t> StopGradientTrace::branch(std::vector<std::size_t> chosen) {
    if (mode_ == Mode::record) {
        branches_.push_back(chosen);
        return chosen;
    }
    if (branch_cursor_ >= branches_.size() || branches_[branch_cursor_].size() != chosen.size()) {
        throw ContractError("StopGradientTrace: replayed branch sequence does not match the recording");
    }
    return branches_[branch_cursor_++];
}

StopGradientTraceScope::StopGradientTraceScope(StopGradientTrace& trace) : previous_(g_trace) { g_trace = &trace; }
StopGradientTraceScope::~StopGradientTraceScope() { g_trace = previous_; }

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    const std::size_t m = a.rows();
    const std::size_t k = a.cols();
    const std::size_t n = b.cols();
    ConstMap am(a.data().data(), m, k);
    ConstMap bm(b.data().data(), k, n);
    RowMatrix c = gemm(am, false, bm, false);
    std::vector<double> out(c.data(), c.data() + m * n);
    return record({m, n}, std::move(out), "matmul", {&a, &b}, [m, k, n](TapeNode& self) {
        TapeNode& pa = *self.parents[0];
        TapeNode& pb = *self.parents[1];
        ConstMap g(self.grad.data(), m, n);
        if (pa.requires_grad) {
            ConstMap bm(pb.data.data(), k, n);
            add_into(pa.ensure_grad(), gemm(g, false, bm, true));
        }
        if (pb.requires_grad) {
            ConstMap am(pa.data.data(), m, k);
            add_into(pb.ensure_grad(), gemm(am, true, g, false));
        }
    });
}

Tensor transpose(const Tensor& a) {
    require_rank2(a, "transpose");
    const std::size_t m = a.rows();
    const std::size_t n = a.cols();
    std::vector<double> out(m * n);
    const auto ad = a.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[j * m + i] = ad[i * n + j];
        }
    }
    return record({n, m}, std::move(out), "transpose", {&a}, [m, n](TapeNode& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                g[i * n + j] += self.grad[j * m + i];
            }
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    for (double v : b.data()) {
        if (v == 0.0) {
            throw DomainError("div: division by zero");
        }
    }
    return binary(
        a, b, "div", [](double x, double y) { return x / y; },
        [](double, double y, double) { return 1.0 / y; },
        [](double, double y, double out) { return -out / y; });
}

Tensor neg(const Tensor& x) {
    return unary(x, "neg", [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& x, double factor) {
    return unary(x, "scale", [factor](double v) { return factor * v; },
                 [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
    return unary(x, "add_scalar", [value](double v) { return v + value; },
                 [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& x) {
    const auto xd = x.data();
    if (!xd.empty()) {
        const double top = *std::max_element(xd.begin(), xd.end());
        if (top > kMaxExpArgument) {
            std::ostringstream os;
            os.precision(17);
            os << "exp: argument " << top << " overflows (max exponent " << kMaxExpArgument << ")";
            throw DomainError(os.str());
        }
    }
    return unary(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    for (double v : x.data()) {
        if (!(v > 0.0)) {
            std::ostringstream os;
            os.precision(17);
            os << "log: argument " << v << " is not positive";
            throw DomainError(os.str());
        }
    }
    return unary(x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor relu(const Tensor& x) {
    if (!g_trace) {
        return unary(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
                     [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
    }
    const auto xd = x.data();
    std::vector<std::size_t> active(xd.size());
    for (std::size_t i = 0; i < xd.size(); ++i) {
        active[i] = xd[i] > 0.0;
    }
    active = g_trace->branch(std::move(active));
    std::vector<double> out(xd.size());
    for (std::size_t i = 0; i < xd.size(); ++i) {
        out[i] = active[i] ? xd[i] : 0.0;
    }
    return record(x.shape(), std::move(out), "relu", {&x}, [active = std::move(active)](TapeNode& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += active[i] ? self.grad[i] : 0.0;
        }
    });
}

Tensor sqrt(const Tensor& x) {
    for (double v : x.data()) {
        if (!(v > 0.0)) {
            throw DomainError("sqrt: argument must be positive for a finite derivative");
        }
    }
    return unary(x, "sqrt", [](double v) { return std::sqrt(v); },
                 [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& x) {
    return unary(x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor softmax(const Tensor& x, double temperature) {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw ParameterError("softmax: temperature must be positive and finite");
    }
    if (x.rank() == 0) {
        throw DimensionError("softmax: needs at least one axis");
    }
    const std::size_t n = x.cols();
    const std::size_t rows = n == 0 ? 0 : x.numel() / n;
    const auto xd = x.data();
    std::vector<double> out(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xd.data() + r * n;
        double* y = out.data() + r * n;
        const double top = *std::max_element(in, in + n);
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            y[j] = std::exp((in[j] - top) / temperature);
            total += y[j];
        }
        for (std::size_t j = 0; j < n; ++j) {
            y[j] /= total;
        }
    }
    return record(x.shape(), std::move(out), "softmax", {&x}, [rows, n, temperature](TapeNode& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.data.data() + r * n;
            const double* gy = self.grad.data() + r * n;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                dot += gy[j] * y[j];
            }
            for (std::size_t j = 0; j < n; ++j) {
                g[r * n + j] += y[j] * (gy[j] - dot) / temperature;
            }
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    require_rank2(x, "layer_norm");
    const std::size_t m = x.rows();
    const std::size_t n = x.cols();
    if (gain.numel() != n || bias.numel() != n) {
        throw DimensionError("layer_norm: gain/bias must have " + std::to_string(n) + " entries");
    }
    const auto xd = x.data();
    const auto gd = gain.data();
    const auto bd = bias.data();
    std::vector<double> out(m * n);
    std::vector<double> xhat(m * n);
    std::vector<double> rstd(m);
    for (std::size_t r = 0; r < m; ++r) {
        const double* row = xd.data() + r * n;
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            mu += row[j];
        }
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            var += (row[j] - mu) * (row[j] - mu);
        }
        var /= static_cast<double>(n);
        rstd[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            xhat[r * n + j] = (row[j] - mu) * rstd[r];
            out[r * n + j] = xhat[r * n + j] * gd[j] + bd[j];
        }
    }
    return record({m, n}, std::move(out), "layer_norm", {&x, &gain, &bias},
                  [m, n, xhat = std::move(xhat), rstd = std::move(rstd)](TapeNode& self) {
                      TapeNode& px = *self.parents[0];
                      TapeNode& pg = *self.parents[1];
                      TapeNode& pb = *self.parents[2];
                      if (pg.requires_grad) {
                          auto& g = pg.ensure_grad();
                          for (std::size_t i = 0; i < m * n; ++i) {
                              g[i % n] += self.grad[i] * xhat[i];
                          }
                      }
                      if (pb.requires_grad) {
                          auto& g = pb.ensure_grad();
                          for (std::size_t i = 0; i < m * n; ++i) {
                              g[i % n] += self.grad[i];
                          }
                      }
                      if (px.requires_grad) {
                          auto& g = px.ensure_grad();
                          const double inv_n = 1.0 / static_cast<double>(n);
                          for (std::size_t r = 0; r < m; ++r) {
                              double mean_d = 0.0;
                              double mean_dx = 0.0;
                              for (std::size_t j = 0; j < n; ++j) {
                                  const double d = self.grad[r * n + j] * pg.data[j];
                                  mean_d += d;
                                  mean_dx += d * xhat[r * n + j];
                              }
                              mean_d *= inv_n;
                              mean_dx *= inv_n;
                              for (std::size_t j = 0; j < n; ++j) {
                                  const double d = self.grad[r * n + j] * pg.data[j];
                                  g[r * n + j] += rstd[r] * (d - mean_d - xhat[r * n + j] * mean_dx);
                              }
                          }
                      }
                  });
}

Tensor sum(const Tensor& x) {
    double total = 0.0;
    for (double v : x.data()) {
        total += v;
    }
    return record({}, {total}, "sum", {&x}, [](TapeNode& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (double& v : g) {
            v += self.grad[0];
        }
    });
}

Tensor mean(const Tensor& x) {
    if (x.numel() == 0) {
        throw ContractError("mean of an empty tensor");
    }
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_axis(const Tensor& x, std::size_t axis) {
    require_rank2(x, "sum_axis");
    const std::size_t m = x.rows();
    const std::size_t n = x.cols();
    const auto xd = x.data();
    if (axis == 0) {
        std::vector<double> out(n, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                out[j] += xd[i * n + j];
            }
        }
        return record({1, n}, std::move(out), "sum_axis0", {&x}, [m, n](TapeNode& self) {
            auto& g = self.parents[0]->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    g[i * n + j] += self.grad[j];
                }
            }
        });
    }
    if (axis != 1) {
        throw DimensionError("sum_axis: axis must be 0 or 1");
    }
    std::vector<double> out(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[i] += xd[i * n + j];
        }
    }
    return record({m, 1}, std::move(out), "sum_axis1", {&x}, [m, n](TapeNode& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                g[i * n + j] += self.grad[i];
            }
        }
    });
}

Tensor segment_max_rows(const Tensor& x, std::size_t group) {
    require_rank2(x, "segment_max_rows");
    const std::size_t m = x.rows();
    const std::size_t n = x.cols();
    if (group == 0 || m % group != 0) {
        throw DimensionError("segment_max_rows: " + std::to_string(m) + " rows not divisible into groups of " +
                             std::to_string(group));
    }
    const std::size_t segments = m / group;
    const auto xd = x.data();
    std::vector<double> out(segments * n);
    std::vector<std::size_t> arg(segments * n);
    for (std::size_t s = 0; s < segments; ++s) {
        for (std::size_t j = 0; j < n; ++j) {
            std::size_t best = s * group;
            for (std::size_t i = s * group + 1; i < (s + 1) * group; ++i) {
                if (xd[i * n + j] > xd[best * n + j]) {
                    best = i;
                }
            }
            arg[s * n + j] = best;
        }
    }
    if (g_trace) {
        arg = g_trace->branch(std::move(arg));
    }
    for (std::size_t k = 0; k < arg.size(); ++k) {
        out[k] = xd[arg[k] * n + k % n];
    }
    return record({segments, n}, std::move(out), "segment_max_rows", {&x},
                  [n, arg = std::move(arg)](TapeNode& self) {
                      auto& g = self.parents[0]->ensure_grad();
                      for (std::size_t k = 0; k < arg.size(); ++k) {
                          g[arg[k] * n + k % n] += self.grad[k];
                      }
                  });
}

Tensor max_rows(const Tensor& x) {
    require_rank2(x, "max_rows");
    if (x.rows() == 0) {
        throw ContractError("max_rows: input has no rows");
    }
    return segment_max_rows(x, x.rows());
}

Tensor repeat_rows(const Tensor& x, std::size_t times) {
    require_rank2(x, "repeat_rows");
    const std::size_t m = x.rows();
    const std::size_t n = x.cols();
    const auto xd = x.data();
    std::vector<double> out(m * times * n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t t = 0; t < times; ++t) {
            std::copy_n(xd.data() + i * n, n, out.data() + (i * times + t) * n);
        }
    }
    return record({m * times, n}, std::move(out), "repeat_rows", {&x}, [m, n, times](TapeNode& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t t = 0; t < times; ++t) {
                const double* src = self.grad.data() + (i * times + t) * n;
                for (std::size_t j = 0; j < n; ++j) {
                    g[i * n + j] += src[j];
                }
            }
        }
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) {
        throw ContractError("concat_rows: no inputs");
    }
    const std::size_t n = parts.front().cols();
    std::size_t m = 0;
    for (const Tensor& p : parts) {
        require_rank2(p, "concat_rows");
        if (p.cols() != n) {
            throw DimensionError("concat_rows: column mismatch " + shape_str(parts.front().shape()) + " vs " +
                                 shape_str(p.shape()));
        }
        m += p.rows();
    }
    std::vector<double> out;
    out.reserve(m * n);
    for (const Tensor& p : parts) {
        out.insert(out.end(), p.data().begin(), p.data().end());
    }
    return record_many({m, n}, std::move(out), "concat_rows", parts, [](TapeNode& self) {
        std::size_t offset = 0;
        for (auto& p : self.parents) {
            const std::size_t len = p->data.size();
            if (p->requires_grad) {
                auto& g = p->ensure_grad();
                for (std::size_t i = 0; i < len; ++i) {
                    g[i] += self.grad[offset + i];
                }
            }
            offset += len;
        }
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) {
        throw ContractError("concat_cols: no inputs");
    }
    const std::size_t m = parts.front().rows();
    std::size_t n = 0;
    for (const Tensor& p : parts) {
        require_rank2(p, "concat_cols");
        if (p.rows() != m) {
            throw DimensionError("concat_cols: row mismatch " + shape_str(parts.front().shape()) + " vs " +
                                 shape_str(p.shape()));
        }
        n += p.cols();
    }
    std::vector<double> out(m * n);
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
        const std::size_t w = p.cols();
        const auto pd = p.data();
        for (std::size_t i = 0; i < m; ++i) {
            std::copy_n(pd.data() + i * w, w, out.data() + i * n + offset);
        }
        offset += w;
    }
    return record_many({m, n}, std::move(out), "concat_cols", parts, [m, n](TapeNode& self) {
        std::size_t offset = 0;
        for (auto& p : self.parents) {
            const std::size_t w = p->shape.back();
            if (p->requires_grad) {
                auto& g = p->ensure_grad();
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < w; ++j) {
                        g[i * w + j] += self.grad[i * n + offset + j];
                    }
                }
            }
            offset += w;
        }
    });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
    require_rank2(x, "slice_cols");
    const std::size_t m = x.rows();
    const std::size_t n = x.cols();
    if (start + count > n) {
        throw DimensionError("slice_cols: columns [" + std::to_string(start) + ", " +
                             std::to_string(start + count) + ") out of range for " + shape_str(x.shape()));
    }
    const auto xd = x.data();
    std::vector<double> out(m * count);
    for (std::size_t i = 0; i < m; ++i) {
        std::copy_n(xd.data() + i * n + start, count, out.data() + i * count);
    }
    return record({m, count}, std::move(out), "slice_cols", {&x}, [m, n, start, count](TapeNode& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < count; ++j) {
                g[i * n + start + j] += self.grad[i * count + j];
            }
        }
    });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices) {
    require_rank2(x, "gather_rows");
    const std::size_t m = x.rows();
    const std::size_t n = x.cols();
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    std::vector<double> out(idx.size() * n);
    const auto xd = x.data();
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= m) {
            throw DimensionError("gather_rows: index " + std::to_string(idx[r]) + " out of range for " +
                                 std::to_string(m) + " rows");
        }
        std::copy_n(xd.data() + idx[r] * n, n, out.data() + r * n);
    }
    const std::size_t count = idx.size();
    return record({count, n}, std::move(out), "gather_rows", {&x}, [n, idx = std::move(idx)](TapeNode& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t r = 0; r < idx.size(); ++r) {
            for (std::size_t j = 0; j < n; ++j) {
                g[idx[r] * n + j] += self.grad[r * n + j];
            }
        }
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
    }
    return record(std::move(shape), x.values(), "reshape", {&x}, [](TapeNode& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[i];
        }
    });
}

Tensor stop_gradient(const Tensor& x) {
    auto node = std::make_shared<TapeNode>();
    node->shape = x.shape();
    node->data = g_trace ? g_trace->pass(x.shape(), x.data()) : x.values();
    node->op = "stop_gradient";
    node->stop_gradient = true;
    node->parents.push_back(x.node());
    return Tensor(std::move(node));
}

}  // namespace maskclu
