#pragma once

// Dense real tensors with an eager reverse-mode tape.
//
// Every operation below records a TapeNode when at least one input requires a
// gradient and gradient recording is enabled. Tensor is a shared handle: copies
// alias the same node, which is how parameters are held by modules and updated
// in place by the optimizer.
//
// Broadcasting in binary ops is limited to four patterns, where `b` is the
// operand being expanded (either side may be the smaller one):
//   - identical shapes
//   - b has a single element (scalar)
//   - b's shape is a trailing suffix of a's shape, optionally with a leading 1
//     (row vector [n] or [1, n] against [m, n])
//   - b is [m, 1] against a 2-D [m, n] (column vector)

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace maskclu {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TapeNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until a gradient reaches this node
    bool requires_grad = false;
    bool stop_gradient = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<TapeNode>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(TapeNode&)> backward;

    bool is_leaf() const { return !backward; }
    std::vector<double>& ensure_grad();
};

class Tensor {
  public:
    /// Empty 0-element tensor.
    Tensor();

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t rows() const;
    std::size_t cols() const;
    std::size_t numel() const { return node_->data.size(); }

    std::span<const double> data() const { return node_->data; }
    /// Writable storage. Only meaningful on leaves (parameters, inputs).
    std::span<double> mutable_data() { return node_->data; }
    std::vector<double> values() const { return node_->data; }
    double item() const;
    double at(std::size_t i, std::size_t j) const;

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool flag);
    bool has_grad() const { return !node_->grad.empty(); }
    /// Gradient values; all zeros when no gradient has reached this tensor.
    std::vector<double> grad() const;
    void zero_grad() { node_->grad.clear(); }

    /// Reverse pass from a scalar root. Leaf gradients accumulate; the interior
    /// tape reachable from the root is released afterwards.
    void backward() const;

    /// Value copy with no tape history.
    Tensor detach() const;

    const std::shared_ptr<TapeNode>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<TapeNode> node) : node_(std::move(node)) {}

  private:
    std::shared_ptr<TapeNode> node_;
};

// ---------------------------------------------------------------------------
// Gradient recording control

bool grad_enabled();

class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool previous_;
};

enum class Precision { f64, f32 };

/// Precision of the matmul kernel. f32 rounds operands to float for the product
/// and widens the result back; everything else always runs in double.
void set_matmul_precision(Precision p);
Precision matmul_precision();

/// Records the values leaving each stop_gradient call and the branch taken by
/// each piecewise op (relu active set, max-pool argmax) in Record mode, and
/// substitutes them in call order in Replay mode. Finite-difference checks use
/// this to hold stop-gradient arguments at their unperturbed values and to stay
/// on the linear piece of every kink chosen at the base point.
class StopGradientTrace {
  public:
    enum class Mode { record, replay };

    explicit StopGradientTrace(Mode mode) : mode_(mode) {}

    Mode mode() const { return mode_; }
    void set_mode(Mode mode) {
        mode_ = mode;
        cursor_ = 0;
        branch_cursor_ = 0;
    }
    std::size_t size() const { return values_.size(); }

    // Used by stop_gradient.
    std::vector<double> pass(const Shape& shape, std::span<const double> values);
    // Used by relu and segment_max_rows.
    std::vector<std::size_t> branch(std::vector<std::size_t> chosen);

  private:
    Mode mode_;
    std::size_t cursor_ = 0;
    std::size_t branch_cursor_ = 0;
    std::vector<std::pair<Shape, std::vector<double>>> values_;
    std::vector<std::vector<std::size_t>> branches_;
};

class StopGradientTraceScope {
  public:
    explicit StopGradientTraceScope(StopGradientTrace& trace);
    ~StopGradientTraceScope();
    StopGradientTraceScope(const StopGradientTraceScope&) = delete;
    StopGradientTraceScope& operator=(const StopGradientTraceScope&) = delete;

  private:
    StopGradientTrace* previous_;
};

// ---------------------------------------------------------------------------
// Operations

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor square(const Tensor& x);

/// Softmax over the last axis of x / temperature.
Tensor softmax(const Tensor& x, double temperature = 1.0);

/// Row-wise layer normalization of a 2-D tensor with affine gain and bias of
/// shape [cols].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Reduce a 2-D tensor along `axis`, keeping the reduced axis as extent 1.
Tensor sum_axis(const Tensor& x, std::size_t axis);

/// Column-wise maximum over all rows of a 2-D tensor -> [1, cols]. The gradient
/// goes to the arg-max row, lowest row index on ties.
Tensor max_rows(const Tensor& x);
/// Column-wise maximum within consecutive row groups of `group` rows
/// -> [rows / group, cols].
Tensor segment_max_rows(const Tensor& x, std::size_t group);
/// Repeat each row `times` times consecutively -> [rows * times, cols].
Tensor repeat_rows(const Tensor& x, std::size_t times);

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
/// Rows of x in the given order (indices may repeat); backward scatter-adds.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices);
Tensor reshape(const Tensor& x, Shape shape);

/// Identity on values; contributes no gradient to x.
Tensor stop_gradient(const Tensor& x);

}  // namespace maskclu
