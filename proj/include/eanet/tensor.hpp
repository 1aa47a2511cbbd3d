#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace eanet {

using Shape = std::vector<std::size_t>;

/// Raised when operand extents do not satisfy an operation's contract.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a NaN or infinity appears in a forward or backward pass.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised on API misuse (e.g. backward from a non-scalar root).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass touches the node
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs that require grad.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }
  std::vector<double>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

using NodePtr = std::shared_ptr<Node>;

}  // namespace detail

/// Dense row-major tensor of doubles. Copies share the underlying node, so a
/// Tensor behaves like a handle onto an immutable value plus a gradient slot.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Writable view for leaf tensors (parameters, probe inputs).
  std::span<double> data_mut();
  double item() const;
  double operator[](std::size_t flat) const { return data()[flat]; }
  double at(std::initializer_list<std::size_t> index) const;
  std::vector<double> to_vector() const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> grad_mut();
  void zero_grad();
  /// Gradient as a tensor (zeros when no gradient has been accumulated).
  Tensor grad_tensor() const;

  /// New leaf holding a copy of the values, cut from the graph.
  Tensor detach() const;
  /// Deep copy as an independent leaf; preserves requires_grad.
  Tensor clone() const;
  const char* op_name() const;

  const detail::NodePtr& node() const { return node_; }

 private:
  const detail::Node& checked() const;
  detail::NodePtr node_;
};

/// Disables graph recording for its lifetime (evaluation, finite differences).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Topologically ordered view of the nodes that lead to a root.
struct ComputeGraph {
  std::vector<const detail::Node*> nodes;  // inputs precede their consumers
  std::vector<const detail::Node*> leaves;
  std::size_t index_of(const detail::Node* node) const;
};

ComputeGraph trace_graph(const Tensor& root);

/// Reverse-mode pass from a scalar root. Leaf gradients accumulate across
/// calls; intermediate gradients are rebuilt per call. Returns the number of
/// nodes whose backward rule ran.
std::size_t backward(const Tensor& loss);

namespace detail {

/// Builds an op result, attaching the backward rule only when recording is on
/// and at least one input requires grad. Rejects non-finite outputs.
Tensor make_result(Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs, const char* op,
                   std::function<void(Node&)> backward_rule);

void check_finite(std::span<const double> values, const char* where);

}  // namespace detail

}  // namespace eanet
