#include "eanet/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace eanet {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto extent : shape) {
    if (extent == 0) {
      throw DimensionError("tensor extents must be positive, got " +
                           shape_str(shape));
    }
  }
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) +
                         " values, got " + std::to_string(data.size()));
  }
  detail::check_finite(data, "tensor construction");
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({}, {value}, requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  Shape shape{values.size()};
  return Tensor(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::vector<double> values, bool requires_grad) {
  return Tensor({rows, cols}, std::move(values), requires_grad);
}

const detail::Node& Tensor::checked() const {
  if (!node_) throw UsageError("use of an undefined tensor");
  return *node_;
}

const Shape& Tensor::shape() const { return checked().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return checked().data.size(); }

std::span<const double> Tensor::data() const { return checked().data; }

std::span<double> Tensor::data_mut() {
  checked();
  if (!node_->is_leaf()) {
    throw UsageError("only leaf tensors may be written in place");
  }
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  }
  return checked().data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) {
    throw DimensionError("index rank mismatch for " + shape_str(s));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= s[axis]) throw DimensionError("index out of range");
    flat = flat * s[axis] + i;
    ++axis;
  }
  return checked().data[flat];
}

std::vector<double> Tensor::to_vector() const {
  auto d = data();
  return {d.begin(), d.end()};
}

bool Tensor::requires_grad() const { return checked().requires_grad; }

void Tensor::set_requires_grad(bool value) {
  checked();
  if (!node_->is_leaf()) {
    throw UsageError("requires_grad can only be set on leaf tensors");
  }
  node_->requires_grad = value;
}

bool Tensor::is_leaf() const { return checked().is_leaf(); }

bool Tensor::has_grad() const {
  const auto& n = checked();
  return !n.grad.empty() && n.grad.size() == n.data.size();
}

std::span<const double> Tensor::grad() const {
  if (!has_grad()) return {};
  return node_->grad;
}

std::span<double> Tensor::grad_mut() {
  checked();
  return node_->ensure_grad();
}

void Tensor::zero_grad() {
  checked();
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::grad_tensor() const {
  if (!has_grad()) return Tensor::zeros(shape());
  return Tensor(shape(), node_->grad);
}

Tensor Tensor::detach() const { return Tensor(shape(), to_vector(), false); }

Tensor Tensor::clone() const {
  const auto& n = checked();
  return Tensor(n.shape, n.data, n.requires_grad);
}

const char* Tensor::op_name() const { return checked().op; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

std::size_t ComputeGraph::index_of(const detail::Node* node) const {
  auto it = std::find(nodes.begin(), nodes.end(), node);
  if (it == nodes.end()) throw UsageError("node not in graph");
  return static_cast<std::size_t>(it - nodes.begin());
}

namespace {

// Iterative post-order DFS over nodes that require grad; inputs are visited
// in declaration order so the result is deterministic.
std::vector<detail::Node*> topo_order(detail::Node* root) {
  std::vector<detail::Node*> order;
  if (!root->requires_grad) return order;
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

ComputeGraph trace_graph(const Tensor& root) {
  ComputeGraph graph;
  if (!root.defined()) return graph;
  for (auto* node : topo_order(root.node().get())) {
    graph.nodes.push_back(node);
    if (node->is_leaf()) graph.leaves.push_back(node);
  }
  return graph;
}

std::size_t backward(const Tensor& loss) {
  if (!loss.defined()) throw UsageError("backward on undefined tensor");
  if (loss.numel() != 1) {
    throw UsageError("backward requires a scalar root, got shape " +
                     shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw UsageError("backward root does not require grad");
  }
  auto order = topo_order(loss.node().get());
  for (auto* node : order) {
    if (!node->is_leaf()) node->grad.assign(node->data.size(), 0.0);
  }
  auto* root = loss.node().get();
  root->ensure_grad()[0] += 1.0;
  std::size_t visited = 0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->is_leaf()) continue;
    node->backward(*node);
    ++visited;
  }
  for (auto* node : order) {
    if (node->is_leaf()) {
      detail::check_finite(node->grad, "backward");
    } else if (node != root) {
      std::vector<double>().swap(node->grad);
    }
  }
  return visited;
}

namespace detail {

void check_finite(std::span<const double> values, const char* where) {
  // Exponent-all-ones test on the raw bits; branch-free so it vectorizes.
  constexpr std::uint64_t kExponent = 0x7FF0000000000000ULL;
  std::uint64_t bad = 0;
  for (double v : values) {
    bad |= static_cast<std::uint64_t>((std::bit_cast<std::uint64_t>(v) & kExponent) == kExponent);
  }
  if (bad != 0) throw NumericError(std::string("non-finite value in ") + where);
}

Tensor make_result(Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs, const char* op,
                   std::function<void(Node&)> backward_rule) {
  check_finite(data, op);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward_rule);
  }
  return Tensor(std::move(node));
}

}  // namespace detail

}  // namespace eanet
