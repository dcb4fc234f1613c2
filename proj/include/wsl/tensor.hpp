#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace wsl::tc {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node;

// Dense row-major float64 array with reverse-mode gradient tracking.
// Copies are shallow handles onto the same node, like a shared tensor reference.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t flat) const { return data()[flat]; }

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;  // empty when absent
  std::span<double> mutable_grad();      // allocates zeros when absent
  void zero_grad();                      // drops the gradient buffer

  // New leaf holding a copy of the values, detached from any graph.
  Tensor detach() const;
  bool same_node(const Tensor& other) const { return node_ == other.node_; }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Propagates this node's grad into its inputs. Captured inputs are parents,
  // so the graph only holds child-to-parent references and cannot cycle.
  std::function<void(const Node&)> backward;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

// Reverse-topological accumulation from a scalar. Each node is visited once.
void backward(const Tensor& loss);

bool grad_enabled();

// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

// Builds an op result; records inputs and the backward closure only when
// grad mode is on and some input requires grad.
Tensor make_result(const char* op, Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
                   std::function<void(const Node&)> backward);
Tensor make_result(const char* op, Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                   std::function<void(const Node&)> backward);

// Gradient buffer of t if it participates in differentiation, else nullptr.
double* grad_ptr(const Tensor& t);

}  // namespace detail

}  // namespace wsl::tc
