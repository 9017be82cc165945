#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmdm/tensor.hpp"

namespace mmdm::ad {

// Reverse-mode autodiff over a dynamically built DAG of tensor operations.
// Each op records its inputs and a vector-Jacobian callback; backward() runs
// the callbacks once each in reverse topological order. Graphs are rebuilt
// per forward pass and confined to one thread.

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated during backward
  bool requires_grad = false;
  bool grad_ready = false;
  std::vector<Var> inputs;
  std::function<void(Node&)> backprop;  // reads this->grad, accumulates into inputs
  std::string name;                     // leaves only

  void accumulate(const Tensor& g);
};

Var leaf(Tensor value, bool requires_grad = false, std::string name = "");
Var constant(Tensor value);
Var constant_scalar(double v);

// elementwise, numpy-style broadcasting
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var gelu(const Var& a);

// matrix product over the last two axes; leading axes broadcast
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);  // swap last two axes
Var permute(const Var& a, const std::vector<int>& perm);
Var reshape(const Var& a, std::vector<int> shape);
Var slice(const Var& a, int axis, int start, int len);
Var concat(const std::vector<Var>& parts, int axis);

Var softmax(const Var& a, int axis);
Var layer_norm(const Var& x, const Var& gain, const Var& bias);

Var sum(const Var& a);   // scalar
Var mean(const Var& a);  // scalar

// Gradients of the leaves reached from the loss. Lookup of an unreached
// leaf throws DomainError ("detached leaf").
class GradientMap {
 public:
  const Tensor& at(const Var& leaf) const;
  bool contains(const Var& leaf) const;
  void put(const Node* node, Tensor grad);

 private:
  std::unordered_map<const Node*, Tensor> grads_;
};

// loss must be scalar ("not scalar" otherwise); visits each node exactly once.
GradientMap backward(const Var& loss);

// ---- broadcasting helpers (shared with the op implementations and tests)

std::vector<int> broadcast_shape(const std::vector<int>& a, const std::vector<int>& b);

}  // namespace mmdm::ad
