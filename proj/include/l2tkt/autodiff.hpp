#pragma once

// Tape-free reverse-mode differentiation over Tensor values.
//
// Every operation records its inputs and a backward rule. Backward rules are
// themselves written in terms of recorded operations, so a gradient computed
// with create_graph=true is an ordinary Var that can be differentiated again.
// This is what makes the teacher's meta-gradient (a derivative taken through a
// student gradient step) exact.

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "l2tkt/tensor.hpp"

namespace l2tkt::ad {

class Var;

// Maps the upstream gradient (same shape as the op output) to one gradient per
// input. An empty Var means "no contribution".
using BackwardFn = std::function<std::vector<Var>(const Var& upstream)>;

enum class Differentiability {
  any_order,
  // The backward rule uses unrecorded tensor math; asking for a gradient graph
  // through such an op raises CapabilityError.
  first_order_only,
};

struct Node {
  Tensor value;
  std::vector<Var> inputs;
  BackwardFn backward;
  bool requires_grad = false;
  Differentiability order = Differentiability::any_order;
  const char* op = "leaf";
};

class Var {
 public:
  Var() = default;

  static Var constant(Tensor value);
  static Var leaf(Tensor value);

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  double item() const { return node_->value.item(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  const Node* node() const noexcept { return node_.get(); }

 private:
  friend Var make_op(Tensor, std::vector<Var>, BackwardFn, const char*,
                     Differentiability);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  std::shared_ptr<Node> node_;
};

// Records an op when grad mode is on and any input requires a gradient;
// otherwise returns a constant.
Var make_op(Tensor value, std::vector<Var> inputs, BackwardFn backward,
            const char* op,
            Differentiability order = Differentiability::any_order);

bool grad_enabled() noexcept;

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// d output / d wrt[i] for a single-element output. Inputs unreachable from the
// output get an all-zero constant. With create_graph=true the results carry
// their own graph.
std::vector<Var> gradients(const Var& output, std::span<const Var> wrt,
                           bool create_graph = false);

}  // namespace l2tkt::ad
