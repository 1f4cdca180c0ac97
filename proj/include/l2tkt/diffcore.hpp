#pragma once

// Named parameter collections and the two gradient entry points the trainer
// relies on: a plain gradient, and the meta-gradient taken through one
// gradient-descent step of an inner objective.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "l2tkt/autodiff.hpp"
#include "l2tkt/error.hpp"
#include "l2tkt/tensor.hpp"

namespace l2tkt {

// Ordered by name, so iteration order is deterministic. Shapes never change
// once an entry exists; values must stay finite.
template <typename Tag>
class NamedTensors {
 public:
  using Map = std::map<std::string, Tensor>;

  NamedTensors() = default;

  void insert(const std::string& name, Tensor value) {
    if (!value.all_finite()) {
      throw EvaluationError(name, "non-finite value");
    }
    if (!entries_.emplace(name, std::move(value)).second) {
      throw ValidationError("duplicate parameter entry '" + name + "'");
    }
  }

  // Replaces the value of an existing entry; the shape must be unchanged.
  void assign(const std::string& name, Tensor value) {
    Tensor& slot = mutable_at(name);
    if (slot.shape() != value.shape()) {
      throw ShapeError("entry '" + name + "' has shape " + to_string(slot.shape()) +
                       ", cannot assign " + to_string(value.shape()));
    }
    if (!value.all_finite()) throw EvaluationError(name, "non-finite value");
    slot = std::move(value);
  }

  const Tensor& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ValidationError("no entry named '" + name + "'");
    return it->second;
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : entries_) out.push_back(name);
    return out;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.size();
    return n;
  }

  template <typename OtherTag>
  bool congruent_with(const NamedTensors<OtherTag>& other) const {
    if (size() != other.size()) return false;
    auto it = other.begin();
    for (const auto& [name, t] : entries_) {
      if (it->first != name || it->second.shape() != t.shape()) return false;
      ++it;
    }
    return true;
  }

  bool operator==(const NamedTensors&) const = default;

 private:
  Tensor& mutable_at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ValidationError("no entry named '" + name + "'");
    return it->second;
  }

  Map entries_;
};

using ParamSet = NamedTensors<struct ParamTag>;
using GradSet = NamedTensors<struct GradTag>;

using VarMap = std::map<std::string, ad::Var>;
using Objective = std::function<ad::Var(const VarMap& params)>;
using CoupledObjective =
    std::function<ad::Var(const VarMap& teacher, const VarMap& student)>;

VarMap make_leaves(const ParamSet& params);
VarMap make_constants(const ParamSet& params);

// params - step * grad, entry by entry.
ParamSet apply_gradient_step(const ParamSet& params, const GradSet& grad, double step);

struct ValueAndGrad {
  double value = 0.0;
  GradSet grad;
};

// Exact reverse-mode gradient. Throws EvaluationError if the objective or any
// gradient entry is non-finite.
ValueAndGrad value_and_grad(const Objective& objective, const ParamSet& params);
GradSet grad(const Objective& objective, const ParamSet& params);

enum class MetaGradientMode {
  // Differentiates through the inner gradient exactly (double backprop).
  exact_second_order,
  // Replaces the mixed second derivative with a central difference of two
  // first-order teacher gradients, taken at student +/- eps * v where v is the
  // outer gradient at the virtual student. Ablation only.
  first_order_finite_difference,
};

struct MetaGradient {
  GradSet teacher_grad;
  double inner_value = 0.0;
  double outer_value = 0.0;
};

// d/d teacher of outer(student - lambda_s * d inner(teacher, student)/d student).
// Neither input ParamSet is modified.
MetaGradient grad_through_update(
    const CoupledObjective& inner, const Objective& outer, const ParamSet& teacher,
    const ParamSet& student, double lambda_s,
    MetaGradientMode mode = MetaGradientMode::exact_second_order);

}  // namespace l2tkt
