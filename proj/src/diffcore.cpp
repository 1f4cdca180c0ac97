#include "l2tkt/diffcore.hpp"

#include <cmath>

#include "l2tkt/ops.hpp"

namespace l2tkt {

namespace {

void check_finite_objective(double value, const ParamSet& params) {
  if (std::isfinite(value)) return;
  for (const auto& [name, t] : params) {
    if (!t.all_finite()) throw EvaluationError(name, "objective is non-finite");
  }
  throw EvaluationError("objective", "objective is non-finite");
}

GradSet collect(const std::vector<std::string>& names, const std::vector<ad::Var>& vars) {
  GradSet out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (!vars[i].value().all_finite()) {
      throw EvaluationError(names[i], "non-finite gradient");
    }
    out.insert(names[i], vars[i].value());
  }
  return out;
}

std::vector<ad::Var> values_of(const VarMap& vars) {
  std::vector<ad::Var> out;
  out.reserve(vars.size());
  for (const auto& [_, v] : vars) out.push_back(v);
  return out;
}

}  // namespace

VarMap make_leaves(const ParamSet& params) {
  VarMap out;
  for (const auto& [name, t] : params) out.emplace(name, ad::Var::leaf(t));
  return out;
}

VarMap make_constants(const ParamSet& params) {
  VarMap out;
  for (const auto& [name, t] : params) out.emplace(name, ad::Var::constant(t));
  return out;
}

ParamSet apply_gradient_step(const ParamSet& params, const GradSet& grad, double step) {
  if (!params.congruent_with(grad)) {
    throw ShapeError("gradient structure does not match parameter structure");
  }
  ParamSet out;
  auto g = grad.begin();
  for (const auto& [name, t] : params) {
    Tensor updated = t;
    const Tensor& d = g->second;
    for (std::size_t i = 0; i < updated.size(); ++i) updated[i] -= step * d[i];
    out.insert(name, std::move(updated));
    ++g;
  }
  return out;
}

ValueAndGrad value_and_grad(const Objective& objective, const ParamSet& params) {
  const VarMap leaves = make_leaves(params);
  const ad::Var value = objective(leaves);
  check_finite_objective(value.item(), params);
  const std::vector<ad::Var> wrt = values_of(leaves);
  return {value.item(), collect(params.names(), ad::gradients(value, wrt))};
}

GradSet grad(const Objective& objective, const ParamSet& params) {
  return value_and_grad(objective, params).grad;
}

MetaGradient grad_through_update(const CoupledObjective& inner, const Objective& outer,
                                 const ParamSet& teacher, const ParamSet& student,
                                 double lambda_s, MetaGradientMode mode) {
  if (!(lambda_s >= 0.0) || !std::isfinite(lambda_s)) {
    throw ValidationError("student learning rate must be finite and >= 0");
  }
  const std::vector<std::string> teacher_names = teacher.names();
  const std::vector<std::string> student_names = student.names();

  if (mode == MetaGradientMode::exact_second_order) {
    const VarMap t_vars = make_leaves(teacher);
    const VarMap s_vars = make_leaves(student);
    const ad::Var inner_value = inner(t_vars, s_vars);
    check_finite_objective(inner_value.item(), student);

    const std::vector<ad::Var> s_list = values_of(s_vars);
    const std::vector<ad::Var> inner_grads =
        ad::gradients(inner_value, s_list, /*create_graph=*/true);

    VarMap virtual_student;
    for (std::size_t i = 0; i < student_names.size(); ++i) {
      virtual_student.emplace(student_names[i],
                              ad::sub(s_list[i], ad::scale(inner_grads[i], lambda_s)));
    }
    const ad::Var outer_value = outer(virtual_student);
    check_finite_objective(outer_value.item(), teacher);
    const std::vector<ad::Var> t_list = values_of(t_vars);
    return {collect(teacher_names, ad::gradients(outer_value, t_list)),
            inner_value.item(), outer_value.item()};
  }

  // First-order approximation. The mixed term d^2 inner / d teacher d student
  // applied to v is estimated from teacher gradients at student +/- eps*v.
  auto inner_at = [&](const ParamSet& s) {
    return [&inner, s_vars = make_constants(s)](const VarMap& t) { return inner(t, s_vars); };
  };
  const ValueAndGrad inner_student = value_and_grad(
      [&](const VarMap& s) { return inner(make_constants(teacher), s); }, student);
  const ParamSet virtual_student =
      apply_gradient_step(student, inner_student.grad, lambda_s);
  const ValueAndGrad outer_vg = value_and_grad(outer, virtual_student);

  double norm_sq = 0.0;
  for (const auto& [_, t] : outer_vg.grad) {
    for (double v : t.data()) norm_sq += v * v;
  }
  GradSet result;
  if (norm_sq == 0.0 || lambda_s == 0.0) {
    for (const auto& [name, t] : teacher) result.insert(name, Tensor(t.shape(), 0.0));
    return {std::move(result), inner_student.value, outer_vg.value};
  }
  const double eps = 0.01 / std::sqrt(norm_sq);
  const ParamSet plus = apply_gradient_step(student, outer_vg.grad, -eps);
  const ParamSet minus = apply_gradient_step(student, outer_vg.grad, eps);
  const GradSet g_plus = grad(inner_at(plus), teacher);
  const GradSet g_minus = grad(inner_at(minus), teacher);
  auto gm = g_minus.begin();
  for (const auto& [name, gp] : g_plus) {
    Tensor d(gp.shape());
    for (std::size_t i = 0; i < d.size(); ++i) {
      d[i] = -lambda_s * (gp[i] - gm->second[i]) / (2.0 * eps);
    }
    result.insert(name, std::move(d));
    ++gm;
  }
  return {std::move(result), inner_student.value, outer_vg.value};
}

}  // namespace l2tkt
