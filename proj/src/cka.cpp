#include "l2tkt/cka.hpp"

#include <algorithm>
#include <cmath>

#include "l2tkt/error.hpp"
#include "l2tkt/ops.hpp"

namespace l2tkt {

namespace {

void check_batch(const ad::Var& x, const char* which) {
  if (x.shape().size() != 2) {
    throw ShapeError(std::string("CKA ") + which + " features must be n x d, got " +
                     to_string(x.shape()));
  }
  if (x.shape()[0] < 2) {
    throw DegenerateInputError(std::string("CKA needs at least 2 samples, ") + which +
                               " has " + std::to_string(x.shape()[0]));
  }
  if (!x.value().all_finite()) {
    throw DegenerateInputError(std::string("CKA ") + which + " features are non-finite");
  }
}

double max_abs(const ad::Var& x) {
  double m = 0.0;
  for (double v : x.value().data()) m = std::max(m, std::abs(v));
  return m;
}

// Centering an all-equal column leaves rounding residue, so zero is judged
// relative to the magnitude of the raw features.
void check_nonzero(const ad::Var& x, const ad::Var& raw, const char* which) {
  if (max_abs(x) <= 1e-12 * std::max(1.0, max_abs(raw))) {
    throw DegenerateInputError(std::string("CKA ") + which +
                               " features are all zero; similarity is 0/0");
  }
}

}  // namespace

ad::Var center_columns(const ad::Var& features) {
  const double inv_n = 1.0 / static_cast<double>(features.shape()[0]);
  const ad::Var mean = ad::scale(ad::sum_channels(features), inv_n);
  return ad::sub(features, ad::expand_channels(mean, features.shape()));
}

ad::Var cka_similarity(const ad::Var& teacher, const ad::Var& student, bool centered) {
  check_batch(teacher, "teacher");
  check_batch(student, "student");
  if (teacher.shape()[0] != student.shape()[0]) {
    throw ShapeError("CKA batches differ in size: " + std::to_string(teacher.shape()[0]) +
                     " vs " + std::to_string(student.shape()[0]));
  }
  const ad::Var t = centered ? center_columns(teacher) : teacher;
  const ad::Var s = centered ? center_columns(student) : student;
  check_nonzero(t, teacher, "teacher");
  check_nonzero(s, student, "student");

  const ad::Var cross = ad::sum_squares(ad::matmul(ad::transpose(s), t));
  const ad::Var t_norm = ad::frobenius_norm(ad::matmul(ad::transpose(t), t));
  const ad::Var s_norm = ad::frobenius_norm(ad::matmul(ad::transpose(s), s));
  return ad::div(cross, ad::mul(t_norm, s_norm));
}

double cka_similarity(const Tensor& teacher, const Tensor& student, bool centered) {
  ad::NoGradGuard no_grad;
  const double value =
      cka_similarity(ad::Var::constant(teacher), ad::Var::constant(student), centered).item();
  // Rounding can push self-similarity a few ulps past 1.
  return std::clamp(value, 0.0, 1.0);
}

ad::Var kt_loss(const ad::Var& teacher, const ad::Var& student, bool centered) {
  return ad::add_scalar(ad::neg(cka_similarity(teacher, student, centered)), 1.0);
}

double kt_loss(const Tensor& teacher, const Tensor& student, bool centered) {
  return 1.0 - cka_similarity(teacher, student, centered);
}

}  // namespace l2tkt
