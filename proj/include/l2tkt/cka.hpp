#pragma once

#include "l2tkt/autodiff.hpp"
#include "l2tkt/tensor.hpp"

namespace l2tkt {

// Linear CKA between two feature batches (rows are samples):
//   ||S^T T||_F^2 / (||T^T T||_F * ||S^T S||_F)
// With centered=true each feature column is mean-centered over the batch first.
// Requires n >= 2 rows in both, equal row counts, and neither matrix all-zero
// after centering (DegenerateInputError otherwise).
ad::Var cka_similarity(const ad::Var& teacher, const ad::Var& student, bool centered = true);
double cka_similarity(const Tensor& teacher, const Tensor& student, bool centered = true);

// 1 - CKA; zero iff the batches are aligned up to rotation and isotropic scale.
ad::Var kt_loss(const ad::Var& teacher, const ad::Var& student, bool centered = true);
double kt_loss(const Tensor& teacher, const Tensor& student, bool centered = true);

// Subtracts each column's mean over the rows.
ad::Var center_columns(const ad::Var& features);

}  // namespace l2tkt
