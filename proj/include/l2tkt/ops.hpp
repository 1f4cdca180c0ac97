#pragma once

// Differentiable operations on Var. Every backward rule is expressed with
// these same operations, so all of them support higher-order gradients.

#include "l2tkt/autodiff.hpp"

namespace l2tkt::ad {

// Elementwise; operands must have identical shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
Var log(const Var& a);
Var sqrt(const Var& a);
Var sigmoid(const Var& a);
Var relu(const Var& a);
// Gradient is zero wherever the input lies outside (lo, hi).
Var clamp(const Var& a, double lo, double hi);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }

// Reductions and broadcasts. sum/fill and sum_channels/expand_channels and
// mean_spatial/spread_spatial are adjoint pairs.
Var sum(const Var& a);
Var fill(const Var& scalar, const Shape& shape);
// [N, C, ...] -> [C]
Var sum_channels(const Var& a);
// [C] -> shape, where shape[1] == C
Var expand_channels(const Var& a, const Shape& shape);
// [N, C, H, W] -> [N, C]
Var mean_spatial(const Var& a);
// [N, C] -> shape = [N, C, H, W], each value divided by H*W
Var spread_spatial(const Var& a, const Shape& shape);
Var reshape(const Var& a, const Shape& shape);

// Matrices.
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// input [N, Ci, H, W], weight [Co, Ci, Kh, Kw] -> [N, Co, Ho, Wo]
Var conv2d(const Var& input, const Var& weight, ConvGeometry geometry);
// Adjoint of conv2d with respect to its input.
Var conv2d_input_grad(const Var& upstream, const Var& weight,
                      const Shape& input_shape, ConvGeometry geometry);
// Adjoint of conv2d with respect to its weight.
Var conv2d_weight_grad(const Var& input, const Var& upstream,
                       const Shape& weight_shape, ConvGeometry geometry);

Var sum_squares(const Var& a);
Var frobenius_norm(const Var& a);

}  // namespace l2tkt::ad
