#include "l2tkt/ops.hpp"

#include <Eigen/Core>
#include <cmath>

#include "l2tkt/error.hpp"

namespace l2tkt::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

template <typename F>
Tensor map_unary(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

template <typename F>
Tensor map_binary(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

struct ConvDims {
  std::size_t n, ci, h, w, co, kh, kw, ho, wo;
};

ConvDims conv_dims(const Shape& input, const Shape& weight, ConvGeometry g) {
  if (input.size() != 4 || weight.size() != 4) {
    throw ShapeError("conv2d expects rank-4 input and weight, got " +
                     to_string(input) + " and " + to_string(weight));
  }
  if (input[1] != weight[1]) {
    throw ShapeError("conv2d channel mismatch: weight expects " +
                     std::to_string(weight[1]) + " input channels, got " +
                     std::to_string(input[1]));
  }
  if (g.stride == 0 || input[2] + 2 * g.padding < weight[2] ||
      input[3] + 2 * g.padding < weight[3]) {
    throw ShapeError("conv2d kernel larger than padded input");
  }
  ConvDims d{input[0], input[1], input[2], input[3], weight[0], weight[2], weight[3], 0, 0};
  d.ho = (d.h + 2 * g.padding - d.kh) / g.stride + 1;
  d.wo = (d.w + 2 * g.padding - d.kw) / g.stride + 1;
  return d;
}

// One sample [ci, h, w] -> columns [ci*kh*kw, ho*wo].
void im2col(const double* x, const ConvDims& d, ConvGeometry g, double* cols) {
  const std::size_t plane = d.ho * d.wo;
  std::size_t row = 0;
  for (std::size_t c = 0; c < d.ci; ++c) {
    for (std::size_t ky = 0; ky < d.kh; ++ky) {
      for (std::size_t kx = 0; kx < d.kw; ++kx, ++row) {
        double* dst = cols + row * plane;
        for (std::size_t oy = 0; oy < d.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.padding);
          for (std::size_t ox = 0; ox < d.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.padding);
            const bool inside = iy >= 0 && ix >= 0 &&
                                iy < static_cast<std::ptrdiff_t>(d.h) &&
                                ix < static_cast<std::ptrdiff_t>(d.w);
            dst[oy * d.wo + ox] =
                inside ? x[(c * d.h + static_cast<std::size_t>(iy)) * d.w +
                           static_cast<std::size_t>(ix)]
                       : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvDims& d, ConvGeometry g, double* x) {
  const std::size_t plane = d.ho * d.wo;
  std::size_t row = 0;
  for (std::size_t c = 0; c < d.ci; ++c) {
    for (std::size_t ky = 0; ky < d.kh; ++ky) {
      for (std::size_t kx = 0; kx < d.kw; ++kx, ++row) {
        const double* src = cols + row * plane;
        for (std::size_t oy = 0; oy < d.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
          for (std::size_t ox = 0; ox < d.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.w)) continue;
            x[(c * d.h + static_cast<std::size_t>(iy)) * d.w +
              static_cast<std::size_t>(ix)] += src[oy * d.wo + ox];
          }
        }
      }
    }
  }
}

Tensor conv_forward(const Tensor& x, const Tensor& w, ConvGeometry g) {
  const ConvDims d = conv_dims(x.shape(), w.shape(), g);
  const std::size_t patch = d.ci * d.kh * d.kw;
  const std::size_t plane = d.ho * d.wo;
  Tensor out(Shape{d.n, d.co, d.ho, d.wo});
  std::vector<double> cols(patch * plane);
  ConstMapMat weight(w.raw(), static_cast<Eigen::Index>(d.co), static_cast<Eigen::Index>(patch));
  for (std::size_t n = 0; n < d.n; ++n) {
    im2col(x.raw() + n * d.ci * d.h * d.w, d, g, cols.data());
    ConstMapMat c(cols.data(), static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(plane));
    MapMat o(out.raw() + n * d.co * plane, static_cast<Eigen::Index>(d.co),
             static_cast<Eigen::Index>(plane));
    o.noalias() = weight * c;
  }
  return out;
}

Tensor conv_input_grad(const Tensor& upstream, const Tensor& w,
                       const Shape& input_shape, ConvGeometry g) {
  const ConvDims d = conv_dims(input_shape, w.shape(), g);
  if (upstream.shape() != Shape{d.n, d.co, d.ho, d.wo}) {
    throw ShapeError("conv2d_input_grad: upstream shape " +
                     to_string(upstream.shape()) + " does not match output");
  }
  const std::size_t patch = d.ci * d.kh * d.kw;
  const std::size_t plane = d.ho * d.wo;
  Tensor out(input_shape);
  RowMat cols(static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(plane));
  ConstMapMat weight(w.raw(), static_cast<Eigen::Index>(d.co), static_cast<Eigen::Index>(patch));
  for (std::size_t n = 0; n < d.n; ++n) {
    ConstMapMat up(upstream.raw() + n * d.co * plane, static_cast<Eigen::Index>(d.co),
                   static_cast<Eigen::Index>(plane));
    cols.noalias() = weight.transpose() * up;
    col2im_add(cols.data(), d, g, out.raw() + n * d.ci * d.h * d.w);
  }
  return out;
}

Tensor conv_weight_grad(const Tensor& x, const Tensor& upstream,
                        const Shape& weight_shape, ConvGeometry g) {
  const ConvDims d = conv_dims(x.shape(), weight_shape, g);
  if (upstream.shape() != Shape{d.n, d.co, d.ho, d.wo}) {
    throw ShapeError("conv2d_weight_grad: upstream shape " +
                     to_string(upstream.shape()) + " does not match output");
  }
  const std::size_t patch = d.ci * d.kh * d.kw;
  const std::size_t plane = d.ho * d.wo;
  Tensor out(weight_shape);
  MapMat dw(out.raw(), static_cast<Eigen::Index>(d.co), static_cast<Eigen::Index>(patch));
  std::vector<double> cols(patch * plane);
  for (std::size_t n = 0; n < d.n; ++n) {
    im2col(x.raw() + n * d.ci * d.h * d.w, d, g, cols.data());
    ConstMapMat c(cols.data(), static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(plane));
    ConstMapMat up(upstream.raw() + n * d.co * plane, static_cast<Eigen::Index>(d.co),
                   static_cast<Eigen::Index>(plane));
    dw.noalias() += up * c.transpose();
  }
  return out;
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  return make_op(map_binary(a.value(), b.value(), std::plus<>()), {a, b},
                 [](const Var& g) { return std::vector<Var>{g, g}; }, "add");
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  return make_op(map_binary(a.value(), b.value(), std::minus<>()), {a, b},
                 [](const Var& g) { return std::vector<Var>{g, neg(g)}; }, "sub");
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  return make_op(map_binary(a.value(), b.value(), std::multiplies<>()), {a, b},
                 [a, b](const Var& g) {
                   return std::vector<Var>{a.requires_grad() ? mul(g, b) : Var{},
                                           b.requires_grad() ? mul(g, a) : Var{}};
                 },
                 "mul");
}

Var div(const Var& a, const Var& b) {
  require_same_shape(a, b, "div");
  return make_op(map_binary(a.value(), b.value(), std::divides<>()), {a, b},
                 [a, b](const Var& g) {
                   Var ga = a.requires_grad() ? div(g, b) : Var{};
                   Var gb = b.requires_grad() ? neg(div(mul(g, a), mul(b, b))) : Var{};
                   return std::vector<Var>{ga, gb};
                 },
                 "div");
}

Var neg(const Var& a) {
  return make_op(map_unary(a.value(), [](double v) { return -v; }), {a},
                 [](const Var& g) { return std::vector<Var>{neg(g)}; }, "neg");
}

Var scale(const Var& a, double factor) {
  return make_op(map_unary(a.value(), [factor](double v) { return v * factor; }), {a},
                 [factor](const Var& g) { return std::vector<Var>{scale(g, factor)}; },
                 "scale");
}

Var add_scalar(const Var& a, double offset) {
  return make_op(map_unary(a.value(), [offset](double v) { return v + offset; }), {a},
                 [](const Var& g) { return std::vector<Var>{g}; }, "add_scalar");
}

Var log(const Var& a) {
  return make_op(map_unary(a.value(), [](double v) { return std::log(v); }), {a},
                 [a](const Var& g) { return std::vector<Var>{div(g, a)}; }, "log");
}

Var sqrt(const Var& a) {
  return make_op(map_unary(a.value(), [](double v) { return std::sqrt(v); }), {a},
                 [a](const Var& g) {
                   return std::vector<Var>{div(scale(g, 0.5), sqrt(a))};
                 },
                 "sqrt");
}

Var sigmoid(const Var& a) {
  auto logistic = [](double v) {
    return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  };
  return make_op(map_unary(a.value(), logistic), {a},
                 [a](const Var& g) {
                   Var s = sigmoid(a);
                   return std::vector<Var>{mul(g, mul(s, add_scalar(neg(s), 1.0)))};
                 },
                 "sigmoid");
}

Var relu(const Var& a) {
  Tensor mask = map_unary(a.value(), [](double v) { return v > 0.0 ? 1.0 : 0.0; });
  Tensor out = map_binary(a.value(), mask, std::multiplies<>());
  return make_op(std::move(out), {a},
                 [m = Var::constant(std::move(mask))](const Var& g) {
                   return std::vector<Var>{mul(g, m)};
                 },
                 "relu");
}

Var clamp(const Var& a, double lo, double hi) {
  Tensor mask = map_unary(a.value(), [lo, hi](double v) { return v > lo && v < hi ? 1.0 : 0.0; });
  Tensor out = map_unary(a.value(), [lo, hi](double v) { return std::min(std::max(v, lo), hi); });
  return make_op(std::move(out), {a},
                 [m = Var::constant(std::move(mask))](const Var& g) {
                   return std::vector<Var>{mul(g, m)};
                 },
                 "clamp");
}

Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  const Shape shape = a.shape();
  return make_op(Tensor::scalar(total), {a},
                 [shape](const Var& g) { return std::vector<Var>{fill(g, shape)}; },
                 "sum");
}

Var fill(const Var& scalar, const Shape& shape) {
  if (scalar.value().size() != 1) {
    throw ShapeError("fill expects a single-element tensor, got " +
                     to_string(scalar.shape()));
  }
  return make_op(Tensor(shape, scalar.item()), {scalar},
                 [s = scalar.shape()](const Var& g) {
                   return std::vector<Var>{reshape(sum(g), s)};
                 },
                 "fill");
}

Var sum_channels(const Var& a) {
  const Shape& shape = a.shape();
  if (shape.size() < 2) {
    throw ShapeError("sum_channels expects rank >= 2, got " + to_string(shape));
  }
  const std::size_t n = shape[0];
  const std::size_t c = shape[1];
  const std::size_t inner = c == 0 || n == 0 ? 0 : a.value().size() / (n * c);
  Tensor out(Shape{c});
  const double* src = a.value().raw();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      const double* p = src + (i * c + k) * inner;
      double acc = 0.0;
      for (std::size_t j = 0; j < inner; ++j) acc += p[j];
      out[k] += acc;
    }
  }
  return make_op(std::move(out), {a},
                 [shape](const Var& g) {
                   return std::vector<Var>{expand_channels(g, shape)};
                 },
                 "sum_channels");
}

Var expand_channels(const Var& a, const Shape& shape) {
  if (a.shape().size() != 1 || shape.size() < 2 || shape[1] != a.shape()[0]) {
    throw ShapeError("expand_channels: cannot broadcast " + to_string(a.shape()) +
                     " to " + to_string(shape));
  }
  const std::size_t n = shape[0];
  const std::size_t c = shape[1];
  Tensor out(shape);
  const std::size_t inner = c == 0 || n == 0 ? 0 : out.size() / (n * c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      double* p = out.raw() + (i * c + k) * inner;
      std::fill(p, p + inner, a.value()[k]);
    }
  }
  return make_op(std::move(out), {a},
                 [](const Var& g) { return std::vector<Var>{sum_channels(g)}; },
                 "expand_channels");
}

Var mean_spatial(const Var& a) {
  const Shape& shape = a.shape();
  if (shape.size() != 4) {
    throw ShapeError("mean_spatial expects [N,C,H,W], got " + to_string(shape));
  }
  const std::size_t planes = shape[0] * shape[1];
  const std::size_t area = shape[2] * shape[3];
  Tensor out(Shape{shape[0], shape[1]});
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = a.value().raw() + p * area;
    double acc = 0.0;
    for (std::size_t j = 0; j < area; ++j) acc += src[j];
    out[p] = acc / static_cast<double>(area);
  }
  return make_op(std::move(out), {a},
                 [shape](const Var& g) {
                   return std::vector<Var>{spread_spatial(g, shape)};
                 },
                 "mean_spatial");
}

Var spread_spatial(const Var& a, const Shape& shape) {
  if (shape.size() != 4 || a.shape() != Shape{shape[0], shape[1]}) {
    throw ShapeError("spread_spatial: cannot spread " + to_string(a.shape()) +
                     " to " + to_string(shape));
  }
  const std::size_t area = shape[2] * shape[3];
  Tensor out(shape);
  for (std::size_t p = 0; p < a.value().size(); ++p) {
    double* dst = out.raw() + p * area;
    std::fill(dst, dst + area, a.value()[p] / static_cast<double>(area));
  }
  return make_op(std::move(out), {a},
                 [](const Var& g) { return std::vector<Var>{mean_spatial(g)}; },
                 "spread_spatial");
}

Var reshape(const Var& a, const Shape& shape) {
  return make_op(a.value().reshaped(shape), {a},
                 [from = a.shape()](const Var& g) {
                   return std::vector<Var>{reshape(g, from)};
                 },
                 "reshape");
}

Var matmul(const Var& a, const Var& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    throw ShapeError("matmul: incompatible shapes " + to_string(sa) + " and " +
                     to_string(sb));
  }
  Tensor out(Shape{sa[0], sb[1]});
  MapMat(out.raw(), static_cast<Eigen::Index>(sa[0]), static_cast<Eigen::Index>(sb[1])).noalias() =
      ConstMapMat(a.value().raw(), static_cast<Eigen::Index>(sa[0]), static_cast<Eigen::Index>(sa[1])) *
      ConstMapMat(b.value().raw(), static_cast<Eigen::Index>(sb[0]), static_cast<Eigen::Index>(sb[1]));
  return make_op(std::move(out), {a, b},
                 [a, b](const Var& g) {
                   Var ga = a.requires_grad() ? matmul(g, transpose(b)) : Var{};
                   Var gb = b.requires_grad() ? matmul(transpose(a), g) : Var{};
                   return std::vector<Var>{ga, gb};
                 },
                 "matmul");
}

Var transpose(const Var& a) {
  const Shape& s = a.shape();
  if (s.size() != 2) throw ShapeError("transpose expects a matrix, got " + to_string(s));
  Tensor out(Shape{s[1], s[0]});
  for (std::size_t i = 0; i < s[0]; ++i) {
    for (std::size_t j = 0; j < s[1]; ++j) out[j * s[0] + i] = a.value()[i * s[1] + j];
  }
  return make_op(std::move(out), {a},
                 [](const Var& g) { return std::vector<Var>{transpose(g)}; },
                 "transpose");
}

Var conv2d(const Var& input, const Var& weight, ConvGeometry geometry) {
  return make_op(conv_forward(input.value(), weight.value(), geometry), {input, weight},
                 [input, weight, geometry](const Var& g) {
                   Var gi = input.requires_grad()
                                ? conv2d_input_grad(g, weight, input.shape(), geometry)
                                : Var{};
                   Var gw = weight.requires_grad()
                                ? conv2d_weight_grad(input, g, weight.shape(), geometry)
                                : Var{};
                   return std::vector<Var>{gi, gw};
                 },
                 "conv2d");
}

Var conv2d_input_grad(const Var& upstream, const Var& weight,
                      const Shape& input_shape, ConvGeometry geometry) {
  return make_op(conv_input_grad(upstream.value(), weight.value(), input_shape, geometry),
                 {upstream, weight},
                 [upstream, weight, geometry](const Var& h) {
                   Var gu = upstream.requires_grad() ? conv2d(h, weight, geometry) : Var{};
                   Var gw = weight.requires_grad()
                                ? conv2d_weight_grad(h, upstream, weight.shape(), geometry)
                                : Var{};
                   return std::vector<Var>{gu, gw};
                 },
                 "conv2d_input_grad");
}

Var conv2d_weight_grad(const Var& input, const Var& upstream,
                       const Shape& weight_shape, ConvGeometry geometry) {
  return make_op(conv_weight_grad(input.value(), upstream.value(), weight_shape, geometry),
                 {input, upstream},
                 [input, upstream, geometry](const Var& k) {
                   Var gi = input.requires_grad()
                                ? conv2d_input_grad(upstream, k, input.shape(), geometry)
                                : Var{};
                   Var gu = upstream.requires_grad() ? conv2d(input, k, geometry) : Var{};
                   return std::vector<Var>{gi, gu};
                 },
                 "conv2d_weight_grad");
}

Var sum_squares(const Var& a) { return sum(mul(a, a)); }

Var frobenius_norm(const Var& a) { return sqrt(sum_squares(a)); }

}  // namespace l2tkt::ad
