#include "l2tkt/models.hpp"

#include <cmath>
#include <random>

#include "l2tkt/ops.hpp"

namespace l2tkt {

namespace {

constexpr std::size_t kKernel = 3;
constexpr ad::ConvGeometry kBlockGeometry{2, 1};

std::string block_name(std::size_t i, const char* what) {
  return "encoder.block" + std::to_string(i) + "." + what;
}

const ad::Var& lookup(const VarMap& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw ValidationError("missing parameter '" + name + "'");
  return it->second;
}

Tensor he_normal(const Shape& shape, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Tensor t(shape);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace

void EncoderConfig::validate() const {
  if (input_channels < 1) throw ValidationError("encoder needs at least one input channel");
  if (feature_dim < 2) throw ValidationError("feature_dim must be >= 2");
  if (image_size < 1) throw ValidationError("image_size must be >= 1");
  for (std::size_t w : block_widths) {
    if (w == 0) throw ValidationError("block widths must be positive");
  }
}

ad::Var encode(const EncoderConfig& config, const VarMap& params, const ad::Var& batch) {
  const Shape& shape = batch.shape();
  if (shape.size() != 4) {
    throw ShapeError("encoder input must be [n,C,H,W], got " + to_string(shape));
  }
  if (shape[1] != config.input_channels) {
    throw ShapeError("encoder expects " + std::to_string(config.input_channels) +
                     " input channels, got " + std::to_string(shape[1]));
  }
  if (shape[2] != config.image_size || shape[3] != config.image_size) {
    throw ShapeError("encoder expects " + std::to_string(config.image_size) + "x" +
                     std::to_string(config.image_size) + " images, got " + to_string(shape));
  }
  ad::Var x = batch;
  for (std::size_t i = 0; i < config.block_widths.size(); ++i) {
    x = ad::conv2d(x, lookup(params, block_name(i, "weight")), kBlockGeometry);
    x = ad::relu(ad::add(x, ad::expand_channels(lookup(params, block_name(i, "bias")), x.shape())));
  }
  const ad::Var pooled = ad::mean_spatial(x);
  const ad::Var projected = ad::matmul(pooled, lookup(params, "encoder.proj.weight"));
  return ad::add(projected,
                 ad::expand_channels(lookup(params, "encoder.proj.bias"), projected.shape()));
}

Tensor encode(const EncoderConfig& config, const ParamSet& params, const Tensor& batch) {
  ad::NoGradGuard no_grad;
  return encode(config, make_constants(params), ad::Var::constant(batch)).value();
}

ad::Var student_logits(const EncoderConfig& config, const VarMap& params, const ad::Var& batch) {
  const ad::Var features = encode(config, params, batch);
  ad::Var logits = ad::matmul(features, lookup(params, "head.weight"));
  logits = ad::add(logits, ad::expand_channels(lookup(params, "head.bias"), logits.shape()));
  return ad::reshape(logits, Shape{logits.shape()[0]});
}

std::vector<double> predict(const StudentModel& student, const Tensor& batch) {
  ad::NoGradGuard no_grad;
  const ad::Var probs = ad::sigmoid(
      student_logits(student.config, make_constants(student.params), ad::Var::constant(batch)));
  const auto data = probs.value().data();
  return {data.begin(), data.end()};
}

StudentModel init_student(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  StudentModel model{config, {}};
  std::size_t channels = config.input_channels;
  for (std::size_t i = 0; i < config.block_widths.size(); ++i) {
    const std::size_t width = config.block_widths[i];
    model.params.insert(block_name(i, "weight"),
                        he_normal({width, channels, kKernel, kKernel},
                                  channels * kKernel * kKernel, rng));
    model.params.insert(block_name(i, "bias"), Tensor(Shape{width}));
    channels = width;
  }
  model.params.insert("encoder.proj.weight",
                      he_normal({channels, config.feature_dim}, channels, rng));
  model.params.insert("encoder.proj.bias", Tensor(Shape{config.feature_dim}));
  model.params.insert("head.weight", he_normal({config.feature_dim, 1}, config.feature_dim, rng));
  model.params.insert("head.bias", Tensor(Shape{1}));
  return model;
}

TeacherModel init_teacher_from_baseline(const StudentModel& baseline, std::size_t mask_channels) {
  baseline.config.validate();
  if (baseline.config.block_widths.empty() && mask_channels != 0) {
    throw ShapeError("teacher initialization needs at least one convolution block");
  }
  TeacherModel teacher{baseline.config, {}};
  teacher.config.input_channels = baseline.config.input_channels + mask_channels;
  for (const auto& [name, value] : baseline.params) {
    if (name.rfind("encoder.", 0) != 0) continue;
    if (name != block_name(0, "weight") || mask_channels == 0) {
      teacher.params.insert(name, value);
      continue;
    }
    const Shape& s = value.shape();
    if (s.size() != 4 || s[1] != baseline.config.input_channels) {
      throw ShapeError("baseline first-layer weight has incompatible shape " + to_string(s));
    }
    const std::size_t kernel = s[2] * s[3];
    const std::size_t in_old = s[1];
    const std::size_t in_new = in_old + mask_channels;
    Tensor widened(Shape{s[0], in_new, s[2], s[3]});
    for (std::size_t o = 0; o < s[0]; ++o) {
      std::copy_n(value.raw() + o * in_old * kernel, in_old * kernel,
                  widened.raw() + o * in_new * kernel);
    }
    teacher.params.insert(name, std::move(widened));
  }
  return teacher;
}

ConvArchitecture::ConvArchitecture(EncoderConfig student, EncoderConfig teacher)
    : student_(std::move(student)), teacher_(std::move(teacher)) {
  student_.validate();
  teacher_.validate();
}

ad::Var ConvArchitecture::student_features(const VarMap& student, const ad::Var& inputs) const {
  return encode(student_, student, inputs);
}

ad::Var ConvArchitecture::student_logits(const VarMap& student, const ad::Var& inputs) const {
  return l2tkt::student_logits(student_, student, inputs);
}

ad::Var ConvArchitecture::teacher_features(const VarMap& teacher, const ad::Var& inputs) const {
  return encode(teacher_, teacher, inputs);
}

}  // namespace l2tkt
