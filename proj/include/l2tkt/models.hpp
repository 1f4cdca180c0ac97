#pragma once

// Teacher and student networks. Both share one encoder layout: a stack of
// 3x3 stride-2 convolutions with ReLU, global average pooling, and a linear
// projection to feature_dim. The student adds a single-logit head; the
// teacher sees the image concatenated with its cup/disc mask channels.

#include <cstdint>
#include <vector>

#include "l2tkt/diffcore.hpp"

namespace l2tkt {

inline constexpr std::size_t kImageChannels = 3;
// One binary channel for the disc, one for the cup.
inline constexpr std::size_t kMaskChannels = 2;

struct EncoderConfig {
  std::size_t input_channels = kImageChannels;
  std::vector<std::size_t> block_widths{8, 16, 32};
  std::size_t feature_dim = 32;
  std::size_t image_size = 32;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

struct StudentModel {
  EncoderConfig config;
  ParamSet params;
};

struct TeacherModel {
  EncoderConfig config;
  ParamSet params;
};

// batch [n, input_channels, image_size, image_size] -> features [n, feature_dim].
// Reads the "encoder.*" entries of params.
ad::Var encode(const EncoderConfig& config, const VarMap& params, const ad::Var& batch);
Tensor encode(const EncoderConfig& config, const ParamSet& params, const Tensor& batch);

// Student logits, shape [n].
ad::Var student_logits(const EncoderConfig& config, const VarMap& params, const ad::Var& batch);

// Logistic probabilities, unclamped.
std::vector<double> predict(const StudentModel& student, const Tensor& batch);

// He-normal weights (std sqrt(2 / fan_in)), zero biases.
StudentModel init_student(const EncoderConfig& config, std::uint64_t seed);

// Copies the baseline encoder; the first convolution gains mask_channels
// extra input channels whose weights start at zero, so the teacher's initial
// features on (x, m) equal the baseline's features on x for every m.
TeacherModel init_teacher_from_baseline(const StudentModel& baseline,
                                        std::size_t mask_channels = kMaskChannels);

// The network functions the trainer differentiates. Implementations must be
// pure functions of (params, inputs).
class Architecture {
 public:
  virtual ~Architecture() = default;
  virtual ad::Var student_features(const VarMap& student, const ad::Var& inputs) const = 0;
  virtual ad::Var student_logits(const VarMap& student, const ad::Var& inputs) const = 0;
  virtual ad::Var teacher_features(const VarMap& teacher, const ad::Var& inputs) const = 0;
};

class ConvArchitecture final : public Architecture {
 public:
  ConvArchitecture(EncoderConfig student, EncoderConfig teacher);

  const EncoderConfig& student_config() const noexcept { return student_; }
  const EncoderConfig& teacher_config() const noexcept { return teacher_; }

  ad::Var student_features(const VarMap& student, const ad::Var& inputs) const override;
  ad::Var student_logits(const VarMap& student, const ad::Var& inputs) const override;
  ad::Var teacher_features(const VarMap& teacher, const ad::Var& inputs) const override;

 private:
  EncoderConfig student_;
  EncoderConfig teacher_;
};

}  // namespace l2tkt
