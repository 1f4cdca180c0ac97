#pragma once

// On-disk checkpoints: <stem>.json holds metadata and the tensor directory,
// <stem>.bin holds the tensors as little-endian IEEE-754 float32, row-major,
// concatenated in the order listed in the metadata.

#include <cstdint>
#include <filesystem>
#include <string>

#include "l2tkt/diffcore.hpp"
#include "l2tkt/models.hpp"

namespace l2tkt {

inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointMeta {
  std::string kind = "student";  // "student" or "teacher"
  EncoderConfig encoder;
  int epoch = 0;
  std::uint64_t seed = 0;
  bool centered = true;
  int format_version = kCheckpointFormatVersion;
};

struct Checkpoint {
  CheckpointMeta meta;
  ParamSet params;
};

// `stem` may carry a .json or .bin extension; it is stripped.
void save_checkpoint(const std::filesystem::path& stem, const CheckpointMeta& meta,
                     const ParamSet& params);
Checkpoint load_checkpoint(const std::filesystem::path& stem);

StudentModel load_student(const std::filesystem::path& stem);
void save_student(const std::filesystem::path& stem, const StudentModel& model, int epoch,
                  std::uint64_t seed, bool centered);

}  // namespace l2tkt
