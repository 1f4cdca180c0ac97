#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "l2tkt/tensor.hpp"
#include "l2tkt/types.hpp"

namespace l2tkt {

enum MaskCode : std::uint8_t { kBackground = 0, kDisc = 1, kCup = 2 };

struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> codes;  // row-major MaskCode values

  bool operator==(const Mask&) const = default;
};

// Image tensors are [3, H, W] with values in [0, 1].
struct LabeledSample {
  SampleId id = 0;
  Tensor image;
  int label = 0;
};

struct MaskedSample {
  SampleId id = 0;
  Tensor image;
  Mask mask;
};

// Vertical cup-to-disc ratio from row extents. 0 when the cup is empty;
// DegenerateInputError when the disc is empty.
double compute_vcdr(const Mask& mask);

// --- synthetic fundus-like data -------------------------------------------

struct SynthConfig {
  std::size_t n_labeled = 2000;
  std::size_t n_auxiliary = 600;
  std::size_t image_size = 32;
  double label_noise_rate = 0.1;
  std::uint64_t seed = 0;
};

struct SynthRecord {
  SampleId id = 0;
  double target_cdr = 0.0;    // sampled vertical CDR
  double measured_cdr = 0.0;  // compute_vcdr of the rasterized mask
  int clean_label = 0;        // measured_cdr > 0.6
  int label = 0;              // clean_label after noise
  double pixel_sum = 0.0;
};

struct SynthDataset {
  std::vector<LabeledSample> labeled;
  std::vector<MaskedSample> auxiliary;
  std::vector<SynthRecord> labeled_records;
  std::vector<SynthRecord> auxiliary_records;
  // Masks of the labeled images; these are never handed to training.
  std::vector<Mask> labeled_masks;
};

inline constexpr double kGlaucomaCdrThreshold = 0.6;
inline constexpr std::size_t kMinSynthImageSize = 16;

// Each image: noisy background, a bright disc ellipse and a brighter
// concentric cup ellipse with vertical CDR drawn from [0.2, 0.95]. Pixel
// values are multiples of 1/255 so PNG round trips are exact.
SynthDataset synth_generate(const SynthConfig& config);

// --- manifests ------------------------------------------------------------

struct ManifestEntry {
  std::string path;
  std::optional<int> label;
  std::optional<std::string> mask_path;
};

// CSV with header "path,label,mask_path"; paths are relative to the manifest.
struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;
  std::string split;
};

DatasetManifest read_manifest(const std::filesystem::path& csv_path);
void write_manifest(const std::filesystem::path& csv_path, const DatasetManifest& manifest);

// Sample ids are manifest row indices; results are ordered by id and do not
// depend on the number of loader threads.
std::vector<LabeledSample> load_labeled_dataset(const DatasetManifest& manifest,
                                                std::size_t workers = 1);
// Mask files are 8-bit gray with values {0, 128, 255} -> codes {0, 1, 2}.
std::vector<MaskedSample> load_masked_dataset(const DatasetManifest& manifest,
                                              std::size_t workers = 1);

void write_image_png(const std::filesystem::path& path, const Tensor& image);
void write_mask_png(const std::filesystem::path& path, const Mask& mask);
Tensor read_image_png(const std::filesystem::path& path);
Mask read_mask_png(const std::filesystem::path& path);

// --- splits -----------------------------------------------------------------

struct SplitSizes {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

// val and test sizes are rounded fractions; the remainder goes to train.
SplitSizes split_sizes(std::size_t n, std::array<double, 3> fractions);

template <typename Sample>
struct DataSplit {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
};

// Random disjoint split; each part keeps ascending id order.
template <typename Sample>
DataSplit<Sample> split(const std::vector<Sample>& dataset,
                        std::array<double, 3> fractions, std::uint64_t seed);

// --- tensor views used by the trainer ---------------------------------------

struct LabeledSet {
  Tensor inputs;  // [N, C, H, W] (or any [N, ...])
  std::vector<int> labels;
  std::vector<SampleId> ids;

  std::size_t size() const noexcept { return ids.size(); }
};

struct AuxiliarySet {
  Tensor student_inputs;  // [M, 3, H, W]
  Tensor teacher_inputs;  // [M, 3 + mask channels, H, W]
  std::vector<SampleId> ids;

  std::size_t size() const noexcept { return ids.size(); }
};

LabeledSet to_labeled_set(std::span<const LabeledSample> samples);
// Teacher inputs append a binary disc channel and a binary cup channel.
AuxiliarySet to_auxiliary_set(std::span<const MaskedSample> samples);

}  // namespace l2tkt
