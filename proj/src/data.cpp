#include "l2tkt/data.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <functional>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "l2tkt/error.hpp"
#include "l2tkt/png_io.hpp"

namespace l2tkt {

double compute_vcdr(const Mask& mask) {
  if (mask.codes.size() != mask.height * mask.width) {
    throw ShapeError("mask buffer does not match its dimensions");
  }
  std::optional<std::size_t> disc_top, disc_bottom, cup_top, cup_bottom;
  for (std::size_t y = 0; y < mask.height; ++y) {
    for (std::size_t x = 0; x < mask.width; ++x) {
      const std::uint8_t code = mask.codes[y * mask.width + x];
      if (code >= kDisc) {
        if (!disc_top) disc_top = y;
        disc_bottom = y;
      }
      if (code == kCup) {
        if (!cup_top) cup_top = y;
        cup_bottom = y;
      }
    }
  }
  if (!disc_top) throw DegenerateInputError("CDR is undefined for a mask without disc pixels");
  if (!cup_top) return 0.0;
  return static_cast<double>(*cup_bottom - *cup_top + 1) /
         static_cast<double>(*disc_bottom - *disc_top + 1);
}

// ---------------------------------------------------------------------------
// Synthetic generator

namespace {

struct Ellipse {
  double cx, cy, rx, ry;
  bool contains(std::size_t x, std::size_t y) const {
    const double dx = (static_cast<double>(x) + 0.5 - cx) / rx;
    const double dy = (static_cast<double>(y) + 0.5 - cy) / ry;
    return dx * dx + dy * dy <= 1.0;
  }
};

double quantize(double v) {
  return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
}

struct Fundus {
  Tensor image;
  Mask mask;
  double target_cdr;
};

// The disc's vertical radius is R + 0.5 and its centre sits on a pixel
// centre, so the disc spans exactly 2R + 1 rows and the rasterized CDR is
// within one row of the target.
Fundus draw_fundus(std::size_t size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  const double s = static_cast<double>(size);

  const auto r_min = static_cast<long>(std::lround(0.16 * s));
  const auto r_max = static_cast<long>(std::lround(0.26 * s));
  const long radius_rows = std::uniform_int_distribution<long>(r_min, r_max)(rng);
  const auto jitter = static_cast<long>(std::lround(0.1 * s));
  const long half = static_cast<long>(size) / 2;
  const long cy_pixel = std::uniform_int_distribution<long>(half - jitter, half + jitter - 1)(rng);
  const long cx_pixel = std::uniform_int_distribution<long>(half - jitter, half + jitter - 1)(rng);

  Ellipse disc;
  disc.cy = static_cast<double>(cy_pixel) + 0.5;
  disc.cx = static_cast<double>(cx_pixel) + 0.5;
  disc.ry = static_cast<double>(radius_rows) + 0.5;
  disc.rx = disc.ry * uniform(0.85, 1.0);

  const double cdr = uniform(0.2, 0.95);
  Ellipse cup = disc;
  cup.ry = cdr * disc.ry;
  cup.rx = cdr * disc.rx * uniform(0.85, 1.0);

  const double illumination = uniform(0.75, 1.15);
  const std::array<double, 3> background{0.55 * illumination, 0.25 * illumination,
                                         0.12 * illumination};
  const double disc_gain = uniform(0.6, 1.0);
  const std::array<double, 3> disc_add{0.30 * disc_gain, 0.28 * disc_gain, 0.18 * disc_gain};
  const double cup_gain = uniform(0.5, 1.0);
  const std::array<double, 3> cup_add{0.12 * cup_gain, 0.14 * cup_gain, 0.12 * cup_gain};
  std::normal_distribution<double> noise(0.0, 0.05);

  Fundus f{Tensor(Shape{3, size, size}), Mask{size, size, std::vector<std::uint8_t>(size * size)},
           cdr};
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const bool in_disc = disc.contains(x, y);
      const bool in_cup = in_disc && cup.contains(x, y);
      f.mask.codes[y * size + x] = in_cup ? kCup : (in_disc ? kDisc : kBackground);
      // Radial fall-off towards the image border.
      const double dx = (static_cast<double>(x) + 0.5) / s - 0.5;
      const double dy = (static_cast<double>(y) + 0.5) / s - 0.5;
      const double vignette = 1.0 - 0.6 * (dx * dx + dy * dy);
      for (std::size_t c = 0; c < 3; ++c) {
        double v = background[c] * vignette;
        if (in_disc) v += disc_add[c];
        if (in_cup) v += cup_add[c];
        f.image[(c * size + y) * size + x] = quantize(v + noise(rng));
      }
    }
  }
  return f;
}

double pixel_sum(const Tensor& t) {
  return std::accumulate(t.data().begin(), t.data().end(), 0.0);
}

}  // namespace

SynthDataset synth_generate(const SynthConfig& config) {
  if (config.image_size < kMinSynthImageSize) {
    throw ValidationError("image size " + std::to_string(config.image_size) +
                          " is below the minimum of " + std::to_string(kMinSynthImageSize) +
                          " needed for the smallest disc radius");
  }
  if (config.n_labeled < 1) throw ValidationError("synthetic dataset needs n >= 1");
  if (!(config.label_noise_rate >= 0.0 && config.label_noise_rate <= 1.0)) {
    throw ValidationError("label noise rate must lie in [0, 1]");
  }

  SynthDataset out;
  // Independent streams so the labeled set does not depend on n_auxiliary.
  std::seed_seq labeled_seq{config.seed, std::uint64_t{1}};
  std::seed_seq aux_seq{config.seed, std::uint64_t{2}};
  std::mt19937_64 labeled_rng(labeled_seq);
  std::mt19937_64 aux_rng(aux_seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (std::size_t i = 0; i < config.n_labeled; ++i) {
    Fundus f = draw_fundus(config.image_size, labeled_rng);
    SynthRecord rec;
    rec.id = static_cast<SampleId>(i);
    rec.target_cdr = f.target_cdr;
    rec.measured_cdr = compute_vcdr(f.mask);
    rec.clean_label = rec.measured_cdr > kGlaucomaCdrThreshold ? 1 : 0;
    const bool flip = unit(labeled_rng) < config.label_noise_rate;
    rec.label = flip ? 1 - rec.clean_label : rec.clean_label;
    rec.pixel_sum = pixel_sum(f.image);
    out.labeled.push_back({rec.id, std::move(f.image), rec.label});
    out.labeled_masks.push_back(std::move(f.mask));
    out.labeled_records.push_back(rec);
  }
  for (std::size_t i = 0; i < config.n_auxiliary; ++i) {
    Fundus f = draw_fundus(config.image_size, aux_rng);
    SynthRecord rec;
    rec.id = static_cast<SampleId>(i);
    rec.target_cdr = f.target_cdr;
    rec.measured_cdr = compute_vcdr(f.mask);
    rec.clean_label = rec.measured_cdr > kGlaucomaCdrThreshold ? 1 : 0;
    rec.label = rec.clean_label;
    rec.pixel_sum = pixel_sum(f.image);
    out.auxiliary.push_back({rec.id, std::move(f.image), std::move(f.mask)});
    out.auxiliary_records.push_back(rec);
  }
  return out;
}

// ---------------------------------------------------------------------------
// PNG helpers

void write_image_png(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("expected a [3,H,W] image, got " + to_string(image.shape()));
  }
  const std::size_t h = image.dim(1);
  const std::size_t w = image.dim(2);
  png::Image8 img{w, h, 3, std::vector<std::uint8_t>(3 * w * h)};
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(image[(c * h + y) * w + x], 0.0, 1.0);
        img.pixels[(y * w + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  png::write(path, img);
}

Tensor read_image_png(const std::filesystem::path& path) {
  const png::Image8 img = png::read(path, 3);
  Tensor t(Shape{3, img.height, img.width});
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        t[(c * img.height + y) * img.width + x] =
            static_cast<double>(img.pixels[(y * img.width + x) * 3 + c]) / 255.0;
      }
    }
  }
  return t;
}

void write_mask_png(const std::filesystem::path& path, const Mask& mask) {
  png::Image8 img{mask.width, mask.height, 1, std::vector<std::uint8_t>(mask.codes.size())};
  for (std::size_t i = 0; i < mask.codes.size(); ++i) {
    switch (mask.codes[i]) {
      case kBackground: img.pixels[i] = 0; break;
      case kDisc: img.pixels[i] = 128; break;
      case kCup: img.pixels[i] = 255; break;
      default: throw ValidationError("invalid mask code " + std::to_string(mask.codes[i]));
    }
  }
  png::write(path, img);
}

Mask read_mask_png(const std::filesystem::path& path) {
  const png::Image8 img = png::read(path, 1);
  Mask mask{img.height, img.width, std::vector<std::uint8_t>(img.pixels.size())};
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    switch (img.pixels[i]) {
      case 0: mask.codes[i] = kBackground; break;
      case 128: mask.codes[i] = kDisc; break;
      case 255: mask.codes[i] = kCup; break;
      default:
        throw ValidationError("unexpected mask value " + std::to_string(img.pixels[i]) +
                              " in " + path.string() + " (allowed: 0, 128, 255)");
    }
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Manifests

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  std::size_t start = 0;
  while (start < s.size() && s[start] == ' ') ++start;
  return s.substr(start);
}

}  // namespace

DatasetManifest read_manifest(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw IoError("manifest not found: " + csv_path.string());
  DatasetManifest manifest;
  manifest.root = csv_path.parent_path();
  manifest.split = csv_path.stem().string();

  std::string line;
  if (!std::getline(in, line) || trim(line) != "path,label,mask_path") {
    throw IoError("manifest " + csv_path.string() + " must start with header path,label,mask_path");
  }
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    line = trim(line);
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != 3) {
      throw IoError("manifest " + csv_path.string() + " row " + std::to_string(row) +
                    " has " + std::to_string(fields.size()) + " fields, expected 3");
    }
    ManifestEntry entry;
    entry.path = trim(fields[0]);
    if (entry.path.empty()) {
      throw IoError("manifest row " + std::to_string(row) + " has an empty image path");
    }
    const std::string label = trim(fields[1]);
    if (!label.empty()) {
      if (label != "0" && label != "1") {
        throw ValidationError("manifest row " + std::to_string(row) + " has label '" + label +
                              "' outside {0,1}");
      }
      entry.label = label == "1" ? 1 : 0;
    }
    const std::string mask = trim(fields[2]);
    if (!mask.empty()) entry.mask_path = mask;
    manifest.entries.push_back(std::move(entry));
  }
  return manifest;
}

void write_manifest(const std::filesystem::path& csv_path, const DatasetManifest& manifest) {
  if (csv_path.has_parent_path()) std::filesystem::create_directories(csv_path.parent_path());
  std::ofstream out(csv_path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + csv_path.string());
  out << "path,label,mask_path\n";
  for (const auto& e : manifest.entries) {
    if (e.path.find(',') != std::string::npos ||
        (e.mask_path && e.mask_path->find(',') != std::string::npos)) {
      throw ValidationError("manifest paths may not contain commas: " + e.path);
    }
    out << e.path << ',' << (e.label ? std::to_string(*e.label) : "") << ','
        << e.mask_path.value_or("") << '\n';
  }
  if (!out) throw IoError("failed writing manifest " + csv_path.string());
}

namespace {

// Runs fn(i) for i in [0, n) on up to `workers` threads. Results are written
// by index, so the outcome does not depend on scheduling; the error reported
// is the one from the lowest failing index.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// Cup pixels are coded as disc too, so a cup outside the disc shows up as a
// cup with no rim at all or a cup on the image border.
bool cup_escapes_disc(const Mask& mask) {
  bool has_rim = false;
  bool has_cup = false;
  bool cup_on_border = false;
  for (std::size_t y = 0; y < mask.height; ++y) {
    for (std::size_t x = 0; x < mask.width; ++x) {
      const std::uint8_t code = mask.codes[y * mask.width + x];
      has_rim |= code == kDisc;
      if (code != kCup) continue;
      has_cup = true;
      cup_on_border |= y == 0 || x == 0 || y + 1 == mask.height || x + 1 == mask.width;
    }
  }
  return has_cup && (!has_rim || cup_on_border);
}

}  // namespace

std::vector<LabeledSample> load_labeled_dataset(const DatasetManifest& manifest,
                                                std::size_t workers) {
  for (const auto& e : manifest.entries) {
    if (!e.label) throw ValidationError("labeled manifest entry " + e.path + " has no label");
  }
  std::vector<LabeledSample> out(manifest.entries.size());
  parallel_for(out.size(), workers, [&](std::size_t i) {
    const ManifestEntry& e = manifest.entries[i];
    out[i] = {static_cast<SampleId>(i), read_image_png(manifest.root / e.path), *e.label};
  });
  return out;
}

std::vector<MaskedSample> load_masked_dataset(const DatasetManifest& manifest,
                                              std::size_t workers) {
  for (const auto& e : manifest.entries) {
    if (!e.mask_path) {
      throw ValidationError("auxiliary manifest entry " + e.path + " has no mask");
    }
  }
  std::vector<MaskedSample> out(manifest.entries.size());
  std::vector<char> suspicious(out.size(), 0);
  parallel_for(out.size(), workers, [&](std::size_t i) {
    const ManifestEntry& e = manifest.entries[i];
    Tensor image = read_image_png(manifest.root / e.path);
    Mask mask = read_mask_png(manifest.root / *e.mask_path);
    if (mask.height != image.dim(1) || mask.width != image.dim(2)) {
      throw ShapeError("mask " + *e.mask_path + " is " + std::to_string(mask.height) + "x" +
                       std::to_string(mask.width) + " but image " + e.path + " is " +
                       std::to_string(image.dim(1)) + "x" + std::to_string(image.dim(2)));
    }
    suspicious[i] = cup_escapes_disc(mask);
    out[i] = {static_cast<SampleId>(i), std::move(image), std::move(mask)};
  });
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (suspicious[i]) {
      std::cerr << "warning: cup extends beyond disc in " << *manifest.entries[i].mask_path
                << '\n';
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits and tensor views

SplitSizes split_sizes(std::size_t n, std::array<double, 3> fractions) {
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ValidationError("split fractions must be >= 0");
  }
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9) {
    throw ValidationError("split fractions must sum to 1");
  }
  SplitSizes s;
  s.val = static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n)));
  s.test = static_cast<std::size_t>(std::llround(fractions[2] * static_cast<double>(n)));
  if (s.val + s.test >= n || s.val == 0 || s.test == 0) {
    throw ValidationError("dataset of " + std::to_string(n) +
                          " samples is too small for a nonempty train/val/test split");
  }
  s.train = n - s.val - s.test;
  return s;
}

template <typename Sample>
DataSplit<Sample> split(const std::vector<Sample>& dataset, std::array<double, 3> fractions,
                        std::uint64_t seed) {
  const SplitSizes sizes = split_sizes(dataset.size(), fractions);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  auto take = [&](std::size_t begin, std::size_t count) {
    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                 order.begin() + static_cast<std::ptrdiff_t>(begin + count));
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return dataset[a].id < dataset[b].id; });
    std::vector<Sample> part;
    part.reserve(count);
    for (std::size_t i : idx) part.push_back(dataset[i]);
    return part;
  };
  DataSplit<Sample> out;
  out.train = take(0, sizes.train);
  out.val = take(sizes.train, sizes.val);
  out.test = take(sizes.train + sizes.val, sizes.test);
  return out;
}

template DataSplit<LabeledSample> split(const std::vector<LabeledSample>&, std::array<double, 3>,
                                        std::uint64_t);
template DataSplit<MaskedSample> split(const std::vector<MaskedSample>&, std::array<double, 3>,
                                       std::uint64_t);

namespace {

Tensor stack_images(const std::vector<const Tensor*>& images, std::size_t extra_channels,
                    const std::vector<const Mask*>& masks) {
  if (images.empty()) return Tensor(Shape{0, 3 + extra_channels, 0, 0});
  const Shape& s = images.front()->shape();
  if (s.size() != 3 || s[0] != 3) {
    throw ShapeError("expected [3,H,W] images, got " + to_string(s));
  }
  const std::size_t h = s[1];
  const std::size_t w = s[2];
  const std::size_t channels = 3 + extra_channels;
  Tensor out(Shape{images.size(), channels, h, w});
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i]->shape() != s) {
      throw ShapeError("images differ in size: " + to_string(images[i]->shape()) + " vs " +
                       to_string(s));
    }
    double* dst = out.raw() + i * channels * h * w;
    std::copy(images[i]->data().begin(), images[i]->data().end(), dst);
    if (extra_channels == 0) continue;
    const Mask& m = *masks[i];
    for (std::size_t p = 0; p < h * w; ++p) {
      dst[3 * h * w + p] = m.codes[p] >= kDisc ? 1.0 : 0.0;
      dst[4 * h * w + p] = m.codes[p] == kCup ? 1.0 : 0.0;
    }
  }
  return out;
}

}  // namespace

LabeledSet to_labeled_set(std::span<const LabeledSample> samples) {
  LabeledSet set;
  std::vector<const Tensor*> images;
  for (const auto& s : samples) {
    images.push_back(&s.image);
    set.labels.push_back(s.label);
    set.ids.push_back(s.id);
  }
  set.inputs = stack_images(images, 0, {});
  return set;
}

AuxiliarySet to_auxiliary_set(std::span<const MaskedSample> samples) {
  AuxiliarySet set;
  std::vector<const Tensor*> images;
  std::vector<const Mask*> masks;
  for (const auto& s : samples) {
    images.push_back(&s.image);
    masks.push_back(&s.mask);
    set.ids.push_back(s.id);
  }
  set.student_inputs = stack_images(images, 0, {});
  set.teacher_inputs = stack_images(images, 2, masks);
  return set;
}

}  // namespace l2tkt
