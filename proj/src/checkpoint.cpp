#include "l2tkt/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <json.hpp>

#include "l2tkt/error.hpp"

namespace l2tkt {

namespace {

using nlohmann::json;

std::filesystem::path strip(const std::filesystem::path& stem) {
  std::filesystem::path p = stem;
  if (p.extension() == ".json" || p.extension() == ".bin") p.replace_extension();
  return p;
}

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  return std::filesystem::path(stem.string() + suffix);
}

json encoder_to_json(const EncoderConfig& c) {
  return {{"input_channels", c.input_channels},
          {"block_widths", c.block_widths},
          {"feature_dim", c.feature_dim},
          {"image_size", c.image_size}};
}

EncoderConfig encoder_from_json(const json& j) {
  EncoderConfig c;
  c.input_channels = j.at("input_channels").get<std::size_t>();
  c.block_widths = j.at("block_widths").get<std::vector<std::size_t>>();
  c.feature_dim = j.at("feature_dim").get<std::size_t>();
  c.image_size = j.at("image_size").get<std::size_t>();
  c.validate();
  return c;
}

void put_f32(std::ostream& out, double value) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(value));
  const char bytes[4] = {static_cast<char>(bits & 0xffu), static_cast<char>((bits >> 8) & 0xffu),
                         static_cast<char>((bits >> 16) & 0xffu),
                         static_cast<char>((bits >> 24) & 0xffu)};
  out.write(bytes, 4);
}

double get_f32(const unsigned char* p) {
  const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                             (static_cast<std::uint32_t>(p[1]) << 8) |
                             (static_cast<std::uint32_t>(p[2]) << 16) |
                             (static_cast<std::uint32_t>(p[3]) << 24);
  return static_cast<double>(std::bit_cast<float>(bits));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& stem_in, const CheckpointMeta& meta,
                     const ParamSet& params) {
  const std::filesystem::path stem = strip(stem_in);
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  const std::filesystem::path bin_path = with_suffix(stem, ".bin");

  json tensors = json::array();
  std::ofstream bin(bin_path, std::ios::binary | std::ios::trunc);
  if (!bin) throw IoError("cannot write checkpoint data " + bin_path.string());
  for (const auto& [name, t] : params) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}});
    for (double v : t.data()) put_f32(bin, v);
  }
  bin.close();
  if (!bin) throw IoError("failed writing " + bin_path.string());

  const json doc = {{"format_version", meta.format_version},
                    {"kind", meta.kind},
                    {"encoder", encoder_to_json(meta.encoder)},
                    {"epoch", meta.epoch},
                    {"seed", meta.seed},
                    {"centered", meta.centered},
                    {"dtype", "float32-le"},
                    {"data_file", bin_path.filename().string()},
                    {"tensors", tensors}};
  const std::filesystem::path json_path = with_suffix(stem, ".json");
  std::ofstream out(json_path, std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint metadata " + json_path.string());
  out << doc.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& stem_in) {
  const std::filesystem::path stem = strip(stem_in);
  const std::filesystem::path json_path = with_suffix(stem, ".json");
  std::ifstream in(json_path);
  if (!in) throw IoError("checkpoint metadata not found: " + json_path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("malformed checkpoint metadata " + json_path.string() + ": " + e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.meta.format_version = doc.at("format_version").get<int>();
    if (ckpt.meta.format_version != kCheckpointFormatVersion) {
      throw IoError("unsupported checkpoint format version " +
                    std::to_string(ckpt.meta.format_version));
    }
    ckpt.meta.kind = doc.at("kind").get<std::string>();
    ckpt.meta.encoder = encoder_from_json(doc.at("encoder"));
    ckpt.meta.epoch = doc.at("epoch").get<int>();
    ckpt.meta.seed = doc.at("seed").get<std::uint64_t>();
    ckpt.meta.centered = doc.at("centered").get<bool>();

    const std::filesystem::path bin_path =
        json_path.parent_path() / doc.at("data_file").get<std::string>();
    std::ifstream bin(bin_path, std::ios::binary);
    if (!bin) throw IoError("checkpoint data not found: " + bin_path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(bin)),
                                     std::istreambuf_iterator<char>());
    std::size_t offset = 0;
    for (const auto& entry : doc.at("tensors")) {
      Tensor t(entry.at("shape").get<Shape>());
      if (offset + 4 * t.size() > bytes.size()) {
        throw IoError("checkpoint data file " + bin_path.string() + " is truncated");
      }
      for (double& v : t.data()) {
        v = get_f32(bytes.data() + offset);
        offset += 4;
      }
      ckpt.params.insert(entry.at("name").get<std::string>(), std::move(t));
    }
    if (offset != bytes.size()) {
      throw IoError("checkpoint data file " + bin_path.string() + " has trailing bytes");
    }
  } catch (const json::exception& e) {
    throw IoError("malformed checkpoint metadata " + json_path.string() + ": " + e.what());
  }
  return ckpt;
}

StudentModel load_student(const std::filesystem::path& stem) {
  Checkpoint ckpt = load_checkpoint(stem);
  if (ckpt.meta.kind != "student") {
    throw ValidationError("checkpoint " + stem.string() + " holds a " + ckpt.meta.kind +
                          ", expected a student");
  }
  return {ckpt.meta.encoder, std::move(ckpt.params)};
}

void save_student(const std::filesystem::path& stem, const StudentModel& model, int epoch,
                  std::uint64_t seed, bool centered) {
  CheckpointMeta meta;
  meta.kind = "student";
  meta.encoder = model.config;
  meta.epoch = epoch;
  meta.seed = seed;
  meta.centered = centered;
  save_checkpoint(stem, meta, model.params);
}

}  // namespace l2tkt
