#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace l2tkt::png {

struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> pixels;  // interleaved, row-major
};

// Decodes to 8-bit gray (channels == 1) or RGB (channels == 3).
Image8 read(const std::filesystem::path& path, std::size_t channels);
void write(const std::filesystem::path& path, const Image8& image);

}  // namespace l2tkt::png
