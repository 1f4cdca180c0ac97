#include "l2tkt/png_io.hpp"

#include <png.h>

#include <cstring>

#include "l2tkt/error.hpp"

namespace l2tkt::png {

namespace {

png_uint_32 format_for(std::size_t channels) {
  if (channels == 1) return PNG_FORMAT_GRAY;
  if (channels == 3) return PNG_FORMAT_RGB;
  throw ValidationError("PNG I/O supports 1 or 3 channels, got " + std::to_string(channels));
}

}  // namespace

Image8 read(const std::filesystem::path& path, std::size_t channels) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!std::filesystem::exists(path)) throw IoError("missing image file " + path.string());
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw IoError("cannot decode image " + path.string() + ": " + image.message);
  }
  image.format = format_for(channels);
  Image8 out;
  out.width = image.width;
  out.height = image.height;
  out.channels = channels;
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string message = image.message;
    png_image_free(&image);
    throw IoError("cannot decode image " + path.string() + ": " + message);
  }
  return out;
}

void write(const std::filesystem::path& path, const Image8& img) {
  if (img.pixels.size() != img.width * img.height * img.channels) {
    throw ValidationError("PNG pixel buffer does not match its dimensions");
  }
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = format_for(img.channels);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr)) {
    throw IoError("cannot write image " + path.string() + ": " + image.message);
  }
}

}  // namespace l2tkt::png
