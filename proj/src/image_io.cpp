#include "visionsim/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include "visionsim/blur.hpp"
#include "visionsim/error.hpp"

namespace visionsim {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) {
    if (mode[0] == 'r' && !std::filesystem::exists(path)) {
      throw NotFoundError("file not found: " + path.string(), path.string());
    }
    throw IoError("cannot open " + path.string());
  }
  return f;
}

[[noreturn]] void png_fail(png_structp, png_const_charp message) { throw IoError(message); }
void png_warn(png_structp, png_const_charp) {}

/// Decoded PNG with samples widened to 16 bit.
struct RawPng {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  int bit_depth = 8;
  std::vector<std::uint16_t> samples;
};

RawPng decode_png(const std::filesystem::path& path) {
  FilePtr file = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  if (png == nullptr) throw IoError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};

  png_init_io(png, file.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (depth == 16 && std::endian::native == std::endian::little) png_set_swap(png);
  png_read_update_info(png, info);

  RawPng raw;
  raw.width = png_get_image_width(png, info);
  raw.height = png_get_image_height(png, info);
  raw.channels = png_get_channels(png, info);
  raw.bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  std::vector<png_byte> buffer(rowbytes * raw.height);
  std::vector<png_bytep> rows(raw.height);
  for (std::size_t y = 0; y < raw.height; ++y) rows[y] = buffer.data() + y * rowbytes;
  png_read_image(png, rows.data());

  const std::size_t count = raw.width * raw.height * raw.channels;
  raw.samples.resize(count);
  if (raw.bit_depth == 16) {
    for (std::size_t y = 0; y < raw.height; ++y) {
      std::memcpy(&raw.samples[y * raw.width * raw.channels], rows[y],
                  raw.width * raw.channels * sizeof(std::uint16_t));
    }
  } else {
    for (std::size_t y = 0; y < raw.height; ++y) {
      for (std::size_t i = 0; i < raw.width * raw.channels; ++i) {
        raw.samples[y * raw.width * raw.channels + i] = rows[y][i];
      }
    }
  }
  return raw;
}

void encode_rows(png_structp png, png_infop info, std::size_t width, std::size_t height,
                 int color_type, int bit_depth, std::vector<png_byte>& buffer) {
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
               bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16 && std::endian::native == std::endian::little) png_set_swap(png);
  const std::size_t rowbytes = buffer.size() / height;
  std::vector<png_bytep> rows(height);
  for (std::size_t y = 0; y < height; ++y) rows[y] = buffer.data() + y * rowbytes;
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
}

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

std::vector<png_byte> rgb_bytes(const RgbImage& image) {
  std::vector<png_byte> bytes(image.data().size());
  std::transform(image.data().begin(), image.data().end(), bytes.begin(), to_byte);
  return bytes;
}

void write_png_file(const std::filesystem::path& path, std::size_t width, std::size_t height,
                    int color_type, int bit_depth, std::vector<png_byte>& buffer) {
  FilePtr file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  if (png == nullptr) throw IoError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};
  png_init_io(png, file.get());
  encode_rows(png, info, width, height, color_type, bit_depth, buffer);
}

}  // namespace

RgbImage read_png(const std::filesystem::path& path) {
  const RawPng raw = decode_png(path);
  const float scale = raw.bit_depth == 16 ? 65535.0f : 255.0f;
  RgbImage image(raw.width, raw.height);
  for (std::size_t i = 0; i < raw.width * raw.height; ++i) {
    const std::uint16_t* px = &raw.samples[i * raw.channels];
    const bool gray = raw.channels < 3;
    for (std::size_t c = 0; c < 3; ++c) {
      image.data()[i * 3 + c] = static_cast<float>(gray ? px[0] : px[c]) / scale;
    }
  }
  return image;
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  auto bytes = rgb_bytes(image);
  write_png_file(path, image.width(), image.height(), PNG_COLOR_TYPE_RGB, 8, bytes);
}

std::vector<std::uint8_t> encode_png(const RgbImage& image) {
  auto bytes = rgb_bytes(image);
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  if (png == nullptr) throw IoError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};
  png_set_write_fn(
      png, &out,
      [](png_structp p, png_bytep data, png_size_t length) {
        auto* sink = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(p));
        sink->insert(sink->end(), data, data + length);
      },
      [](png_structp) {});
  encode_rows(png, info, image.width(), image.height(), PNG_COLOR_TYPE_RGB, 8, bytes);
  return out;
}

DepthMap read_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    if (!std::filesystem::exists(path)) {
      throw NotFoundError("file not found: " + path.string(), path.string());
    }
    throw IoError("cannot open " + path.string());
  }
  std::string magic;
  std::size_t width = 0;
  std::size_t height = 0;
  double scale = 0.0;
  in >> magic >> width >> height >> scale;
  in.get();
  if (!in || (magic != "Pf" && magic != "PF") || width == 0 || height == 0 || scale == 0.0) {
    throw ParseError("malformed PFM header in " + path.string(), 0);
  }
  const std::size_t channels = magic == "PF" ? 3 : 1;
  const bool little = scale < 0.0;
  std::vector<std::uint32_t> words(width * height * channels);
  in.read(reinterpret_cast<char*>(words.data()),
          static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t)));
  if (!in) throw ParseError("truncated PFM data in " + path.string(), 0);

  const bool swap = little != (std::endian::native == std::endian::little);
  DepthMap depth(width, height);
  for (std::size_t row = 0; row < height; ++row) {
    const std::size_t y = height - 1 - row;
    for (std::size_t x = 0; x < width; ++x) {
      std::uint32_t word = words[(row * width + x) * channels];
      if (swap) word = __builtin_bswap32(word);
      const float v = std::bit_cast<float>(word);
      depth.set(x, y, DepthMap::is_valid_depth(v) ? v : DepthMap::kInvalid);
    }
  }
  return depth;
}

namespace {

void write_pfm_values(const std::filesystem::path& path, std::size_t width, std::size_t height,
                      const std::function<float(std::size_t, std::size_t)>& value) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string());
  const double scale = std::endian::native == std::endian::little ? -1.0 : 1.0;
  out << "Pf\n" << width << ' ' << height << '\n' << (scale < 0 ? "-1.0" : "1.0") << '\n';
  std::vector<float> row(width);
  for (std::size_t r = 0; r < height; ++r) {
    const std::size_t y = height - 1 - r;
    for (std::size_t x = 0; x < width; ++x) row[x] = value(x, y);
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

void write_pfm(const std::filesystem::path& path, const DepthMap& depth) {
  write_pfm_values(path, depth.width(), depth.height(),
                   [&](std::size_t x, std::size_t y) { return depth.at(x, y); });
}

DepthMap read_depth_png16(const std::filesystem::path& path) {
  const RawPng raw = decode_png(path);
  if (raw.bit_depth != 16) {
    throw ValidationError("depth PNG must be 16-bit: " + path.string(), {path.string()});
  }
  DepthMap depth(raw.width, raw.height);
  for (std::size_t y = 0; y < raw.height; ++y) {
    for (std::size_t x = 0; x < raw.width; ++x) {
      const std::uint16_t mm = raw.samples[(y * raw.width + x) * raw.channels];
      depth.set(x, y, mm == 0 ? DepthMap::kInvalid : static_cast<float>(mm) / 1000.0f);
    }
  }
  return depth;
}

void write_depth_png16(const std::filesystem::path& path, const DepthMap& depth) {
  std::vector<png_byte> buffer(depth.width() * depth.height() * 2);
  auto* samples = reinterpret_cast<std::uint16_t*>(buffer.data());
  for (std::size_t y = 0; y < depth.height(); ++y) {
    for (std::size_t x = 0; x < depth.width(); ++x) {
      const float d = depth.at(x, y);
      const long mm = DepthMap::is_valid_depth(d) ? std::lround(d * 1000.0) : 0;
      samples[y * depth.width() + x] = static_cast<std::uint16_t>(std::clamp(mm, 0L, 65535L));
    }
  }
  write_png_file(path, depth.width(), depth.height(), PNG_COLOR_TYPE_GRAY, 16, buffer);
}

DepthMap read_depth(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw NotFoundError("file not found: " + path.string(), path.string());
  }
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (magic[0] == 'P' && (magic[1] == 'f' || magic[1] == 'F')) return read_pfm(path);
  return read_depth_png16(path);
}

void write_field_heatmap(const std::filesystem::path& path, const BlurField& field) {
  write_pfm_values(path, field.width(), field.height(),
                   [&](std::size_t x, std::size_t y) { return field.at(x, y).major; });
}

}  // namespace visionsim
