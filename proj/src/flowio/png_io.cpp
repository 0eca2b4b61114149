#include "hybridflow/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <string>

#include "hybridflow/error.hpp"

namespace hybridflow {

namespace {

struct MemoryReader {
  std::span<const std::uint8_t> bytes;
  std::size_t offset = 0;
};

void read_callback(png_structp png, png_bytep out, png_size_t length) {
  auto* reader = static_cast<MemoryReader*>(png_get_io_ptr(png));
  if (reader->offset + length > reader->bytes.size()) png_error(png, "unexpected end of PNG data");
  std::memcpy(out, reader->bytes.data() + reader->offset, length);
  reader->offset += length;
}

void write_callback(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

void flush_callback(png_structp) {}

void error_callback(png_structp png, png_const_charp message) {
  auto* text = static_cast<std::string*>(png_get_error_ptr(png));
  if (text) *text = message;
  png_longjmp(png, 1);
}

void warning_callback(png_structp, png_const_charp) {}

int color_type_for(int channels) {
  switch (channels) {
    case 1: return PNG_COLOR_TYPE_GRAY;
    case 3: return PNG_COLOR_TYPE_RGB;
    case 4: return PNG_COLOR_TYPE_RGB_ALPHA;
    default: throw Error(ErrorCode::WrongChannelCount, "unsupported PNG channel count " + std::to_string(channels));
  }
}

}  // namespace

std::vector<std::uint8_t> encode_png(const PngImage& image) {
  const int color_type = color_type_for(image.channels);
  if (image.bit_depth != 1 && image.bit_depth != 8 && image.bit_depth != 16) {
    throw Error(ErrorCode::WrongBitDepth, "unsupported PNG bit depth");
  }
  if (image.bit_depth == 1 && image.channels != 1) {
    throw Error(ErrorCode::WrongBitDepth, "1-bit PNG must be grayscale");
  }
  if (image.width < 1 || image.height < 1) throw Error(ErrorCode::NonPositiveDims, "empty PNG image");

  // Pack rows before entering setjmp territory so no C++ objects with
  // destructors are created between setjmp and a potential longjmp.
  const std::size_t row_samples = static_cast<std::size_t>(image.width) * image.channels;
  std::size_t row_bytes = 0;
  if (image.bit_depth == 1) row_bytes = (static_cast<std::size_t>(image.width) + 7) / 8;
  else row_bytes = row_samples * (image.bit_depth / 8);
  std::vector<std::uint8_t> packed(row_bytes * image.height, 0);
  for (int y = 0; y < image.height; ++y) {
    std::uint8_t* row = packed.data() + row_bytes * y;
    const std::uint16_t* src = image.samples.data() + row_samples * y;
    if (image.bit_depth == 1) {
      for (int x = 0; x < image.width; ++x) {
        if (src[x]) row[x / 8] |= static_cast<std::uint8_t>(0x80 >> (x % 8));
      }
    } else if (image.bit_depth == 8) {
      for (std::size_t i = 0; i < row_samples; ++i) row[i] = static_cast<std::uint8_t>(src[i]);
    } else {
      for (std::size_t i = 0; i < row_samples; ++i) {
        row[2 * i] = static_cast<std::uint8_t>(src[i] >> 8);
        row[2 * i + 1] = static_cast<std::uint8_t>(src[i] & 0xff);
      }
    }
  }
  std::vector<png_bytep> rows(image.height);
  for (int y = 0; y < image.height; ++y) rows[y] = packed.data() + row_bytes * y;

  std::vector<std::uint8_t> out;
  std::string message;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, error_callback, warning_callback);
  if (!png) throw Error(ErrorCode::IoError, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::IoError, "PNG encode failed: " + message);
  }
  png_set_write_fn(png, &out, write_callback, flush_callback);
  png_set_IHDR(png, info, image.width, image.height, image.bit_depth, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

PngImage decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    throw Error(ErrorCode::CorruptFile, "not a PNG stream");
  }
  MemoryReader reader{bytes, 0};
  std::string message;
  PngImage image;
  std::vector<std::uint8_t> packed;
  std::vector<png_bytep> rows;

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, error_callback, warning_callback);
  if (!png) throw Error(ErrorCode::IoError, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::CorruptFile, "PNG decode failed: " + message);
  }
  png_set_read_fn(png, &reader, read_callback);
  png_read_info(png, info);

  png_uint_32 width = 0, height = 0;
  int bit_depth = 0, color_type = 0;
  png_get_IHDR(png, info, &width, &height, &bit_depth, &color_type, nullptr, nullptr, nullptr);
  if (color_type == PNG_COLOR_TYPE_PALETTE) {
    png_set_palette_to_rgb(png);
    bit_depth = 8;
  }
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8 && bit_depth != 1) {
    png_set_expand_gray_1_2_4_to_8(png);
    bit_depth = 8;
  }
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_read_update_info(png, info);

  image.width = static_cast<int>(width);
  image.height = static_cast<int>(height);
  image.channels = png_get_channels(png, info);
  image.bit_depth = png_get_bit_depth(png, info);
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  packed.resize(row_bytes * height);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = packed.data() + row_bytes * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t row_samples = static_cast<std::size_t>(image.width) * image.channels;
  image.samples.resize(row_samples * image.height);
  for (int y = 0; y < image.height; ++y) {
    const std::uint8_t* row = packed.data() + row_bytes * y;
    std::uint16_t* dst = image.samples.data() + row_samples * y;
    if (image.bit_depth == 1) {
      for (int x = 0; x < image.width; ++x) dst[x] = (row[x / 8] >> (7 - x % 8)) & 1;
    } else if (image.bit_depth == 8) {
      for (std::size_t i = 0; i < row_samples; ++i) dst[i] = row[i];
    } else {
      for (std::size_t i = 0; i < row_samples; ++i) {
        dst[i] = static_cast<std::uint16_t>((row[2 * i] << 8) | row[2 * i + 1]);
      }
    }
  }
  return image;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::IoError, "read failed for " + path.string());
  return bytes;
}

void write_file_bytes_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IoError, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IoError, "rename to " + path.string() + " failed: " + ec.message());
}

PngImage frame_to_png(const Frame& frame) {
  PngImage image;
  image.width = frame.width;
  image.height = frame.height;
  image.channels = 3;
  image.bit_depth = 8;
  image.samples.resize(frame.data.size());
  for (std::size_t i = 0; i < frame.data.size(); ++i) {
    image.samples[i] = static_cast<std::uint16_t>(std::lround(std::clamp(frame.data[i], 0.0f, 1.0f) * 255.0f));
  }
  return image;
}

Frame frame_from_png(const PngImage& image) {
  if (image.bit_depth != 8) throw Error(ErrorCode::WrongBitDepth, "frames must be 8-bit PNG");
  if (image.channels != 3 && image.channels != 4) {
    throw Error(ErrorCode::WrongChannelCount, "frames must be RGB");
  }
  Frame frame(image.width, image.height);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) frame.at(x, y, c) = static_cast<float>(image.at(x, y, c)) / 255.0f;
    }
  }
  return frame;
}

void write_frame_png(const std::filesystem::path& path, const Frame& frame) {
  write_file_bytes_atomic(path, encode_png(frame_to_png(frame)));
}

Frame read_frame_png(const std::filesystem::path& path) {
  return frame_from_png(decode_png(read_file_bytes(path)));
}

void write_mask_png(const std::filesystem::path& path, const Mask& mask) {
  PngImage image;
  image.width = mask.width;
  image.height = mask.height;
  image.channels = 1;
  image.bit_depth = 1;
  image.samples.assign(mask.bits.begin(), mask.bits.end());
  write_file_bytes_atomic(path, encode_png(image));
}

Mask read_mask_png(const std::filesystem::path& path) {
  const PngImage image = decode_png(read_file_bytes(path));
  if (image.channels != 1) throw Error(ErrorCode::WrongChannelCount, "mask PNG must be grayscale");
  Mask mask(image.width, image.height);
  for (std::size_t i = 0; i < mask.bits.size(); ++i) mask.bits[i] = image.samples[i] ? 1 : 0;
  return mask;
}

}  // namespace hybridflow
