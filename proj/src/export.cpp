#include "retrofit/export.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>

#include "retrofit/error.hpp"
#include "retrofit/tensor_file.hpp"

namespace retrofit {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

}  // namespace

std::pair<double, double> write_depth_png(const std::filesystem::path& path,
                                          const DenseMap& depth, const ValidityMask& mask) {
  if (depth.channels() != 1) throw InvalidArgument("PNG export needs a one-channel map");
  if (!mask.matches(depth)) throw InvalidArgument("mask and map dimensions differ");
  const int h = depth.height();
  const int w = depth.width();
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!mask.valid(r, c)) continue;
      lo = std::min(lo, depth.at(r, c));
      hi = std::max(hi, depth.at(r, c));
    }
  }
  if (!(lo <= hi)) lo = hi = 0.0;  // no valid pixel
  const double span = hi - lo;

  // Big-endian 16-bit rows as libpng expects.
  std::vector<png_byte> buf(static_cast<std::size_t>(h) * w * 2);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      std::uint16_t v = 0;
      if (mask.valid(r, c)) {
        v = span > 0.0 ? static_cast<std::uint16_t>(
                             std::lround((depth.at(r, c) - lo) / span * 65535.0))
                       : 32768;
      }
      const std::size_t o = (static_cast<std::size_t>(r) * w + c) * 2;
      buf[o] = static_cast<png_byte>(v >> 8);
      buf[o + 1] = static_cast<png_byte>(v & 0xff);
    }
  }

  FilePtr f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng failed writing " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 16,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int r = 0; r < h; ++r) {
    png_write_row(png, buf.data() + static_cast<std::size_t>(r) * w * 2);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);

  std::ofstream side(path.string() + ".range.txt");
  if (!side) throw IoError("cannot write range sidecar for " + path.string());
  side << std::setprecision(17) << "min=" << lo << "\nmax=" << hi << "\n";
  return {lo, hi};
}

std::vector<std::uint16_t> read_png16(const std::filesystem::path& path, int* height,
                                      int* width) {
  FilePtr f = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng failed reading " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  if (png_get_bit_depth(png, info) != 16 || png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path.string() + " is not a 16-bit grayscale PNG");
  }
  std::vector<png_byte> row(static_cast<std::size_t>(w) * 2);
  std::vector<std::uint16_t> out(static_cast<std::size_t>(h) * w);
  for (int r = 0; r < h; ++r) {
    png_read_row(png, row.data(), nullptr);
    for (int c = 0; c < w; ++c) {
      out[static_cast<std::size_t>(r) * w + c] =
          static_cast<std::uint16_t>((row[2 * c] << 8) | row[2 * c + 1]);
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  *height = h;
  *width = w;
  return out;
}

std::size_t write_pointmap_ply(const std::filesystem::path& path, const DenseMap& pointmap,
                               const ValidityMask& mask) {
  if (pointmap.channels() != 3) throw InvalidArgument("PLY export needs a 3-channel map");
  if (!mask.matches(pointmap)) throw InvalidArgument("mask and map dimensions differ");
  const std::size_t n = mask.count();
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "ply\nformat ascii 1.0\nelement vertex " << n
      << "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
  out << std::setprecision(17);
  for (int r = 0; r < pointmap.height(); ++r) {
    for (int c = 0; c < pointmap.width(); ++c) {
      if (!mask.valid(r, c)) continue;
      out << pointmap.at(r, c, 0) << ' ' << pointmap.at(r, c, 1) << ' ' << pointmap.at(r, c, 2)
          << '\n';
    }
  }
  if (!out) throw IoError("write failed for " + path.string());
  return n;
}

void export_outputs(const std::filesystem::path& dir, const std::string& stem,
                    const DenseMap& map, const ValidityMask& mask) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  if (map.kind() == MapKind::kPointmap) {
    write_pointmap_ply(dir / (stem + ".ply"), map, mask);
  } else if (map.channels() == 1) {
    write_depth_png(dir / (stem + ".png"), map, mask);
  }
  save_map(dir / (stem + ".rtft"), map);
}

}  // namespace retrofit
