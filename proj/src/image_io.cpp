#include "waveden/image_io.hpp"

#include <png.h>

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>

namespace waveden {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

bool has_suffix(const std::string& s, const char* suffix) {
  const size_t n = std::strlen(suffix);
  return s.size() >= n && s.compare(s.size() - n, n, suffix) == 0;
}

Image read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("read_image: cannot open " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_image: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_image: failed to decode " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int64_t w = png_get_image_width(png, info);
  const int64_t h = png_get_image_height(png, info);
  if (png_get_channels(png, info) != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_image: unsupported channel layout in " + path);
  }

  std::vector<png_byte> row(size_t(w) * 3);
  Image img = make_image(h, w);
  for (int64_t y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c)
        img.at(c, y, x) = float(row[size_t(x * 3 + c)]) / 255.0f;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const std::string& path, const Image& img) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("write_image: cannot open " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_image: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_image: failed to encode " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, png_uint_32(img.width), png_uint_32(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<png_byte> row(size_t(img.width) * 3);
  for (int64_t y = 0; y < img.height; ++y) {
    for (int64_t x = 0; x < img.width; ++x)
      for (int64_t c = 0; c < 3; ++c) {
        const float v = std::fmin(1.0f, std::fmax(0.0f, img.at(c, y, x)));
        row[size_t(x * 3 + c)] = png_byte(std::lround(v * 255.0f));
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_image: cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5") throw std::runtime_error("read_image: " + path + " is not binary PGM");
  auto next_int = [&]() {
    // skip whitespace and '#' comment lines
    int ch;
    while ((ch = in.peek()) != EOF) {
      if (std::isspace(ch)) {
        in.get();
      } else if (ch == '#') {
        std::string line;
        std::getline(in, line);
      } else {
        break;
      }
    }
    long v = -1;
    in >> v;
    return v;
  };
  const long w = next_int(), h = next_int(), maxval = next_int();
  if (w <= 0 || h <= 0 || maxval != 255)
    throw std::runtime_error("read_image: unsupported PGM header in " + path);
  in.get();  // single whitespace after header
  auto buf = std::vector<unsigned char>(size_t(w) * size_t(h));
  in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
  if (!in) throw std::runtime_error("read_image: truncated PGM " + path);
  Image img = make_image(h, w);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const float v = float(buf[size_t(y * w + x)]) / 255.0f;
      for (int64_t c = 0; c < 3; ++c) img.at(c, y, x) = v;
    }
  return img;
}

void write_pgm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_image: cannot open " + path);
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  auto buf = std::vector<unsigned char>(size_t(img.width) * size_t(img.height));
  for (int64_t y = 0; y < img.height; ++y)
    for (int64_t x = 0; x < img.width; ++x) {
      const float luma = (img.at(0, y, x) + img.at(1, y, x) + img.at(2, y, x)) / 3.0f;
      const float v = std::fmin(1.0f, std::fmax(0.0f, luma));
      buf[size_t(y * img.width + x)] = (unsigned char)(std::lround(v * 255.0f));
    }
  out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
}

}  // namespace

Image read_image(const std::string& path) {
  if (has_suffix(path, ".pgm")) return read_pgm(path);
  if (has_suffix(path, ".png")) return read_png(path);
  throw std::runtime_error("read_image: unsupported extension on " + path);
}

void write_image(const std::string& path, const Image& img) {
  if (has_suffix(path, ".pgm")) return write_pgm(path, img);
  if (has_suffix(path, ".png")) return write_png(path, img);
  throw std::runtime_error("write_image: unsupported extension on " + path);
}

}  // namespace waveden
