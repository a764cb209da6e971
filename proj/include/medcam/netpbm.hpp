#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "medcam/errors.hpp"
#include "medcam/tensor.hpp"

namespace medcam {

// Binary NetPBM: P6 (color) and P5 (grayscale), 8-bit, maxval 255.
// Values are quantized with round-to-nearest; a write/read round trip
// changes each channel by at most 1/255.

namespace pnm_detail {

inline std::uint8_t quantize(double v) {
  if (v < 0.0) v = 0.0;
  if (v > 1.0) v = 1.0;
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

[[noreturn]] inline void fail(const std::string& what, std::streamoff offset) {
  throw FormatError("pnm: " + what + " at byte offset " + std::to_string(offset));
}

// Reads one whitespace-delimited header token, skipping '#' comments.
inline std::string read_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  if (tok.empty()) fail("unexpected end of header", in.tellg());
  return tok;
}

inline int parse_positive(const std::string& tok, std::istream& in, const char* name) {
  for (char c : tok) {
    if (c < '0' || c > '9') fail(std::string("invalid ") + name + " '" + tok + "'", in.tellg());
  }
  long v = 0;
  for (char c : tok) {
    v = v * 10 + (c - '0');
    if (v > 1000000) fail(std::string(name) + " out of range", in.tellg());
  }
  if (v <= 0) fail(std::string(name) + " must be positive", in.tellg());
  return static_cast<int>(v);
}

struct Header {
  std::string magic;
  int width, height, maxval;
};

inline Header read_header(std::istream& in, const char* expected_magic) {
  const std::string magic = read_token(in);
  if (magic != expected_magic) {
    fail("expected magic '" + std::string(expected_magic) + "', found '" + magic + "'", 0);
  }
  Header h;
  h.magic = magic;
  h.width = parse_positive(read_token(in), in, "width");
  h.height = parse_positive(read_token(in), in, "height");
  h.maxval = parse_positive(read_token(in), in, "maxval");
  if (h.maxval != 255) fail("only maxval 255 is supported", in.tellg());
  return h;
}

inline std::vector<std::uint8_t> read_payload(std::istream& in, std::size_t n) {
  std::vector<std::uint8_t> bytes(n);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    fail("truncated payload, expected " + std::to_string(n) + " bytes",
         static_cast<std::streamoff>(in.gcount()));
  }
  return bytes;
}

}  // namespace pnm_detail

/// Writes a [3,H,W] (or [1,3,H,W]) tensor with values in [0,1] as binary P6.
inline void write_ppm(std::ostream& out, const Tensor& image) {
  Tensor img = image.ndim() == 4 && image.dim(0) == 1
                   ? image.with_shape({image.dim(1), image.dim(2), image.dim(3)})
                   : image;
  if (img.ndim() != 3 || img.dim(0) != 3) {
    throw DimensionError("write_ppm: expects [3,H,W]");
  }
  const int h = img.dim(1), w = img.dim(2);
  out << "P6\n" << w << " " << h << "\n255\n";
  const double* d = img.data();
  const long long plane = static_cast<long long>(h) * w;
  std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        row[static_cast<std::size_t>(x) * 3 + c] =
            pnm_detail::quantize(d[c * plane + static_cast<long long>(y) * w + x]);
      }
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
}

inline void write_ppm(const std::string& path, const Tensor& image) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_ppm: cannot open '" + path + "'");
  write_ppm(f, image);
  if (!f) throw IoError("write_ppm: write failed for '" + path + "'");
}

/// Reads binary P6 into a [3,H,W] tensor with values in [0,1].
inline Tensor read_ppm(std::istream& in) {
  const auto h = pnm_detail::read_header(in, "P6");
  const auto bytes = pnm_detail::read_payload(
      in, static_cast<std::size_t>(h.width) * h.height * 3);
  Tensor img = Tensor::zeros({3, h.height, h.width});
  double* d = img.data();
  const long long plane = static_cast<long long>(h.height) * h.width;
  for (int y = 0; y < h.height; ++y) {
    for (int x = 0; x < h.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        d[c * plane + static_cast<long long>(y) * h.width + x] =
            bytes[(static_cast<std::size_t>(y) * h.width + x) * 3 + c] / 255.0;
      }
    }
  }
  return img;
}

inline Tensor read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_ppm: cannot open '" + path + "'");
  return read_ppm(f);
}

/// Writes a grayscale H*W buffer with values in [0,1] as binary P5.
inline void write_pgm(std::ostream& out, const std::vector<double>& values,
                      int width, int height) {
  if (static_cast<long long>(values.size()) !=
      static_cast<long long>(width) * height) {
    throw DimensionError("write_pgm: buffer size does not match dimensions");
  }
  out << "P5\n" << width << " " << height << "\n255\n";
  std::vector<std::uint8_t> row(static_cast<std::size_t>(width));
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      row[static_cast<std::size_t>(x)] =
          pnm_detail::quantize(values[static_cast<std::size_t>(y) * width + x]);
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
}

inline void write_pgm(const std::string& path, const std::vector<double>& values,
                      int width, int height) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_pgm: cannot open '" + path + "'");
  write_pgm(f, values, width, height);
  if (!f) throw IoError("write_pgm: write failed for '" + path + "'");
}

struct GrayImage {
  std::vector<double> values;  // row-major, [0,1]
  int width = 0;
  int height = 0;
};

/// Reads binary P5 into a row-major buffer of [0,1] values.
inline GrayImage read_pgm(std::istream& in) {
  const auto h = pnm_detail::read_header(in, "P5");
  const auto bytes =
      pnm_detail::read_payload(in, static_cast<std::size_t>(h.width) * h.height);
  GrayImage img;
  img.width = h.width;
  img.height = h.height;
  img.values.resize(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) img.values[i] = bytes[i] / 255.0;
  return img;
}

inline GrayImage read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_pgm: cannot open '" + path + "'");
  return read_pgm(f);
}

}  // namespace medcam
