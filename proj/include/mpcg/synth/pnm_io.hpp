#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mpcg/core/errors.hpp"
#include "mpcg/core/tensor.hpp"

namespace mpcg::synth {

namespace detail {

/// Reads the next header token, skipping whitespace and '#' comments.
inline std::string next_token(std::istream& is) {
  std::string tok;
  int c;
  while ((c = is.get()) != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = is.get();
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) {
    throw PnmError(PnmError::Kind::bad_header, "pnm: unexpected end of header");
  }
  return tok;
}

inline int parse_extent(const std::string& tok, const char* what) {
  try {
    const int v = std::stoi(tok);
    if (v <= 0) throw std::invalid_argument("nonpositive");
    return v;
  } catch (const std::exception&) {
    throw PnmError(PnmError::Kind::bad_header,
                   std::string("pnm: bad ") + what + " '" + tok + "'");
  }
}

inline std::uint8_t quantize(float v) {
  const float c = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

}  // namespace detail

/// Writes a (3,H,W) image in [0,1] as binary PPM (P6, maxval 255).
inline void write_ppm(const std::string& path, const Tensor& image) {
  if (image.n() != 1 || image.c() != 3) {
    throw ShapeError("write_ppm: expected (1,3,H,W), got " + image.shape().str());
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("write_ppm: cannot open " + path);
  os << "P6\n" << image.w() << " " << image.h() << "\n255\n";
  for (int y = 0; y < image.h(); ++y) {
    for (int x = 0; x < image.w(); ++x) {
      for (int c = 0; c < 3; ++c) {
        os.put(static_cast<char>(detail::quantize(image.at(0, c, y, x))));
      }
    }
  }
  if (!os) throw DataError("write_ppm: write failed: " + path);
}

/// Writes a (1,H,W) binary mask as binary PGM (P5), foreground 255.
inline void write_pgm(const std::string& path, const Tensor& mask) {
  if (mask.n() != 1 || mask.c() != 1) {
    throw ShapeError("write_pgm: expected (1,1,H,W), got " + mask.shape().str());
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("write_pgm: cannot open " + path);
  os << "P5\n" << mask.w() << " " << mask.h() << "\n255\n";
  for (std::int64_t i = 0; i < mask.numel(); ++i) {
    os.put(mask.data()[i] > 0.5f ? static_cast<char>(255) : static_cast<char>(0));
  }
  if (!os) throw DataError("write_pgm: write failed: " + path);
}

inline Tensor read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("read_ppm: cannot open " + path);
  const std::string magic = detail::next_token(is);
  if (magic != "P6") {
    throw PnmError(PnmError::Kind::bad_magic,
                   "read_ppm: expected P6, got " + magic);
  }
  const int w = detail::parse_extent(detail::next_token(is), "width");
  const int h = detail::parse_extent(detail::next_token(is), "height");
  const int maxval = detail::parse_extent(detail::next_token(is), "maxval");
  if (maxval != 255) {
    throw PnmError(PnmError::Kind::bad_header,
                   "read_ppm: expected maxval 255, got " + std::to_string(maxval));
  }
  std::vector<char> raw(static_cast<size_t>(w) * h * 3);
  is.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (is.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw PnmError(PnmError::Kind::truncated, "read_ppm: truncated payload in " + path);
  }
  Tensor image(Shape{1, 3, h, w});
  size_t i = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        image.at(0, c, y, x) =
            static_cast<float>(static_cast<std::uint8_t>(raw[i++])) / 255.0f;
      }
    }
  }
  return image;
}

inline Tensor read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("read_pgm: cannot open " + path);
  const std::string magic = detail::next_token(is);
  if (magic != "P5") {
    throw PnmError(PnmError::Kind::bad_magic,
                   "read_pgm: expected P5, got " + magic);
  }
  const int w = detail::parse_extent(detail::next_token(is), "width");
  const int h = detail::parse_extent(detail::next_token(is), "height");
  const int maxval = detail::parse_extent(detail::next_token(is), "maxval");
  if (maxval != 255) {
    throw PnmError(PnmError::Kind::bad_header,
                   "read_pgm: expected maxval 255, got " + std::to_string(maxval));
  }
  std::vector<char> raw(static_cast<size_t>(w) * h);
  is.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (is.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw PnmError(PnmError::Kind::truncated, "read_pgm: truncated payload in " + path);
  }
  Tensor mask(Shape{1, 1, h, w});
  for (std::int64_t i = 0; i < mask.numel(); ++i) {
    mask.data()[i] = static_cast<std::uint8_t>(raw[static_cast<size_t>(i)]) >= 128
                         ? 1.0f
                         : 0.0f;
  }
  return mask;
}

}  // namespace mpcg::synth
