#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iostream>
#include <string>

#include "depthfit/colormap_table.hpp"
#include "depthfit/tensor.hpp"

namespace depthfit {

// ---------------------------------------------------------------------------
// PPM (P6, maxval 255). Images are (1,3,H,W) doubles in [0,1].
// ---------------------------------------------------------------------------

inline void write_ppm(const std::string& path, const Tensor& image) {
  if (image.rank() != 4 || image.dim(0) != 1 || image.dim(1) != 3)
    throw std::invalid_argument("write_ppm: expects a (1,3,H,W) tensor");
  const int h = image.dim(2), w = image.dim(3);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("write_ppm: cannot open " + path);
  f << "P6\n" << w << " " << h << "\n255\n";
  const double* d = image.values->data();
  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = d[static_cast<long long>(c) * h * w + y * w + x];
        v = std::min(std::max(v, 0.0), 1.0);
        row[static_cast<size_t>(x * 3 + c)] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw std::runtime_error("write_ppm: write failed: " + path);
}

namespace detail {

// Reads one whitespace/comment-delimited token from a PNM header.
inline std::string pnm_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) throw std::runtime_error("malformed header: unexpected end of file");
  return tok;
}

}  // namespace detail

inline Tensor read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_ppm: cannot open " + path);
  std::string magic = detail::pnm_token(f);
  if (magic != "P6") throw std::runtime_error("read_ppm: bad magic in " + path);
  int w = std::stoi(detail::pnm_token(f));
  int h = std::stoi(detail::pnm_token(f));
  int maxval = std::stoi(detail::pnm_token(f));
  if (maxval != 255) throw std::runtime_error("read_ppm: unsupported maxval (want 255) in " + path);
  if (w < 1 || h < 1) throw std::runtime_error("read_ppm: bad dimensions in " + path);
  std::vector<unsigned char> bytes(static_cast<size_t>(w) * h * 3);
  f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (f.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw std::runtime_error("read_ppm: truncated payload in " + path);
  Tensor out = Tensor::zeros({1, 3, h, w});
  double* d = out.values->data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        d[static_cast<long long>(c) * h * w + y * w + x] = bytes[static_cast<size_t>((y * w + x) * 3 + c)] / 255.0;
  return out;
}

// ---------------------------------------------------------------------------
// PFM (Pf, single channel, f32). Scale -1.0 marks little-endian. Scanlines
// are stored bottom-to-top per the format. Depth maps are (1,1,H,W).
// ---------------------------------------------------------------------------

inline void write_pfm(const std::string& path, const Tensor& map) {
  if (map.rank() != 4 || map.dim(0) != 1 || map.dim(1) != 1)
    throw std::invalid_argument("write_pfm: expects a (1,1,H,W) tensor");
  const int h = map.dim(2), w = map.dim(3);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("write_pfm: cannot open " + path);
  f << "Pf\n" << w << " " << h << "\n-1.0\n";
  const double* d = map.values->data();
  std::vector<float> row(static_cast<size_t>(w));
  for (int y = h - 1; y >= 0; --y) {  // bottom-up
    for (int x = 0; x < w; ++x) row[static_cast<size_t>(x)] = static_cast<float>(d[y * w + x]);
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * 4));
  }
  if (!f) throw std::runtime_error("write_pfm: write failed: " + path);
}

inline Tensor read_pfm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_pfm: cannot open " + path);
  std::string magic = detail::pnm_token(f);
  if (magic != "Pf") throw std::runtime_error("read_pfm: bad magic (only single-channel Pf supported) in " + path);
  int w = std::stoi(detail::pnm_token(f));
  int h = std::stoi(detail::pnm_token(f));
  double scale = std::stod(detail::pnm_token(f));
  if (scale >= 0.0) throw std::runtime_error("read_pfm: big-endian PFM not supported in " + path);
  if (w < 1 || h < 1) throw std::runtime_error("read_pfm: bad dimensions in " + path);
  std::vector<float> data(static_cast<size_t>(w) * h);
  f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * 4));
  if (f.gcount() != static_cast<std::streamsize>(data.size() * 4))
    throw std::runtime_error("read_pfm: truncated payload in " + path);
  Tensor out = Tensor::zeros({1, 1, h, w});
  double* d = out.values->data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) d[y * w + x] = data[static_cast<size_t>((h - 1 - y) * w + x)];
  return out;
}

// ---------------------------------------------------------------------------
// false color: min-max normalize and map through the shipped colormap
// ---------------------------------------------------------------------------

inline Tensor false_color(const Tensor& map) {
  if (map.rank() != 4 || map.dim(0) != 1 || map.dim(1) != 1)
    throw std::invalid_argument("false_color: expects a (1,1,H,W) tensor");
  const int h = map.dim(2), w = map.dim(3);
  double lo = 1e300, hi = -1e300;
  for (double v : map.data()) {
    if (!std::isfinite(v) || v <= 0.0) throw std::invalid_argument("false_color: values must be positive finite");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (lo == hi) std::cerr << "false_color: constant input maps to a single color\n";
  Tensor out = Tensor::zeros({1, 3, h, w});
  double* d = out.values->data();
  const double* m = map.values->data();
  for (int i = 0; i < h * w; ++i) {
    int idx = 0;
    if (hi > lo) {
      double t = (m[i] - lo) / (hi - lo);
      idx = std::min(255, static_cast<int>(t * 256.0));
    }
    for (int c = 0; c < 3; ++c)
      d[static_cast<long long>(c) * h * w + i] = kColormap[static_cast<size_t>(idx)][static_cast<size_t>(c)] / 255.0;
  }
  return out;
}

}  // namespace depthfit
