#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mmloc/core_types.hpp"

namespace mmloc {

// Planar channels x height x width array of doubles. Images are Tensors with
// three channels and intensities in [0, 1].
struct Tensor {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int channels, int height, int width, double fill = 0.0)
      : c(channels), h(height), w(width),
        data(static_cast<std::size_t>(channels) * height * width, fill) {}

  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t size() const { return data.size(); }

  double& at(int ch, int y, int x) {
    return data[(static_cast<std::size_t>(ch) * h + y) * w + x];
  }
  double at(int ch, int y, int x) const {
    return data[(static_cast<std::size_t>(ch) * h + y) * w + x];
  }
  double* channel(int ch) { return data.data() + ch * plane(); }
  const double* channel(int ch) const { return data.data() + ch * plane(); }

  bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
};

using Image = Tensor;

// Square window of the source, [x0, x0 + side) x [y0, y0 + side), resampled to
// out_side x out_side with bilinear interpolation. Samples outside the source
// replicate the nearest edge pixel.
inline Image sample_window(const Image& src, double x0, double y0, double side, int out_side) {
  if (src.c <= 0 || src.h <= 0 || src.w <= 0) throw Error("sample_window: empty source image");
  if (!(side > 0.0) || out_side <= 0) throw Error("sample_window: invalid window");
  Image out(src.c, out_side, out_side);
  const double scale = side / out_side;
  std::vector<int> xi0(out_side), xi1(out_side);
  std::vector<double> xf(out_side);
  for (int u = 0; u < out_side; ++u) {
    double sx = x0 + (u + 0.5) * scale - 0.5;
    sx = std::clamp(sx, 0.0, static_cast<double>(src.w - 1));
    xi0[u] = static_cast<int>(std::floor(sx));
    xi1[u] = std::min(xi0[u] + 1, src.w - 1);
    xf[u] = sx - xi0[u];
  }
  for (int v = 0; v < out_side; ++v) {
    double sy = y0 + (v + 0.5) * scale - 0.5;
    sy = std::clamp(sy, 0.0, static_cast<double>(src.h - 1));
    const int y0i = static_cast<int>(std::floor(sy));
    const int y1i = std::min(y0i + 1, src.h - 1);
    const double fy = sy - y0i;
    for (int ch = 0; ch < src.c; ++ch) {
      const double* r0 = src.channel(ch) + static_cast<std::size_t>(y0i) * src.w;
      const double* r1 = src.channel(ch) + static_cast<std::size_t>(y1i) * src.w;
      double* o = out.channel(ch) + static_cast<std::size_t>(v) * out_side;
      for (int u = 0; u < out_side; ++u) {
        const double top = r0[xi0[u]] + (r0[xi1[u]] - r0[xi0[u]]) * xf[u];
        const double bot = r1[xi0[u]] + (r1[xi1[u]] - r1[xi0[u]]) * xf[u];
        o[u] = top + (bot - top) * fy;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary PPM (P6, maxval 255) and PGM (P5) I/O.

namespace detail {

inline std::string next_pnm_token(std::istream& in) {
  std::string tok;
  char ch = 0;
  while (in.get(ch)) {
    if (ch == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(ch);
  }
  return tok;
}

}  // namespace detail

inline Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open image '" + path.string() + "'");
  const std::string magic = detail::next_pnm_token(in);
  if (magic != "P6" && magic != "P5") {
    throw Error("unsupported image format in '" + path.string() + "' (expected binary PPM/PGM)");
  }
  int width = 0, height = 0, maxval = 0;
  try {
    width = std::stoi(detail::next_pnm_token(in));
    height = std::stoi(detail::next_pnm_token(in));
    maxval = std::stoi(detail::next_pnm_token(in));
  } catch (const std::exception&) {
    throw Error("malformed header in '" + path.string() + "'");
  }
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255) {
    throw Error("unsupported header values in '" + path.string() + "'");
  }
  const int src_channels = magic == "P6" ? 3 : 1;
  std::vector<unsigned char> raw(static_cast<std::size_t>(width) * height * src_channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw Error("truncated pixel data in '" + path.string() + "'");
  }
  Image img(3, height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::size_t p = (static_cast<std::size_t>(y) * width + x) * src_channels;
      for (int ch = 0; ch < 3; ++ch) {
        const int sc = src_channels == 3 ? ch : 0;
        img.at(ch, y, x) = raw[p + sc] / static_cast<double>(maxval);
      }
    }
  }
  return img;
}

inline void write_ppm(const std::filesystem::path& path, const Image& img) {
  if (img.c != 3) throw Error("write_ppm: expected a 3-channel image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write image '" + path.string() + "'");
  out << "P6\n" << img.w << ' ' << img.h << "\n255\n";
  std::vector<unsigned char> raw(static_cast<std::size_t>(img.w) * img.h * 3);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      for (int ch = 0; ch < 3; ++ch) {
        const double v = std::clamp(img.at(ch, y, x), 0.0, 1.0);
        raw[(static_cast<std::size_t>(y) * img.w + x) * 3 + ch] =
            static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

}  // namespace mmloc
