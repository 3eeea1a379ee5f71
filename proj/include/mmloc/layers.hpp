#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "mmloc/image.hpp"

namespace mmloc {

struct ConvSpec {
  int in = 0;
  int out = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_extent(int extent) const { return (extent + 2 * pad - kernel) / stride + 1; }
  std::size_t weight_count() const {
    return static_cast<std::size_t>(out) * in * kernel * kernel;
  }
  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

inline ConvSpec conv3x3(int in, int out) { return {in, out, 3, 1, 1}; }
// 2x2 kernel with stride 2: a learned downsampler that halves the resolution.
inline ConvSpec down2x2(int in, int out) { return {in, out, 2, 2, 0}; }

namespace layers {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

// Output rows per im2col tile, bounding the scratch buffer to ~1M entries.
inline int tile_rows(const ConvSpec& s, int out_w) {
  const long per_row = static_cast<long>(s.in) * s.kernel * s.kernel * out_w;
  return static_cast<int>(std::max<long>(1, (1L << 20) / std::max<long>(1, per_row)));
}

inline void im2col(const Tensor& x, const ConvSpec& s, int out_w, int y0, int y1, RowMat& cols) {
  const int n = (y1 - y0) * out_w;
  cols.resize(static_cast<long>(s.in) * s.kernel * s.kernel, n);
  for (int ci = 0; ci < s.in; ++ci) {
    const double* src = x.channel(ci);
    for (int ky = 0; ky < s.kernel; ++ky) {
      for (int kx = 0; kx < s.kernel; ++kx) {
        double* row = cols.row((ci * s.kernel + ky) * s.kernel + kx).data();
        int col = 0;
        for (int oy = y0; oy < y1; ++oy) {
          const int iy = oy * s.stride - s.pad + ky;
          if (iy < 0 || iy >= x.h) {
            std::fill(row + col, row + col + out_w, 0.0);
            col += out_w;
            continue;
          }
          const double* srow = src + static_cast<std::size_t>(iy) * x.w;
          for (int ox = 0; ox < out_w; ++ox, ++col) {
            const int ix = ox * s.stride - s.pad + kx;
            row[col] = (ix >= 0 && ix < x.w) ? srow[ix] : 0.0;
          }
        }
      }
    }
  }
}

inline void col2im_add(const RowMat& cols, const ConvSpec& s, int out_w, int y0, int y1, Tensor& dx) {
  for (int ci = 0; ci < s.in; ++ci) {
    double* dst = dx.channel(ci);
    for (int ky = 0; ky < s.kernel; ++ky) {
      for (int kx = 0; kx < s.kernel; ++kx) {
        const double* row = cols.row((ci * s.kernel + ky) * s.kernel + kx).data();
        int col = 0;
        for (int oy = y0; oy < y1; ++oy) {
          const int iy = oy * s.stride - s.pad + ky;
          if (iy < 0 || iy >= dx.h) {
            col += out_w;
            continue;
          }
          double* drow = dst + static_cast<std::size_t>(iy) * dx.w;
          for (int ox = 0; ox < out_w; ++ox, ++col) {
            const int ix = ox * s.stride - s.pad + kx;
            if (ix >= 0 && ix < dx.w) drow[ix] += row[col];
          }
        }
      }
    }
  }
}

inline Tensor conv_forward(const Tensor& x, const ConvSpec& s, std::span<const double> weight,
                           std::span<const double> bias) {
  if (x.c != s.in) throw Error("conv_forward: channel mismatch");
  const int oh = s.out_extent(x.h);
  const int ow = s.out_extent(x.w);
  Tensor y(s.out, oh, ow);
  const long k = static_cast<long>(s.in) * s.kernel * s.kernel;
  Eigen::Map<const RowMat> wmat(weight.data(), s.out, k);
  Eigen::Map<const Eigen::VectorXd> b(bias.data(), s.out);
  RowMat cols;
  const int step = tile_rows(s, ow);
  for (int y0 = 0; y0 < oh; y0 += step) {
    const int y1 = std::min(oh, y0 + step);
    im2col(x, s, ow, y0, y1, cols);
    StridedMap out(y.data.data() + static_cast<std::size_t>(y0) * ow, s.out, cols.cols(),
                   Eigen::OuterStride<>(static_cast<long>(y.plane())));
    out.noalias() = wmat * cols;
    out.colwise() += b;
  }
  return y;
}

// Accumulates weight/bias gradients; returns dL/dx when want_dx is set.
inline Tensor conv_backward(const Tensor& x, const ConvSpec& s, std::span<const double> weight,
                            const Tensor& dy, std::span<double> dweight, std::span<double> dbias,
                            bool want_dx) {
  const int oh = dy.h;
  const int ow = dy.w;
  const long k = static_cast<long>(s.in) * s.kernel * s.kernel;
  Eigen::Map<const RowMat> wmat(weight.data(), s.out, k);
  Eigen::Map<RowMat> dw(dweight.data(), s.out, k);
  Eigen::Map<Eigen::VectorXd> db(dbias.data(), s.out);
  Tensor dx;
  if (want_dx) dx = Tensor(x.c, x.h, x.w);
  RowMat cols, dcols;
  const int step = tile_rows(s, ow);
  for (int y0 = 0; y0 < oh; y0 += step) {
    const int y1 = std::min(oh, y0 + step);
    im2col(x, s, ow, y0, y1, cols);
    ConstStridedMap g(dy.data.data() + static_cast<std::size_t>(y0) * ow, s.out, cols.cols(),
                      Eigen::OuterStride<>(static_cast<long>(dy.plane())));
    dw.noalias() += g * cols.transpose();
    db += g.rowwise().sum();
    if (want_dx) {
      dcols.noalias() = wmat.transpose() * g;
      col2im_add(dcols, s, ow, y0, y1, dx);
    }
  }
  return dx;
}

inline void relu_inplace(Tensor& x) {
  for (double& v : x.data) v = v > 0.0 ? v : 0.0;
}

// Gradient through a ReLU given its output.
inline void relu_backward_inplace(const Tensor& y, Tensor& dy) {
  for (std::size_t i = 0; i < dy.data.size(); ++i) {
    if (!(y.data[i] > 0.0)) dy.data[i] = 0.0;
  }
}

struct PoolResult {
  Tensor out;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
};

inline PoolResult maxpool2x2(const Tensor& x) {
  PoolResult r{Tensor(x.c, x.h / 2, x.w / 2), {}};
  r.argmax.resize(r.out.size());
  std::size_t o = 0;
  for (int ch = 0; ch < x.c; ++ch) {
    for (int oy = 0; oy < r.out.h; ++oy) {
      for (int ox = 0; ox < r.out.w; ++ox, ++o) {
        double best = -std::numeric_limits<double>::infinity();
        std::uint32_t arg = 0;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t idx =
                (static_cast<std::size_t>(ch) * x.h + 2 * oy + dy) * x.w + 2 * ox + dx;
            if (x.data[idx] > best) {
              best = x.data[idx];
              arg = static_cast<std::uint32_t>(idx);
            }
          }
        }
        r.out.data[o] = best;
        r.argmax[o] = arg;
      }
    }
  }
  return r;
}

inline Tensor maxpool2x2_backward(const Tensor& x_shape, const std::vector<std::uint32_t>& argmax,
                                  const Tensor& dy) {
  Tensor dx(x_shape.c, x_shape.h, x_shape.w);
  for (std::size_t o = 0; o < dy.data.size(); ++o) dx.data[argmax[o]] += dy.data[o];
  return dx;
}

// Mean across channels at every spatial position, row-major.
inline std::vector<double> channel_mean(const Tensor& x) {
  std::vector<double> m(x.plane(), 0.0);
  for (int ch = 0; ch < x.c; ++ch) {
    const double* p = x.channel(ch);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += p[i];
  }
  for (double& v : m) v /= x.c;
  return m;
}

inline Tensor channel_mean_backward(std::span<const double> dmean, int channels, int h, int w) {
  Tensor dx(channels, h, w);
  for (int ch = 0; ch < channels; ++ch) {
    double* p = dx.channel(ch);
    for (std::size_t i = 0; i < dmean.size(); ++i) p[i] = dmean[i] / channels;
  }
  return dx;
}

inline std::vector<double> softmax(std::span<const double> z) {
  const double mx = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - mx);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

// dL/dz from dL/dp for p = softmax(z).
inline std::vector<double> softmax_backward(std::span<const double> p, std::span<const double> dp) {
  double dot = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) dot += p[i] * dp[i];
  std::vector<double> dz(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) dz[i] = p[i] * (dp[i] - dot);
  return dz;
}

}  // namespace layers
}  // namespace mmloc
