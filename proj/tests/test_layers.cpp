#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "mmloc/layers.hpp"

using namespace mmloc;

namespace {

Tensor random_tensor(int c, int h, int w, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Tensor t(c, h, w);
  for (double& v : t.data) v = g(rng);
  return t;
}

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 0.5);
  std::vector<double> v(n);
  for (double& x : v) x = g(rng);
  return v;
}

// Direct nested-loop convolution with zero padding.
Tensor naive_conv(const Tensor& x, const ConvSpec& s, const std::vector<double>& w,
                  const std::vector<double>& b) {
  const int oh = s.out_extent(x.h), ow = s.out_extent(x.w);
  Tensor y(s.out, oh, ow);
  for (int o = 0; o < s.out; ++o)
    for (int r = 0; r < oh; ++r)
      for (int c = 0; c < ow; ++c) {
        double acc = b[o];
        for (int i = 0; i < s.in; ++i)
          for (int ky = 0; ky < s.kernel; ++ky)
            for (int kx = 0; kx < s.kernel; ++kx) {
              const int yy = r * s.stride + ky - s.pad, xx = c * s.stride + kx - s.pad;
              if (yy < 0 || xx < 0 || yy >= x.h || xx >= x.w) continue;
              acc += w[((static_cast<std::size_t>(o) * s.in + i) * s.kernel + ky) * s.kernel + kx] *
                     x.at(i, yy, xx);
            }
        y.at(o, r, c) = acc;
      }
  return y;
}

}  // namespace

TEST(Conv, MatchesNaiveLoops) {
  std::mt19937_64 rng(1);
  for (const ConvSpec s : {conv3x3(3, 5), down2x2(4, 2), conv3x3(1, 1)}) {
    const auto x = random_tensor(s.in, 12, 10, rng);
    const auto w = random_vec(s.weight_count(), rng);
    const auto b = random_vec(s.out, rng);
    const auto y = layers::conv_forward(x, s, w, b);
    const auto ref = naive_conv(x, s, w, b);
    ASSERT_EQ(y.h, ref.h);
    ASSERT_EQ(y.w, ref.w);
    for (std::size_t i = 0; i < y.data.size(); ++i) EXPECT_NEAR(y.data[i], ref.data[i], 1e-12);
  }
}

TEST(Conv, LargeInputUsesTilesConsistently) {
  std::mt19937_64 rng(2);
  const ConvSpec s = conv3x3(3, 4);
  const auto x = random_tensor(3, 200, 200, rng);
  const auto w = random_vec(s.weight_count(), rng);
  const auto b = random_vec(s.out, rng);
  const auto y = layers::conv_forward(x, s, w, b);
  const auto ref = naive_conv(x, s, w, b);
  double worst = 0.0;
  for (std::size_t i = 0; i < y.data.size(); ++i) worst = std::max(worst, std::abs(y.data[i] - ref.data[i]));
  EXPECT_LT(worst, 1e-11);
}

TEST(Conv, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  for (const ConvSpec s : {conv3x3(2, 3), down2x2(3, 2)}) {
    auto x = random_tensor(s.in, 6, 6, rng);
    auto w = random_vec(s.weight_count(), rng);
    auto b = random_vec(s.out, rng);
    const auto probe = random_tensor(s.out, s.out_extent(6), s.out_extent(6), rng);
    auto objective = [&] {
      const auto y = layers::conv_forward(x, s, w, b);
      return std::inner_product(y.data.begin(), y.data.end(), probe.data.begin(), 0.0);
    };
    std::vector<double> dw(w.size(), 0.0), db(b.size(), 0.0);
    const auto dx = layers::conv_backward(x, s, w, probe, dw, db, true);
    const double h = 1e-6;
    auto fd = [&](double& v) {
      const double keep = v;
      v = keep + h;
      const double p = objective();
      v = keep - h;
      const double m = objective();
      v = keep;
      return (p - m) / (2 * h);
    };
    for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(dw[i], fd(w[i]), 1e-6);
    for (std::size_t i = 0; i < b.size(); ++i) EXPECT_NEAR(db[i], fd(b[i]), 1e-6);
    for (std::size_t i = 0; i < x.data.size(); ++i) EXPECT_NEAR(dx.data[i], fd(x.data[i]), 1e-6);
  }
}

TEST(MaxPool, ForwardAndRouting) {
  Tensor x(1, 2, 4);
  x.data = {1, 5, 0, -1, 2, 3, -2, -3};
  const auto r = layers::maxpool2x2(x);
  ASSERT_EQ(r.out.w, 2);
  EXPECT_EQ(r.out.data[0], 5);
  EXPECT_EQ(r.out.data[1], 0);
  Tensor dy(1, 1, 2);
  dy.data = {1.5, -2.0};
  const auto dx = layers::maxpool2x2_backward(x, r.argmax, dy);
  EXPECT_EQ(dx.data, (std::vector<double>{0, 1.5, -2.0, 0, 0, 0, 0, 0}));
}

TEST(ChannelMean, AveragesAcrossChannels) {
  Tensor x(2, 1, 2);
  x.data = {1, 2, 3, 6};
  EXPECT_EQ(layers::channel_mean(x), (std::vector<double>{2, 4}));
  const std::vector<double> d{1.0, -2.0};
  const auto dx = layers::channel_mean_backward(d, 2, 1, 2);
  EXPECT_EQ(dx.data, (std::vector<double>{0.5, -1.0, 0.5, -1.0}));
}

TEST(Softmax, NormalizedPositiveAndShiftInvariant) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 100; ++t) {
    auto z = random_vec(196, rng);
    for (double& v : z) v *= 200.0;  // large logits must not overflow
    const auto p = layers::softmax(z);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
    for (double v : p) EXPECT_GE(v, 0.0);
    for (double& v : z) v += 1000.0;
    const auto q = layers::softmax(z);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], q[i], 1e-12);
  }
}

TEST(Softmax, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  auto z = random_vec(9, rng);
  const auto probe = random_vec(9, rng);
  auto objective = [&] {
    const auto p = layers::softmax(z);
    return std::inner_product(p.begin(), p.end(), probe.begin(), 0.0);
  };
  const auto dz = layers::softmax_backward(layers::softmax(z), probe);
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double keep = z[i], h = 1e-6;
    z[i] = keep + h;
    const double p = objective();
    z[i] = keep - h;
    const double m = objective();
    z[i] = keep;
    EXPECT_NEAR(dz[i], (p - m) / (2 * h), 1e-8);
  }
}

TEST(Relu, ForwardBackward) {
  Tensor x(1, 1, 4);
  x.data = {-1, 0, 2, 3};
  layers::relu_inplace(x);
  EXPECT_EQ(x.data, (std::vector<double>{0, 0, 2, 3}));
  Tensor dy(1, 1, 4);
  dy.data = {1, 1, 1, 1};
  layers::relu_backward_inplace(x, dy);
  EXPECT_EQ(dy.data, (std::vector<double>{0, 0, 1, 1}));
}
