#pragma once
// Independent reference computations shared by the unit tests and the
// acceptance run.

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "mmloc/layers.hpp"
#include "mmloc/loss.hpp"
#include "mmloc/network.hpp"

namespace oracle {

using namespace mmloc;

inline ProbMatrix from_rows(const std::vector<std::vector<double>>& rows) {
  ProbMatrix m(static_cast<int>(rows.size()));
  for (int r = 0; r < m.order(); ++r)
    for (int c = 0; c < m.order(); ++c) m(r, c) = rows[r][c];
  return m;
}

// Reference ROI head output for a 448 input.
inline ProbMatrix reference_roi() {
  return from_rows({
      {0.06, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.06},
      {0.06, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.06},
      {0.06, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.06},
      {0.06, 0.06, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.06, 0.06},
      {0.06, 0.06, 0.06, 0.07, 0.07, 0.08, 0.08, 0.07, 0.06, 0.06, 0.06, 0.06, 0.06, 0.06},
      {0.05, 0.05, 0.06, 0.06, 0.07, 0.09, 0.09, 0.08, 0.07, 0.07, 0.06, 0.06, 0.06, 0.05},
      {0.05, 0.05, 0.05, 0.06, 0.07, 0.09, 0.10, 0.09, 0.08, 0.07, 0.07, 0.06, 0.05, 0.05},
      {0.04, 0.04, 0.04, 0.05, 0.07, 0.09, 0.11, 0.10, 0.09, 0.08, 0.07, 0.06, 0.04, 0.04},
      {0.04, 0.04, 0.04, 0.052, 0.06, 0.09, 0.11, 0.11, 0.10, 0.09, 0.07, 0.05, 0.04, 0.04},
      {0.04, 0.04, 0.04, 0.05, 0.06, 0.08, 0.10, 0.11, 0.11, 0.09, 0.07, 0.06, 0.05, 0.04},
      {0.05, 0.05, 0.05, 0.05, 0.06, 0.07, 0.09, 0.101, 0.10, 0.092, 0.07, 0.06, 0.05, 0.05},
      {0.06, 0.06, 0.06, 0.06, 0.06, 0.07, 0.07, 0.08, 0.08, 0.08, 0.07, 0.06, 0.06, 0.05},
      {0.06, 0.07, 0.07, 0.07, 0.06, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.06, 0.06},
      {0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.06, 0.06},
  });
}

inline ProbMatrix reference_center() {
  return from_rows({
      {0.14285, 0.14285, 0.14285, 0.14285, 0.14285, 0.14285, 0.14285},
      {0.14285, 0.14285, 0.14285, 0.14285, 0.14285, 0.14285, 0.14285},
      {0.14282, 0.14282, 0.14282, 0.14303, 0.14282, 0.14282, 0.14282},
      {0.11155, 0.11155, 0.14936, 0.22829, 0.17611, 0.11155, 0.11155},
      {0.10102, 0.10102, 0.13884, 0.24611, 0.2102, 0.10171, 0.10102},
      {0.13189, 0.13189, 0.13189, 0.17523, 0.16529, 0.13189, 0.13189},
      {0.14285, 0.14285, 0.14285, 0.14285, 0.14285, 0.14285, 0.14285},
  });
}

inline std::vector<Cell> scan(const Grid<double>& m, double t) {
  std::vector<Cell> out;
  for (int r = 0; r < m.order(); ++r)
    for (int c = 0; c < m.order(); ++c)
      if (m(r, c) >= t) out.push_back({r, c});
  return out;
}

inline GridMask block_mask(int n, int r0, int r1, int c0, int c1) {
  GridMask m(n, 0);
  for (int i = r0; i <= r1; ++i)
    for (int j = c0; j <= c1; ++j) m(i, j) = 1;
  return m;
}

inline Image random_patch(SizeClass cls, std::mt19937_64& rng) {
  const int s = side_of(cls);
  Image img(3, s, s);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& v : img.data) v = u(rng);
  return img;
}

inline ProbMatrix random_probs(int n, std::mt19937_64& rng, double spread = 3.0) {
  std::normal_distribution<double> g(0.0, spread);
  std::vector<double> z(static_cast<std::size_t>(n) * n);
  for (double& v : z) v = g(rng);
  ProbMatrix p(n);
  p.cells() = layers::softmax(z);
  return p;
}

inline GridMask random_mask(int n, std::mt19937_64& rng, double density) {
  std::bernoulli_distribution b(density);
  GridMask m(n, 0);
  for (auto& v : m.cells()) v = b(rng);
  return m;
}

// Worst relative error of loss_gradient against central differences over
// `instances` random outputs, masks and constants.
inline double loss_fd_worst(int instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ug(0.2, 0.8), ua(0.5, 2.0);
  const double h = 1e-6;
  double worst = 0.0;
  for (int inst = 0; inst < instances; ++inst) {
    const LossConfig cfg{ua(rng), ua(rng), ug(rng)};
    LocalizationOutput o{random_probs(14, rng), random_probs(7, rng)};
    const LocalizationTargets t{random_mask(14, rng, 0.25), random_mask(7, rng, 0.1)};
    const auto g = loss_gradient(o, t, cfg);
    auto check = [&](ProbMatrix& m, const Grid<double>& dg) {
      for (std::size_t i = 0; i < m.size(); ++i) {
        const double v = m[i];
        m[i] = v + h;
        const double lp = loss(o, t, cfg);
        m[i] = v - h;
        const double lm = loss(o, t, cfg);
        m[i] = v;
        worst = std::max(worst, std::abs((lp - lm) / (2 * h) - dg[i]) / std::abs(dg[i]));
      }
    };
    check(o.roi_probs, g.d_roi);
    check(o.center_probs, g.d_center);
  }
  return worst;
}

// ReLU sign pattern and max-pool winners of one forward pass. Between two
// parameter values with equal patterns the network is smooth.
inline std::vector<std::uint32_t> activation_pattern(const ModelParameters& p, const Image& patch,
                                                     SizeClass cls, LocalizationOutput& out) {
  detail::ForwardTrace trace;
  out = detail::run_forward(p, patch, cls, &trace);
  const auto ops = feature_route(cls);
  std::vector<std::uint32_t> pat;
  for (std::size_t k = 0; k < ops.size(); ++k)
    if (ops[k].kind == OpKind::Relu)
      for (double v : trace.inputs[k].data) pat.push_back(v > 0.0);
  for (const auto& a : trace.pool_argmax) pat.insert(pat.end(), a.begin(), a.end());
  return pat;
}

// L(out_plus) - L(out_minus) summed per cell, so the large constant part of
// the loss cancels exactly instead of swamping the difference.
inline double loss_delta(const LocalizationOutput& plus, const LocalizationOutput& minus,
                         const LocalizationTargets& t, const LossConfig& c) {
  const double lg = std::log(c.gamma);
  double d = 0.0;
  for (std::size_t q = 0; q < plus.roi_probs.size(); ++q)
    d += c.alpha1 * std::exp(2 * (minus.roi_probs[q] - t.roi[q]) * lg) *
         std::expm1(2 * (plus.roi_probs[q] - minus.roi_probs[q]) * lg);
  for (std::size_t q = 0; q < plus.center_probs.size(); ++q)
    d += c.alpha2 * std::exp(2 * (minus.center_probs[q] - t.center[q]) * lg) *
         std::expm1(2 * (plus.center_probs[q] - minus.center_probs[q]) * lg);
  return d;
}

inline std::vector<double*> entries(ParamSet& ps) {
  std::vector<double*> out;
  for (auto& c : ps.convs) {
    for (double& v : c.weight) out.push_back(&v);
    for (double& v : c.bias) out.push_back(&v);
  }
  return out;
}

struct GradCheck {
  double worst = 0.0;
  std::size_t checked = 0;
  std::size_t total = 0;
};

// Central differences over every trunk and active-branch parameter. Entries
// whose +-h interval crosses a ReLU or max-pool switch are retried at h/10 and
// skipped if they still cross one. The relative error has an absolute floor
// at 1e-5 of the largest gradient (the head-bias gradients are exactly zero by
// softmax shift invariance).
inline GradCheck network_fd(ModelParameters& p, SizeClass cls, const Image& patch,
                            const LocalizationTargets& t, const LossConfig& cfg, double h = 1e-5) {
  auto grads = gradient(p, patch, cls, t, cfg);
  auto analytic = entries(grads.trunk);
  auto params = entries(p.trunk);
  auto ab = entries(grads.branches.at(cls));
  auto pb = entries(p.branches.at(cls));
  analytic.insert(analytic.end(), ab.begin(), ab.end());
  params.insert(params.end(), pb.begin(), pb.end());

  double scale = 0.0;
  for (double* a : analytic) scale = std::max(scale, std::abs(*a));
  GradCheck res;
  res.total = params.size();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = *params[i];
    std::optional<double> fd;
    for (double step : {h, h / 10}) {
      LocalizationOutput op, om;
      *params[i] = keep + step;
      const auto pat_p = activation_pattern(p, patch, cls, op);
      *params[i] = keep - step;
      const auto pat_m = activation_pattern(p, patch, cls, om);
      *params[i] = keep;
      if (pat_p == pat_m) {
        fd = loss_delta(op, om, t, cfg) / (2 * step);
        break;
      }
    }
    if (!fd) continue;
    const double a = *analytic[i];
    const double denom = std::max({std::abs(a), std::abs(*fd), 1e-5 * scale});
    res.worst = std::max(res.worst, std::abs(a - *fd) / denom);
    ++res.checked;
  }
  return res;
}

// The <= 1000-parameter model used for gradient checks, with small random
// biases so no unit sits exactly at a ReLU kink.
inline ModelParameters tiny_model(std::uint64_t seed) {
  auto p = init_parameters(seed, WidthConfig::uniform(2));
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> g(0.0, 0.05);
  for (auto* ps : {&p.trunk, &p.branches[SizeClass::S56], &p.branches[SizeClass::S224],
                   &p.branches[SizeClass::S448]})
    for (auto& c : ps->convs)
      for (double& v : c.bias) v = g(rng);
  return p;
}

}  // namespace oracle
