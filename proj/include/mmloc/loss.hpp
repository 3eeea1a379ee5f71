#pragma once

#include <cmath>
#include <string>

#include "mmloc/core_types.hpp"
#include "mmloc/mask_targets.hpp"

namespace mmloc {

struct LocalizationOutput {
  ProbMatrix roi_probs;     // 14x14
  ProbMatrix center_probs;  // 7x7
};

/**
 * Weights of the exponential localization loss
 *
 *   L = alpha1 * sum gamma^(2 (roi_hat - roi)) + alpha2 * sum gamma^(2 (center_hat - center))
 *
 * with 0 < gamma < 1. Since gamma < 1, cells where the target is 1 dominate
 * the gradient by a factor gamma^-2 over background cells.
 */
struct LossConfig {
  double alpha1 = 1e-5;
  double alpha2 = 234.0;
  double gamma = 1e-4;

  void validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) {
      throw Error("loss: gamma must lie in (0, 1), got " + std::to_string(gamma));
    }
    if (!(alpha1 >= 0.0) || !(alpha2 >= 0.0) || !std::isfinite(alpha1) || !std::isfinite(alpha2)) {
      throw Error("loss: alpha1 and alpha2 must be finite and non-negative");
    }
  }
};

struct LossGradient {
  Grid<double> d_roi;     // dL / d roi_probs
  Grid<double> d_center;  // dL / d center_probs
};

namespace detail {

inline void check_loss_shapes(const LocalizationOutput& out, const LocalizationTargets& t) {
  if (out.roi_probs.order() != t.roi.order() || out.center_probs.order() != t.center.order()) {
    throw Error("loss: output/target shape mismatch (" + std::to_string(out.roi_probs.order()) +
                "/" + std::to_string(t.roi.order()) + ", " +
                std::to_string(out.center_probs.order()) + "/" +
                std::to_string(t.center.order()) + ")");
  }
}

// gamma^(2 (p_hat - p)) evaluated as exp(2 (p_hat - p) ln gamma).
inline double cell_term(double p_hat, double p, double log_gamma) {
  return std::exp(2.0 * (p_hat - p) * log_gamma);
}

inline double head_sum(const ProbMatrix& pred, const GridMask& truth, double log_gamma) {
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += cell_term(pred[i], truth[i], log_gamma);
  return s;
}

}  // namespace detail

inline double loss(const LocalizationOutput& out, const LocalizationTargets& targets,
                   const LossConfig& cfg) {
  cfg.validate();
  detail::check_loss_shapes(out, targets);
  const double lg = std::log(cfg.gamma);
  return cfg.alpha1 * detail::head_sum(out.roi_probs, targets.roi, lg) +
         cfg.alpha2 * detail::head_sum(out.center_probs, targets.center, lg);
}

inline LossGradient loss_gradient(const LocalizationOutput& out, const LocalizationTargets& targets,
                                  const LossConfig& cfg) {
  cfg.validate();
  detail::check_loss_shapes(out, targets);
  const double lg = std::log(cfg.gamma);
  LossGradient g{Grid<double>(out.roi_probs.order()), Grid<double>(out.center_probs.order())};
  for (std::size_t i = 0; i < g.d_roi.size(); ++i) {
    g.d_roi[i] = 2.0 * lg * cfg.alpha1 * detail::cell_term(out.roi_probs[i], targets.roi[i], lg);
  }
  for (std::size_t i = 0; i < g.d_center.size(); ++i) {
    g.d_center[i] =
        2.0 * lg * cfg.alpha2 * detail::cell_term(out.center_probs[i], targets.center[i], lg);
  }
  return g;
}

}  // namespace mmloc
