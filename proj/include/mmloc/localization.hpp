#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "mmloc/core_types.hpp"
#include "mmloc/loss.hpp"
#include "mmloc/mask_targets.hpp"

namespace mmloc {

struct LocalizerConfig {
  double roi_threshold = 0.09;
  double center_threshold = 0.18;
  double scale_gain = 0.3;
  double scale_smoothing = 0.5;

  void validate() const {
    if (!(roi_threshold > 0.0 && roi_threshold < 1.0))
      throw Error("localizer: roi_threshold must lie in (0, 1)");
    if (!(center_threshold > 0.0 && center_threshold < 1.0))
      throw Error("localizer: center_threshold must lie in (0, 1)");
    if (!(scale_gain >= 0.0 && scale_gain < 1.0))
      throw Error("localizer: scale_gain must lie in [0, 1)");
    if (!(scale_smoothing >= 0.0 && scale_smoothing <= 1.0))
      throw Error("localizer: scale_smoothing must lie in [0, 1]");
  }
};

// Fractional grid coordinate.
struct GridPoint {
  double row = 0.0;
  double col = 0.0;
};

struct Localization {
  std::vector<Cell> roi_cells;     // 14-grid
  std::vector<Cell> center_cells;  // 7-grid
  std::optional<GridPoint> center_point;
  double confidence = 0.0;  // max ROI probability
};

/**
 * Cells with value >= threshold, found by descending a 2x2 max-pool pyramid
 * (each pooled node keeps its max and argmax). Subtrees whose pooled max is
 * below the threshold are never visited, so a sparse peak costs a handful of
 * comparisons instead of a full scan. The result is row-major ordered and
 * equals an exhaustive scan.
 */
class PooledArgmaxSweep {
 public:
  explicit PooledArgmaxSweep(const Grid<double>& m) : base_(m.order()) {
    Level l0{m.order(), m.cells(), {}};
    l0.argmax.resize(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) l0.argmax[i] = static_cast<int>(i);
    levels_.push_back(std::move(l0));
    while (levels_.back().n > 1) {
      const Level& prev = levels_.back();
      Level next{(prev.n + 1) / 2, {}, {}};
      next.max.assign(static_cast<std::size_t>(next.n) * next.n, 0.0);
      next.argmax.assign(next.max.size(), -1);
      for (int r = 0; r < next.n; ++r) {
        for (int c = 0; c < next.n; ++c) {
          double best = 0.0;
          int arg = -1;
          for (int dr = 0; dr < 2; ++dr) {
            for (int dc = 0; dc < 2; ++dc) {
              const int pr = 2 * r + dr, pc = 2 * c + dc;
              if (pr >= prev.n || pc >= prev.n) continue;
              const std::size_t pi = static_cast<std::size_t>(pr) * prev.n + pc;
              if (arg < 0 || prev.max[pi] > best) {
                best = prev.max[pi];
                arg = prev.argmax[pi];
              }
            }
          }
          next.max[static_cast<std::size_t>(r) * next.n + c] = best;
          next.argmax[static_cast<std::size_t>(r) * next.n + c] = arg;
        }
      }
      levels_.push_back(std::move(next));
    }
  }

  // Global maximum and its cell.
  double max_value() const { return levels_.back().max[0]; }
  Cell argmax() const {
    const int i = levels_.back().argmax[0];
    return {i / base_, i % base_};
  }

  std::vector<Cell> cells_at_least(double threshold) const {
    std::vector<Cell> out;
    descend(static_cast<int>(levels_.size()) - 1, 0, 0, threshold, out);
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  struct Level {
    int n = 0;
    std::vector<double> max;
    std::vector<int> argmax;
  };

  void descend(int level, int r, int c, double t, std::vector<Cell>& out) const {
    const Level& l = levels_[static_cast<std::size_t>(level)];
    if (r >= l.n || c >= l.n) return;
    if (!(l.max[static_cast<std::size_t>(r) * l.n + c] >= t)) return;
    if (level == 0) {
      out.push_back({r, c});
      return;
    }
    for (int dr = 0; dr < 2; ++dr)
      for (int dc = 0; dc < 2; ++dc) descend(level - 1, 2 * r + dr, 2 * c + dc, t, out);
  }

  int base_;
  std::vector<Level> levels_;
};

inline std::vector<Cell> extract_roi_cells(const ProbMatrix& roi_probs, double threshold) {
  return PooledArgmaxSweep(roi_probs).cells_at_least(threshold);
}

// Mean (row, col) of the qualifying cells; nullopt when none qualify.
inline std::optional<GridPoint> extract_center(const ProbMatrix& center_probs, double threshold,
                                               std::vector<Cell>* cells_out = nullptr) {
  const auto cells = PooledArgmaxSweep(center_probs).cells_at_least(threshold);
  if (cells_out) *cells_out = cells;
  if (cells.empty()) return std::nullopt;
  GridPoint p;
  for (const Cell& c : cells) {
    p.row += c.row;
    p.col += c.col;
  }
  p.row /= static_cast<double>(cells.size());
  p.col /= static_cast<double>(cells.size());
  return p;
}

inline Localization localize(const LocalizationOutput& out, const LocalizerConfig& cfg) {
  Localization loc;
  const PooledArgmaxSweep roi(out.roi_probs);
  loc.roi_cells = roi.cells_at_least(cfg.roi_threshold);
  loc.confidence = roi.max_value();
  loc.center_point = extract_center(out.center_probs, cfg.center_threshold, &loc.center_cells);
  return loc;
}

// Patch pixel at the middle of a fractional grid coordinate.
inline std::pair<double, double> grid_to_pixels(const GridPoint& p, double patch_side, int n) {
  const double cell = patch_side / n;
  return {(p.col + 0.5) * cell, (p.row + 0.5) * cell};
}

/**
 * Moves and rescales the previous box from one decoded localization.
 *
 * Center: the center-head point, or the ROI cell centroid when the center
 * head is silent. Scale: s = clamp(sqrt(|roi| / max(1, prev_cells)),
 * 1 - gain, 1 + gain), smoothed toward 1 by scale_smoothing. With no ROI
 * cells the size is kept; with neither head firing the box is unchanged.
 * The result is shifted (not shrunk) to stay inside the patch.
 */
inline BoundingBox fit_box(const BoundingBox& prev_box, const Localization& loc,
                           const LocalizerConfig& cfg, int patch_side) {
  const double side = patch_side;
  if (loc.roi_cells.empty() && !loc.center_point) return prev_box;

  double cx = prev_box.cx(), cy = prev_box.cy();
  if (loc.center_point) {
    std::tie(cx, cy) = grid_to_pixels(*loc.center_point, side, kCenterOrder);
  } else {
    GridPoint mean;
    for (const Cell& c : loc.roi_cells) {
      mean.row += c.row;
      mean.col += c.col;
    }
    mean.row /= static_cast<double>(loc.roi_cells.size());
    mean.col /= static_cast<double>(loc.roi_cells.size());
    std::tie(cx, cy) = grid_to_pixels(mean, side, kRoiOrder);
  }

  double s = 1.0;
  if (!loc.roi_cells.empty()) {
    const auto prev_clipped = clip_to_frame(prev_box, side, side);
    const int prev_cells =
        prev_clipped ? count_ones(roi_mask_from_box(*prev_clipped, side, kRoiOrder)) : 0;
    const double raw = std::sqrt(static_cast<double>(loc.roi_cells.size()) / std::max(1, prev_cells));
    const double target = std::clamp(raw, 1.0 - cfg.scale_gain, 1.0 + cfg.scale_gain);
    s = (1.0 - cfg.scale_smoothing) + cfg.scale_smoothing * target;
  }
  const double w = std::min(prev_box.w * s, side);
  const double h = std::min(prev_box.h * s, side);
  const double x = std::clamp(cx - 0.5 * w, 0.0, side - w);
  const double y = std::clamp(cy - 0.5 * h, 0.0, side - h);
  return {x, y, w, h};
}

// Box for a single image without a prior: the span between the centers of the
// outermost ROI cells, which is the expected extent when box edges fall
// uniformly inside their boundary cells.
inline std::optional<BoundingBox> decode_box(const Localization& loc, int patch_side) {
  if (loc.roi_cells.empty()) return std::nullopt;
  int r0 = kRoiOrder, r1 = -1, c0 = kRoiOrder, c1 = -1;
  for (const Cell& c : loc.roi_cells) {
    r0 = std::min(r0, c.row), r1 = std::max(r1, c.row);
    c0 = std::min(c0, c.col), c1 = std::max(c1, c.col);
  }
  const double cell = static_cast<double>(patch_side) / kRoiOrder;
  const double w = std::max((c1 - c0) * cell, 0.5 * cell);
  const double h = std::max((r1 - r0) * cell, 0.5 * cell);
  const double cx = (0.5 * (c0 + c1) + 0.5) * cell;
  const double cy = (0.5 * (r0 + r1) + 0.5) * cell;
  return BoundingBox::centered(cx, cy, w, h);
}

}  // namespace mmloc
