#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "mmloc/core_types.hpp"
#include "mmloc/image.hpp"

namespace mmloc {

inline constexpr int kRoiOrder = 14;
inline constexpr int kCenterOrder = 7;
inline constexpr double kDefaultWindowScale = 2.0;
// Windows beyond twice the largest input side would be downsampled by more
// than 2x; treat them as unrepresentable.
inline constexpr double kMaxWindowSide = 4.0 * 448.0;

struct LocalizationTargets {
  GridMask roi;     // 14x14, cells the box overlaps
  GridMask center;  // 7x7, single cell holding the box center
  friend bool operator==(const LocalizationTargets&, const LocalizationTargets&) = default;
};

struct AnnotatedFrame {
  Image image;
  BoundingBox box;
  std::string source_id;
};

struct TrainingSample {
  Image patch;
  SizeClass size_class = SizeClass::S56;
  LocalizationTargets targets;
  BoundingBox adjusted_box;  // in patch pixels
};

namespace detail {

inline void require_box_in_square(const BoundingBox& box, double frame_side, const char* op) {
  if (!(frame_side > 0.0)) throw Error(std::string(op) + ": frame side must be positive");
  if (!box.inside(frame_side, frame_side)) {
    throw Error(std::string(op) + ": box lies outside the frame");
  }
}

// Range of cell indices [first, last] whose open interval overlaps (lo, hi).
inline std::pair<int, int> overlapped_cells(double lo, double hi, double side, int n) {
  int first = n, last = -1;
  for (int k = 0; k < n; ++k) {
    const double a = k * side / n;
    const double b = (k + 1) * side / n;
    if (lo < b && hi > a) {
      first = std::min(first, k);
      last = std::max(last, k);
    }
  }
  return {first, last};
}

}  // namespace detail

// Cell (i, j) is set iff the box overlaps it with strictly positive area.
inline GridMask roi_mask_from_box(const BoundingBox& box, double frame_side, int n = kRoiOrder) {
  detail::require_box_in_square(box, frame_side, "roi_mask_from_box");
  GridMask mask(n, 0);
  const auto [c0, c1] = detail::overlapped_cells(box.x, box.right(), frame_side, n);
  const auto [r0, r1] = detail::overlapped_cells(box.y, box.bottom(), frame_side, n);
  for (int i = r0; i <= r1; ++i)
    for (int j = c0; j <= c1; ++j) mask(i, j) = 1;
  return mask;
}

// Index of the cell holding coordinate v; the far frame edge maps to n - 1.
inline int cell_index(double v, double frame_side, int n) {
  const int k = static_cast<int>(std::floor(v * n / frame_side));
  return std::clamp(k, 0, n - 1);
}

inline GridMask center_mask_from_box(const BoundingBox& box, double frame_side,
                                     int n = kCenterOrder) {
  detail::require_box_in_square(box, frame_side, "center_mask_from_box");
  GridMask mask(n, 0);
  mask(cell_index(box.cy(), frame_side, n), cell_index(box.cx(), frame_side, n)) = 1;
  return mask;
}

inline LocalizationTargets make_targets(const BoundingBox& box, double frame_side) {
  return {roi_mask_from_box(box, frame_side, kRoiOrder),
          center_mask_from_box(box, frame_side, kCenterOrder)};
}

// ---------------------------------------------------------------------------
// Sample synthesis

enum class Placement { Random, Centered };

struct CropWindow {
  double x0 = 0.0;
  double y0 = 0.0;
  double side = 0.0;

  // Frame coordinates -> patch coordinates for a patch of the given side.
  BoundingBox to_patch(const BoundingBox& b, int patch_side) const {
    const double s = patch_side / side;
    return {(b.x - x0) * s, (b.y - y0) * s, b.w * s, b.h * s};
  }
  BoundingBox to_frame(const BoundingBox& b, int patch_side) const {
    const double s = side / patch_side;
    return {x0 + b.x * s, y0 + b.y * s, b.w * s, b.h * s};
  }
};

inline double window_side_for(const BoundingBox& box, double window_scale) {
  if (!(window_scale >= 1.0)) throw Error("window_scale must be >= 1");
  const double side = window_scale * std::max(box.w, box.h);
  if (side > kMaxWindowSide) {
    throw BoxTooLarge("box-too-large: crop window of side " + std::to_string(side) +
                      " exceeds " + std::to_string(kMaxWindowSide));
  }
  return side;
}

// Square window of side window_scale * max(w, h) holding the whole box. The
// offset is uniform over placements that keep the box inside the window.
inline CropWindow place_window(const BoundingBox& box, double window_scale, Placement placement,
                               std::uint64_t rng_seed) {
  const double side = window_side_for(box, window_scale);
  const double slack_x = side - box.w;
  const double slack_y = side - box.h;
  double ox = 0.5 * slack_x;
  double oy = 0.5 * slack_y;
  if (placement == Placement::Random) {
    std::mt19937_64 rng(rng_seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    ox = unit(rng) * slack_x;
    oy = unit(rng) * slack_y;
  }
  return {box.x - ox, box.y - oy, side};
}

inline TrainingSample synthesize_sample(const AnnotatedFrame& frame, std::uint64_t rng_seed,
                                        double window_scale = kDefaultWindowScale,
                                        Placement placement = Placement::Random) {
  const Image& img = frame.image;
  if (!frame.box.inside(img.w, img.h)) {
    throw Error("synthesize_sample: box of '" + frame.source_id + "' lies outside the image");
  }
  const CropWindow win = place_window(frame.box, window_scale, placement, rng_seed);
  if (win.x0 >= img.w || win.y0 >= img.h || win.x0 + win.side <= 0 || win.y0 + win.side <= 0) {
    throw Error("synthesize_sample: crop window does not intersect the image");
  }
  TrainingSample s;
  s.size_class = classify_size(win.side, win.side);
  const int p = side_of(s.size_class);
  s.patch = sample_window(img, win.x0, win.y0, win.side, p);
  BoundingBox adj = win.to_patch(frame.box, p);
  // Rounding can push an edge a hair outside the patch.
  adj = clip_to_frame(adj, p, p).value_or(adj);
  s.adjusted_box = adj;
  s.targets = make_targets(adj, p);
  return s;
}

}  // namespace mmloc
