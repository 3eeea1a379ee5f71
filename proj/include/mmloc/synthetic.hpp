#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "mmloc/core_types.hpp"
#include "mmloc/image.hpp"
#include "mmloc/mask_targets.hpp"

// Procedural scenes with a single solid rectangle on a textured background,
// used for smoke runs, tests and the bundled demo sequence.
namespace mmloc::synthetic {

struct SceneStyle {
  double object_rgb[3] = {0.85, 0.15, 0.10};
  double noise = 0.04;
};

// Background texture with low-frequency stripes, fixed by `layout_seed`;
// per-pixel noise comes from `noise_seed`.
inline Image render_scene(int width, int height, const BoundingBox& box, std::uint64_t layout_seed,
                          std::uint64_t noise_seed, const SceneStyle& style = {}) {
  std::mt19937_64 layout(layout_seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double base[3] = {0.15 + 0.25 * u(layout), 0.30 + 0.35 * u(layout), 0.30 + 0.40 * u(layout)};
  const double fx = 2.0 * std::numbers::pi * (1.0 + 3.0 * u(layout)) / width;
  const double fy = 2.0 * std::numbers::pi * (1.0 + 3.0 * u(layout)) / height;
  const double phase = 2.0 * std::numbers::pi * u(layout);

  std::mt19937_64 noise(noise_seed);
  std::uniform_real_distribution<double> n(-style.noise, style.noise);
  Image img(3, height, width);
  for (int y = 0; y < height; ++y) {
    // Vertical coverage of the box in this pixel row.
    const double cov_y = std::clamp(std::min(y + 1.0, box.bottom()) - std::max<double>(y, box.y), 0.0, 1.0);
    for (int x = 0; x < width; ++x) {
      const double cov_x =
          std::clamp(std::min(x + 1.0, box.right()) - std::max<double>(x, box.x), 0.0, 1.0);
      const double a = cov_x * cov_y;
      const double tex = 0.12 * std::sin(fx * x + phase) * std::cos(fy * y);
      for (int ch = 0; ch < 3; ++ch) {
        const double bg = base[ch] + tex;
        const double v = (1.0 - a) * bg + a * style.object_rgb[ch] + n(noise);
        img.at(ch, y, x) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return img;
}

struct Sequence {
  std::vector<Image> frames;
  std::vector<BoundingBox> boxes;
};

// A w x h rectangle sweeping a Lissajous path that stays `margin` pixels away
// from the frame border.
inline Sequence moving_rectangle(int n_frames, int width, int height, double w, double h,
                                 std::uint64_t seed, double margin = 4.0) {
  Sequence seq;
  const double ax = 0.5 * (width - w) - margin;
  const double ay = 0.5 * (height - h) - margin;
  if (ax < 0 || ay < 0) throw Error("moving_rectangle: object does not fit the frame");
  for (int t = 0; t < n_frames; ++t) {
    const double phase = 2.0 * std::numbers::pi * t / std::max(1, n_frames);
    const double cx = 0.5 * width + ax * std::sin(phase);
    const double cy = 0.5 * height + ay * std::sin(2.0 * phase) * 0.8;
    const BoundingBox b = BoundingBox::centered(cx, cy, w, h);
    seq.boxes.push_back(b);
    seq.frames.push_back(render_scene(width, height, b, seed, seed * 1000003ULL + t));
  }
  return seq;
}

// Square frame with a box_w x box_h rectangle at a random position.
inline AnnotatedFrame random_frame(int frame_side, double box_w, double box_h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double x = u(rng) * (frame_side - box_w);
  const double y = u(rng) * (frame_side - box_h);
  AnnotatedFrame f;
  f.box = {x, y, box_w, box_h};
  f.image = render_scene(frame_side, frame_side, f.box, seed ^ 0x9e3779b97f4a7c15ULL, seed + 17);
  f.source_id = "synthetic#" + std::to_string(seed);
  return f;
}

}  // namespace mmloc::synthetic
