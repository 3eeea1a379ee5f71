#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmloc/core_types.hpp"
#include "mmloc/localization.hpp"
#include "mmloc/mask_targets.hpp"
#include "mmloc/network.hpp"

namespace mmloc {

// ---------------------------------------------------------------------------
// Tracking by localization

struct TrackerState {
  BoundingBox box;  // frame coordinates
  double window_scale = kDefaultWindowScale;
  SizeClass size_class = SizeClass::S56;
  CropWindow window;
  LocalizerConfig localizer;
  const ModelParameters* params = nullptr;
  int frame_width = 0;
  int frame_height = 0;
};

// Boxes never shrink below this many pixels per side.
inline constexpr double kMinBoxSide = 2.0;

namespace detail {

// The window is capped rather than rejected so a running track never throws.
inline void recenter_window(TrackerState& s) {
  const double side = std::min(s.window_scale * std::max(s.box.w, s.box.h), kMaxWindowSide);
  s.window = {s.box.cx() - 0.5 * side, s.box.cy() - 0.5 * side, side};
  s.size_class = classify_size(side, side);
}

}  // namespace detail

inline TrackerState track_init(const Image& frame, const BoundingBox& initial_box,
                               const ModelParameters& params,
                               const LocalizerConfig& localizer = {},
                               double window_scale = kDefaultWindowScale) {
  localizer.validate();
  if (!initial_box.inside(frame.w, frame.h)) {
    throw Error("track_init: initial box lies outside the " + std::to_string(frame.w) + "x" +
                std::to_string(frame.h) + " frame");
  }
  TrackerState s;
  s.box = initial_box;
  s.window_scale = window_scale;
  s.localizer = localizer;
  s.params = &params;
  s.frame_width = frame.w;
  s.frame_height = frame.h;
  detail::recenter_window(s);
  return s;
}

// Patch the network sees for the current window.
inline Image crop_patch(const TrackerState& s, const Image& frame) {
  return sample_window(frame, s.window.x0, s.window.y0, s.window.side, side_of(s.size_class));
}

// Second half of an update: decode a head output produced for the current
// window and move the state. Exposed so arbitrary outputs can be injected.
inline BoundingBox track_apply(TrackerState& s, const LocalizationOutput& out) {
  const int p = side_of(s.size_class);
  const Localization loc = localize(out, s.localizer);
  const BoundingBox prev_patch = s.window.to_patch(s.box, p);
  const BoundingBox next_patch = fit_box(prev_patch, loc, s.localizer, p);
  BoundingBox next = s.window.to_frame(next_patch, p);
  next.w = std::max(next.w, kMinBoxSide);
  next.h = std::max(next.h, kMinBoxSide);
  if (auto clipped = clip_to_frame(next, s.frame_width, s.frame_height);
      clipped && clipped->w >= 1.0 && clipped->h >= 1.0) {
    s.box = *clipped;
  }
  detail::recenter_window(s);
  return s.box;
}

inline BoundingBox track_update(TrackerState& s, const Image& frame) {
  if (!s.params) throw Error("track_update: tracker not initialized");
  if (frame.w != s.frame_width || frame.h != s.frame_height) {
    throw Error("track_update: frame size differs from the initial frame");
  }
  const Image patch = crop_patch(s, frame);
  return track_apply(s, forward(*s.params, patch, s.size_class));
}

template <typename T>
concept SequenceTracker = requires(T t, const Image& frame, const BoundingBox& box) {
  t.init(frame, box);
  { t.update(frame) } -> std::convertible_to<BoundingBox>;
};

// The localizer CNN wrapped as a SequenceTracker. Many trackers may share one
// ModelParameters instance.
class CnnTracker {
 public:
  CnnTracker(const ModelParameters& params, LocalizerConfig localizer = {},
             double window_scale = kDefaultWindowScale)
      : params_(&params), localizer_(localizer), window_scale_(window_scale) {}

  void init(const Image& frame, const BoundingBox& box) {
    state_ = track_init(frame, box, *params_, localizer_, window_scale_);
  }
  BoundingBox update(const Image& frame) { return track_update(state_, frame); }
  const TrackerState& state() const { return state_; }

 private:
  const ModelParameters* params_;
  LocalizerConfig localizer_;
  double window_scale_;
  TrackerState state_;
};

// ---------------------------------------------------------------------------
// Evaluation

// A segment fails once IoU stays below min_iou for `frames` consecutive frames.
// Failure is sticky: every later segment of the run counts as failed too.
struct FailureRule {
  double min_iou = 0.05;
  int frames = 15;
};

struct EvalConfig {
  FailureRule failure;
  int segments = 3;

  void validate() const {
    if (segments < 1) throw Error("evaluation: segments must be >= 1");
    if (failure.frames < 1) throw Error("evaluation: failure frames must be >= 1");
  }
};

struct EvalRecord {
  std::vector<double> iou;
  std::vector<BoundingBox> boxes;
  double mean_iou = 0.0;
  std::vector<int> segment_failed;  // 0/1 per segment, sticky
  int failures = 0;                 // segments in which a failure fired
  double fps = 0.0;
};

inline int segment_of(std::size_t frame, std::size_t n_frames, int segments) {
  return static_cast<int>(frame * static_cast<std::size_t>(segments) / n_frames);
}

inline std::vector<int> failed_segments(const std::vector<double>& iou, const EvalConfig& cfg) {
  cfg.validate();
  std::vector<int> failed(static_cast<std::size_t>(cfg.segments), 0);
  int streak = 0;
  for (std::size_t i = 0; i < iou.size(); ++i) {
    streak = iou[i] < cfg.failure.min_iou ? streak + 1 : 0;
    if (streak == cfg.failure.frames) {
      for (int s = segment_of(i, iou.size(), cfg.segments); s < cfg.segments; ++s) failed[s] = 1;
      break;
    }
  }
  return failed;
}

// Segments in which a failure fires: the streak reaches `frames` there. A new
// failure needs a recovery (IoU >= min_iou) first. Not sticky.
inline std::vector<int> firing_segments(const std::vector<double>& iou, const EvalConfig& cfg) {
  cfg.validate();
  std::vector<int> fired(static_cast<std::size_t>(cfg.segments), 0);
  int streak = 0;
  for (std::size_t i = 0; i < iou.size(); ++i) {
    streak = iou[i] < cfg.failure.min_iou ? streak + 1 : 0;
    if (streak == cfg.failure.frames) fired[segment_of(i, iou.size(), cfg.segments)] = 1;
  }
  return fired;
}

template <SequenceTracker Tracker>
EvalRecord evaluate_sequence(Tracker& tracker, const std::vector<Image>& frames,
                             const std::vector<BoundingBox>& ground_truth, const EvalConfig& cfg,
                             const BoundingBox* init_box = nullptr) {
  cfg.validate();
  if (frames.size() != ground_truth.size()) {
    throw Error("evaluate_sequence: " + std::to_string(frames.size()) + " frames but " +
                std::to_string(ground_truth.size()) + " ground-truth boxes");
  }
  if (frames.empty()) throw Error("evaluate_sequence: empty sequence");
  EvalRecord rec;
  const BoundingBox start = init_box ? *init_box : ground_truth[0];
  tracker.init(frames[0], start);
  rec.boxes.push_back(start);
  std::chrono::steady_clock::duration busy{};
  for (std::size_t i = 1; i < frames.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const BoundingBox b = tracker.update(frames[i]);
    busy += std::chrono::steady_clock::now() - t0;
    rec.boxes.push_back(b);
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    rec.iou.push_back(iou(rec.boxes[i], ground_truth[i]));
    sum += rec.iou.back();
  }
  rec.mean_iou = sum / static_cast<double>(frames.size());
  rec.segment_failed = failed_segments(rec.iou, cfg);
  for (int f : firing_segments(rec.iou, cfg)) rec.failures += f;
  const double secs = std::max(std::chrono::duration<double>(busy).count(), 1e-9);
  rec.fps = static_cast<double>(std::max<std::size_t>(frames.size() - 1, 1)) / secs;
  return rec;
}

// Initial box perturbed by up to +/- jitter of its size in center and in each
// dimension, clipped to the frame.
inline BoundingBox jitter_box(const BoundingBox& b, double jitter, std::mt19937_64& rng,
                              double frame_width, double frame_height) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto sym = [&] { return (2.0 * unit(rng) - 1.0) * jitter; };
  const double cx = b.cx() + sym() * b.w;
  const double cy = b.cy() + sym() * b.h;
  const double w = b.w * (1.0 + sym());
  const double h = b.h * (1.0 + sym());
  return clip_to_frame(BoundingBox::centered(cx, cy, w, h), frame_width, frame_height).value_or(b);
}

struct MonteCarloTable {
  std::vector<BoundingBox> init_boxes;
  std::vector<std::vector<int>> rows;  // runs x segments, 1 = failed
  std::vector<double> mean_iou;

  int total_failures() const {
    int n = 0;
    for (const auto& r : rows)
      for (int v : r) n += v;
    return n;
  }

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path + "'");
    out << "run";
    const std::size_t segs = rows.empty() ? 0 : rows.front().size();
    for (std::size_t s = 0; s < segs; ++s) out << ",segment_" << s;
    out << ",failures,mean_iou\n";
    out.precision(17);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      out << r;
      int n = 0;
      for (int v : rows[r]) out << ',' << v, n += v;
      out << ',' << n << ',' << mean_iou[r] << '\n';
    }
  }
};

// Run 0 starts from the exact ground-truth box; runs 1.. start from jittered
// boxes drawn deterministically from `seed`. Each run uses a fresh copy of
// `prototype`.
template <SequenceTracker Tracker>
MonteCarloTable monte_carlo_eval(const Tracker& prototype, const std::vector<Image>& frames,
                                 const std::vector<BoundingBox>& ground_truth,
                                 const EvalConfig& cfg, int runs = 10, double jitter = 0.1,
                                 std::uint64_t seed = 0) {
  if (runs < 1) throw Error("monte_carlo_eval: runs must be >= 1");
  if (!(jitter >= 0.0 && jitter < 1.0)) throw Error("monte_carlo_eval: jitter must lie in [0, 1)");
  if (frames.empty()) throw Error("monte_carlo_eval: empty sequence");
  MonteCarloTable table;
  std::mt19937_64 rng(seed);
  for (int r = 0; r < runs; ++r) {
    BoundingBox init = ground_truth.at(0);
    if (r > 0) init = jitter_box(init, jitter, rng, frames[0].w, frames[0].h);
    Tracker tracker = prototype;
    const EvalRecord rec = evaluate_sequence(tracker, frames, ground_truth, cfg, &init);
    table.init_boxes.push_back(init);
    table.rows.push_back(rec.segment_failed);
    table.mean_iou.push_back(rec.mean_iou);
  }
  return table;
}

// ---------------------------------------------------------------------------
// Resolution-study metric

// Each cell becomes a 2x2 block carrying a quarter of its mass.
inline ProbMatrix upsample_roi(const ProbMatrix& pred) {
  ProbMatrix out(2 * pred.order());
  for (int i = 0; i < out.order(); ++i)
    for (int j = 0; j < out.order(); ++j) out(i, j) = 0.25 * pred(i / 2, j / 2);
  return out;
}

inline double l1_matrix_error(const ProbMatrix& pred, const GridMask& truth) {
  if (pred.order() == truth.order()) {
    double e = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) e += std::abs(pred[i] - truth[i]);
    return e;
  }
  if (2 * pred.order() == truth.order()) return l1_matrix_error(upsample_roi(pred), truth);
  throw Error("l1_matrix_error: cannot compare a " + std::to_string(pred.order()) + "x" +
              std::to_string(pred.order()) + " prediction with a " +
              std::to_string(truth.order()) + "x" + std::to_string(truth.order()) + " mask");
}

// ---------------------------------------------------------------------------
// Report files

inline void write_iou_csv(const std::string& path, const EvalRecord& rec) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << "frame_index,iou\n";
  out.precision(17);
  for (std::size_t i = 0; i < rec.iou.size(); ++i) out << i << ',' << rec.iou[i] << '\n';
}

inline void write_boxes_csv(const std::string& path, const std::vector<BoundingBox>& boxes) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << "frame_index,x,y,w,h\n";
  out.precision(17);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    out << i << ',' << boxes[i].x << ',' << boxes[i].y << ',' << boxes[i].w << ',' << boxes[i].h
        << '\n';
  }
}

inline nlohmann::json summary_json(const EvalRecord& rec) {
  return {{"frames", rec.iou.size()},
          {"mean_iou", rec.mean_iou},
          {"failures", rec.failures},
          {"segment_failed", rec.segment_failed},
          {"fps", rec.fps}};
}

}  // namespace mmloc
