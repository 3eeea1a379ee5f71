#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mmloc {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when a crop window for a box cannot be represented by any input size.
class BoxTooLarge : public Error {
 public:
  using Error::Error;
};

/**
 * @brief Axis-aligned box in pixel coordinates, (x, y) is the top-left corner.
 */
struct BoundingBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double cx() const { return x + 0.5 * w; }
  double cy() const { return y + 0.5 * h; }
  double right() const { return x + w; }
  double bottom() const { return y + h; }
  double area() const { return w * h; }

  bool valid() const {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(w) &&
           std::isfinite(h) && w > 0.0 && h > 0.0;
  }

  bool inside(double frame_width, double frame_height) const {
    return valid() && x >= 0.0 && y >= 0.0 && right() <= frame_width &&
           bottom() <= frame_height;
  }

  static BoundingBox from_corners(double x1, double y1, double x2, double y2) {
    return {x1, y1, x2 - x1, y2 - y1};
  }

  static BoundingBox centered(double cx, double cy, double w, double h) {
    return {cx - 0.5 * w, cy - 0.5 * h, w, h};
  }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

inline double intersection_area(const BoundingBox& a, const BoundingBox& b) {
  const double iw = std::min(a.right(), b.right()) - std::max(a.x, b.x);
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  return iw * ih;
}

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

// Intersection with the frame rectangle; nullopt when nothing remains.
inline std::optional<BoundingBox> clip_to_frame(const BoundingBox& b, double frame_width,
                                                double frame_height) {
  const double x1 = std::clamp(b.x, 0.0, frame_width);
  const double y1 = std::clamp(b.y, 0.0, frame_height);
  const double x2 = std::clamp(b.right(), 0.0, frame_width);
  const double y2 = std::clamp(b.bottom(), 0.0, frame_height);
  if (x2 - x1 <= 0.0 || y2 - y1 <= 0.0) return std::nullopt;
  return BoundingBox::from_corners(x1, y1, x2, y2);
}

// ---------------------------------------------------------------------------
// Size classes

enum class SizeClass : int { S56 = 0, S224 = 1, S448 = 2 };

inline constexpr std::array<SizeClass, 3> kSizeClasses = {SizeClass::S56, SizeClass::S224,
                                                          SizeClass::S448};

constexpr int side_of(SizeClass c) {
  switch (c) {
    case SizeClass::S56: return 56;
    case SizeClass::S224: return 224;
    case SizeClass::S448: return 448;
  }
  return 0;
}

constexpr std::string_view name_of(SizeClass c) {
  switch (c) {
    case SizeClass::S56: return "S56";
    case SizeClass::S224: return "S224";
    case SizeClass::S448: return "S448";
  }
  return "?";
}

inline SizeClass size_class_from_name(std::string_view name) {
  for (SizeClass c : kSizeClasses) {
    if (name_of(c) == name) return c;
  }
  throw Error("unknown size class '" + std::string(name) + "'");
}

inline constexpr double kSmallMediumBoundary = 0.5 * (56 + 224);   // 140
inline constexpr double kMediumLargeBoundary = 0.5 * (224 + 448);  // 336

// Nearest input side to max(height, width); exact midpoints go to the larger class.
inline SizeClass classify_size(double height, double width) {
  if (!(height >= 1.0) || !(width >= 1.0)) {
    throw Error("classify_size: dimensions must be >= 1");
  }
  const double m = std::max(height, width);
  if (m >= kMediumLargeBoundary) return SizeClass::S448;
  if (m >= kSmallMediumBoundary) return SizeClass::S224;
  return SizeClass::S56;
}

// ---------------------------------------------------------------------------
// Square grids

struct Cell {
  int row = 0;
  int col = 0;
  friend auto operator<=>(const Cell&, const Cell&) = default;
};

template <typename T>
class Grid {
 public:
  Grid() = default;
  explicit Grid(int n, T fill = T{}) : n_(n), cells_(static_cast<std::size_t>(n) * n, fill) {
    if (n <= 0) throw Error("grid order must be positive");
  }

  int order() const { return n_; }
  std::size_t size() const { return cells_.size(); }

  T& operator()(int row, int col) { return cells_[static_cast<std::size_t>(row) * n_ + col]; }
  const T& operator()(int row, int col) const {
    return cells_[static_cast<std::size_t>(row) * n_ + col];
  }
  T& operator[](std::size_t i) { return cells_[i]; }
  const T& operator[](std::size_t i) const { return cells_[i]; }

  std::vector<T>& cells() { return cells_; }
  const std::vector<T>& cells() const { return cells_; }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  int n_ = 0;
  std::vector<T> cells_;
};

// Binary mask (ROI or center matrix).
using GridMask = Grid<std::uint8_t>;
// Softmax head output.
using ProbMatrix = Grid<double>;

inline int count_ones(const GridMask& m) {
  return static_cast<int>(std::count(m.cells().begin(), m.cells().end(), std::uint8_t{1}));
}

inline std::vector<Cell> ones_of(const GridMask& m) {
  std::vector<Cell> out;
  for (int i = 0; i < m.order(); ++i)
    for (int j = 0; j < m.order(); ++j)
      if (m(i, j)) out.push_back({i, j});
  return out;
}

inline double total_mass(const ProbMatrix& p) {
  double s = 0.0;
  for (double v : p.cells()) s += v;
  return s;
}

inline bool is_probability_matrix(const ProbMatrix& p, double tol = 1e-6) {
  for (double v : p.cells()) {
    if (!(v > 0.0 && v < 1.0)) return false;
  }
  return std::abs(total_mass(p) - 1.0) <= tol;
}

inline ProbMatrix uniform_probs(int n) {
  return ProbMatrix(n, 1.0 / (static_cast<double>(n) * n));
}

}  // namespace mmloc
