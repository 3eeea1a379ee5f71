#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mmloc/core_types.hpp"
#include "mmloc/image.hpp"
#include "mmloc/mask_targets.hpp"

namespace mmloc {

// Per-frame box file conventions:
//   plain   - "x y w h"
//   lasot   - "x,y,w,h" (groundtruth.txt of LaSOT)
//   nfs     - "id xmin ymin xmax ymax frame lost occluded generated label"
//   corners - "x1 y1 x2 y2"
enum class AnnotationFormat { Plain, Lasot, Nfs, Corners };

inline AnnotationFormat annotation_format_from_name(const std::string& tag) {
  if (tag == "plain") return AnnotationFormat::Plain;
  if (tag == "lasot") return AnnotationFormat::Lasot;
  if (tag == "nfs") return AnnotationFormat::Nfs;
  if (tag == "corners") return AnnotationFormat::Corners;
  throw Error("unknown annotation format '" + tag + "'");
}

// Name of the image list expected next to an annotation file.
inline constexpr const char* kImageManifestName = "images.txt";

namespace detail {

inline std::vector<std::string> split_fields(std::string line) {
  for (char& ch : line) {
    if (ch == ',' || ch == '\t' || ch == '\r') ch = ' ';
  }
  std::istringstream ss(line);
  std::vector<std::string> out;
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

inline double parse_real(const std::string& tok, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(tok, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != tok.size()) throw Error(where + ": not a number: '" + tok + "'");
  return v;
}

inline bool blank(const std::string& line) {
  return line.find_first_not_of(" \t\r\n") == std::string::npos;
}

}  // namespace detail

inline BoundingBox parse_annotation_line(const std::string& line, AnnotationFormat fmt,
                                         const std::string& where) {
  const auto f = detail::split_fields(line);
  auto num = [&](std::size_t i) { return detail::parse_real(f[i], where); };
  BoundingBox b;
  switch (fmt) {
    case AnnotationFormat::Plain:
    case AnnotationFormat::Lasot:
      if (f.size() != 4) throw Error(where + ": expected 4 fields, got " + std::to_string(f.size()));
      b = {num(0), num(1), num(2), num(3)};
      break;
    case AnnotationFormat::Corners:
      if (f.size() != 4) throw Error(where + ": expected 4 fields, got " + std::to_string(f.size()));
      b = BoundingBox::from_corners(num(0), num(1), num(2), num(3));
      break;
    case AnnotationFormat::Nfs:
      if (f.size() < 5) throw Error(where + ": expected at least 5 fields, got " + std::to_string(f.size()));
      b = BoundingBox::from_corners(num(1), num(2), num(3), num(4));
      break;
  }
  if (!b.valid()) throw Error(where + ": box has non-positive size");
  return b;
}

inline std::vector<BoundingBox> read_boxes(const std::filesystem::path& path, AnnotationFormat fmt) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open annotation file '" + path.string() + "'");
  std::vector<BoundingBox> boxes;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::blank(line)) continue;
    boxes.push_back(
        parse_annotation_line(line, fmt, path.string() + ":" + std::to_string(lineno)));
  }
  return boxes;
}

inline std::vector<std::filesystem::path> read_image_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open image manifest '" + path.string() + "'");
  std::vector<std::filesystem::path> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::blank(line)) continue;
    std::filesystem::path p(line);
    out.push_back(p.is_absolute() ? p : path.parent_path() / p);
  }
  return out;
}

// Boxes from `path` paired in order with the images listed in the sibling
// images.txt. Frames are returned in annotation order.
inline std::vector<AnnotatedFrame> ingest_annotations(const std::filesystem::path& path,
                                                      AnnotationFormat fmt) {
  const auto boxes = read_boxes(path, fmt);
  if (boxes.empty()) return {};
  const auto manifest = path.parent_path() / kImageManifestName;
  const auto images = read_image_manifest(manifest);
  if (images.size() < boxes.size()) {
    throw Error("image manifest '" + manifest.string() + "' lists " +
                std::to_string(images.size()) + " images for " + std::to_string(boxes.size()) +
                " annotations");
  }
  std::vector<AnnotatedFrame> frames;
  frames.reserve(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (!std::filesystem::exists(images[i])) {
      throw Error("missing image file '" + images[i].string() + "'");
    }
    AnnotatedFrame fr;
    fr.image = read_pnm(images[i]);
    fr.box = boxes[i];
    fr.source_id = path.stem().string() + "#" + std::to_string(i);
    if (!fr.box.inside(fr.image.w, fr.image.h)) {
      auto clipped = clip_to_frame(fr.box, fr.image.w, fr.image.h);
      if (!clipped) {
        throw Error(path.string() + ":" + std::to_string(i + 1) + ": box lies outside image '" +
                    images[i].string() + "'");
      }
      fr.box = *clipped;
    }
    frames.push_back(std::move(fr));
  }
  return frames;
}

}  // namespace mmloc
