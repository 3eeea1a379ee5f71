#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmloc/annotations.hpp"
#include "mmloc/checkpoint.hpp"
#include "mmloc/localization.hpp"
#include "mmloc/mask_targets.hpp"
#include "mmloc/synthetic.hpp"
#include "mmloc/tracking.hpp"
#include "mmloc/training.hpp"

namespace mmloc::harness {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Run configuration

struct TrackingSettings {
  EvalConfig eval;
  int runs = 1;
  double jitter = 0.1;
  std::uint64_t seed = 0;
};

struct RunConfig {
  std::vector<fs::path> annotations;
  std::string format = "plain";
  double window_scale = kDefaultWindowScale;
  int samples_per_frame = 1;
  std::uint64_t seed = 0;
  fs::path archive = "archive";
  fs::path output_dir = "out";
  fs::path checkpoint = "out/model.ckpt";
  TrainConfig train;
  LocalizerConfig localizer;
  TrackingSettings tracking;

  // Nested invariants only; paths are checked by the command that uses them.
  void validate() const {
    annotation_format_from_name(format);
    if (!(window_scale >= 1.0)) throw Error("config: window_scale must be >= 1");
    if (samples_per_frame < 1) throw Error("config: samples_per_frame must be >= 1");
    train.validate();
    localizer.validate();
    tracking.eval.validate();
    if (tracking.runs < 1) throw Error("config: tracking.runs must be >= 1");
    if (!(tracking.jitter >= 0.0 && tracking.jitter < 1.0))
      throw Error("config: tracking.jitter must lie in [0, 1)");
  }
};

inline json default_config_json() {
  const RunConfig d;
  return {
      {"dataset", {{"annotations", json::array()}, {"format", d.format}}},
      {"window_scale", d.window_scale},
      {"samples_per_frame", d.samples_per_frame},
      {"seed", d.seed},
      {"archive", d.archive.string()},
      {"output_dir", d.output_dir.string()},
      {"checkpoint", d.checkpoint.string()},
      {"network", [&] {
         json n = widths_to_json(d.train.widths);
         n["init_seed"] = d.train.init_seed;
         return n;
       }()},
      {"train",
       {{"learning_rate", d.train.learning_rate},
        {"epochs", d.train.epochs},
        {"batch_size", d.train.batch_size},
        {"shuffle_seed", d.train.shuffle_seed},
        {"checkpoint_every", d.train.checkpoint_every}}},
      {"loss", {{"alpha1", d.train.loss.alpha1}, {"alpha2", d.train.loss.alpha2}, {"gamma", d.train.loss.gamma}}},
      {"localizer",
       {{"roi_threshold", d.localizer.roi_threshold},
        {"center_threshold", d.localizer.center_threshold},
        {"scale_gain", d.localizer.scale_gain},
        {"scale_smoothing", d.localizer.scale_smoothing}}},
      {"tracking",
       {{"segments", d.tracking.eval.segments},
        {"failure_iou", d.tracking.eval.failure.min_iou},
        {"failure_frames", d.tracking.eval.failure.frames},
        {"runs", d.tracking.runs},
        {"jitter", d.tracking.jitter},
        {"seed", d.tracking.seed}}},
  };
}

// "a.b.c=value": value is parsed as JSON when possible, else taken as a string.
inline void apply_override(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw Error("override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  std::string pointer = "/" + key;
  for (char& ch : pointer) {
    if (ch == '.') ch = '/';
  }
  const json::json_pointer ptr(pointer);
  if (!cfg.contains(ptr)) throw Error("override: unknown config key '" + key + "'");
  cfg[ptr] = value;
}

inline RunConfig parse_config(const json& j, const fs::path& base_dir = {}) {
  auto resolve = [&](const std::string& p) {
    fs::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  RunConfig c;
  try {
    const json& ds = j.at("dataset");
    const json& ann = ds.at("annotations");
    if (ann.is_string()) {
      c.annotations.push_back(resolve(ann.get<std::string>()));
    } else {
      for (const auto& a : ann) c.annotations.push_back(resolve(a.get<std::string>()));
    }
    c.format = ds.at("format").get<std::string>();
    c.window_scale = j.at("window_scale").get<double>();
    c.samples_per_frame = j.at("samples_per_frame").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.archive = resolve(j.at("archive").get<std::string>());
    c.output_dir = resolve(j.at("output_dir").get<std::string>());
    c.checkpoint = resolve(j.at("checkpoint").get<std::string>());
    c.train.widths = widths_from_json(j.at("network"));
    c.train.init_seed = j.at("network").at("init_seed").get<std::uint64_t>();
    const json& t = j.at("train");
    c.train.learning_rate = t.at("learning_rate").get<double>();
    c.train.epochs = t.at("epochs").get<int>();
    c.train.batch_size = t.at("batch_size").get<int>();
    c.train.shuffle_seed = t.at("shuffle_seed").get<std::uint64_t>();
    c.train.checkpoint_every = t.at("checkpoint_every").get<int>();
    const json& l = j.at("loss");
    c.train.loss = {l.at("alpha1").get<double>(), l.at("alpha2").get<double>(),
                    l.at("gamma").get<double>()};
    const json& lz = j.at("localizer");
    c.localizer = {lz.at("roi_threshold").get<double>(), lz.at("center_threshold").get<double>(),
                   lz.at("scale_gain").get<double>(), lz.at("scale_smoothing").get<double>()};
    const json& tr = j.at("tracking");
    c.tracking.eval.segments = tr.at("segments").get<int>();
    c.tracking.eval.failure.min_iou = tr.at("failure_iou").get<double>();
    c.tracking.eval.failure.frames = tr.at("failure_frames").get<int>();
    c.tracking.runs = tr.at("runs").get<int>();
    c.tracking.jitter = tr.at("jitter").get<double>();
    c.tracking.seed = tr.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw Error(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

// Defaults, then the file (if any), then overrides; relative paths resolve
// against the config file's directory.
inline RunConfig load_config(const std::optional<fs::path>& file,
                             const std::vector<std::string>& overrides = {}) {
  json j = default_config_json();
  fs::path base;
  if (file) {
    std::ifstream in(*file);
    if (!in) throw Error("cannot open config '" + file->string() + "'");
    json user;
    try {
      user = json::parse(in);
    } catch (const json::exception& e) {
      throw Error("config '" + file->string() + "': " + e.what());
    }
    j.merge_patch(user);
    base = file->parent_path();
  }
  for (const auto& o : overrides) apply_override(j, o);
  return parse_config(j, base);
}

// ---------------------------------------------------------------------------
// Sample archive: <dir>/manifest.json plus samples/<id>.ppm and samples/<id>.json

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << v;
  return ss.str();
}

inline json mask_rows(const GridMask& m) {
  json rows = json::array();
  for (int i = 0; i < m.order(); ++i) {
    std::string r;
    for (int j = 0; j < m.order(); ++j) r.push_back(m(i, j) ? '1' : '0');
    rows.push_back(r);
  }
  return rows;
}

inline json box_json(const BoundingBox& b) { return json::array({b.x, b.y, b.w, b.h}); }

inline BoundingBox box_from_json(const json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(), j.at(3).get<double>()};
}

inline std::uint64_t sample_seed(std::uint64_t seed, std::size_t frame, int k) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(frame), static_cast<std::uint32_t>(k)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

struct PrepareResult {
  fs::path manifest;
  std::size_t total = 0;
  std::map<SizeClass, std::size_t> counts;
  std::string digest;  // FNV-1a of the manifest text
};

inline PrepareResult cmd_prepare(const RunConfig& cfg) {
  cfg.validate();
  if (cfg.annotations.empty()) throw Error("prepare: no annotation files configured");
  const auto fmt = annotation_format_from_name(cfg.format);
  std::vector<AnnotatedFrame> frames;
  std::vector<std::string> errors;
  for (const auto& path : cfg.annotations) {
    try {
      auto f = ingest_annotations(path, fmt);
      std::move(f.begin(), f.end(), std::back_inserter(frames));
    } catch (const Error& e) {
      errors.push_back(e.what());
    }
  }
  if (!errors.empty()) {
    std::string msg = "prepare: " + std::to_string(errors.size()) + " input file(s) failed:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw Error(msg);
  }

  fs::create_directories(cfg.archive / "samples");
  json manifest;
  manifest["seed"] = cfg.seed;
  manifest["window_scale"] = cfg.window_scale;
  manifest["samples_per_frame"] = cfg.samples_per_frame;
  manifest["samples"] = json::array();
  PrepareResult res;
  for (SizeClass c : kSizeClasses) res.counts[c] = 0;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    for (int k = 0; k < cfg.samples_per_frame; ++k) {
      const TrainingSample s = synthesize_sample(frames[i], sample_seed(cfg.seed, i, k), cfg.window_scale);
      std::ostringstream id;
      id << std::setw(6) << std::setfill('0') << res.total;
      write_ppm(cfg.archive / "samples" / (id.str() + ".ppm"), s.patch);
      json rec = {{"size_class", name_of(s.size_class)},
                  {"adjusted_box", box_json(s.adjusted_box)},
                  {"roi", mask_rows(s.targets.roi)},
                  {"center", mask_rows(s.targets.center)}};
      std::ofstream(cfg.archive / "samples" / (id.str() + ".json")) << rec.dump(1) << '\n';
      manifest["samples"].push_back({{"id", id.str()},
                                     {"size_class", name_of(s.size_class)},
                                     {"adjusted_box", box_json(s.adjusted_box)},
                                     {"source", frames[i].source_id}});
      ++res.counts[s.size_class];
      ++res.total;
    }
  }
  manifest["total"] = res.total;
  for (SizeClass c : kSizeClasses) manifest["counts"][std::string(name_of(c))] = res.counts[c];
  manifest["checkpoint"] = nullptr;
  const std::string text = manifest.dump(1);
  res.manifest = cfg.archive / "manifest.json";
  std::ofstream(res.manifest) << text << '\n';
  res.digest = hex64(fnv1a(text));
  return res;
}

inline json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open '" + p.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error("'" + p.string() + "': " + e.what());
  }
}

inline std::vector<TrainingSample> load_archive(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  if (!fs::exists(mpath)) throw Error("sample archive not found: '" + mpath.string() + "'");
  const json manifest = read_json_file(mpath);
  std::vector<TrainingSample> out;
  for (const auto& entry : manifest.at("samples")) {
    const std::string id = entry.at("id").get<std::string>();
    TrainingSample s;
    s.size_class = size_class_from_name(entry.at("size_class").get<std::string>());
    s.patch = read_pnm(dir / "samples" / (id + ".ppm"));
    if (s.patch.w != side_of(s.size_class) || s.patch.h != side_of(s.size_class)) {
      throw Error("archive sample " + id + ": patch size does not match its size class");
    }
    s.adjusted_box = box_from_json(entry.at("adjusted_box"));
    s.targets = make_targets(s.adjusted_box, side_of(s.size_class));
    const json rec = read_json_file(dir / "samples" / (id + ".json"));
    if (rec.at("roi") != mask_rows(s.targets.roi) || rec.at("center") != mask_rows(s.targets.center)) {
      throw Error("archive sample " + id + ": stored targets disagree with its box");
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// train

struct TrainSummary {
  fs::path checkpoint;
  fs::path report_csv;
  std::vector<fs::path> periodic_checkpoints;
  TrainReport report;
};

inline TrainSummary cmd_train(const RunConfig& cfg) {
  cfg.validate();
  const auto samples = load_archive(cfg.archive);
  fs::create_directories(cfg.output_dir);
  TrainSummary sum;
  auto on_ckpt = [&](int epoch, const ModelParameters& p) {
    if (epoch == cfg.train.epochs) return;  // the final one is written below
    fs::create_directories(cfg.output_dir / "checkpoints");
    std::ostringstream name;
    name << "epoch_" << std::setw(4) << std::setfill('0') << epoch << ".ckpt";
    sum.periodic_checkpoints.push_back(cfg.output_dir / "checkpoints" / name.str());
    save_checkpoint(sum.periodic_checkpoints.back(), p);
  };
  TrainResult res = train(samples, cfg.train, on_ckpt);
  if (cfg.checkpoint.has_parent_path()) fs::create_directories(cfg.checkpoint.parent_path());
  save_checkpoint(cfg.checkpoint, res.params);
  sum.checkpoint = cfg.checkpoint;
  sum.report_csv = cfg.output_dir / "train_report.csv";
  res.report.write_csv(sum.report_csv.string());
  sum.report = std::move(res.report);

  const fs::path mpath = cfg.archive / "manifest.json";
  json manifest = read_json_file(mpath);
  manifest["checkpoint"] = fs::absolute(cfg.checkpoint).string();
  std::ofstream(mpath) << manifest.dump(1) << '\n';
  return sum;
}

// ---------------------------------------------------------------------------
// track

struct TrackRequest {
  fs::path sequence;                     // annotation file of the sequence
  std::string format = "plain";
  std::optional<BoundingBox> init_box;   // default: ground truth of frame 0
};

struct TrackSummary {
  EvalRecord record;
  std::optional<MonteCarloTable> monte_carlo;
  fs::path iou_csv, boxes_csv, summary_json, monte_carlo_csv;
};

inline TrackSummary cmd_track(const RunConfig& cfg, const TrackRequest& req) {
  cfg.validate();
  if (!fs::exists(cfg.checkpoint)) throw Error("checkpoint not found: '" + cfg.checkpoint.string() + "'");
  const ModelParameters params = load_checkpoint(cfg.checkpoint);
  const auto frames_in = ingest_annotations(req.sequence, annotation_format_from_name(req.format));
  if (frames_in.empty()) throw Error("track: sequence '" + req.sequence.string() + "' has no frames");
  std::vector<Image> frames;
  std::vector<BoundingBox> truth;
  for (const auto& f : frames_in) {
    frames.push_back(f.image);
    truth.push_back(f.box);
  }
  if (req.init_box && !req.init_box->inside(frames[0].w, frames[0].h)) {
    const auto& b = *req.init_box;
    std::ostringstream msg;
    msg << "track: invalid init box (" << b.x << ", " << b.y << ", " << b.w << ", " << b.h
        << ") for a " << frames[0].w << "x" << frames[0].h << " frame";
    throw Error(msg.str());
  }

  TrackSummary sum;
  CnnTracker tracker(params, cfg.localizer, cfg.window_scale);
  sum.record = evaluate_sequence(tracker, frames, truth, cfg.tracking.eval,
                                 req.init_box ? &*req.init_box : nullptr);
  fs::create_directories(cfg.output_dir);
  sum.iou_csv = cfg.output_dir / "iou.csv";
  sum.boxes_csv = cfg.output_dir / "boxes.csv";
  sum.summary_json = cfg.output_dir / "summary.json";
  write_iou_csv(sum.iou_csv.string(), sum.record);
  write_boxes_csv(sum.boxes_csv.string(), sum.record.boxes);
  json summary = summary_json(sum.record);
  summary["checkpoint"] = cfg.checkpoint.string();
  summary["sequence"] = req.sequence.string();
  if (cfg.tracking.runs > 1) {
    sum.monte_carlo = monte_carlo_eval(CnnTracker(params, cfg.localizer, cfg.window_scale), frames,
                                       truth, cfg.tracking.eval, cfg.tracking.runs,
                                       cfg.tracking.jitter, cfg.tracking.seed);
    sum.monte_carlo_csv = cfg.output_dir / "montecarlo.csv";
    sum.monte_carlo->write_csv(sum.monte_carlo_csv.string());
    summary["monte_carlo_failures"] = sum.monte_carlo->total_failures();
  }
  std::ofstream(sum.summary_json) << summary.dump(2) << '\n';
  return sum;
}

// ---------------------------------------------------------------------------
// compare

namespace detail {

inline std::vector<std::vector<std::string>> read_csv_rows(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open '" + p.string() + "'");
  std::vector<std::vector<std::string>> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (!std::isdigit(static_cast<unsigned char>(line.front()))) continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace detail

// frame_index,iou
inline std::vector<double> read_iou_csv(const fs::path& p) {
  std::vector<double> out;
  for (const auto& r : detail::read_csv_rows(p)) {
    if (r.size() != 2) throw Error("'" + p.string() + "': expected frame_index,iou rows");
    out.push_back(mmloc::detail::parse_real(r[1], p.string()));
  }
  return out;
}

// frame_index,x,y,w,h
inline std::vector<BoundingBox> read_boxes_csv(const fs::path& p) {
  std::vector<BoundingBox> out;
  for (const auto& r : detail::read_csv_rows(p)) {
    if (r.size() != 5) throw Error("'" + p.string() + "': expected frame_index,x,y,w,h rows");
    auto v = [&](int i) { return mmloc::detail::parse_real(r[i], p.string()); };
    out.push_back({v(1), v(2), v(3), v(4)});
  }
  return out;
}

struct ComparisonReport {
  std::vector<std::string> trackers;
  std::vector<std::vector<double>> iou;  // per tracker, aligned by frame
  std::vector<double> mean_iou;

  void write(const fs::path& dir) const {
    fs::create_directories(dir);
    std::ofstream series(dir / "comparison.csv");
    series << "frame_index";
    for (const auto& t : trackers) series << ',' << t;
    series << '\n';
    series.precision(10);
    const std::size_t n = iou.empty() ? 0 : iou.front().size();
    for (std::size_t f = 0; f < n; ++f) {
      series << f;
      for (const auto& s : iou) series << ',' << s[f];
      series << '\n';
    }
    std::ofstream table(dir / "comparison_summary.csv");
    table << "tracker,mean_iou,frames\n";
    table.precision(10);
    for (std::size_t i = 0; i < trackers.size(); ++i)
      table << trackers[i] << ',' << mean_iou[i] << ',' << n << '\n';
  }
};

// Our per-frame IoU series plus external trackers' boxes scored against the
// same ground truth with the same iou().
inline ComparisonReport cmd_compare(const std::vector<double>& ours,
                                    const std::vector<BoundingBox>& ground_truth,
                                    const std::vector<std::pair<std::string, std::vector<BoundingBox>>>& external) {
  ComparisonReport rep;
  auto add = [&](const std::string& name, std::vector<double> s) {
    double m = 0.0;
    for (double v : s) m += v;
    rep.trackers.push_back(name);
    rep.mean_iou.push_back(s.empty() ? 0.0 : m / static_cast<double>(s.size()));
    rep.iou.push_back(std::move(s));
  };
  add("ours", ours);
  for (const auto& [name, boxes] : external) {
    if (boxes.size() != ours.size() || ground_truth.size() != ours.size()) {
      throw Error("compare: series '" + name + "' has " + std::to_string(boxes.size()) +
                  " frames but ours has " + std::to_string(ours.size()) + " (ground truth " +
                  std::to_string(ground_truth.size()) + ")");
    }
    std::vector<double> s;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      s.push_back(boxes[i].valid() ? iou(boxes[i], ground_truth[i]) : 0.0);
    }
    add(name, std::move(s));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// synth: write a moving-rectangle sequence in the plain annotation layout.

struct SynthRequest {
  fs::path out_dir;
  int frames = 100;
  int width = 160;
  int height = 160;
  double box_w = 36;
  double box_h = 28;
  std::uint64_t seed = 1;
};

inline fs::path cmd_synth(const SynthRequest& req) {
  if (req.frames < 1) throw Error("synth: frames must be >= 1");
  const auto seq = synthetic::moving_rectangle(req.frames, req.width, req.height, req.box_w,
                                               req.box_h, req.seed);
  fs::create_directories(req.out_dir / "frames");
  std::ofstream gt(req.out_dir / "groundtruth.txt");
  std::ofstream list(req.out_dir / kImageManifestName);
  gt.precision(10);
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    std::ostringstream name;
    name << "frames/" << std::setw(5) << std::setfill('0') << i << ".ppm";
    write_ppm(req.out_dir / name.str(), seq.frames[i]);
    list << name.str() << '\n';
    const auto& b = seq.boxes[i];
    gt << b.x << ' ' << b.y << ' ' << b.w << ' ' << b.h << '\n';
  }
  return req.out_dir / "groundtruth.txt";
}

}  // namespace mmloc::harness
