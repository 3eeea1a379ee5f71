// Command line front end: synth, prepare, train, track, compare.
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mmloc/harness.hpp"

namespace h = mmloc::harness;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config, "JSON run configuration");
    app->add_option("--set", sets, "Override a config key, e.g. --set train.epochs=3")
        ->take_all();
  }

  mmloc::harness::RunConfig load(const std::vector<std::string>& extra = {}) const {
    std::optional<std::filesystem::path> file;
    if (!config.empty()) file = config;
    std::vector<std::string> all = extra;
    all.insert(all.end(), sets.begin(), sets.end());
    return h::load_config(file, all);
  }
};

mmloc::BoundingBox parse_box(const std::string& text) {
  const auto f = mmloc::detail::split_fields(text);
  if (f.size() != 4) throw mmloc::Error("--init expects x,y,w,h");
  auto v = [&](int i) { return mmloc::detail::parse_real(f[i], "--init"); };
  return {v(0), v(1), v(2), v(3)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mmloc: multi-scale mask localization tracker"};
  app.require_subcommand(1);

  // synth
  h::SynthRequest synth;
  std::string synth_out;
  auto* s = app.add_subcommand("synth", "Write a synthetic moving-rectangle sequence");
  s->add_option("-o,--out", synth_out, "Output directory")->required();
  s->add_option("--frames", synth.frames, "Number of frames");
  s->add_option("--width", synth.width, "Frame width");
  s->add_option("--height", synth.height, "Frame height");
  s->add_option("--box-w", synth.box_w, "Object width");
  s->add_option("--box-h", synth.box_h, "Object height");
  s->add_option("--seed", synth.seed, "Scene seed");

  // prepare
  Common prep_opts;
  std::vector<std::string> prep_ann;
  std::string prep_fmt, prep_archive;
  std::optional<std::uint64_t> prep_seed;
  auto* p = app.add_subcommand("prepare", "Synthesize training samples into an archive");
  prep_opts.attach(p);
  p->add_option("-a,--annotations", prep_ann, "Annotation file(s)");
  p->add_option("-f,--format", prep_fmt, "plain | lasot | nfs | corners");
  p->add_option("--archive", prep_archive, "Archive directory");
  p->add_option("--seed", prep_seed, "Sample seed");

  // train
  Common train_opts;
  std::string train_archive, train_ckpt;
  std::optional<int> train_epochs;
  auto* t = app.add_subcommand("train", "Train on a prepared archive");
  train_opts.attach(t);
  t->add_option("--archive", train_archive, "Archive directory");
  t->add_option("--checkpoint", train_ckpt, "Output checkpoint path");
  t->add_option("--epochs", train_epochs, "Epochs");

  // track
  Common track_opts;
  h::TrackRequest track_req;
  std::string track_seq, track_init, track_ckpt, track_out;
  std::optional<int> track_runs;
  auto* k = app.add_subcommand("track", "Track a sequence and score it");
  track_opts.attach(k);
  k->add_option("-s,--sequence", track_seq, "Sequence annotation file")->required();
  k->add_option("-f,--format", track_req.format, "Annotation format");
  k->add_option("--init", track_init, "Initial box x,y,w,h (default: first ground truth)");
  k->add_option("--checkpoint", track_ckpt, "Checkpoint path");
  k->add_option("--runs", track_runs, "Monte Carlo runs");
  k->add_option("-o,--output-dir", track_out, "Output directory");

  // compare
  std::string cmp_ours, cmp_gt, cmp_fmt = "plain", cmp_out = "compare";
  std::vector<std::string> cmp_ext;
  auto* c = app.add_subcommand("compare", "Merge IoU series of several trackers");
  c->add_option("--ours", cmp_ours, "Our iou.csv")->required();
  c->add_option("--ground-truth", cmp_gt, "Ground-truth annotation file");
  c->add_option("-f,--format", cmp_fmt, "Ground-truth format");
  c->add_option("--external", cmp_ext, "External boxes CSVs (frame_index,x,y,w,h)");
  c->add_option("-o,--out", cmp_out, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*s) {
      synth.out_dir = synth_out;
      std::cout << h::cmd_synth(synth).string() << '\n';
    } else if (*p) {
      std::vector<std::string> extra;
      if (!prep_ann.empty()) extra.push_back("dataset.annotations=" + nlohmann::json(prep_ann).dump());
      if (!prep_fmt.empty()) extra.push_back("dataset.format=" + nlohmann::json(prep_fmt).dump());
      if (!prep_archive.empty()) extra.push_back("archive=" + nlohmann::json(prep_archive).dump());
      if (prep_seed) extra.push_back("seed=" + std::to_string(*prep_seed));
      const auto res = h::cmd_prepare(prep_opts.load(extra));
      std::cout << "samples " << res.total;
      for (const auto& [cls, n] : res.counts) std::cout << ' ' << mmloc::name_of(cls) << '=' << n;
      std::cout << "\ndigest " << res.digest << '\n';
    } else if (*t) {
      std::vector<std::string> extra;
      if (!train_archive.empty()) extra.push_back("archive=" + nlohmann::json(train_archive).dump());
      if (!train_ckpt.empty()) extra.push_back("checkpoint=" + nlohmann::json(train_ckpt).dump());
      if (train_epochs) extra.push_back("train.epochs=" + std::to_string(*train_epochs));
      const auto res = h::cmd_train(train_opts.load(extra));
      std::cout << "checkpoint " << res.checkpoint.string() << "\nreport " << res.report_csv.string()
                << "\nfinal_loss " << res.report.epoch_mean_loss.back() << '\n';
    } else if (*k) {
      std::vector<std::string> extra;
      if (!track_ckpt.empty()) extra.push_back("checkpoint=" + nlohmann::json(track_ckpt).dump());
      if (!track_out.empty()) extra.push_back("output_dir=" + nlohmann::json(track_out).dump());
      if (track_runs) extra.push_back("tracking.runs=" + std::to_string(*track_runs));
      track_req.sequence = track_seq;
      if (!track_init.empty()) track_req.init_box = parse_box(track_init);
      const auto res = h::cmd_track(track_opts.load(extra), track_req);
      std::cout << "mean_iou " << res.record.mean_iou << "\nfailures " << res.record.failures
                << "\nfps " << res.record.fps << '\n';
      if (res.monte_carlo) std::cout << "monte_carlo_failures " << res.monte_carlo->total_failures() << '\n';
    } else if (*c) {
      const auto ours = h::read_iou_csv(cmp_ours);
      std::vector<mmloc::BoundingBox> gt;
      std::vector<std::pair<std::string, std::vector<mmloc::BoundingBox>>> ext;
      if (!cmp_ext.empty()) {
        if (cmp_gt.empty()) throw mmloc::Error("compare: --external needs --ground-truth");
        gt = mmloc::read_boxes(cmp_gt, mmloc::annotation_format_from_name(cmp_fmt));
        for (const auto& e : cmp_ext) ext.emplace_back(std::filesystem::path(e).stem().string(), h::read_boxes_csv(e));
      }
      const auto rep = h::cmd_compare(ours, gt, ext);
      rep.write(cmp_out);
      for (std::size_t i = 0; i < rep.trackers.size(); ++i)
        std::cout << rep.trackers[i] << ' ' << rep.mean_iou[i] << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
