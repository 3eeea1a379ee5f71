#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

#include "mmloc/harness.hpp"
#include "test_util.hpp"

using namespace mmloc;
namespace h = mmloc::harness;
namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kSmallNet = {
    "network.branch448=3",     "network.branch448_out=4", "network.branch224=4",
    "network.shared_mid=4",    "network.branch56=4",      "network.trunk=8"};

std::string error_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

// Synthetic sequence plus a config pointing at it and at scratch outputs.
struct Workspace {
  fs::path dir, gt;
  std::vector<std::string> overrides;

  Workspace(const std::string& name, int frames) : dir(testutil::scratch(name)) {
    gt = h::cmd_synth({dir / "seq", frames, 96, 96, 24, 20, 5});
    overrides = kSmallNet;
    overrides.push_back("dataset.annotations=" + nlohmann::json(gt.string()).dump());
    overrides.push_back("archive=" + nlohmann::json((dir / "archive").string()).dump());
    overrides.push_back("output_dir=" + nlohmann::json((dir / "out").string()).dump());
    overrides.push_back("checkpoint=" + nlohmann::json((dir / "out/model.ckpt").string()).dump());
    overrides.push_back("train.epochs=1");
    overrides.push_back("train.batch_size=2");
    overrides.push_back("loss.alpha1=1");
    overrides.push_back("loss.alpha2=1");
    overrides.push_back("loss.gamma=0.1");
  }

  h::RunConfig config(std::vector<std::string> extra = {}) const {
    auto all = overrides;
    all.insert(all.end(), extra.begin(), extra.end());
    return h::load_config(std::nullopt, all);
  }
};

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MMLOC_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST(Config, DefaultsMatchLibraryDefaults) {
  const auto c = h::load_config(std::nullopt);
  const TrainConfig t;
  const LocalizerConfig l;
  EXPECT_EQ(c.train.learning_rate, t.learning_rate);
  EXPECT_EQ(c.train.epochs, t.epochs);
  EXPECT_EQ(c.train.batch_size, t.batch_size);
  EXPECT_EQ(c.train.loss.alpha1, 1e-5);
  EXPECT_EQ(c.train.loss.alpha2, 234.0);
  EXPECT_EQ(c.train.loss.gamma, 1e-4);
  EXPECT_EQ(c.localizer.roi_threshold, l.roi_threshold);
  EXPECT_EQ(c.localizer.center_threshold, l.center_threshold);
  EXPECT_EQ(c.train.widths.trunk, WidthConfig{}.trunk);
  EXPECT_EQ(c.tracking.eval.segments, 3);
  EXPECT_EQ(c.tracking.eval.failure.frames, 15);
  EXPECT_EQ(c.window_scale, 2.0);
}

TEST(Config, OverridesAndValidation) {
  const auto c = h::load_config(std::nullopt, {"train.epochs=3", "localizer.roi_threshold=0.006",
                                               "dataset.format=lasot", "network.trunk=16"});
  EXPECT_EQ(c.train.epochs, 3);
  EXPECT_EQ(c.localizer.roi_threshold, 0.006);
  EXPECT_EQ(c.format, "lasot");
  EXPECT_EQ(c.train.widths.trunk, 16);
  EXPECT_NE(error_of([] { h::load_config(std::nullopt, {"train.epoch=3"}); }).find("train.epoch"),
            std::string::npos);
  EXPECT_THROW(h::load_config(std::nullopt, {"train.epochs=0"}), Error);
  EXPECT_THROW(h::load_config(std::nullopt, {"dataset.format=voc"}), Error);
  EXPECT_THROW(h::load_config(std::nullopt, {"tracking.jitter=1.5"}), Error);
  EXPECT_THROW(h::load_config(std::nullopt, {"noequals"}), Error);
  EXPECT_THROW(h::load_config(std::nullopt, {"train.epochs=\"many\""}), Error);
}

TEST(Config, FileMergesAndResolvesRelativePaths) {
  const auto dir = testutil::scratch("cfg_file");
  std::ofstream(dir / "run.json") << R"({"dataset": {"annotations": ["a/gt.txt"]},
                                        "archive": "arch", "train": {"epochs": 7}})";
  const auto c = h::load_config(dir / "run.json", {"train.batch_size=4"});
  ASSERT_EQ(c.annotations.size(), 1u);
  EXPECT_EQ(c.annotations[0], dir / "a/gt.txt");
  EXPECT_EQ(c.archive, dir / "arch");
  EXPECT_EQ(c.train.epochs, 7);
  EXPECT_EQ(c.train.batch_size, 4);
  EXPECT_EQ(c.train.learning_rate, TrainConfig{}.learning_rate);
  const auto missing = error_of([&] { h::load_config(dir / "nope.json"); });
  EXPECT_NE(missing.find("nope.json"), std::string::npos);
  std::ofstream(dir / "bad.json") << "{ not json";
  EXPECT_THROW(h::load_config(dir / "bad.json"), Error);
}

TEST(Prepare, ThreeSamplesPerFrameAndStableDigest) {
  Workspace ws("prep", 10);
  const auto cfg = ws.config({"samples_per_frame=3", "seed=4"});
  const auto a = h::cmd_prepare(cfg);
  EXPECT_EQ(a.total, 30u);
  std::size_t sum = 0;
  for (const auto& [cls, n] : a.counts) sum += n;
  EXPECT_EQ(sum, a.total);
  const auto b = h::cmd_prepare(cfg);
  EXPECT_EQ(a.digest, b.digest);
  const auto c = h::cmd_prepare(ws.config({"samples_per_frame=3", "seed=5"}));
  EXPECT_NE(a.digest, c.digest);

  h::cmd_prepare(cfg);
  const auto samples = h::load_archive(cfg.archive);
  ASSERT_EQ(samples.size(), 30u);
  for (const auto& s : samples) {
    EXPECT_EQ(s.patch.w, side_of(s.size_class));
    EXPECT_EQ(count_ones(s.targets.center), 1);
  }
  const auto manifest = h::read_json_file(a.manifest);
  EXPECT_EQ(manifest.at("total"), 30);
  EXPECT_TRUE(manifest.at("checkpoint").is_null());
}

TEST(Prepare, ReportsEveryBadInputFile) {
  Workspace ws("prep_bad", 3);
  std::ofstream(ws.dir / "broken.txt") << "1 2 3\n";
  const auto msg = error_of([&] {
    h::cmd_prepare(ws.config({"dataset.annotations=[\"" + (ws.dir / "missing.txt").string() +
                              "\", \"" + (ws.dir / "broken.txt").string() + "\"]"}));
  });
  EXPECT_NE(msg.find("2 input file(s)"), std::string::npos) << msg;
  EXPECT_NE(msg.find("missing.txt"), std::string::npos) << msg;
  EXPECT_NE(msg.find("broken.txt"), std::string::npos) << msg;
}

TEST(Prepare, TamperedArchiveDetected) {
  Workspace ws("prep_tamper", 2);
  const auto cfg = ws.config();
  h::cmd_prepare(cfg);
  auto m = h::read_json_file(cfg.archive / "manifest.json");
  m["samples"][0]["adjusted_box"] = nlohmann::json::array({1, 1, 2, 2});
  std::ofstream(cfg.archive / "manifest.json") << m.dump();
  EXPECT_THROW(h::load_archive(cfg.archive), Error);
}

TEST(Train, SmokeWritesCheckpointsAndReport) {
  Workspace ws("train", 4);
  const auto cfg = ws.config({"train.epochs=2", "train.checkpoint_every=1"});
  h::cmd_prepare(cfg);
  const auto sum = h::cmd_train(cfg);
  EXPECT_TRUE(fs::exists(sum.checkpoint));
  ASSERT_EQ(sum.periodic_checkpoints.size(), 1u);
  EXPECT_TRUE(fs::exists(sum.periodic_checkpoints[0]));
  EXPECT_EQ(sum.report.epoch_samples, (std::vector<long>{4, 4}));
  EXPECT_EQ(sum.report.rows.size(), 2u);  // one size class present
  const auto loaded = load_checkpoint(sum.checkpoint);
  EXPECT_EQ(loaded.widths.trunk, 8);
  const auto m = h::read_json_file(cfg.archive / "manifest.json");
  EXPECT_EQ(m.at("checkpoint").get<std::string>(), fs::absolute(cfg.checkpoint).string());
}

TEST(Train, MissingArchiveNamesPath) {
  Workspace ws("train_missing", 1);
  const auto msg = error_of([&] { h::cmd_train(ws.config()); });
  EXPECT_NE(msg.find((ws.dir / "archive" / "manifest.json").string()), std::string::npos) << msg;
}

TEST(Track, SmokeAndMonteCarlo) {
  Workspace ws("track", 12);
  const auto cfg = ws.config({"localizer.roi_threshold=0.006"});
  h::cmd_prepare(cfg);
  h::cmd_train(cfg);
  const auto sum = h::cmd_track(cfg, {ws.gt, "plain", std::nullopt});
  EXPECT_EQ(sum.record.iou.size(), 12u);
  EXPECT_EQ(h::read_iou_csv(sum.iou_csv), sum.record.iou);
  EXPECT_EQ(h::read_boxes_csv(sum.boxes_csv).size(), 12u);
  const auto summary = h::read_json_file(sum.summary_json);
  EXPECT_EQ(summary.at("frames"), 12);
  EXPECT_FALSE(sum.monte_carlo);

  const auto mc = h::cmd_track(ws.config({"tracking.runs=10", "localizer.roi_threshold=0.006"}),
                               {ws.gt, "plain", std::nullopt});
  ASSERT_TRUE(mc.monte_carlo);
  EXPECT_EQ(mc.monte_carlo->rows.size(), 10u);
  EXPECT_TRUE(fs::exists(mc.monte_carlo_csv));
}

TEST(Track, InvalidInitAndMissingCheckpoint) {
  Workspace ws("track_bad", 3);
  const auto cfg = ws.config();
  EXPECT_NE(error_of([&] { h::cmd_track(cfg, {ws.gt, "plain", std::nullopt}); }).find("model.ckpt"),
            std::string::npos);
  h::cmd_prepare(cfg);
  h::cmd_train(cfg);
  const auto msg = error_of([&] { h::cmd_track(cfg, {ws.gt, "plain", BoundingBox{90, 90, 20, 20}}); });
  EXPECT_NE(msg.find("invalid init box"), std::string::npos) << msg;
}

TEST(Compare, OursOnlyAndAlignedSeries) {
  const std::vector<BoundingBox> gt{{0, 0, 10, 10}, {1, 0, 10, 10}, {2, 0, 10, 10}};
  const std::vector<double> ours{1.0, 0.5, 0.0};
  const auto solo = h::cmd_compare(ours, {}, {});
  ASSERT_EQ(solo.trackers.size(), 1u);
  EXPECT_DOUBLE_EQ(solo.mean_iou[0], 0.5);

  const std::vector<BoundingBox> shifted{{0, 0, 10, 10}, {1, 5, 10, 10}, {0, 0, 0, 0}};
  const auto rep = h::cmd_compare(ours, gt, {{"perfect", gt}, {"shifted", shifted}});
  ASSERT_EQ(rep.trackers, (std::vector<std::string>{"ours", "perfect", "shifted"}));
  EXPECT_DOUBLE_EQ(rep.mean_iou[1], 1.0);
  EXPECT_DOUBLE_EQ(rep.iou[2][1], 50.0 / 150.0);
  EXPECT_DOUBLE_EQ(rep.iou[2][2], 0.0);

  const auto dir = testutil::scratch("compare");
  rep.write(dir);
  std::ifstream in(dir / "comparison.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "frame_index,ours,perfect,shifted");
}

TEST(Compare, MisalignedLengthsNameTheSeries) {
  const std::vector<BoundingBox> gt(3, {0, 0, 5, 5});
  const std::vector<BoundingBox> shortbox(2, {0, 0, 5, 5});
  const auto msg = error_of([&] { h::cmd_compare({1, 1, 1}, gt, {{"other", shortbox}}); });
  EXPECT_NE(msg.find("'other' has 2 frames but ours has 3"), std::string::npos) << msg;
}

TEST(Compare, CsvReadersSkipHeaders) {
  const auto dir = testutil::scratch("compare_csv");
  std::ofstream(dir / "a.csv") << "frame_index,iou\n0,0.5\n1,0.25\n";
  std::ofstream(dir / "b.csv") << "0,0.5\n";
  std::ofstream(dir / "c.csv") << "0,1,2,3,4\n1,1,2,3\n";
  EXPECT_EQ(h::read_iou_csv(dir / "a.csv"), (std::vector<double>{0.5, 0.25}));
  EXPECT_EQ(h::read_iou_csv(dir / "b.csv").size(), 1u);
  EXPECT_THROW(h::read_boxes_csv(dir / "c.csv"), Error);
  EXPECT_THROW(h::read_iou_csv(dir / "none.csv"), Error);
}

#ifdef MMLOC_DATA_DIR
TEST(BundledData, SequenceIngests) {
  const auto frames = ingest_annotations(fs::path(MMLOC_DATA_DIR) / "synthetic" / "groundtruth.txt",
                                         AnnotationFormat::Plain);
  EXPECT_EQ(frames.size(), 30u);
  const auto cfg = h::load_config(fs::path(MMLOC_DATA_DIR) / "example_config.json");
  EXPECT_EQ(cfg.annotations.size(), 1u);
  EXPECT_TRUE(fs::exists(cfg.annotations[0]));
}
#endif

TEST(Cli, ExitCodes) {
  const auto dir = testutil::scratch("cli");
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_NE(run_cli(""), 0);
  EXPECT_NE(run_cli("frobnicate"), 0);
  EXPECT_EQ(run_cli("synth -o " + (dir / "seq").string() + " --frames 4 --width 64 --height 64 --box-w 16 --box-h 12"), 0);
  EXPECT_TRUE(fs::exists(dir / "seq" / "groundtruth.txt"));
  EXPECT_EQ(run_cli("prepare -a " + (dir / "seq" / "groundtruth.txt").string() + " --archive " +
                    (dir / "arch").string()),
            0);
  EXPECT_EQ(run_cli("prepare -a " + (dir / "nothing.txt").string() + " --archive " + (dir / "arch").string()), 1);
  EXPECT_EQ(run_cli("prepare --set train.nope=1"), 1);
  EXPECT_EQ(run_cli("track -s " + (dir / "seq" / "groundtruth.txt").string() + " --checkpoint " +
                    (dir / "none.ckpt").string()),
            1);
  EXPECT_EQ(run_cli("compare --ours " + (dir / "none.csv").string()), 1);
}
