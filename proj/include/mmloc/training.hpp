#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mmloc/network.hpp"

namespace mmloc {

struct TrainConfig {
  double learning_rate = 0.001;
  int epochs = 65;
  int batch_size = 16;
  std::uint64_t shuffle_seed = 0;
  bool shuffle = true;
  std::uint64_t init_seed = 0;
  WidthConfig widths;
  LossConfig loss;
  int checkpoint_every = 0;  // epochs; 0 disables periodic checkpoints

  void validate() const {
    if (!(learning_rate > 0.0)) throw Error("train: learning_rate must be > 0");
    if (epochs < 1) throw Error("train: epochs must be >= 1");
    if (batch_size < 1) throw Error("train: batch_size must be >= 1");
    if (checkpoint_every < 0) throw Error("train: checkpoint_every must be >= 0");
    widths.validate();
    loss.validate();
  }
};

struct TrainReport {
  struct Row {
    int epoch = 0;
    SizeClass size_class = SizeClass::S56;
    double mean_loss = 0.0;
    double seconds = 0.0;
  };
  std::vector<Row> rows;                     // one per (epoch, class present)
  std::vector<double> epoch_mean_loss;       // over all samples of the epoch
  std::vector<double> epoch_seconds;
  std::vector<long> epoch_samples;           // samples visited per epoch
  std::map<SizeClass, long> branch_updates;  // steps whose batch carried the class
  long trunk_updates = 0;

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write report '" + path + "'");
    out << "epoch,class,mean_loss,seconds\n";
    out.precision(17);
    for (const auto& r : rows) {
      out << r.epoch << ',' << name_of(r.size_class) << ',' << r.mean_loss << ',' << r.seconds
          << '\n';
    }
  }
};

struct Batch {
  SizeClass size_class = SizeClass::S56;
  std::vector<std::size_t> indices;
};

// Per-class batches for one epoch. Class order inside the epoch interleaves
// batches in proportion to each class's batch count.
inline std::vector<Batch> make_schedule(std::span<const TrainingSample> samples, int batch_size,
                                        bool shuffle, std::uint64_t seed, int epoch) {
  std::map<SizeClass, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < samples.size(); ++i) by_class[samples[i].size_class].push_back(i);

  std::map<SizeClass, std::vector<Batch>> per_class;
  for (auto& [cls, idx] : by_class) {
    if (shuffle) {
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(cls)};
      std::mt19937_64 rng(seq);
      std::shuffle(idx.begin(), idx.end(), rng);
    }
    for (std::size_t s = 0; s < idx.size(); s += static_cast<std::size_t>(batch_size)) {
      Batch b{cls, {}};
      b.indices.assign(idx.begin() + static_cast<long>(s),
                       idx.begin() + static_cast<long>(std::min(idx.size(), s + batch_size)));
      per_class[cls].push_back(std::move(b));
    }
  }

  std::vector<Batch> out;
  std::map<SizeClass, std::size_t> emitted;
  while (true) {
    const SizeClass* pick = nullptr;
    double best = 2.0;
    for (const auto& [cls, batches] : per_class) {
      const std::size_t e = emitted[cls];
      if (e >= batches.size()) continue;
      const double progress = (e + 0.5) / static_cast<double>(batches.size());
      if (progress < best) {
        best = progress;
        pick = &cls;
      }
    }
    if (!pick) break;
    out.push_back(per_class[*pick][emitted[*pick]++]);
  }
  return out;
}

namespace detail {

inline void accumulate(ParamSet& acc, const ParamSet& g) {
  for (std::size_t i = 0; i < acc.convs.size(); ++i) {
    auto& a = acc.convs[i];
    const auto& b = g.convs[i];
    for (std::size_t j = 0; j < a.weight.size(); ++j) a.weight[j] += b.weight[j];
    for (std::size_t j = 0; j < a.bias.size(); ++j) a.bias[j] += b.bias[j];
  }
}

inline void scale(ParamSet& ps, double s) {
  for (auto& c : ps.convs) {
    for (double& v : c.weight) v *= s;
    for (double& v : c.bias) v *= s;
  }
}

}  // namespace detail

// One SGD step on a batch of a single size class: only that class's branch
// and the trunk move. Returns the mean pre-update loss over the batch.
inline double train_step(ModelParameters& params, std::span<const TrainingSample* const> batch,
                         const TrainConfig& cfg) {
  if (batch.empty()) throw Error("train_step: empty batch");
  const SizeClass cls = batch.front()->size_class;
  for (const TrainingSample* s : batch) {
    if (s->size_class != cls) throw Error("train_step: batch mixes size classes");
  }
  Gradients total;
  double loss_sum = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Gradients g = gradient(params, batch[i]->patch, cls, batch[i]->targets, cfg.loss);
    loss_sum += g.loss;
    if (i == 0) {
      total = std::move(g);
    } else {
      detail::accumulate(total.branches.at(cls), g.branches.at(cls));
      detail::accumulate(total.trunk, g.trunk);
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  detail::scale(total.branches.at(cls), inv);
  detail::scale(total.trunk, inv);
  apply_sgd(params, total, cfg.learning_rate);
  return loss_sum * inv;
}

inline double train_step(ModelParameters& params, std::span<const TrainingSample> batch,
                         const TrainConfig& cfg) {
  std::vector<const TrainingSample*> ptrs;
  for (const auto& s : batch) ptrs.push_back(&s);
  return train_step(params, std::span<const TrainingSample* const>(ptrs), cfg);
}

struct TrainResult {
  ModelParameters params;
  TrainReport report;
};

using CheckpointFn = std::function<void(int epoch, const ModelParameters&)>;

inline TrainResult train(ModelParameters params, std::span<const TrainingSample> dataset,
                         const TrainConfig& cfg, const CheckpointFn& on_checkpoint = {}) {
  cfg.validate();
  if (dataset.empty()) throw Error("train: empty dataset");
  TrainResult res{std::move(params), {}};
  TrainReport& rep = res.report;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto schedule = make_schedule(dataset, cfg.batch_size, cfg.shuffle, cfg.shuffle_seed, epoch);
    std::map<SizeClass, std::pair<double, long>> class_loss;
    std::map<SizeClass, double> class_seconds;
    double epoch_loss = 0.0;
    long seen = 0;
    for (const Batch& b : schedule) {
      const auto tb = std::chrono::steady_clock::now();
      std::vector<const TrainingSample*> ptrs;
      for (std::size_t i : b.indices) ptrs.push_back(&dataset[i]);
      const double l = train_step(res.params, std::span<const TrainingSample* const>(ptrs), cfg);
      const double n = static_cast<double>(ptrs.size());
      class_loss[b.size_class].first += l * n;
      class_loss[b.size_class].second += static_cast<long>(ptrs.size());
      epoch_loss += l * n;
      seen += static_cast<long>(ptrs.size());
      ++rep.branch_updates[b.size_class];
      ++rep.trunk_updates;
      class_seconds[b.size_class] +=
          std::chrono::duration<double>(std::chrono::steady_clock::now() - tb).count();
    }
    for (const auto& [cls, acc] : class_loss) {
      rep.rows.push_back({epoch, cls, acc.first / static_cast<double>(acc.second), class_seconds[cls]});
    }
    rep.epoch_mean_loss.push_back(epoch_loss / static_cast<double>(seen));
    rep.epoch_samples.push_back(seen);
    rep.epoch_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    res.params.version_tag = "epoch-" + std::to_string(epoch);
    if (on_checkpoint && cfg.checkpoint_every > 0 &&
        (epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs)) {
      on_checkpoint(epoch, res.params);
    }
  }
  return res;
}

inline TrainResult train(std::span<const TrainingSample> dataset, const TrainConfig& cfg,
                         const CheckpointFn& on_checkpoint = {}) {
  cfg.validate();
  return train(init_parameters(cfg.init_seed, cfg.widths), dataset, cfg, on_checkpoint);
}

}  // namespace mmloc
