#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mmloc/core_types.hpp"
#include "mmloc/image.hpp"
#include "mmloc/layers.hpp"
#include "mmloc/loss.hpp"
#include "mmloc/mask_targets.hpp"

namespace mmloc {

/**
 * Channel plan of the three-branch localizer.
 *
 * Routes (resolution in brackets):
 *   S448: branch448 convs [448] -> stride-2 conv [224] -> shared mid -> trunk
 *   S224: branch224 convs [224] -> shared mid -> trunk
 *   S56 : branch56 entry conv [56] -> trunk
 *
 * The shared mid stage (two stride-2 convs, 224 -> 112 -> 56) is used by the
 * S448 and S224 routes and lives in the trunk parameter set. The trunk core
 * runs six 3x3 convs with max-pools 56 -> 28 -> 14 and emits the 14x14 ROI
 * map; one stride-2 conv takes it to the 7x7 center map.
 */
struct WidthConfig {
  int input_channels = 3;
  int branch448 = 16;
  int branch448_out = 32;  // must equal branch224, where the S448 route joins
  int branch224 = 32;
  int shared_mid = 32;  // must equal branch56, both feed the trunk core
  int branch56 = 32;
  int trunk = 64;

  void validate() const {
    for (int v : {input_channels, branch448, branch448_out, branch224, shared_mid, branch56, trunk}) {
      if (v <= 0) throw Error("channel plan: every width must be positive");
    }
    if (input_channels != 3) throw Error("channel plan: input must have 3 channels");
    if (branch448_out != branch224) {
      throw Error("channel plan: S448 branch emits " + std::to_string(branch448_out) +
                  " channels but the S224 stage takes " + std::to_string(branch224));
    }
    if (shared_mid != branch56) {
      throw Error("channel plan: shared mid stage emits " + std::to_string(shared_mid) +
                  " channels but the S56 entry emits " + std::to_string(branch56));
    }
  }

  static WidthConfig uniform(int c) { return {3, c, c, c, c, c, c}; }

  friend bool operator==(const WidthConfig&, const WidthConfig&) = default;
};

struct ConvParams {
  std::string name;
  ConvSpec spec;
  std::vector<double> weight;
  std::vector<double> bias;

  std::size_t count() const { return weight.size() + bias.size(); }
  friend bool operator==(const ConvParams&, const ConvParams&) = default;
};

struct ParamSet {
  std::vector<ConvParams> convs;

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& c : convs) n += c.count();
    return n;
  }
  friend bool operator==(const ParamSet&, const ParamSet&) = default;
};

struct ModelParameters {
  WidthConfig widths;
  std::map<SizeClass, ParamSet> branches;
  ParamSet trunk;
  std::string version_tag;

  std::size_t count() const {
    std::size_t n = trunk.count();
    for (const auto& [cls, p] : branches) n += p.count();
    return n;
  }
};

// Gradients of one forward/backward pass. Only the active branch has an entry.
struct Gradients {
  std::map<SizeClass, ParamSet> branches;
  ParamSet trunk;
  double loss = 0.0;
  LocalizationOutput output;
};

// ---------------------------------------------------------------------------
// Layout

namespace trunk_index {
inline constexpr int kMid1 = 0;
inline constexpr int kMid2 = 1;
inline constexpr int kCoreFirst = 2;
inline constexpr int kCoreLast = 7;  // emits the ROI map
inline constexpr int kTail = 8;      // emits the center map
}  // namespace trunk_index

inline std::vector<std::pair<std::string, ConvSpec>> branch_layout(const WidthConfig& w,
                                                                    SizeClass cls) {
  switch (cls) {
    case SizeClass::S448:
      return {{"b448.conv1", conv3x3(w.input_channels, w.branch448)},
              {"b448.conv2", conv3x3(w.branch448, w.branch448)},
              {"b448.down", down2x2(w.branch448, w.branch448_out)}};
    case SizeClass::S224:
      return {{"b224.conv1", conv3x3(w.input_channels, w.branch224)},
              {"b224.conv2", conv3x3(w.branch224, w.branch224)}};
    case SizeClass::S56:
      return {{"b56.entry", conv3x3(w.input_channels, w.branch56)}};
  }
  return {};
}

inline std::vector<std::pair<std::string, ConvSpec>> trunk_layout(const WidthConfig& w) {
  return {{"mid.down1", down2x2(w.branch224, w.branch224)},
          {"mid.down2", down2x2(w.branch224, w.shared_mid)},
          {"trunk.conv1", conv3x3(w.branch56, w.trunk)},
          {"trunk.conv2", conv3x3(w.trunk, w.trunk)},
          {"trunk.conv3", conv3x3(w.trunk, w.trunk)},
          {"trunk.conv4", conv3x3(w.trunk, w.trunk)},
          {"trunk.conv5", conv3x3(w.trunk, w.trunk)},
          {"trunk.roi", conv3x3(w.trunk, w.trunk)},
          {"trunk.center", down2x2(w.trunk, w.trunk)}};
}

enum class OpKind { Conv, Relu, MaxPool, ChannelMean, Softmax };

struct RouteOp {
  OpKind kind = OpKind::Conv;
  bool in_trunk = false;  // for Conv: which parameter set holds the weights
  int conv = -1;          // index within that set
};

// Ops from the input patch to the ROI feature map.
inline std::vector<RouteOp> feature_route(SizeClass cls) {
  std::vector<RouteOp> ops;
  auto branch = [&](int i, bool relu = true) {
    ops.push_back({OpKind::Conv, false, i});
    if (relu) ops.push_back({OpKind::Relu});
  };
  auto trunk = [&](int i, bool relu = true) {
    ops.push_back({OpKind::Conv, true, i});
    if (relu) ops.push_back({OpKind::Relu});
  };
  switch (cls) {
    case SizeClass::S448:
      branch(0), branch(1), branch(2);
      trunk(trunk_index::kMid1), trunk(trunk_index::kMid2);
      break;
    case SizeClass::S224:
      branch(0), branch(1);
      trunk(trunk_index::kMid1), trunk(trunk_index::kMid2);
      break;
    case SizeClass::S56:
      branch(0);
      break;
  }
  trunk(2), trunk(3);
  ops.push_back({OpKind::MaxPool});
  trunk(4), trunk(5);
  ops.push_back({OpKind::MaxPool});
  trunk(6), trunk(trunk_index::kCoreLast, false);
  return ops;
}

// Every op a patch of this class passes through, heads included.
inline std::vector<RouteOp> describe_route(SizeClass cls) {
  auto ops = feature_route(cls);
  ops.push_back({OpKind::ChannelMean});
  ops.push_back({OpKind::Softmax});
  ops.push_back({OpKind::Conv, true, trunk_index::kTail});
  ops.push_back({OpKind::ChannelMean});
  ops.push_back({OpKind::Softmax});
  return ops;
}

// ---------------------------------------------------------------------------
// Initialization

inline ParamSet make_param_set(const std::vector<std::pair<std::string, ConvSpec>>& layout) {
  ParamSet ps;
  for (const auto& [name, spec] : layout) {
    ps.convs.push_back({name, spec, std::vector<double>(spec.weight_count(), 0.0),
                        std::vector<double>(static_cast<std::size_t>(spec.out), 0.0)});
  }
  return ps;
}

inline ModelParameters zero_parameters(const WidthConfig& widths) {
  widths.validate();
  ModelParameters p;
  p.widths = widths;
  for (SizeClass c : kSizeClasses) p.branches[c] = make_param_set(branch_layout(widths, c));
  p.trunk = make_param_set(trunk_layout(widths));
  p.version_tag = "zero";
  return p;
}

// He-normal weights, zero biases. Deterministic for a given seed.
inline ModelParameters init_parameters(std::uint64_t rng_seed, const WidthConfig& widths = {}) {
  ModelParameters p = zero_parameters(widths);
  std::mt19937_64 rng(rng_seed);
  auto fill = [&](ParamSet& ps) {
    for (auto& conv : ps.convs) {
      const double fan_in = static_cast<double>(conv.spec.in) * conv.spec.kernel * conv.spec.kernel;
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
      for (double& v : conv.weight) v = dist(rng);
    }
  };
  for (SizeClass c : kSizeClasses) fill(p.branches.at(c));
  fill(p.trunk);
  p.version_tag = "init-seed-" + std::to_string(rng_seed);
  return p;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace detail {

struct ForwardTrace {
  std::vector<Tensor> inputs;  // inputs[i] is the input of feature_route op i
  std::vector<std::vector<std::uint32_t>> pool_argmax;
  Tensor roi_map;
  Tensor center_map;
};

inline const ConvParams& conv_of(const ModelParameters& p, SizeClass cls, const RouteOp& op) {
  return op.in_trunk ? p.trunk.convs.at(op.conv) : p.branches.at(cls).convs.at(op.conv);
}

inline void check_patch(const Tensor& patch, SizeClass cls) {
  const int side = side_of(cls);
  if (patch.c != 3 || patch.h != side || patch.w != side) {
    throw Error("patch of shape " + std::to_string(patch.c) + "x" + std::to_string(patch.h) + "x" +
                std::to_string(patch.w) + " does not match size class " +
                std::string(name_of(cls)));
  }
}

inline ProbMatrix head_probs(const Tensor& map) {
  const auto logits = layers::channel_mean(map);
  ProbMatrix p(map.h);
  p.cells() = layers::softmax(logits);
  return p;
}

inline LocalizationOutput run_forward(const ModelParameters& p, const Tensor& patch, SizeClass cls,
                                      ForwardTrace* trace) {
  check_patch(patch, cls);
  const auto ops = feature_route(cls);
  Tensor x = patch;
  for (const RouteOp& op : ops) {
    if (trace) trace->inputs.push_back(x);
    switch (op.kind) {
      case OpKind::Conv: {
        const auto& c = conv_of(p, cls, op);
        x = layers::conv_forward(x, c.spec, c.weight, c.bias);
        break;
      }
      case OpKind::Relu:
        layers::relu_inplace(x);
        break;
      case OpKind::MaxPool: {
        auto r = layers::maxpool2x2(x);
        if (trace) trace->pool_argmax.push_back(std::move(r.argmax));
        x = std::move(r.out);
        break;
      }
      default:
        throw Error("unexpected op in feature route");
    }
  }
  const auto& tail = p.trunk.convs.at(trunk_index::kTail);
  Tensor center_map = layers::conv_forward(x, tail.spec, tail.weight, tail.bias);
  LocalizationOutput out{head_probs(x), head_probs(center_map)};
  if (trace) {
    trace->roi_map = std::move(x);
    trace->center_map = std::move(center_map);
  }
  return out;
}

inline ParamSet zeros_like(const ParamSet& ps) {
  ParamSet z = ps;
  for (auto& c : z.convs) {
    std::fill(c.weight.begin(), c.weight.end(), 0.0);
    std::fill(c.bias.begin(), c.bias.end(), 0.0);
  }
  return z;
}

}  // namespace detail

inline LocalizationOutput forward(const ModelParameters& params, const Tensor& patch,
                                  SizeClass size_class) {
  return detail::run_forward(params, patch, size_class, nullptr);
}

// Loss gradient for one sample. The result holds the trunk and the branch of
// `size_class` only; the other branches have no entry at all.
inline Gradients gradient(const ModelParameters& params, const Tensor& patch, SizeClass size_class,
                          const LocalizationTargets& targets, const LossConfig& loss_cfg) {
  detail::ForwardTrace trace;
  Gradients g;
  g.output = detail::run_forward(params, patch, size_class, &trace);
  g.loss = loss(g.output, targets, loss_cfg);
  g.trunk = detail::zeros_like(params.trunk);
  ParamSet& gb = g.branches[size_class] = detail::zeros_like(params.branches.at(size_class));

  const LossGradient dp = loss_gradient(g.output, targets, loss_cfg);
  const auto dz_roi = layers::softmax_backward(g.output.roi_probs.cells(), dp.d_roi.cells());
  const auto dz_center =
      layers::softmax_backward(g.output.center_probs.cells(), dp.d_center.cells());

  const Tensor& roi_map = trace.roi_map;
  Tensor dcenter = layers::channel_mean_backward(dz_center, trace.center_map.c,
                                                 trace.center_map.h, trace.center_map.w);
  const auto& tail = params.trunk.convs[trunk_index::kTail];
  auto& gtail = g.trunk.convs[trunk_index::kTail];
  Tensor dx = layers::conv_backward(roi_map, tail.spec, tail.weight, dcenter, gtail.weight,
                                    gtail.bias, true);
  {
    Tensor droi = layers::channel_mean_backward(dz_roi, roi_map.c, roi_map.h, roi_map.w);
    for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += droi.data[i];
  }

  const auto ops = feature_route(size_class);
  std::size_t pool = trace.pool_argmax.size();
  for (std::size_t k = ops.size(); k-- > 0;) {
    const RouteOp& op = ops[k];
    const Tensor& in = trace.inputs[k];
    switch (op.kind) {
      case OpKind::Conv: {
        const auto& c = detail::conv_of(params, size_class, op);
        ConvParams& gc = op.in_trunk ? g.trunk.convs[op.conv] : gb.convs[op.conv];
        dx = layers::conv_backward(in, c.spec, c.weight, dx, gc.weight, gc.bias, k > 0);
        break;
      }
      case OpKind::Relu:
        // The ReLU output is the next op's input (or the ROI map).
        layers::relu_backward_inplace(k + 1 < ops.size() ? trace.inputs[k + 1] : roi_map, dx);
        break;
      case OpKind::MaxPool:
        dx = layers::maxpool2x2_backward(in, trace.pool_argmax[--pool], dx);
        break;
      default:
        break;
    }
  }
  return g;
}

// theta <- theta - lr * grad, for the parameter sets present in `grads`.
inline void apply_sgd(ModelParameters& params, const Gradients& grads, double learning_rate) {
  auto step = [learning_rate](ParamSet& p, const ParamSet& g) {
    for (std::size_t i = 0; i < p.convs.size(); ++i) {
      for (std::size_t j = 0; j < p.convs[i].weight.size(); ++j)
        p.convs[i].weight[j] -= learning_rate * g.convs[i].weight[j];
      for (std::size_t j = 0; j < p.convs[i].bias.size(); ++j)
        p.convs[i].bias[j] -= learning_rate * g.convs[i].bias[j];
    }
  };
  for (const auto& [cls, g] : grads.branches) step(params.branches.at(cls), g);
  step(params.trunk, grads.trunk);
}

}  // namespace mmloc
