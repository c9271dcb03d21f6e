#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pathfinder/autodiff.hpp"
#include "pathfinder/core.hpp"
#include "pathfinder/params.hpp"

namespace pathfinder {

// Per-sample batch statistics observed during a training forward pass,
// merged into running buffers by the trainer in deterministic order.
struct BatchStats {
  std::string buffer_prefix;  // "<name>.rmean" / "<name>.rvar"
  Tensor mean;
  Tensor var;
};
using StatsSink = std::vector<BatchStats>;

struct ForwardCtx {
  bool train = false;
  StatsSink* stats = nullptr;
};

inline int default_groups(int channels) { return channels < 8 ? channels : 8; }

struct Conv2dLayer {
  std::string name;
  int cin = 0, cout = 0, k = 3, stride = 1, pad = 1;

  Conv2dLayer() = default;
  Conv2dLayer(std::string n, int in, int out, int kernel = 3, int stride_ = 1)
      : name(std::move(n)), cin(in), cout(out), k(kernel), stride(stride_),
        pad((kernel - 1) / 2) {}

  void register_params(ParamStore& ps, Rng& rng) const {
    Tensor& w = ps.create(name + ".w", {cout, cin, k, k});
    Rng r = rng.stream(name + ".w");
    init_variance_scaled(w, cin * k * k, r);
    ps.create(name + ".b", {cout});  // zero bias
  }

  VarId forward(Tape& t, const ParamStore& ps, VarId x) const {
    return t.conv2d(x, t.param(name + ".w", ps.get(name + ".w")),
                    t.param(name + ".b", ps.get(name + ".b")), stride, pad);
  }
};

// Batch normalization with per-sample spatial statistics while training
// and frozen running statistics in inference, so inference stays pure and
// local (a one-pixel input change cannot leak through the statistics).
struct BatchNorm2dLayer {
  std::string name;
  int c = 0;
  double eps = 1e-5;

  BatchNorm2dLayer() = default;
  BatchNorm2dLayer(std::string n, int channels) : name(std::move(n)), c(channels) {}

  void register_params(ParamStore& ps, Rng&) const {
    fill_constant(ps.create(name + ".gamma", {c}), 1.0);
    ps.create(name + ".beta", {c});
    ps.create(name + ".rmean", {c}, /*trainable=*/false);
    fill_constant(ps.create(name + ".rvar", {c}, /*trainable=*/false), 1.0);
  }

  VarId forward(Tape& t, const ParamStore& ps, VarId x, const ForwardCtx& ctx) const {
    VarId gamma = t.param(name + ".gamma", ps.get(name + ".gamma"));
    VarId beta = t.param(name + ".beta", ps.get(name + ".beta"));
    if (ctx.train) {
      Tensor mean, var;
      VarId out = t.group_norm(x, c, gamma, beta, eps, &mean, &var);
      if (ctx.stats) ctx.stats->push_back({name, mean, var});
      return out;
    }
    return t.channel_norm_fixed(x, gamma, beta, ps.get(name + ".rmean"),
                                ps.get(name + ".rvar"), eps);
  }
};

struct GroupNormLayer {
  std::string name;
  int c = 0, groups = 0;
  double eps = 1e-5;

  GroupNormLayer() = default;
  GroupNormLayer(std::string n, int channels) : name(std::move(n)), c(channels) {
    groups = default_groups(channels);
    require(c % groups == 0, "GroupNormLayer ", name, ": ", groups,
            " groups do not divide ", c, " channels");
  }

  void register_params(ParamStore& ps, Rng&) const {
    fill_constant(ps.create(name + ".gamma", {c}), 1.0);
    ps.create(name + ".beta", {c});
  }

  VarId forward(Tape& t, const ParamStore& ps, VarId x) const {
    return t.group_norm(x, groups, t.param(name + ".gamma", ps.get(name + ".gamma")),
                        t.param(name + ".beta", ps.get(name + ".beta")), eps);
  }
};

struct LayerNormLayer {
  std::string name;
  int e = 0;
  double eps = 1e-5;

  LayerNormLayer() = default;
  LayerNormLayer(std::string n, int width) : name(std::move(n)), e(width) {}

  void register_params(ParamStore& ps, Rng&) const {
    fill_constant(ps.create(name + ".gamma", {e}), 1.0);
    ps.create(name + ".beta", {e});
  }

  VarId forward(Tape& t, const ParamStore& ps, VarId x) const {
    return t.layer_norm_rows(x, t.param(name + ".gamma", ps.get(name + ".gamma")),
                             t.param(name + ".beta", ps.get(name + ".beta")), eps);
  }
};

// ConvG: Conv -> GN -> ReLU -> Conv -> GN -> ReLU.
struct ConvGLayer {
  Conv2dLayer conv1, conv2;
  GroupNormLayer gn1, gn2;

  ConvGLayer() = default;
  ConvGLayer(const std::string& n, int cin, int cout)
      : conv1(n + ".conv1", cin, cout),
        conv2(n + ".conv2", cout, cout),
        gn1(n + ".gn1", cout),
        gn2(n + ".gn2", cout) {}

  void register_params(ParamStore& ps, Rng& rng) const {
    conv1.register_params(ps, rng);
    gn1.register_params(ps, rng);
    conv2.register_params(ps, rng);
    gn2.register_params(ps, rng);
  }

  VarId forward(Tape& t, const ParamStore& ps, VarId x) const {
    VarId h = t.relu(gn1.forward(t, ps, conv1.forward(t, ps, x)));
    return t.relu(gn2.forward(t, ps, conv2.forward(t, ps, h)));
  }
};

// F_emb: Conv -> ReLU -> BN -> Conv, mapping the transmitter map to an
// E-channel feature map at full resolution.
struct TransmitterEmbed {
  Conv2dLayer conv1, conv2;
  BatchNorm2dLayer bn;
  int embed_dim = 0;

  TransmitterEmbed() = default;
  TransmitterEmbed(const std::string& n, int e)
      : conv1(n + ".conv1", 1, e), conv2(n + ".conv2", e, e), bn(n + ".bn", e),
        embed_dim(e) {}

  void register_params(ParamStore& ps, Rng& rng) const {
    conv1.register_params(ps, rng);
    bn.register_params(ps, rng);
    conv2.register_params(ps, rng);
  }

  VarId forward(Tape& t, const ParamStore& ps, VarId s, const ForwardCtx& ctx) const {
    return conv2.forward(t, ps, bn.forward(t, ps, t.relu(conv1.forward(t, ps, s)), ctx));
  }
};

// G_bld: ConvG(B) + B, with a learned 1x1 projection lifting the single
// input channel onto the residual path.
struct BuildingEncoder {
  ConvGLayer convg;
  Conv2dLayer proj;
  int embed_dim = 0;

  BuildingEncoder() = default;
  BuildingEncoder(const std::string& n, int e)
      : convg(n + ".convg", 1, e), proj(n + ".proj", 1, e, 1), embed_dim(e) {}

  void register_params(ParamStore& ps, Rng& rng) const {
    convg.register_params(ps, rng);
    proj.register_params(ps, rng);
  }

  VarId forward(Tape& t, const ParamStore& ps, VarId b) const {
    return t.add(convg.forward(t, ps, b), proj.forward(t, ps, b));
  }
};

inline std::vector<std::pair<int, int>> transmitter_positions(
    const std::vector<TransmitterSpec>& specs) {
  std::vector<std::pair<int, int>> out;
  out.reserve(specs.size());
  for (const auto& s : specs) out.emplace_back(s.row, s.col);
  return out;
}

// Tx-Prompt extraction: row k of the result is the feature vector of S'
// at transmitter k's pixel.
inline VarId extract_prompts(Tape& t, VarId s_feat,
                             const std::vector<TransmitterSpec>& specs) {
  require(!specs.empty(), "extract_prompts: no transmitters");
  return t.gather_rows(s_feat, transmitter_positions(specs));
}

}  // namespace pathfinder
