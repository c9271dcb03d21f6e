#pragma once

#include <limits>
#include <string>
#include <vector>

#include "pathfinder/dfe.hpp"

namespace pathfinder {

// Fills every row whose drop flag is set with -inf; rows are either fully
// finite or fully -inf afterwards. Reference-path helper; the tape route
// fuses the fill with the softmax.
inline Tensor fill_rows(const Tensor& scores, const std::vector<std::uint8_t>& drop) {
  require(scores.ndim() == 2, "fill_rows: expected (R,N)");
  require(drop.size() == std::size_t(scores.dim(0)), "fill_rows: drop length mismatch");
  Tensor out = scores.clone();
  const int n = scores.dim(1);
  constexpr double ninf = -std::numeric_limits<double>::infinity();
  for (int r = 0; r < scores.dim(0); ++r) {
    if (!drop[std::size_t(r)]) continue;
    double* row = out.mut() + std::size_t(r) * n;
    std::fill(row, row + n, ninf);
  }
  return out;
}

// Z = (M (.) F + M' (.) F) + S', the mask-partitioned recombination of the
// building features with the transmitter features added on top. With exact
// complementary {0,1} masks this equals F + S' bit for bit.
inline VarId fuse_inputs(Tape& t, VarId b_feat, VarId s_feat, const RegionMask& building) {
  require(t.value(b_feat).same_shape(t.value(s_feat)), "fuse_inputs: shape mismatch ",
          shape_string(t.value(b_feat)), " vs ", shape_string(t.value(s_feat)));
  const Grid& m = building.values;
  Grid m_prime = complement(building).values;
  VarId partitioned = t.add(t.mask_mul(b_feat, m), t.mask_mul(b_feat, m_prime));
  return t.add(partitioned, s_feat);
}

// F_LR: BN then 1x1 convolution, projecting D channels down to E < D.
struct LowRankProject {
  BatchNorm2dLayer bn;
  Conv2dLayer conv;
  int d = 0, e = 0;

  LowRankProject() = default;
  LowRankProject(const std::string& n, int d_, int e_)
      : bn(n + ".bn", d_), conv(n + ".conv", d_, e_, 1), d(d_), e(e_) {
    require(e_ < d_, "LowRankProject ", n, ": requires E < D, got E=", e_, " D=", d_);
  }

  void register_params(ParamStore& ps, Rng& rng) const {
    bn.register_params(ps, rng);
    conv.register_params(ps, rng);
  }

  VarId forward(Tape& t, const ParamStore& ps, VarId x, const ForwardCtx& ctx) const {
    return conv.forward(t, ps, bn.forward(t, ps, x, ctx));
  }
};

struct SpatialTokens {
  VarId building;  // (HW,E)
  VarId receiver;  // (HW,E); same values, distinction arises through masks
};

// Mask-Guided Low-rank Attention layer: project to rank E, tokenize,
// cross-attend building rows and receiver rows separately against the
// Tx-Prompt tokens, aggregate and restore to D channels.
struct MlaLayer {
  std::string name;
  int d = 0, e = 0, heads = 1;
  LowRankProject flr;
  LayerNormLayer ln_x, ln_p;
  Conv2dLayer restore;

  MlaLayer() = default;
  MlaLayer(std::string n, int d_, int e_, int heads_)
      : name(std::move(n)), d(d_), e(e_), heads(heads_),
        flr(name + ".flr", d_, e_),
        ln_x(name + ".ln_x", e_),
        ln_p(name + ".ln_p", e_),
        restore(name + ".restore", e_, d_, 1) {
    require(heads_ >= 1 && e_ % heads_ == 0, "MlaLayer ", name, ": E=", e_,
            " not divisible by ", heads_, " heads");
  }

  void register_params(ParamStore& ps, Rng& rng) const {
    flr.register_params(ps, rng);
    ln_x.register_params(ps, rng);
    ln_p.register_params(ps, rng);
    for (const char* w : {".wq_b", ".wq_r", ".wk_p", ".wv_p", ".wo"}) {
      Tensor& m = ps.create(name + w, {e, e});
      Rng r = rng.stream(name + w);
      init_variance_scaled(m, e, r);
    }
    restore.register_params(ps, rng);
  }

  VarId low_rank(Tape& t, const ParamStore& ps, VarId x1, const ForwardCtx& ctx) const {
    return flr.forward(t, ps, x1, ctx);
  }

  // Reshape + LayerNorm into sequence tokens. Building and receiver tokens
  // come from one shared projection and norm; prompts get their own norm.
  SpatialTokens tokenize_spatial(Tape& t, const ParamStore& ps, VarId x_lr) const {
    VarId tok = ln_x.forward(t, ps, t.map_to_tokens(x_lr));
    return SpatialTokens{tok, tok};
  }
  VarId tokenize_prompts(Tape& t, const ParamStore& ps, VarId prompts) const {
    return ln_p.forward(t, ps, prompts);
  }

  // One masked cross-attention branch: scores QK^T scaled by the per-head
  // width, rows outside `keep` filled to -inf, softmax over the n prompts.
  VarId attend(Tape& t, const ParamStore& ps, VarId tokens, VarId p_token,
               const std::string& wq_name, const std::vector<std::uint8_t>& keep) const {
    VarId q = t.matmul(tokens, t.param(wq_name, ps.get(wq_name)));
    VarId k = t.matmul(p_token, t.param(name + ".wk_p", ps.get(name + ".wk_p")));
    VarId v = t.matmul(p_token, t.param(name + ".wv_p", ps.get(name + ".wv_p")));
    const int hw = e / heads;
    const double scl = 1.0 / std::sqrt(double(hw));
    std::vector<VarId> outs;
    outs.reserve(std::size_t(heads));
    for (int h = 0; h < heads; ++h) {
      VarId qh = t.slice_cols(q, h * hw, (h + 1) * hw);
      VarId kh = t.slice_cols(k, h * hw, (h + 1) * hw);
      VarId vh = t.slice_cols(v, h * hw, (h + 1) * hw);
      VarId scores = t.scale(t.matmul_nt(qh, kh), scl);
      VarId probs = t.row_masked_softmax(scores, keep);
      outs.push_back(t.matmul(probs, vh));
    }
    return heads == 1 ? outs[0] : t.concat_cols(outs);
  }

  // Full MLA layer on the (D,H,W) block feature map.
  VarId forward(Tape& t, const ParamStore& ps, VarId x1, VarId prompts,
                const std::vector<std::uint8_t>& building_mask_flat,
                const ForwardCtx& ctx) const {
    const Tensor& xv = t.value(x1);
    require(xv.ndim() == 3 && xv.dim(0) == d, "MlaLayer ", name, ": input ",
            shape_string(xv), " vs D=", d);
    const int h = xv.dim(1), w = xv.dim(2);
    require(building_mask_flat.size() == std::size_t(h) * w, "MlaLayer ", name, ": mask of ",
            building_mask_flat.size(), " entries for ", h, "x", w, " map");
    require(t.value(prompts).ndim() == 2 && t.value(prompts).dim(0) >= 1,
            "MlaLayer ", name, ": no prompts");
    require(t.value(prompts).dim(1) == e, "MlaLayer ", name, ": prompt width ",
            t.value(prompts).dim(1), " vs E=", e);

    VarId x_lr = low_rank(t, ps, x1, ctx);
    SpatialTokens tokens = tokenize_spatial(t, ps, x_lr);
    VarId p_token = tokenize_prompts(t, ps, prompts);

    std::vector<std::uint8_t> keep_receiver(building_mask_flat.size());
    for (std::size_t i = 0; i < keep_receiver.size(); ++i) {
      keep_receiver[i] = building_mask_flat[i] ? 0 : 1;
    }
    VarId o1 = attend(t, ps, tokens.building, p_token, name + ".wq_b", building_mask_flat);
    VarId o2 = attend(t, ps, tokens.receiver, p_token, name + ".wq_r", keep_receiver);

    // O = Conv(((O1+O2)/2) W_O), reshaped back to a map.
    VarId agg = t.matmul(t.scale(t.add(o1, o2), 0.5),
                         t.param(name + ".wo", ps.get(name + ".wo")));
    return restore.forward(t, ps, t.tokens_to_map(agg, h, w));
  }
};

// MLA Block: two ConvG layers (the first widens the channel count per the
// layer schedule) followed by the MLA layer, joined by a residual sum.
struct MlaBlock {
  std::string name;
  int cin = 0, d = 0;
  ConvGLayer cg1, cg2;
  MlaLayer mla;

  MlaBlock() = default;
  MlaBlock(std::string n, int cin_, int d_, int e_, int heads_)
      : name(std::move(n)), cin(cin_), d(d_),
        cg1(name + ".cg1", cin_, d_),
        cg2(name + ".cg2", d_, d_),
        mla(name + ".mla", d_, e_, heads_) {}

  void register_params(ParamStore& ps, Rng& rng) const {
    cg1.register_params(ps, rng);
    cg2.register_params(ps, rng);
    mla.register_params(ps, rng);
  }

  VarId pre_transform(Tape& t, const ParamStore& ps, VarId z) const {
    return cg2.forward(t, ps, cg1.forward(t, ps, z));
  }

  VarId forward(Tape& t, const ParamStore& ps, VarId z, VarId prompts,
                const std::vector<std::uint8_t>& building_mask_flat,
                const ForwardCtx& ctx) const {
    VarId x1 = pre_transform(t, ps, z);
    VarId o = mla.forward(t, ps, x1, prompts, building_mask_flat, ctx);
    return t.add(x1, o);
  }
};

// Nearest-neighbor mask pyramid: a cell at level l is a building cell iff
// its source cell at full resolution is. Masks stay binary at every level.
inline std::vector<std::vector<std::uint8_t>> mask_pyramid(const RegionMask& building,
                                                           int levels) {
  const Grid& m = building.values;
  std::vector<std::vector<std::uint8_t>> out;
  out.reserve(std::size_t(levels));
  for (int l = 0; l < levels; ++l) {
    const int f = 1 << l;
    require(m.rows % f == 0 && m.cols % f == 0, "mask_pyramid: ", m.rows, "x", m.cols,
            " not divisible by 2^", l);
    const int h = m.rows / f, w = m.cols / f;
    std::vector<std::uint8_t> lvl(std::size_t(h) * w);
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        lvl[std::size_t(i) * w + j] = m.at(i * f, j * f) != 0.0 ? 1 : 0;
      }
    }
    out.push_back(std::move(lvl));
  }
  return out;
}

}  // namespace pathfinder
