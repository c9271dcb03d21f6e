#pragma once

#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "pathfinder/mla.hpp"

namespace pathfinder {

struct NetworkConfig {
  int depth = 4;       // L encoder/decoder MLA blocks each
  int base_width = 64; // encoder widths double from here
  int embed_dim = 32;  // E, the low-rank/prompt width
  int heads = 4;

  void validate() const {
    require(depth >= 1 && depth <= 8, "NetworkConfig: depth ", depth, " outside [1,8]");
    require(base_width >= 2, "NetworkConfig: base_width ", base_width);
    require(embed_dim >= 1, "NetworkConfig: embed_dim ", embed_dim);
    require(heads >= 1 && embed_dim % heads == 0, "NetworkConfig: ", heads,
            " heads do not divide E=", embed_dim);
    require(embed_dim < base_width, "NetworkConfig: requires E < D (E=", embed_dim,
            ", D=", base_width, ")");
  }

  int encoder_width(int j) const { return base_width << (j - 1); }       // j in 1..L
  int decoder_width(int j) const { return encoder_width(depth - j + 1); } // j in 1..L
  int spatial_divisor() const { return 1 << (depth - 1); }

  // Widths doubling down the encoder and mirrored back up the decoder;
  // the first ConvG of every block performs the width transition.
  struct Stage {
    std::string stage;
    int cin = 0;
    int cout = 0;
    int spatial_div = 1;  // input spatial size = (H,W) / spatial_div
  };

  std::vector<Stage> schedule() const {
    validate();
    std::vector<Stage> rows;
    rows.push_back({"femb", 1, embed_dim, 1});
    rows.push_back({"gbld", 1, embed_dim, 1});
    for (int j = 1; j <= depth; ++j) {
      const int cin = j == 1 ? embed_dim : encoder_width(j - 1);
      rows.push_back({strcat("enc", j), cin, encoder_width(j), 1 << (j - 1)});
      if (j < depth) {
        rows.push_back({strcat("down", j), encoder_width(j), encoder_width(j), 1 << (j - 1)});
      }
    }
    rows.push_back({"bottleneck", encoder_width(depth), encoder_width(depth),
                    spatial_divisor()});
    for (int j = 1; j <= depth; ++j) {
      const int skip_w = encoder_width(depth - j + 1);
      const int prev_w = j == 1 ? encoder_width(depth) : decoder_width(j - 1);
      const int div = j <= 2 ? spatial_divisor() : 1 << (depth - j + 1);
      rows.push_back({strcat("dec", j), prev_w + skip_w, decoder_width(j), div});
      if (j >= 2) {
        rows.push_back({strcat("up", j), decoder_width(j), decoder_width(j), div});
      }
    }
    rows.push_back({"head", decoder_width(depth), 1, 1});
    return rows;
  }

  std::string describe() const {
    std::string out = "stage  cin -> cout  @ (H,W)/div\n";
    for (const auto& r : schedule()) {
      out += strcat(r.stage, "  ", r.cin, " -> ", r.cout, "  @ /", r.spatial_div, "\n");
    }
    return out;
  }

  nlohmann::json to_json() const {
    return {{"depth", depth},
            {"base_width", base_width},
            {"embed_dim", embed_dim},
            {"heads", heads},
            {"head", "conv1x1-sigmoid"}};
  }

  static NetworkConfig from_json(const nlohmann::json& j) {
    NetworkConfig c;
    c.depth = j.at("depth").get<int>();
    c.base_width = j.at("base_width").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.heads = j.at("heads").get<int>();
    c.validate();
    return c;
  }

  static NetworkConfig desk() { return NetworkConfig{4, 64, 32, 4}; }
  static NetworkConfig tiny() { return NetworkConfig{2, 8, 4, 2}; }
};

// Encoder, bottleneck and decoder activations of one forward pass.
struct LayerOutputs {
  std::vector<VarId> enc_outputs;  // block outputs, before downsampling
  std::vector<VarId> skips;        // what the decoder concatenates
  VarId bottleneck = -1;
  std::vector<VarId> dec_outputs;  // block outputs, before upsampling
  VarId prediction = -1;
};

class PathFinderNet {
 public:
  explicit PathFinderNet(NetworkConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    const int e = cfg_.embed_dim;
    femb_ = TransmitterEmbed("femb", e);
    gbld_ = BuildingEncoder("gbld", e);
    for (int j = 1; j <= cfg_.depth; ++j) {
      const int cin = j == 1 ? e : cfg_.encoder_width(j - 1);
      enc_.emplace_back(strcat("enc", j), cin, cfg_.encoder_width(j), e, cfg_.heads);
      if (j < cfg_.depth) {
        down_.emplace_back(strcat("down", j), cfg_.encoder_width(j), cfg_.encoder_width(j),
                           3, 2);
      }
    }
    const int bw = cfg_.encoder_width(cfg_.depth);
    bot1_ = ConvGLayer("bot1", bw, bw);
    bot2_ = ConvGLayer("bot2", bw, bw);
    for (int j = 1; j <= cfg_.depth; ++j) {
      const int skip_w = cfg_.encoder_width(cfg_.depth - j + 1);
      const int prev_w = j == 1 ? bw : cfg_.decoder_width(j - 1);
      dec_.emplace_back(strcat("dec", j), prev_w + skip_w, cfg_.decoder_width(j), e,
                        cfg_.heads);
      if (j >= 2) {
        up_.emplace_back(strcat("up", j), cfg_.decoder_width(j), cfg_.decoder_width(j), 3, 1);
      }
    }
    head_ = Conv2dLayer("head", cfg_.decoder_width(cfg_.depth), 1, 1);
  }

  const NetworkConfig& config() const { return cfg_; }

  void register_params(ParamStore& ps, Rng& rng) const {
    femb_.register_params(ps, rng);
    gbld_.register_params(ps, rng);
    for (const auto& b : enc_) b.register_params(ps, rng);
    for (const auto& d : down_) d.register_params(ps, rng);
    bot1_.register_params(ps, rng);
    bot2_.register_params(ps, rng);
    for (const auto& b : dec_) b.register_params(ps, rng);
    for (const auto& u : up_) u.register_params(ps, rng);
    head_.register_params(ps, rng);
  }

  // Full forward pass. The sample must already be valid; prompts come from
  // the embedded transmitter map, buildings are encoded independently.
  LayerOutputs forward(Tape& t, const ParamStore& ps, const Sample& sample,
                       const ForwardCtx& ctx) const {
    auto violations = validate_sample(sample, cfg_.depth);
    require(violations.empty(), "PathFinderNet::forward: invalid sample: ",
            describe(violations));
    require(!sample.transmitters.empty(), "PathFinderNet::forward: no transmitters");

    const int H = sample.env.rows(), W = sample.env.cols();
    const RegionMask building = building_mask(sample.env);
    const auto masks = mask_pyramid(building, cfg_.depth);

    VarId env_in = t.leaf(Tensor::from_grid(sample.env.heights));
    VarId tx_in = t.leaf(Tensor::from_grid(sample.tx_map.values));

    VarId s_feat = femb_.forward(t, ps, tx_in, ctx);
    VarId b_feat = gbld_.forward(t, ps, env_in);
    VarId prompts = extract_prompts(t, s_feat, sample.transmitters);

    LayerOutputs out;
    VarId x = fuse_inputs(t, b_feat, s_feat, building);
    for (int j = 1; j <= cfg_.depth; ++j) {
      x = enc_[std::size_t(j - 1)].forward(t, ps, x, prompts, mask_for(t, masks, x, H), ctx);
      out.enc_outputs.push_back(x);
      if (j < cfg_.depth) x = down_[std::size_t(j - 1)].forward(t, ps, x);
      out.skips.push_back(x);
    }

    out.bottleneck = bot2_.forward(t, ps, bot1_.forward(t, ps, x));

    VarId prev = out.bottleneck;
    for (int j = 1; j <= cfg_.depth; ++j) {
      VarId z = t.concat_channels(prev, out.skips[std::size_t(cfg_.depth - j)]);
      VarId y = dec_[std::size_t(j - 1)].forward(t, ps, z, prompts, mask_for(t, masks, z, H), ctx);
      out.dec_outputs.push_back(y);
      prev = j >= 2 ? up_[std::size_t(j - 2)].forward(t, ps, t.upsample_nearest2(y)) : y;
    }

    out.prediction = t.sigmoid(head_.forward(t, ps, prev));
    require(t.value(out.prediction).dim(1) == H && t.value(out.prediction).dim(2) == W,
            "PathFinderNet::forward: output shape mismatch");
    return out;
  }

  // Deterministic inference; fails fast on any non-finite activation.
  PathLossMap predict(const ParamStore& ps, const Sample& sample) const {
    Tape t;
    ForwardCtx ctx;  // eval mode
    LayerOutputs out = forward(t, ps, sample, ctx);
    auto check_finite = [&](VarId id, const char* what) {
      require(t.value(id).finite(), "PathFinderNet::predict: non-finite activation in ",
              what);
    };
    for (std::size_t j = 0; j < out.enc_outputs.size(); ++j) {
      check_finite(out.enc_outputs[j], "encoder");
    }
    check_finite(out.bottleneck, "bottleneck");
    for (std::size_t j = 0; j < out.dec_outputs.size(); ++j) {
      check_finite(out.dec_outputs[j], "decoder");
    }
    check_finite(out.prediction, "prediction head");
    return PathLossMap{t.value(out.prediction).to_grid()};
  }

 private:
  const std::vector<std::uint8_t>& mask_for(Tape& t,
                                            const std::vector<std::vector<std::uint8_t>>& masks,
                                            VarId x, int full_h) const {
    const int h = t.value(x).dim(1);
    int level = 0;
    while ((full_h >> level) > h) ++level;
    require((full_h >> level) == h && level < int(masks.size()),
            "PathFinderNet: no mask level for spatial size ", h);
    return masks[std::size_t(level)];
  }

  NetworkConfig cfg_;
  TransmitterEmbed femb_;
  BuildingEncoder gbld_;
  std::vector<MlaBlock> enc_;
  std::vector<Conv2dLayer> down_;
  ConvGLayer bot1_, bot2_;
  std::vector<MlaBlock> dec_;
  std::vector<Conv2dLayer> up_;  // nearest-neighbor resize happens before these
  Conv2dLayer head_;
};

}  // namespace pathfinder
