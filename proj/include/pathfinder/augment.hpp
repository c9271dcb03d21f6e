#pragma once

#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "pathfinder/dataset.hpp"

namespace pathfinder {

// Exact grid symmetries. Rotations are counter-clockwise in Cartesian
// orientation (row 0 at the bottom): rot90 maps pixel (r,c) to (c, H-1-r).
enum class AugOp { identity, rot90, rot180, rot270, flip_h, flip_v, flip_diag };

inline const std::vector<AugOp>& all_aug_ops() {
  static const std::vector<AugOp> ops = {AugOp::identity, AugOp::rot90,  AugOp::rot180,
                                         AugOp::rot270,   AugOp::flip_h, AugOp::flip_v,
                                         AugOp::flip_diag};
  return ops;
}

inline const char* aug_op_name(AugOp op) {
  switch (op) {
    case AugOp::identity: return "identity";
    case AugOp::rot90: return "rot90";
    case AugOp::rot180: return "rot180";
    case AugOp::rot270: return "rot270";
    case AugOp::flip_h: return "flip_h";
    case AugOp::flip_v: return "flip_v";
    case AugOp::flip_diag: return "flip_diag";
  }
  return "?";
}

inline AugOp inverse_op(AugOp op) {
  switch (op) {
    case AugOp::rot90: return AugOp::rot270;
    case AugOp::rot270: return AugOp::rot90;
    default: return op;  // the rest are involutions
  }
}

inline bool needs_square(AugOp op) {
  return op == AugOp::rot90 || op == AugOp::rot180 || op == AugOp::rot270 ||
         op == AugOp::flip_diag;
}

// Destination of pixel (r,c) under op on an H x W grid.
inline std::pair<int, int> transform_coord(AugOp op, int r, int c, int h, int w) {
  switch (op) {
    case AugOp::identity: return {r, c};
    case AugOp::rot90: return {c, h - 1 - r};
    case AugOp::rot180: return {h - 1 - r, w - 1 - c};
    case AugOp::rot270: return {w - 1 - c, r};
    case AugOp::flip_h: return {r, w - 1 - c};
    case AugOp::flip_v: return {h - 1 - r, c};
    case AugOp::flip_diag: return {c, r};
  }
  fail("transform_coord: unknown op");
}

inline Grid transform_grid(const Grid& g, AugOp op) {
  require(!needs_square(op) || g.rows == g.cols, "transform_grid: ", aug_op_name(op),
          " requires a square grid, got ", g.rows, "x", g.cols);
  Grid out(g.rows, g.cols);
  for (int r = 0; r < g.rows; ++r) {
    for (int c = 0; c < g.cols; ++c) {
      auto [tr, tc] = transform_coord(op, r, c, g.rows, g.cols);
      out.at(tr, tc) = g.at(r, c);
    }
  }
  return out;
}

// Applies one pixel bijection jointly to env, transmitter map, target and
// the transmitter coordinates, preserving Sample consistency exactly.
inline Sample apply_aug(const Sample& s, AugOp op) {
  Sample out;
  out.env = EnvironmentMap{transform_grid(s.env.heights, op)};
  out.tx_map = TransmitterMap{transform_grid(s.tx_map.values, op)};
  if (s.target) out.target = PathLossMap{transform_grid(s.target->values, op)};
  out.transmitters = s.transmitters;
  for (auto& t : out.transmitters) {
    auto [r, c] = transform_coord(op, t.row, t.col, s.env.rows(), s.env.cols());
    t.row = r;
    t.col = c;
  }
  out.tx_weights = s.tx_weights;
  auto violations = validate_sample(out);
  require(violations.empty(), "apply_aug: ", describe(violations));
  return out;
}

struct MixSpec {
  double alpha = 1.0;
  double beta = 0.5;
  int n = 2;
  std::vector<double> weights = {0.5, 0.5};

  void validate() const {
    require(alpha > 0.0, "MixSpec: alpha must be positive");
    require(beta >= 0.0 && beta <= 1.0, "MixSpec: beta outside [0,1]");
    require(n >= 2, "MixSpec: requires N >= 2 components");
    require(static_cast<int>(weights.size()) == n, "MixSpec: ", weights.size(),
            " weights for N=", n);
    double sum = 0.0;
    for (double w : weights) sum += w;
    require(std::abs(sum - 1.0) <= 1e-9, "MixSpec: weights sum to ", sum);
  }
};

inline MixSpec sample_mix_spec(Rng& rng, double alpha) {
  MixSpec m;
  m.alpha = alpha;
  m.beta = alpha == 1.0 ? rng.uniform() : rng.beta(alpha, alpha);
  m.n = 2;
  m.weights = {m.beta, 1.0 - m.beta};
  return m;
}

// Transmitter-Oriented Mixup of two same-map samples:
//   S_mix = beta f(S_i) + (1-beta) f(S_j),  Y_mix likewise, X_mix = f(X).
inline Sample tom_mixup(const Sample& si, const Sample& sj, const MixSpec& spec, AugOp op) {
  spec.validate();
  require(spec.n == 2, "tom_mixup: mixes exactly two samples");
  require(si.env.heights == sj.env.heights,
          "tom_mixup: samples come from different environment maps");
  require(si.target && sj.target, "tom_mixup: both samples need targets");
  const double beta = spec.weights[0];

  Sample ai = apply_aug(si, op);
  Sample aj = apply_aug(sj, op);

  std::set<std::pair<int, int>> positions;
  for (const auto& t : ai.transmitters) positions.insert({t.row, t.col});
  for (const auto& t : aj.transmitters) {
    require(positions.insert({t.row, t.col}).second,
            "tom_mixup: coincident transmitter position (", t.row, ",", t.col,
            ") after augmentation");
  }

  Sample out;
  out.env = ai.env;
  out.tx_map = TransmitterMap{beta * ai.tx_map.values + (1.0 - beta) * aj.tx_map.values};
  out.target = PathLossMap{beta * ai.target->values + (1.0 - beta) * aj.target->values};
  out.transmitters = ai.transmitters;
  out.transmitters.insert(out.transmitters.end(), aj.transmitters.begin(),
                          aj.transmitters.end());
  for (double w : ai.tx_weights) out.tx_weights.push_back(beta * w);
  for (double w : aj.tx_weights) out.tx_weights.push_back((1.0 - beta) * w);
  auto violations = validate_sample(out);
  require(violations.empty(), "tom_mixup: ", describe(violations));
  return out;
}

struct S2mtSample {
  Sample sample;
  std::string source_map;
  std::vector<int> component_tx;  // tx indices within the source map
  int n = 0;
};

// S2MT benchmark construction: per test map, seeded selection of
// N-transmitter combinations; labels are the arithmetic mean of the
// component targets and the mix weights are uniform 1/N (beta fixed, no
// image enhancement). Maps with fewer than N samples are skipped.
inline std::vector<S2mtSample> build_s2mt_set(const std::vector<LoadedSample>& test_samples,
                                              int n, std::uint64_t seed,
                                              int combos_per_map = 8) {
  require(n >= 2, "build_s2mt_set: requires N >= 2, got ", n);
  require(combos_per_map >= 1, "build_s2mt_set: combos_per_map must be positive");

  std::map<std::string, std::vector<const LoadedSample*>> by_map;
  std::vector<std::string> order;
  for (const auto& s : test_samples) {
    if (!by_map.count(s.map_id)) order.push_back(s.map_id);
    by_map[s.map_id].push_back(&s);
  }

  const Rng base(seed);
  std::vector<S2mtSample> out;
  for (const auto& map_id : order) {
    const auto& group = by_map[map_id];
    if (static_cast<int>(group.size()) < n) {
      std::cerr << "build_s2mt_set: skipping map " << map_id << " with only "
                << group.size() << " samples for N=" << n << "\n";
      continue;
    }
    for (const auto* s : group) {
      require(s->sample.transmitters.size() == 1, "build_s2mt_set: map ", map_id,
              " sample ", s->tx_index, " is not single-transmitter");
      require(s->sample.target.has_value(), "build_s2mt_set: map ", map_id, " sample ",
              s->tx_index, " has no target");
    }
    Rng rng = base.stream("s2mt", std::uint64_t(n)).stream(map_id);
    std::set<std::vector<int>> seen;
    int attempts = 0;
    while (static_cast<int>(seen.size()) < combos_per_map && attempts < combos_per_map * 64) {
      ++attempts;
      std::vector<int> idx(group.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
      // partial Fisher-Yates: first n entries are a uniform combination
      for (int i = 0; i < n; ++i) {
        const std::size_t j = i + rng.below(idx.size() - std::size_t(i));
        std::swap(idx[std::size_t(i)], idx[j]);
      }
      std::vector<int> combo(idx.begin(), idx.begin() + n);
      std::sort(combo.begin(), combo.end());
      if (!seen.insert(combo).second) continue;

      S2mtSample item;
      item.source_map = map_id;
      item.n = n;
      std::vector<TransmitterSpec> specs;
      Grid label(group[0]->sample.env.rows(), group[0]->sample.env.cols());
      for (int k : combo) {
        const Sample& comp = group[std::size_t(k)]->sample;
        specs.push_back(comp.transmitters[0]);
        item.component_tx.push_back(group[std::size_t(k)]->tx_index);
        for (std::size_t p = 0; p < label.size(); ++p) label.v[p] += comp.target->values.v[p];
      }
      for (double& v : label.v) v /= double(n);
      item.sample = make_sample(group[0]->sample.env, specs,
                                std::vector<double>(std::size_t(n), 1.0 / double(n)),
                                PathLossMap{std::move(label)});
      out.push_back(std::move(item));
    }
  }
  return out;
}

// Serializes an S2MT set in the on-disk corpus format (mode "joint") with
// a sidecar recording components, weights, N and seed.
inline Manifest write_s2mt_set(const fs::path& root, const std::vector<S2mtSample>& set,
                               int n, std::uint64_t seed) {
  std::error_code ec;
  fs::create_directories(root / "maps", ec);
  fs::create_directories(root / "tx", ec);
  fs::create_directories(root / "targets", ec);
  require(fs::is_directory(root / "maps"), "write_s2mt_set: cannot create ", root.string());

  Manifest m;
  m.root = root;
  m.mode = "joint";
  nlohmann::json sidecar;
  sidecar["n"] = n;
  sidecar["seed"] = seed;
  auto& comps = sidecar["components"] = nlohmann::json::array();
  std::map<std::string, int> counter;
  for (const auto& item : set) {
    const std::string id = strcat(item.source_map, "_c", counter[item.source_map]++);
    ManifestEntry e;
    e.map_id = id;
    e.env_path = root / "maps" / (id + ".env");
    e.tx_path = root / "tx" / (id + ".txt");
    e.target_dir = root / "targets" / id;
    e.tx_count = static_cast<int>(item.sample.transmitters.size());
    fs::create_directories(e.target_dir);
    write_grid(e.env_path, item.sample.env.heights);
    write_tx_file(e.tx_path, item.sample.transmitters);
    write_grid(e.target_dir / "0.pl", item.sample.target->values);
    comps.push_back({{"id", id},
                     {"source_map", item.source_map},
                     {"tx_indices", item.component_tx},
                     {"weights", item.sample.tx_weights}});
    m.entries.push_back(std::move(e));
  }
  write_manifest(m);
  std::ofstream os(root / "sidecar.json");
  os << sidecar.dump(2) << "\n";
  return m;
}

}  // namespace pathfinder
