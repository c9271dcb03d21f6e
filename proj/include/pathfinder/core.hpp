#pragma once

#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "pathfinder/grid.hpp"

namespace pathfinder {

// Normalized building heights in [0,1]; 1 pixel = 1 m.
struct EnvironmentMap {
  Grid heights;

  int rows() const { return heights.rows; }
  int cols() const { return heights.cols; }
};

// A point source: pixel position plus normalized height.
struct TransmitterSpec {
  int row = 0;
  int col = 0;
  double height = 1.0;

  bool operator==(const TransmitterSpec& o) const {
    return row == o.row && col == o.col && height == o.height;
  }
};

// Image representation of the transmitter set: weighted impulses on an
// otherwise zero grid.
struct TransmitterMap {
  Grid values;
};

struct PathLossMap {
  Grid values;
};

enum class MaskRole { building, receiver };

// Binary {0,1} grid; building and receiver masks of one scene are exact
// complements.
struct RegionMask {
  Grid values;
  MaskRole role = MaskRole::building;

  int count_ones() const {
    int n = 0;
    for (double x : values.v) n += (x != 0.0);
    return n;
  }
  std::vector<std::uint8_t> flat() const {
    std::vector<std::uint8_t> out(values.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = values.v[i] != 0.0 ? 1 : 0;
    return out;
  }
};

struct Sample {
  EnvironmentMap env;
  std::vector<TransmitterSpec> transmitters;
  std::vector<double> tx_weights;  // convex weights, one per transmitter
  TransmitterMap tx_map;
  std::optional<PathLossMap> target;
};

struct Violation {
  std::string field;
  std::string rule;
};

inline TransmitterMap rasterize_transmitters(const std::vector<TransmitterSpec>& specs,
                                             int rows, int cols,
                                             const std::vector<double>& weights) {
  require(specs.size() == weights.size(), "rasterize_transmitters: ", specs.size(),
          " specs but ", weights.size(), " weights");
  if (!specs.empty()) {
    double sum = 0.0;
    for (double w : weights) sum += w;
    require(std::abs(sum - 1.0) <= 1e-9, "rasterize_transmitters: weights sum to ", sum,
            ", expected 1");
  }
  std::set<std::pair<int, int>> seen;
  TransmitterMap out{Grid(rows, cols)};
  for (std::size_t k = 0; k < specs.size(); ++k) {
    const auto& s = specs[k];
    require(s.row >= 0 && s.row < rows && s.col >= 0 && s.col < cols,
            "rasterize_transmitters: transmitter ", k, " at (", s.row, ",", s.col,
            ") outside ", rows, "x", cols, " grid");
    require(seen.insert({s.row, s.col}).second,
            "rasterize_transmitters: duplicate transmitter position (", s.row, ",", s.col,
            ") at index ", k);
    out.values.at(s.row, s.col) = weights[k] * s.height;
  }
  return out;
}

// Building membership is strict positivity of the normalized height.
inline RegionMask building_mask(const EnvironmentMap& env) {
  RegionMask m{Grid(env.rows(), env.cols()), MaskRole::building};
  for (std::size_t i = 0; i < env.heights.size(); ++i) {
    m.values.v[i] = env.heights.v[i] > 0.0 ? 1.0 : 0.0;
  }
  return m;
}

inline RegionMask complement(const RegionMask& m) {
  RegionMask out{Grid(m.values.rows, m.values.cols),
                 m.role == MaskRole::building ? MaskRole::receiver : MaskRole::building};
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    out.values.v[i] = m.values.v[i] != 0.0 ? 0.0 : 1.0;
  }
  return out;
}

inline RegionMask receiver_mask(const EnvironmentMap& env) {
  return complement(building_mask(env));
}

// Violations are data, not exceptions. `depth` adds the 2^(L-1)
// divisibility check when the caller knows the network depth.
inline std::vector<Violation> validate_sample(const Sample& s, int depth = 0) {
  std::vector<Violation> out;
  const int h = s.env.rows(), w = s.env.cols();
  if (h < 8 || w < 8) {
    out.push_back({"EnvironmentMap", strcat("grid ", h, "x", w, " smaller than 8x8")});
  }
  if (depth > 1) {
    int div = 1 << (depth - 1);
    if (h % div != 0 || w % div != 0) {
      out.push_back({"EnvironmentMap",
                     strcat("grid ", h, "x", w, " not divisible by 2^", depth - 1)});
    }
  }
  if (!s.env.heights.all_in_unit_interval()) {
    out.push_back({"EnvironmentMap", "height outside [0,1]"});
  }
  if (!all_finite(s.env.heights.v)) {
    out.push_back({"EnvironmentMap", "non-finite height"});
  }
  for (std::size_t k = 0; k < s.transmitters.size(); ++k) {
    const auto& t = s.transmitters[k];
    if (!(t.row >= 0 && t.row < h && t.col >= 0 && t.col < w)) {
      out.push_back({"TransmitterSpec",
                     strcat("transmitter ", k, " at (", t.row, ",", t.col, ") outside ",
                            h, "x", w, " grid")});
    }
    if (!(t.height > 0.0 && t.height <= 1.0)) {
      out.push_back({"TransmitterSpec",
                     strcat("transmitter ", k, " height ", t.height, " outside (0,1]")});
    }
  }
  if (s.tx_weights.size() != s.transmitters.size()) {
    out.push_back({"Sample", strcat(s.tx_weights.size(), " weights for ",
                                    s.transmitters.size(), " transmitters")});
  } else if (!s.transmitters.empty()) {
    double sum = 0.0;
    for (double v : s.tx_weights) sum += v;
    if (std::abs(sum - 1.0) > 1e-9) {
      out.push_back({"Sample", strcat("transmitter weights sum to ", sum)});
    }
  }
  if (!s.tx_map.values.same_shape(s.env.heights)) {
    out.push_back({"TransmitterMap", "shape differs from environment"});
  } else if (!s.tx_map.values.all_in_unit_interval()) {
    out.push_back({"TransmitterMap", "value outside [0,1]"});
  }
  if (s.target) {
    if (!s.target->values.same_shape(s.env.heights)) {
      out.push_back({"PathLossMap", "shape differs from environment"});
    } else if (!s.target->values.all_in_unit_interval()) {
      out.push_back({"PathLossMap", "value outside [0,1]"});
    }
  }
  return out;
}

// Advisory only: transmitters are allowed on building cells (rooftop
// deployments), so this never makes a sample invalid.
inline std::vector<Violation> sample_warnings(const Sample& s) {
  std::vector<Violation> out;
  for (std::size_t k = 0; k < s.transmitters.size(); ++k) {
    const auto& t = s.transmitters[k];
    if (s.env.heights.in_bounds(t.row, t.col) && s.env.heights.at(t.row, t.col) > 0.0) {
      out.push_back({"TransmitterSpec",
                     strcat("transmitter ", k, " sits on a building cell (", t.row, ",",
                            t.col, ")")});
    }
  }
  return out;
}

inline std::string describe(const std::vector<Violation>& vs) {
  std::string out;
  for (const auto& v : vs) {
    if (!out.empty()) out += "; ";
    out += v.field + ": " + v.rule;
  }
  return out;
}

// Builds a consistent Sample from parts; throws on invariant violations.
inline Sample make_sample(EnvironmentMap env, std::vector<TransmitterSpec> specs,
                          std::vector<double> weights,
                          std::optional<PathLossMap> target = std::nullopt) {
  Sample s;
  s.env = std::move(env);
  s.tx_map = rasterize_transmitters(specs, s.env.rows(), s.env.cols(), weights);
  s.transmitters = std::move(specs);
  s.tx_weights = std::move(weights);
  s.target = std::move(target);
  auto violations = validate_sample(s);
  require(violations.empty(), "make_sample: ", describe(violations));
  return s;
}

}  // namespace pathfinder
