#pragma once

#include <array>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <set>
#include <string>
#include <vector>

#include "pathfinder/core.hpp"
#include "pathfinder/rng.hpp"

namespace pathfinder {

namespace fs = std::filesystem;

// ---- grid files ----
// Binary grid format (.env / .pl): 8-byte header of H:uint32, W:uint32
// little-endian, then H*W row-major 32-bit little-endian floats.

inline void write_grid(const fs::path& path, const Grid& g) {
  std::ofstream os(path, std::ios::binary);
  require(os.good(), "write_grid: cannot open ", path.string());
  auto put_u32 = [&](std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
  };
  put_u32(static_cast<std::uint32_t>(g.rows));
  put_u32(static_cast<std::uint32_t>(g.cols));
  std::vector<float> buf(g.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(g.v[i]);
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(float)));
  require(os.good(), "write_grid: write failed for ", path.string());
}

inline Grid read_grid_binary(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), "read_grid: cannot open ", path.string());
  auto get_u32 = [&]() {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
  };
  const std::uint32_t rows = get_u32(), cols = get_u32();
  require(is.good() && rows > 0 && cols > 0 && rows < (1u << 20) && cols < (1u << 20),
          "read_grid: bad header in ", path.string());
  Grid g(static_cast<int>(rows), static_cast<int>(cols));
  std::vector<float> buf(g.size());
  is.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  require(is.good(), "read_grid: truncated grid in ", path.string());
  for (std::size_t i = 0; i < buf.size(); ++i) g.v[i] = static_cast<double>(buf[i]);
  return g;
}

// Compatibility reader for 8-bit grayscale exports: binary PGM (P5,
// maxval 255); pixel value v maps to v/255.
inline Grid read_grid_pgm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), "read_grid_pgm: cannot open ", path.string());
  std::string magic;
  is >> magic;
  require(magic == "P5", "read_grid_pgm: ", path.string(), " is not binary PGM");
  auto next_int = [&]() {
    // skip whitespace and '#' comment lines
    for (;;) {
      int c = is.peek();
      if (c == '#') {
        std::string line;
        std::getline(is, line);
      } else if (std::isspace(c)) {
        is.get();
      } else {
        break;
      }
    }
    long v = -1;
    is >> v;
    require(is.good() && v >= 0, "read_grid_pgm: bad header in ", path.string());
    return v;
  };
  const long w = next_int(), h = next_int(), maxval = next_int();
  require(maxval == 255, "read_grid_pgm: expected maxval 255 in ", path.string());
  is.get();  // single whitespace after header
  Grid g(static_cast<int>(h), static_cast<int>(w));
  std::vector<unsigned char> buf(g.size());
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  require(is.good(), "read_grid_pgm: truncated data in ", path.string());
  for (std::size_t i = 0; i < buf.size(); ++i) g.v[i] = buf[i] / 255.0;
  return g;
}

inline Grid read_grid(const fs::path& path) {
  if (path.extension() == ".pgm") return read_grid_pgm(path);
  return read_grid_binary(path);
}

// ---- transmitter list files: one "row col height" triple per line ----

inline void write_tx_file(const fs::path& path, const std::vector<TransmitterSpec>& specs) {
  std::ofstream os(path);
  require(os.good(), "write_tx_file: cannot open ", path.string());
  os.precision(17);
  for (const auto& s : specs) os << s.row << " " << s.col << " " << s.height << "\n";
}

inline std::vector<TransmitterSpec> read_tx_file(const fs::path& path) {
  std::ifstream is(path);
  require(is.good(), "read_tx_file: cannot open ", path.string());
  std::vector<TransmitterSpec> out;
  TransmitterSpec s;
  while (is >> s.row >> s.col >> s.height) out.push_back(s);
  require(is.eof(), "read_tx_file: malformed line in ", path.string());
  return out;
}

// ---- manifest ----

struct ManifestEntry {
  std::string map_id;
  fs::path env_path;
  fs::path tx_path;
  fs::path target_dir;
  int tx_count = 0;
};

// mode "single": each transmitter line is an independent scenario with its
// own target <k>.pl. mode "joint": all listed transmitters radiate at once
// with uniform weights and the single target 0.pl.
struct Manifest {
  fs::path root;
  double resolution_m = 1.0;
  std::string mode = "single";
  std::vector<ManifestEntry> entries;

  std::size_t pair_count() const {
    if (mode == "joint") return entries.size();
    std::size_t n = 0;
    for (const auto& e : entries) n += static_cast<std::size_t>(e.tx_count);
    return n;
  }

  const ManifestEntry& entry(const std::string& map_id) const {
    for (const auto& e : entries) {
      if (e.map_id == map_id) return e;
    }
    fail("Manifest: unknown map_id ", map_id);
  }
};

inline void write_manifest(const Manifest& m) {
  nlohmann::json j;
  j["resolution_m"] = m.resolution_m;
  j["mode"] = m.mode;
  auto& maps = j["maps"] = nlohmann::json::array();
  for (const auto& e : m.entries) {
    maps.push_back({{"id", e.map_id},
                    {"env", fs::relative(e.env_path, m.root).string()},
                    {"tx", fs::relative(e.tx_path, m.root).string()},
                    {"targets", fs::relative(e.target_dir, m.root).string()},
                    {"tx_count", e.tx_count}});
  }
  std::ofstream os(m.root / "manifest.json");
  require(os.good(), "write_manifest: cannot open ", (m.root / "manifest.json").string());
  os << j.dump(2) << "\n";
}

inline Manifest load_manifest(const fs::path& root) {
  const fs::path index = root / "manifest.json";
  require(fs::exists(index), "load_manifest: no manifest at ", index.string());
  std::ifstream is(index);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    fail("load_manifest: cannot parse ", index.string(), ": ", e.what());
  }
  Manifest m;
  m.root = root;
  m.resolution_m = j.value("resolution_m", 1.0);
  m.mode = j.value("mode", "single");
  require(m.mode == "single" || m.mode == "joint", "load_manifest: unknown mode ", m.mode);
  require(j.contains("maps") && !j["maps"].empty(), "load_manifest: no maps found in ",
          index.string());
  std::vector<std::string> seen;
  for (const auto& e : j["maps"]) {
    ManifestEntry entry;
    entry.map_id = e.at("id").get<std::string>();
    for (const auto& id : seen) {
      require(id != entry.map_id, "load_manifest: duplicate map_id ", entry.map_id);
    }
    seen.push_back(entry.map_id);
    entry.env_path = root / e.at("env").get<std::string>();
    entry.tx_path = root / e.at("tx").get<std::string>();
    entry.target_dir = root / e.at("targets").get<std::string>();
    entry.tx_count = e.at("tx_count").get<int>();

    require(fs::exists(entry.env_path), "load_manifest: missing ", entry.env_path.string());
    require(fs::exists(entry.tx_path), "load_manifest: missing ", entry.tx_path.string());
    const Grid env = read_grid(entry.env_path);
    const auto specs = read_tx_file(entry.tx_path);
    require(static_cast<int>(specs.size()) == entry.tx_count, "load_manifest: map ",
            entry.map_id, " lists ", specs.size(), " transmitters, manifest says ",
            entry.tx_count);
    // Target files are optional (inference mode) but must match when present.
    const int targets = m.mode == "joint" ? 1 : entry.tx_count;
    for (int k = 0; k < targets; ++k) {
      const fs::path t = entry.target_dir / (std::to_string(k) + ".pl");
      if (!fs::exists(t)) continue;
      const Grid tg = read_grid(t);
      require(tg.rows == env.rows && tg.cols == env.cols,
              "load_manifest: dimension mismatch for map ", entry.map_id, " target ", k);
    }
    m.entries.push_back(std::move(entry));
  }
  return m;
}

// ---- splits ----

struct SplitSpec {
  std::vector<std::string> train_ids, val_ids, test_ids;
};

// Contiguous blocks in manifest order, sized unit*ratio with the division
// remainder assigned to train. Splitting is by map so building layouts
// never leak across splits.
inline SplitSpec split_by_order(const Manifest& m, std::array<int, 3> ratios = {5, 1, 1}) {
  require(ratios[0] > 0 && ratios[1] > 0 && ratios[2] > 0,
          "split_by_order: ratios must be positive");
  const std::size_t n = m.entries.size();
  require(n > 0, "split_by_order: empty manifest");
  const std::size_t parts = std::size_t(ratios[0]) + ratios[1] + ratios[2];
  const std::size_t unit = n / parts;
  require(unit >= 1, "split_by_order: ", n, " maps cannot fill ", parts, " ratio parts");
  const std::size_t n_val = unit * std::size_t(ratios[1]);
  const std::size_t n_test = unit * std::size_t(ratios[2]);
  const std::size_t n_train = n - n_val - n_test;
  SplitSpec s;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string& id = m.entries[i].map_id;
    if (i < n_train) {
      s.train_ids.push_back(id);
    } else if (i < n_train + n_val) {
      s.val_ids.push_back(id);
    } else {
      s.test_ids.push_back(id);
    }
  }
  return s;
}

// ---- synthetic oracle ----

struct SynthConfig {
  int rows = 64, cols = 64;
  double gamma = 0.08;  // distance decay
  double atten = 0.45;  // per-wall attenuation factor
  int min_buildings = 4, max_buildings = 9;
  int min_extent = 4, max_extent = 14;
  double min_height = 0.2;
  std::uint64_t seed = 0;

  void validate() const {
    require(rows >= 8 && cols >= 8, "SynthConfig: grid ", rows, "x", cols,
            " smaller than 8x8");
    require(gamma > 0.0, "SynthConfig: gamma must be positive");
    require(atten > 0.0 && atten < 1.0, "SynthConfig: atten must lie in (0,1)");
    require(min_buildings >= 0 && max_buildings >= min_buildings, "SynthConfig: buildings");
    require(min_extent >= 1 && max_extent >= min_extent, "SynthConfig: extents");
    require(min_height > 0.0 && min_height <= 1.0, "SynthConfig: min_height");
  }
};

// Integer line-voxel walk between cell centers. Counts building cells on
// the traversed cell sequence, excluding the start cell (the transmitter
// radiates above its own rooftop). Exact corner crossings step diagonally,
// so the corner-touching cell pair is never double counted.
inline int count_wall_crossings(const EnvironmentMap& env, int r0, int c0, int r1, int c1) {
  require(env.heights.in_bounds(r0, c0) && env.heights.in_bounds(r1, c1),
          "count_wall_crossings: endpoint outside grid");
  int r = r0, c = c0;
  const int dr = r1 - r0, dc = c1 - c0;
  const int sr = dr > 0 ? 1 : -1, sc = dc > 0 ? 1 : -1;
  const double inf = std::numeric_limits<double>::infinity();
  // Parametrize the segment by t in [0,1]; tMax* is the t of the next grid
  // line crossing, tDelta* the t per full cell.
  double t_max_r = dr != 0 ? 0.5 / std::abs(double(dr)) : inf;
  double t_max_c = dc != 0 ? 0.5 / std::abs(double(dc)) : inf;
  const double t_delta_r = dr != 0 ? 1.0 / std::abs(double(dr)) : inf;
  const double t_delta_c = dc != 0 ? 1.0 / std::abs(double(dc)) : inf;
  int crossings = 0;
  int guard = std::abs(dr) + std::abs(dc) + 2;
  while (!(r == r1 && c == c1)) {
    require(guard-- > 0, "count_wall_crossings: traversal did not terminate");
    if (t_max_r < t_max_c) {
      r += sr;
      t_max_r += t_delta_r;
    } else if (t_max_c < t_max_r) {
      c += sc;
      t_max_c += t_delta_c;
    } else {
      r += sr;
      c += sc;
      t_max_r += t_delta_r;
      t_max_c += t_delta_c;
    }
    if (env.heights.at(r, c) > 0.0) ++crossings;
  }
  return crossings;
}

inline double oracle_value(const EnvironmentMap& env, const TransmitterSpec& tx, int r,
                           int c, double gamma, double atten) {
  const double d = std::hypot(double(r - tx.row), double(c - tx.col));
  const int k = count_wall_crossings(env, tx.row, tx.col, r, c);
  return clamp01(1.0 / (1.0 + gamma * d) * std::pow(atten, double(k)));
}

inline PathLossMap oracle_path_loss(const EnvironmentMap& env, const TransmitterSpec& tx,
                                    double gamma, double atten) {
  PathLossMap out{Grid(env.rows(), env.cols())};
  for (int r = 0; r < env.rows(); ++r) {
    for (int c = 0; c < env.cols(); ++c) {
      out.values.at(r, c) = oracle_value(env, tx, r, c, gamma, atten);
    }
  }
  return out;
}

inline EnvironmentMap synth_environment(const SynthConfig& cfg, Rng& rng) {
  for (int attempt = 0; attempt < 16; ++attempt) {
    Grid g(cfg.rows, cfg.cols);
    const int nb = cfg.min_buildings +
                   static_cast<int>(rng.below(std::size_t(cfg.max_buildings - cfg.min_buildings + 1)));
    for (int b = 0; b < nb; ++b) {
      const int h = cfg.min_extent +
                    static_cast<int>(rng.below(std::size_t(cfg.max_extent - cfg.min_extent + 1)));
      const int w = cfg.min_extent +
                    static_cast<int>(rng.below(std::size_t(cfg.max_extent - cfg.min_extent + 1)));
      const int hh = std::min(h, cfg.rows), ww = std::min(w, cfg.cols);
      const int r0 = static_cast<int>(rng.below(std::size_t(cfg.rows - hh + 1)));
      const int c0 = static_cast<int>(rng.below(std::size_t(cfg.cols - ww + 1)));
      const double height = rng.uniform(cfg.min_height, 1.0);
      for (int r = r0; r < r0 + hh; ++r) {
        for (int c = c0; c < c0 + ww; ++c) g.at(r, c) = height;
      }
    }
    bool any_free = false;
    for (double v : g.v) {
      if (v == 0.0) {
        any_free = true;
        break;
      }
    }
    if (any_free) return EnvironmentMap{std::move(g)};
  }
  fail("synth_environment: could not place buildings with a free cell left");
}

inline std::vector<TransmitterSpec> synth_transmitters(const SynthConfig& cfg, int count,
                                                       Rng& rng) {
  std::vector<TransmitterSpec> out;
  std::set<std::pair<int, int>> used;
  while (static_cast<int>(out.size()) < count) {
    TransmitterSpec s;
    s.row = static_cast<int>(rng.below(std::size_t(cfg.rows)));
    s.col = static_cast<int>(rng.below(std::size_t(cfg.cols)));
    if (!used.insert({s.row, s.col}).second) continue;
    s.height = rng.uniform(0.3, 1.0);
    out.push_back(s);
  }
  return out;
}

// Writes a full synthetic corpus. Multi-transmitter path loss over this
// data is the weighted sum of single-transmitter maps by construction, so
// the additivity premise behind mixing holds exactly.
inline Manifest synth_generate(const SynthConfig& cfg, int n_maps, int tx_per_map,
                               const fs::path& root) {
  cfg.validate();
  require(n_maps >= 1 && tx_per_map >= 1, "synth_generate: need maps and transmitters");
  std::error_code ec;
  fs::create_directories(root / "maps", ec);
  fs::create_directories(root / "tx", ec);
  fs::create_directories(root / "targets", ec);
  require(fs::is_directory(root / "maps"), "synth_generate: cannot create ", root.string());

  const Rng base(cfg.seed);
  Manifest m;
  m.root = root;
  m.resolution_m = 1.0;
  m.mode = "single";
  for (int i = 0; i < n_maps; ++i) {
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "%04d", i);
    const std::string id = idbuf;
    Rng env_rng = base.stream("env", std::uint64_t(i));
    Rng tx_rng = base.stream("tx", std::uint64_t(i));
    const EnvironmentMap env = synth_environment(cfg, env_rng);
    const auto specs = synth_transmitters(cfg, tx_per_map, tx_rng);

    ManifestEntry e;
    e.map_id = id;
    e.env_path = root / "maps" / (id + ".env");
    e.tx_path = root / "tx" / (id + ".txt");
    e.target_dir = root / "targets" / id;
    e.tx_count = tx_per_map;
    fs::create_directories(e.target_dir);
    write_grid(e.env_path, env.heights);
    write_tx_file(e.tx_path, specs);
    for (int k = 0; k < tx_per_map; ++k) {
      const PathLossMap target = oracle_path_loss(env, specs[k], cfg.gamma, cfg.atten);
      write_grid(e.target_dir / (std::to_string(k) + ".pl"), target.values);
    }
    m.entries.push_back(std::move(e));
  }
  write_manifest(m);
  return m;
}

// ---- sample loading ----

inline Sample load_sample(const Manifest& m, const std::string& map_id, int tx_index) {
  const ManifestEntry& e = m.entry(map_id);
  const Grid env = read_grid(e.env_path);
  const auto specs = read_tx_file(e.tx_path);

  std::vector<TransmitterSpec> active;
  std::vector<double> weights;
  int target_index = tx_index;
  if (m.mode == "joint") {
    require(tx_index == 0, "load_sample: joint-mode map ", map_id,
            " has a single combined scenario (tx_index 0)");
    active = specs;
    weights.assign(specs.size(), 1.0 / double(specs.size()));
    target_index = 0;
  } else {
    require(tx_index >= 0 && tx_index < static_cast<int>(specs.size()),
            "load_sample: tx_index ", tx_index, " outside [0,", specs.size(), ") for map ",
            map_id);
    active = {specs[std::size_t(tx_index)]};
    weights = {1.0};
  }

  Sample s;
  s.env = EnvironmentMap{env};
  s.tx_map = rasterize_transmitters(active, env.rows, env.cols, weights);
  s.transmitters = std::move(active);
  s.tx_weights = std::move(weights);
  const fs::path target_path = e.target_dir / (std::to_string(target_index) + ".pl");
  if (fs::exists(target_path)) {
    s.target = PathLossMap{read_grid(target_path)};
  }
  auto violations = validate_sample(s);
  require(violations.empty(), "load_sample: map ", map_id, " tx ", tx_index, ": ",
          describe(violations));
  return s;
}

struct LoadedSample {
  std::string map_id;
  int tx_index = 0;
  Sample sample;
};

inline std::vector<LoadedSample> load_split(const Manifest& m,
                                            const std::vector<std::string>& ids) {
  std::vector<LoadedSample> out;
  for (const auto& id : ids) {
    const ManifestEntry& e = m.entry(id);
    const int n = m.mode == "joint" ? 1 : e.tx_count;
    for (int k = 0; k < n; ++k) {
      out.push_back({id, k, load_sample(m, id, k)});
    }
  }
  return out;
}

}  // namespace pathfinder
