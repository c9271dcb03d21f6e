#include <catch2/catch_amalgamated.hpp>

#include "pathfinder/dataset.hpp"

using namespace pathfinder;

namespace {

fs::path temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("pathfinder_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Independent crossing counter: supersample the segment between cell
// centers and collect the distinct cells it passes through.
int crossings_by_supersampling(const EnvironmentMap& env, int r0, int c0, int r1, int c1) {
  const double y0 = r0 + 0.5, x0 = c0 + 0.5;
  const double y1 = r1 + 0.5, x1 = c1 + 0.5;
  const int steps = 200000;
  std::set<std::pair<int, int>> cells;
  for (int i = 0; i <= steps; ++i) {
    const double t = double(i) / steps;
    int r = int(std::floor(y0 + t * (y1 - y0)));
    int c = int(std::floor(x0 + t * (x1 - x0)));
    r = std::clamp(r, 0, env.rows() - 1);
    c = std::clamp(c, 0, env.cols() - 1);
    cells.insert({r, c});
  }
  int k = 0;
  for (auto [r, c] : cells) {
    if ((r != r0 || c != c0) && env.heights.at(r, c) > 0.0) ++k;
  }
  return k;
}

}  // namespace

TEST_CASE("binary grid round-trips through .env files") {
  fs::path dir = temp_dir("gridio");
  Rng rng(1);
  Grid g(12, 9);
  for (double& v : g.v) v = rng.uniform();
  write_grid(dir / "a.env", g);
  Grid back = read_grid(dir / "a.env");
  REQUIRE(back.rows == 12);
  REQUIRE(back.cols == 9);
  for (std::size_t i = 0; i < g.size(); ++i) {
    CHECK(back.v[i] == double(float(g.v[i])));  // float32 storage
  }
}

TEST_CASE("pgm compatibility reader maps bytes to value/255") {
  fs::path dir = temp_dir("pgm");
  std::ofstream os(dir / "m.pgm", std::ios::binary);
  os << "P5\n# comment\n3 2\n255\n";
  const unsigned char bytes[6] = {0, 51, 102, 153, 204, 255};
  os.write(reinterpret_cast<const char*>(bytes), 6);
  os.close();
  Grid g = read_grid(dir / "m.pgm");
  REQUIRE(g.rows == 2);
  REQUIRE(g.cols == 3);
  CHECK(g.v[0] == 0.0);
  CHECK(g.v[1] == Catch::Approx(51.0 / 255.0));
  CHECK(g.v[5] == 1.0);
}

TEST_CASE("oracle basics: zero distance, pure decay, one wall") {
  EnvironmentMap empty{Grid(32, 32)};
  TransmitterSpec tx{5, 5, 0.9};
  CHECK(oracle_value(empty, tx, 5, 5, 0.1, 0.5) == 1.0);
  // empty map, gamma=0.1, d=10 -> 1/(1+1) = 0.5
  CHECK(oracle_value(empty, tx, 5, 15, 0.1, 0.5) == Catch::Approx(0.5).epsilon(1e-12));

  EnvironmentMap walled{Grid(32, 32)};
  walled.heights.at(5, 10) = 0.8;  // one wall cell on the segment
  CHECK(oracle_value(walled, tx, 5, 15, 0.1, 0.5) == Catch::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("oracle monotonicity on an empty map") {
  EnvironmentMap empty{Grid(16, 16)};
  TransmitterSpec tx{0, 0, 1.0};
  double prev = 2.0;
  for (int c = 0; c < 16; ++c) {
    const double v = oracle_value(empty, tx, 0, c, 0.08, 0.45);
    CHECK(v <= prev);
    prev = v;
  }
}

TEST_CASE("voxel walk matches supersampled line intersection") {
  Rng rng(77);
  EnvironmentMap env{Grid(24, 24)};
  for (double& v : env.heights.v) v = rng.uniform() < 0.25 ? rng.uniform(0.1, 1.0) : 0.0;
  for (int trial = 0; trial < 60; ++trial) {
    const int r0 = int(rng.below(24)), c0 = int(rng.below(24));
    const int r1 = int(rng.below(24)), c1 = int(rng.below(24));
    INFO("segment (" << r0 << "," << c0 << ") -> (" << r1 << "," << c1 << ")");
    CHECK(count_wall_crossings(env, r0, c0, r1, c1) ==
          crossings_by_supersampling(env, r0, c0, r1, c1));
  }
  // exact diagonal with corner ties
  EnvironmentMap diag{Grid(8, 8)};
  diag.heights.at(3, 3) = 1.0;
  CHECK(count_wall_crossings(diag, 0, 0, 7, 7) == 1);
  CHECK(count_wall_crossings(diag, 0, 0, 7, 7) ==
        crossings_by_supersampling(diag, 0, 0, 7, 7));
}

TEST_CASE("synth_generate writes a loadable, deterministic corpus") {
  SynthConfig cfg;
  cfg.rows = cfg.cols = 16;
  cfg.seed = 99;
  fs::path a = temp_dir("syn_a"), b = temp_dir("syn_b");
  Manifest ma = synth_generate(cfg, 4, 3, a);
  Manifest mb = synth_generate(cfg, 4, 3, b);
  CHECK(ma.pair_count() == 12);

  for (const auto& e : ma.entries) {
    // bit-identical corpora under equal seeds
    const Grid ga = read_grid(e.env_path);
    const Grid gb = read_grid(b / "maps" / (e.map_id + ".env"));
    CHECK(ga == gb);
    for (int k = 0; k < e.tx_count; ++k) {
      const Grid ta = read_grid(e.target_dir / (std::to_string(k) + ".pl"));
      const Grid tb = read_grid(b / "targets" / e.map_id / (std::to_string(k) + ".pl"));
      CHECK(ta == tb);
    }
  }

  Manifest loaded = load_manifest(a);
  CHECK(loaded.pair_count() == 12);
  Sample s = load_sample(loaded, "0001", 2);
  CHECK(s.env.rows() == 16);
  CHECK(s.target.has_value());
  CHECK(validate_sample(s).empty());
  CHECK(s.target->values.at(s.transmitters[0].row, s.transmitters[0].col) == 1.0);
}

TEST_CASE("load_manifest rejects an empty directory") {
  fs::path dir = temp_dir("empty");
  CHECK_THROWS_WITH(load_manifest(dir), Catch::Matchers::ContainsSubstring("manifest"));
}

TEST_CASE("load_sample accepts missing targets, rejects tampered ones") {
  SynthConfig cfg;
  cfg.rows = cfg.cols = 16;
  cfg.seed = 5;
  fs::path dir = temp_dir("tamper");
  Manifest m = synth_generate(cfg, 2, 2, dir);

  fs::remove(m.entries[0].target_dir / "0.pl");
  Sample s = load_sample(m, m.entries[0].map_id, 0);
  CHECK_FALSE(s.target.has_value());

  Grid bad(16, 16, 2.0);
  write_grid(m.entries[1].target_dir / "0.pl", bad);
  CHECK_THROWS_WITH(load_sample(m, m.entries[1].map_id, 0),
                    Catch::Matchers::ContainsSubstring("PathLossMap"));
}

TEST_CASE("split_by_order follows the 5:1:1 protocol with remainder to train") {
  auto make_manifest = [](int maps) {
    Manifest m;
    for (int i = 0; i < maps; ++i) {
      ManifestEntry e;
      e.map_id = strcat("m", i);
      e.tx_count = 2;
      m.entries.push_back(e);
    }
    return m;
  };
  SplitSpec s700 = split_by_order(make_manifest(700));
  CHECK(s700.train_ids.size() == 500);
  CHECK(s700.val_ids.size() == 100);
  CHECK(s700.test_ids.size() == 100);

  SplitSpec s7 = split_by_order(make_manifest(7));
  CHECK(s7.train_ids.size() == 5);
  CHECK(s7.val_ids.size() == 1);
  CHECK(s7.test_ids.size() == 1);

  SplitSpec s9 = split_by_order(make_manifest(9));
  CHECK(s9.train_ids.size() == 7);
  CHECK(s9.val_ids.size() == 1);
  CHECK(s9.test_ids.size() == 1);

  CHECK_THROWS_AS(split_by_order(make_manifest(5)), Error);

  // disjoint, ordered, covering
  Manifest m = make_manifest(23);
  SplitSpec s = split_by_order(m);
  std::vector<std::string> all;
  all.insert(all.end(), s.train_ids.begin(), s.train_ids.end());
  all.insert(all.end(), s.val_ids.begin(), s.val_ids.end());
  all.insert(all.end(), s.test_ids.begin(), s.test_ids.end());
  REQUIRE(all.size() == 23);
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == m.entries[i].map_id);
}

TEST_CASE("oracle additivity: convex mixes of stored targets are exact") {
  SynthConfig cfg;
  cfg.rows = cfg.cols = 16;
  cfg.seed = 31;
  fs::path dir = temp_dir("addit");
  Manifest m = synth_generate(cfg, 2, 4, dir);
  const auto& e = m.entries[0];
  const Grid y0 = read_grid(e.target_dir / "0.pl");
  const Grid y1 = read_grid(e.target_dir / "1.pl");
  for (double beta : {0.0, 0.25, 0.5, 0.9, 1.0}) {
    const Grid mixed = beta * y0 + (1.0 - beta) * y1;
    for (std::size_t i = 0; i < mixed.size(); ++i) {
      const double reference = beta * y0.v[i] + (1.0 - beta) * y1.v[i];
      CHECK(std::abs(mixed.v[i] - reference) <= 1e-12);
    }
  }
}
