#include <catch2/catch_amalgamated.hpp>

#include "pathfinder/augment.hpp"

using namespace pathfinder;

namespace {

Sample single_tx_sample(int h, int w, TransmitterSpec tx, double target_fill) {
  EnvironmentMap env{Grid(h, w)};
  env.heights.at(0, 1) = 0.5;
  return make_sample(env, {tx}, {1.0}, PathLossMap{Grid(h, w, target_fill)});
}

Sample random_sample(Rng& rng, int n) {
  EnvironmentMap env{Grid(8, 8)};
  for (double& v : env.heights.v) v = rng.uniform() < 0.3 ? rng.uniform(0.1, 1.0) : 0.0;
  std::vector<TransmitterSpec> specs;
  std::set<std::pair<int, int>> used;
  while (int(specs.size()) < n) {
    TransmitterSpec s{int(rng.below(8)), int(rng.below(8)), rng.uniform(0.2, 1.0)};
    if (used.insert({s.row, s.col}).second) specs.push_back(s);
  }
  PathLossMap target{Grid(8, 8)};
  for (double& v : target.values.v) v = rng.uniform();
  return make_sample(env, specs, std::vector<double>(std::size_t(n), 1.0 / n), target);
}

}  // namespace

TEST_CASE("identity op reproduces the sample bit for bit") {
  Rng rng(1);
  Sample s = random_sample(rng, 2);
  Sample t = apply_aug(s, AugOp::identity);
  CHECK(t.env.heights == s.env.heights);
  CHECK(t.tx_map.values == s.tx_map.values);
  CHECK(t.target->values == s.target->values);
}

TEST_CASE("rot90 moves (0,0) of a 4x4 grid to (0,3)") {
  Sample s = single_tx_sample(4, 4, {0, 0, 1.0}, 0.2);
  Sample t = apply_aug(s, AugOp::rot90);
  CHECK(t.transmitters[0].row == 0);
  CHECK(t.transmitters[0].col == 3);
  CHECK(t.tx_map.values.at(0, 3) == 1.0);
}

TEST_CASE("every op round-trips through its inverse exactly") {
  Rng rng(2);
  for (AugOp op : all_aug_ops()) {
    Sample s = random_sample(rng, 3);
    Sample back = apply_aug(apply_aug(s, op), inverse_op(op));
    INFO(aug_op_name(op));
    CHECK(back.env.heights == s.env.heights);
    CHECK(back.tx_map.values == s.tx_map.values);
    CHECK(back.target->values == s.target->values);
    for (std::size_t k = 0; k < s.transmitters.size(); ++k) {
      CHECK(back.transmitters[k] == s.transmitters[k]);
    }
  }
}

TEST_CASE("grid transform and coordinate map agree on impulses") {
  Rng rng(3);
  for (AugOp op : all_aug_ops()) {
    for (int trial = 0; trial < 5; ++trial) {
      const int r = int(rng.below(6)), c = int(rng.below(6));
      Grid g(6, 6);
      g.at(r, c) = 1.0;
      Grid tg = transform_grid(g, op);
      auto [tr, tc] = transform_coord(op, r, c, 6, 6);
      CHECK(tg.at(tr, tc) == 1.0);
      double sum = 0.0;
      for (double v : tg.v) sum += v;
      CHECK(sum == 1.0);
    }
  }
}

TEST_CASE("rotations and the diagonal flip reject non-square grids") {
  EnvironmentMap env{Grid(8, 12)};
  Sample s = make_sample(env, {{1, 1, 0.5}}, {1.0});
  CHECK_THROWS_AS(apply_aug(s, AugOp::rot90), Error);
  CHECK_THROWS_AS(apply_aug(s, AugOp::rot180), Error);
  CHECK_THROWS_AS(apply_aug(s, AugOp::flip_diag), Error);
  CHECK_NOTHROW(apply_aug(s, AugOp::flip_h));
  CHECK_NOTHROW(apply_aug(s, AugOp::flip_v));
}

TEST_CASE("tom_mixup mixes maps and labels by beta exactly") {
  Sample si = single_tx_sample(8, 8, {2, 2, 1.0}, 0.4);
  Sample sj = single_tx_sample(8, 8, {5, 5, 1.0}, 0.8);

  MixSpec half{1.0, 0.5, 2, {0.5, 0.5}};
  Sample mixed = tom_mixup(si, sj, half, AugOp::identity);
  for (double v : mixed.target->values.v) CHECK(v == 0.6);
  CHECK(mixed.transmitters.size() == 2);
  CHECK(mixed.tx_map.values.at(2, 2) == 0.5);

  MixSpec full{1.0, 1.0, 2, {1.0, 0.0}};
  Sample only_i = tom_mixup(si, sj, full, AugOp::flip_h);
  CHECK(only_i.target->values == apply_aug(si, AugOp::flip_h).target->values);

  MixSpec quarter{1.0, 0.25, 2, {0.25, 0.75}};
  Sample sj0 = single_tx_sample(8, 8, {5, 5, 1.0}, 0.0);
  Sample si1 = single_tx_sample(8, 8, {2, 2, 1.0}, 1.0);
  Sample q = tom_mixup(si1, sj0, quarter, AugOp::identity);
  for (double v : q.target->values.v) CHECK(v == 0.25);
}

TEST_CASE("tom_mixup label linearity is exact for random pairs") {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    Sample si = random_sample(rng, 1);
    Sample sj = random_sample(rng, 1);
    sj.env = si.env;  // same map
    if (sj.transmitters[0].row == si.transmitters[0].row &&
        sj.transmitters[0].col == si.transmitters[0].col) {
      continue;
    }
    const double beta = rng.uniform();
    MixSpec spec{1.0, beta, 2, {beta, 1.0 - beta}};
    const AugOp op = all_aug_ops()[rng.below(all_aug_ops().size())];
    Sample mixed = tom_mixup(si, sj, spec, op);
    const Grid yi = transform_grid(si.target->values, op);
    const Grid yj = transform_grid(sj.target->values, op);
    for (std::size_t p = 0; p < yi.size(); ++p) {
      CHECK(mixed.target->values.v[p] - beta * yi.v[p] - (1.0 - beta) * yj.v[p] == 0.0);
    }
    CHECK(validate_sample(mixed).empty());
  }
}

TEST_CASE("tom_mixup rejects mismatched maps and coincident transmitters") {
  Sample si = single_tx_sample(8, 8, {2, 2, 1.0}, 0.4);
  Sample sj = single_tx_sample(8, 8, {5, 5, 1.0}, 0.8);
  sj.env.heights.at(7, 7) = 0.9;
  MixSpec spec{1.0, 0.5, 2, {0.5, 0.5}};
  CHECK_THROWS_WITH(tom_mixup(si, sj, spec, AugOp::identity),
                    Catch::Matchers::ContainsSubstring("different environment"));

  Sample sk = single_tx_sample(8, 8, {2, 2, 0.7}, 0.8);
  CHECK_THROWS_WITH(tom_mixup(si, sk, spec, AugOp::identity),
                    Catch::Matchers::ContainsSubstring("coincident"));
}

namespace {

std::vector<LoadedSample> grouped_test_samples(Rng& rng, int maps, int per_map) {
  std::vector<LoadedSample> out;
  for (int m = 0; m < maps; ++m) {
    EnvironmentMap env{Grid(8, 8)};
    for (double& v : env.heights.v) v = rng.uniform() < 0.3 ? rng.uniform(0.1, 1.0) : 0.0;
    std::set<std::pair<int, int>> used;
    for (int k = 0; k < per_map; ++k) {
      TransmitterSpec s{0, 0, rng.uniform(0.2, 1.0)};
      do {
        s.row = int(rng.below(8));
        s.col = int(rng.below(8));
      } while (!used.insert({s.row, s.col}).second);
      PathLossMap target{Grid(8, 8)};
      for (double& v : target.values.v) v = rng.uniform();
      out.push_back({strcat("map", m), k, make_sample(env, {s}, {1.0}, target)});
    }
  }
  return out;
}

}  // namespace

TEST_CASE("build_s2mt_set: mean labels, uniform weights, determinism") {
  Rng rng(5);
  auto samples = grouped_test_samples(rng, 3, 6);
  for (int n : {2, 3, 4, 5}) {
    auto set = build_s2mt_set(samples, n, 1234, 4);
    REQUIRE(set.size() == 12);  // 3 maps x 4 combos
    for (const auto& item : set) {
      REQUIRE(int(item.sample.transmitters.size()) == n);
      for (double w : item.sample.tx_weights) CHECK(w == 1.0 / n);
      // label equals the component mean, independently re-summed
      Grid reference(8, 8);
      for (int idx : item.component_tx) {
        const LoadedSample* comp = nullptr;
        for (const auto& s : samples) {
          if (s.map_id == item.source_map && s.tx_index == idx) comp = &s;
        }
        REQUIRE(comp != nullptr);
        for (std::size_t p = 0; p < reference.size(); ++p) {
          reference.v[p] += comp->sample.target->values.v[p];
        }
      }
      for (std::size_t p = 0; p < reference.size(); ++p) {
        CHECK(std::abs(item.sample.target->values.v[p] - reference.v[p] / n) <= 1e-12);
      }
      CHECK(validate_sample(item.sample).empty());
    }
    // bit-reproducible under the same seed
    auto again = build_s2mt_set(samples, n, 1234, 4);
    REQUIRE(again.size() == set.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
      CHECK(again[i].component_tx == set[i].component_tx);
      CHECK(again[i].sample.target->values == set[i].sample.target->values);
    }
  }
}

TEST_CASE("build_s2mt_set rejects N=1 and skips short maps") {
  Rng rng(6);
  auto samples = grouped_test_samples(rng, 2, 3);
  CHECK_THROWS_AS(build_s2mt_set(samples, 1, 7), Error);
  auto set = build_s2mt_set(samples, 4, 7, 2);  // both maps too small
  CHECK(set.empty());
}

TEST_CASE("s2mt sets serialize to a loadable joint-mode corpus") {
  Rng rng(7);
  auto samples = grouped_test_samples(rng, 2, 4);
  auto set = build_s2mt_set(samples, 2, 42, 3);
  fs::path dir = fs::temp_directory_path() / "pathfinder_test_s2mt_io";
  fs::remove_all(dir);
  Manifest m = write_s2mt_set(dir, set, 2, 42);
  CHECK(m.mode == "joint");
  Manifest loaded = load_manifest(dir);
  CHECK(loaded.pair_count() == set.size());
  Sample s = load_sample(loaded, loaded.entries[0].map_id, 0);
  CHECK(s.transmitters.size() == 2);
  CHECK(s.tx_weights[0] == 0.5);
  CHECK(s.target.has_value());
  CHECK(fs::exists(dir / "sidecar.json"));
}
