#include <catch2/catch_amalgamated.hpp>

#include "pathfinder/mla.hpp"

using namespace pathfinder;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  double* p = t.mut();
  for (std::size_t i = 0; i < t.size(); ++i) p[i] = rng.uniform(lo, hi);
  return t;
}

std::vector<std::uint8_t> random_mask(std::size_t n, Rng& rng, double p_building = 0.4) {
  std::vector<std::uint8_t> m(n);
  for (auto& v : m) v = rng.uniform() < p_building ? 1 : 0;
  return m;
}

RegionMask mask_from_flat(const std::vector<std::uint8_t>& flat, int h, int w) {
  RegionMask m{Grid(h, w), MaskRole::building};
  for (std::size_t i = 0; i < flat.size(); ++i) m.values.v[i] = flat[i];
  return m;
}

}  // namespace

TEST_CASE("fuse_inputs reduces to an exact sum under complementary masks") {
  Rng rng(1);
  Tensor b = random_tensor({4, 6, 6}, rng);
  Tensor s = random_tensor({4, 6, 6}, rng);
  auto flat = random_mask(36, rng);
  Tape t;
  VarId z = fuse_inputs(t, t.leaf(b), t.leaf(s), mask_from_flat(flat, 6, 6));
  for (std::size_t i = 0; i < t.value(z).size(); ++i) {
    CHECK(t.value(z)[i] - s.data()[i] == b.data()[i]);  // exact rearrangement
  }

  Tape t2;
  VarId z2 = fuse_inputs(t2, t2.leaf(b), t2.leaf(Tensor::zeros({4, 6, 6})),
                         mask_from_flat(flat, 6, 6));
  CHECK(std::equal(b.data(), b.data() + b.size(), t2.value(z2).data()));

  Tape t3;
  VarId z3 = fuse_inputs(t3, t3.leaf(Tensor::zeros({4, 6, 6})), t3.leaf(s),
                         mask_from_flat(flat, 6, 6));
  CHECK(std::equal(s.data(), s.data() + s.size(), t3.value(z3).data()));
}

TEST_CASE("low-rank projection enforces E < D") {
  CHECK_THROWS_WITH(LowRankProject("flr", 32, 32), Catch::Matchers::ContainsSubstring("E < D"));
  CHECK_THROWS_AS(LowRankProject("flr", 32, 48), Error);
  CHECK_NOTHROW(LowRankProject("flr", 64, 32));
}

TEST_CASE("low-rank projection maps D to E channels, zero stays zero") {
  Rng rng(2);
  LowRankProject flr("flr", 8, 4);
  ParamStore ps;
  flr.register_params(ps, rng);
  Tape t;
  ForwardCtx eval;
  VarId out = flr.forward(t, ps, t.leaf(Tensor::zeros({8, 5, 5})), eval);
  CHECK(t.value(out).shape() == std::vector<int>{4, 5, 5});
  CHECK(t.value(out).max_abs() == 0.0);

  Tape t2;
  VarId out2 = flr.forward(t2, ps, t2.leaf(random_tensor({8, 5, 5}, rng)), eval);
  CHECK(t2.value(out2).shape() == std::vector<int>{4, 5, 5});
  CHECK(t2.value(out2).finite());
}

TEST_CASE("tokenize produces HWxE spatial tokens and nxE prompt tokens") {
  Rng rng(3);
  MlaLayer mla("mla", 8, 4, 2);
  ParamStore ps;
  mla.register_params(ps, rng);
  Tape t;
  ForwardCtx eval;
  VarId x1 = t.leaf(random_tensor({8, 4, 4}, rng));
  VarId x_lr = mla.low_rank(t, ps, x1, eval);
  SpatialTokens tokens = mla.tokenize_spatial(t, ps, x_lr);
  CHECK(t.value(tokens.building).shape() == std::vector<int>{16, 4});
  CHECK(t.value(tokens.receiver).shape() == std::vector<int>{16, 4});
  // shared projection: building and receiver tokens coincide as written
  CHECK(std::equal(t.value(tokens.building).data(),
                   t.value(tokens.building).data() + 64, t.value(tokens.receiver).data()));

  VarId p = mla.tokenize_prompts(t, ps, t.leaf(random_tensor({3, 4}, rng)));
  CHECK(t.value(p).shape() == std::vector<int>{3, 4});
  // layer-norm rows: zero mean, unit variance before scale/shift
  for (int r = 0; r < 3; ++r) {
    double mean = 0.0;
    for (int c = 0; c < 4; ++c) mean += t.value(p).at(r, c);
    CHECK(std::abs(mean / 4.0) < 1e-9);
  }
}

TEST_CASE("fill_rows leaves rows fully finite or fully -inf") {
  Rng rng(4);
  Tensor scores = random_tensor({6, 3}, rng);
  Tensor filled = fill_rows(scores, {1, 0, 1, 0, 0, 1});
  for (int r = 0; r < 6; ++r) {
    bool all_inf = true, all_finite = true;
    for (int c = 0; c < 3; ++c) {
      const double v = filled.at(r, c);
      all_inf = all_inf && v == -std::numeric_limits<double>::infinity();
      all_finite = all_finite && std::isfinite(v);
    }
    CHECK((all_inf || all_finite));
  }
}

TEST_CASE("fill + plain softmax agrees with the fused masked softmax") {
  Rng rng(5);
  Tensor scores = random_tensor({10, 4}, rng);
  auto keep = random_mask(10, rng, 0.5);
  std::vector<std::uint8_t> drop(10);
  for (int i = 0; i < 10; ++i) drop[i] = keep[i] ? 0 : 1;

  Tensor filled = fill_rows(scores, drop);
  Tensor reference({10, 4});
  for (int r = 0; r < 10; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < 4; ++c) mx = std::max(mx, filled.at(r, c));
    if (mx == -std::numeric_limits<double>::infinity()) continue;  // zero row
    double sum = 0.0;
    for (int c = 0; c < 4; ++c) sum += std::exp(filled.at(r, c) - mx);
    for (int c = 0; c < 4; ++c) {
      reference.mut()[std::size_t(r) * 4 + c] = std::exp(filled.at(r, c) - mx) / sum;
    }
  }
  Tape t;
  const Tensor& fused = t.value(t.row_masked_softmax(t.leaf(scores), keep));
  for (std::size_t i = 0; i < 40; ++i) {
    CHECK(fused[i] == Catch::Approx(reference[i]).margin(1e-15));
  }
}

TEST_CASE("n=1: unmasked rows carry exactly the single value vector") {
  Rng rng(6);
  MlaLayer mla("mla", 8, 4, 2);
  ParamStore ps;
  mla.register_params(ps, rng);
  Tape t;
  auto keep = random_mask(16, rng, 0.5);
  VarId tokens = t.leaf(random_tensor({16, 4}, rng));
  VarId p_token = t.leaf(random_tensor({1, 4}, rng));
  VarId o = mla.attend(t, ps, tokens, p_token, "mla.wq_b", keep);
  const Tensor& vp = t.value(t.matmul(p_token, t.param("mla.wv_p", ps.get("mla.wv_p"))));
  for (int r = 0; r < 16; ++r) {
    for (int c = 0; c < 4; ++c) {
      CHECK(t.value(o).at(r, c) == (keep[std::size_t(r)] ? vp.at(0, c) : 0.0));
    }
  }
}

namespace {

struct BlockFixture {
  MlaLayer mla{"mla", 8, 4, 2};
  ParamStore ps;
  Tensor x1;
  Tensor prompts;
  std::vector<std::uint8_t> mask;

  explicit BlockFixture(std::uint64_t seed, double p_building = 0.4) {
    Rng rng(seed);
    mla.register_params(ps, rng);
    x1 = random_tensor({8, 4, 4}, rng);
    prompts = random_tensor({3, 4}, rng);
    mask = random_mask(16, rng, p_building);
  }

  Tensor run(const Tensor& prompt_override) {
    Tape t;
    ForwardCtx eval;
    VarId out = mla.forward(t, ps, t.leaf(x1), t.leaf(prompt_override), mask, eval);
    return t.value(out).clone();
  }
};

}  // namespace

TEST_CASE("attention scores and outputs have the contracted shapes") {
  BlockFixture f(7);
  Tape t;
  ForwardCtx eval;
  VarId x_lr = f.mla.low_rank(t, f.ps, t.leaf(f.x1), eval);
  SpatialTokens tokens = f.mla.tokenize_spatial(t, f.ps, x_lr);
  VarId p_token = f.mla.tokenize_prompts(t, f.ps, t.leaf(f.prompts));
  VarId q = t.matmul(tokens.building, t.param("mla.wq_b", f.ps.get("mla.wq_b")));
  VarId k = t.matmul(p_token, t.param("mla.wk_p", f.ps.get("mla.wk_p")));
  VarId scores = t.matmul_nt(q, k);
  CHECK(t.value(scores).shape() == std::vector<int>{16, 3});  // (HW x n)

  VarId o = f.mla.forward(t, f.ps, t.leaf(f.x1), t.leaf(f.prompts), f.mask, eval);
  CHECK(t.value(o).shape() == std::vector<int>{8, 4, 4});  // (D,H,W)
}

TEST_CASE("row support complementarity, including degenerate masks") {
  for (double p : {0.0, 0.4, 1.0}) {
    BlockFixture f(8, p);
    Tape t;
    ForwardCtx eval;
    VarId x_lr = f.mla.low_rank(t, f.ps, t.leaf(f.x1), eval);
    SpatialTokens tokens = f.mla.tokenize_spatial(t, f.ps, x_lr);
    VarId p_token = f.mla.tokenize_prompts(t, f.ps, t.leaf(f.prompts));
    std::vector<std::uint8_t> keep_r(16);
    for (int i = 0; i < 16; ++i) keep_r[i] = f.mask[std::size_t(i)] ? 0 : 1;
    VarId o1 = f.mla.attend(t, f.ps, tokens.building, p_token, "mla.wq_b", f.mask);
    VarId o2 = f.mla.attend(t, f.ps, tokens.receiver, p_token, "mla.wq_r", keep_r);
    for (int r = 0; r < 16; ++r) {
      double n1 = 0.0, n2 = 0.0;
      for (int c = 0; c < 4; ++c) {
        n1 += std::abs(t.value(o1).at(r, c));
        n2 += std::abs(t.value(o2).at(r, c));
      }
      if (f.mask[std::size_t(r)]) {
        CHECK(n2 == 0.0);  // receiver branch silent on building rows
      } else {
        CHECK(n1 == 0.0);  // building branch silent on receiver rows
      }
      CHECK((n1 == 0.0 || n2 == 0.0));
    }
    // degenerate masks stay NaN-free through the whole layer
    Tape t2;
    VarId out = f.mla.forward(t2, f.ps, t2.leaf(f.x1), t2.leaf(f.prompts), f.mask, eval);
    CHECK(t2.value(out).finite());
  }
}

TEST_CASE("prompt permutation leaves the layer output unchanged within 1e-6") {
  BlockFixture f(9);
  Tensor out_a = f.run(f.prompts);
  Tensor permuted({3, 4});
  const int perm[3] = {2, 0, 1};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) {
      permuted.mut()[std::size_t(r) * 4 + c] = f.prompts.at(perm[r], c);
    }
  }
  Tensor out_b = f.run(permuted);
  for (std::size_t i = 0; i < out_a.size(); ++i) {
    CHECK(std::abs(out_a[i] - out_b[i]) <= 1e-6);
  }
}

TEST_CASE("masked rows are isolated: editing them never changes the kept branch") {
  BlockFixture f(10);
  Rng rng(99);
  Tape t;
  ForwardCtx eval;
  Tensor tokens = random_tensor({16, 4}, rng);
  Tensor edited = tokens.clone();
  for (int r = 0; r < 16; ++r) {
    if (!f.mask[std::size_t(r)]) {
      for (int c = 0; c < 4; ++c) edited.mut()[std::size_t(r) * 4 + c] = rng.uniform(-9, 9);
    }
  }
  VarId p_token = t.leaf(f.prompts);
  VarId o_base = f.mla.attend(t, f.ps, t.leaf(tokens), p_token, "mla.wq_b", f.mask);
  VarId o_edit = f.mla.attend(t, f.ps, t.leaf(edited), p_token, "mla.wq_b", f.mask);
  for (std::size_t i = 0; i < t.value(o_base).size(); ++i) {
    CHECK(t.value(o_base)[i] == t.value(o_edit)[i]);  // exact equality
  }
}

TEST_CASE("mla layer rejects empty prompt sets and wrong mask lengths") {
  BlockFixture f(11);
  Tape t;
  ForwardCtx eval;
  CHECK_THROWS_WITH(
      f.mla.forward(t, f.ps, t.leaf(f.x1), t.leaf(Tensor::zeros({0, 4})), f.mask, eval),
      Catch::Matchers::ContainsSubstring("no prompts"));
  std::vector<std::uint8_t> short_mask(8, 1);
  CHECK_THROWS_WITH(
      f.mla.forward(t, f.ps, t.leaf(f.x1), t.leaf(f.prompts), short_mask, eval),
      Catch::Matchers::ContainsSubstring("mask"));
}

TEST_CASE("mla block widens channels and passes a finite-difference check") {
  Rng rng(12);
  MlaBlock block("blk", 4, 8, 4, 2);
  ParamStore ps;
  block.register_params(ps, rng);
  Tensor z = random_tensor({4, 4, 4}, rng);
  auto mask = random_mask(16, rng);
  Tensor prompts = random_tensor({2, 4}, rng);
  Tensor target = random_tensor({8, 4, 4}, rng, 0.0, 1.0);

  {
    Tape t;
    ForwardCtx eval;
    VarId out = block.forward(t, ps, t.leaf(z), t.leaf(prompts), mask, eval);
    CHECK(t.value(out).shape() == std::vector<int>{8, 4, 4});
  }

  // end-to-end gradient check on a few parameters of every tensor
  Tape t;
  StatsSink sink;
  auto loss_fn = [&](Tape& tape) {
    sink.clear();
    ForwardCtx train{true, &sink};
    return tape.mse_loss(
        block.forward(tape, ps, tape.leaf(z, false), tape.leaf(prompts, false), mask, train),
        target);
  };
  VarId loss = loss_fn(t);
  t.backward(loss);
  auto grads = t.param_grads();
  Rng pick(7);
  const double h = 1e-6;
  for (const auto& name : ps.trainable_names()) {
    Tensor& param = ps.get(name);
    const std::size_t j = pick.below(param.size());
    const double orig = param.data()[j];
    param.mut()[j] = orig + h;
    Tape tp;
    const double fp = tp.value(loss_fn(tp))[0];
    param.mut()[j] = orig - h;
    Tape tm;
    const double fm = tm.value(loss_fn(tm))[0];
    param.mut()[j] = orig;
    const double num = (fp - fm) / (2.0 * h);
    const double ana = grads.count(name) ? grads.at(name).data()[j] : 0.0;
    const double denom = std::max({1e-6, std::abs(num), std::abs(ana)});
    INFO(name << "[" << j << "]: numeric " << num << " analytic " << ana);
    REQUIRE(std::abs(num - ana) / denom < 1e-3);
  }
}

TEST_CASE("mask pyramid downsampling keeps masks binary and nearest-sampled") {
  Rng rng(13);
  EnvironmentMap env{Grid(16, 16)};
  for (double& v : env.heights.v) v = rng.uniform() < 0.5 ? rng.uniform(0.1, 1.0) : 0.0;
  auto pyr = mask_pyramid(building_mask(env), 3);
  REQUIRE(pyr.size() == 3);
  CHECK(pyr[0].size() == 256);
  CHECK(pyr[1].size() == 64);
  CHECK(pyr[2].size() == 16);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      CHECK(pyr[2][std::size_t(i) * 4 + j] == (env.heights.at(4 * i, 4 * j) > 0 ? 1 : 0));
    }
  }
}
