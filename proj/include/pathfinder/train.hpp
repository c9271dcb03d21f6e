#pragma once

#include <chrono>
#include <fstream>
#include <iostream>
#include <thread>

#include "pathfinder/augment.hpp"
#include "pathfinder/checkpoint.hpp"
#include "pathfinder/network.hpp"

namespace pathfinder {

// ---- losses on plain grids (logging, tests, reference paths) ----

inline double mse_loss(const Grid& y, const Grid& yhat) {
  require(y.same_shape(yhat), "mse_loss: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = y.v[i] - yhat.v[i];
    s += r * r;
  }
  return s / double(y.size());
}

inline double mae(const Grid& y, const Grid& yhat) {
  require(y.same_shape(yhat), "mae: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += std::abs(y.v[i] - yhat.v[i]);
  return s / double(y.size());
}

// Momentum Prediction Loss: quadratic (y-yhat)^2/2 inside |e| <= delta,
// linear delta|e| - delta^2/2 outside. Both branches meet at delta^2/2.
inline double mpl_loss(const Grid& y, const Grid& yhat, double delta) {
  require(delta > 0.0, "mpl_loss: delta must be positive, got ", delta);
  require(y.same_shape(yhat), "mpl_loss: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double e = y.v[i] - yhat.v[i];
    const double a = std::abs(e);
    s += a <= delta ? 0.5 * e * e : delta * a - 0.5 * delta * delta;
  }
  return s / double(y.size());
}

// ---- adaptive delta ----

struct MplState {
  double delta = 1.0;
  std::vector<double> history;
};

inline void update_delta(MplState& state, double batch_mae) {
  require(batch_mae >= 0.0, "update_delta: negative MAE");
  state.delta = std::max(0.9 * state.delta, batch_mae);
  state.history.push_back(state.delta);
}

inline void update_delta(MplState& state, const std::vector<Grid>& batch_targets,
                         const std::vector<Grid>& batch_preds) {
  require(!batch_targets.empty() && batch_targets.size() == batch_preds.size(),
          "update_delta: empty or mismatched batch");
  double s = 0.0;
  for (std::size_t i = 0; i < batch_targets.size(); ++i) {
    s += mae(batch_targets[i], batch_preds[i]);
  }
  update_delta(state, s / double(batch_targets.size()));
}

// ---- early stopping ----

// Stops once validation RMSE has failed to strictly improve on the best
// value for `patience` consecutive epochs. Checkpoints are only ever saved
// on strict improvement, so a saved model never regresses.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {
    require(patience >= 1, "EarlyStopper: patience must be >= 1");
  }

  bool observe(double val) {
    ++epoch_;
    if (val < best_) {
      best_ = val;
      best_epoch_ = epoch_;
      stale_ = 0;
      return true;
    }
    ++stale_;
    return false;
  }

  bool should_stop() const { return stale_ >= patience_; }
  double best() const { return best_; }
  int best_epoch() const { return best_epoch_; }

 private:
  int patience_;
  int epoch_ = 0;
  int stale_ = 0;
  int best_epoch_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

// ---- optimizer ----

class Adam {
 public:
  explicit Adam(double lr, double b1 = 0.9, double b2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(b1), b2_(b2), eps_(eps) {}

  void step(ParamStore& ps, const std::map<std::string, Tensor>& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, t_);
    const double bc2 = 1.0 - std::pow(b2_, t_);
    for (const auto& name : ps.trainable_names()) {
      auto it = grads.find(name);
      if (it == grads.end()) continue;
      Tensor& p = ps.get(name);
      auto& [m, v] = state_[name];
      if (m.size() != p.size()) {
        m = Tensor::zeros(p.shape());
        v = Tensor::zeros(p.shape());
      }
      double* mp = m.mut();
      double* vp = v.mut();
      double* pp = p.mut();
      const double* g = it->second.data();
      for (std::size_t i = 0; i < p.size(); ++i) {
        mp[i] = b1_ * mp[i] + (1.0 - b1_) * g[i];
        vp[i] = b2_ * vp[i] + (1.0 - b2_) * g[i] * g[i];
        pp[i] -= lr_ * (mp[i] / bc1) / (std::sqrt(vp[i] / bc2) + eps_);
      }
    }
  }

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::map<std::string, std::pair<Tensor, Tensor>> state_;
};

// ---- configuration ----

struct TrainConfig {
  int max_epochs = 30;
  int batch_size = 8;
  double lr = 1e-3;
  int patience = 3;
  std::uint64_t seed = 0;
  bool use_tom = true;
  bool use_mpl = true;
  bool use_base_aug = true;
  double mix_alpha = 1.0;
  double delta0 = 1.0;
  int threads = 0;  // 0 = hardware concurrency

  void validate() const {
    require(max_epochs >= 1, "TrainConfig: max_epochs must be >= 1");
    require(patience >= 1, "TrainConfig: patience must be >= 1");
    require(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
    require(lr > 0.0, "TrainConfig: lr must be positive");
    require(mix_alpha > 0.0, "TrainConfig: mix_alpha must be positive");
    require(delta0 > 0.0, "TrainConfig: delta0 must be positive");
  }

  int effective_threads() const {
    if (threads > 0) return threads;
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
  }

  nlohmann::json to_json() const {
    return {{"max_epochs", max_epochs}, {"batch_size", batch_size}, {"lr", lr},
            {"patience", patience},     {"seed", seed},             {"use_tom", use_tom},
            {"use_mpl", use_mpl},       {"use_base_aug", use_base_aug},
            {"mix_alpha", mix_alpha},   {"delta0", delta0}};
  }
};

// ---- batch execution ----

namespace detail {

template <typename Fn>
void run_indexed(std::size_t n, int threads, Fn&& fn) {
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(n)));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(std::size_t(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = std::size_t(w); i < n; i += std::size_t(workers)) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace detail

struct BatchResult {
  double loss = 0.0;
  double mae = 0.0;
  std::map<std::string, Tensor> grads;  // mean over the batch
};

// One optimizer-step worth of work: per-sample forward/backward against the
// frozen parameters (sample-parallel), deterministic in-order reduction of
// gradients and normalization statistics, then the Adam update. The delta
// update for MPL uses the predictions already computed for the loss.
inline BatchResult run_training_batch(const PathFinderNet& net, ParamStore& ps,
                                      const std::vector<const Sample*>& batch, Adam& opt,
                                      MplState& mpl, bool use_mpl, int threads) {
  require(!batch.empty(), "run_training_batch: empty batch");
  const std::size_t n = batch.size();
  std::vector<std::map<std::string, Tensor>> grads(n);
  std::vector<StatsSink> stats(n);
  std::vector<double> losses(n), maes(n);

  detail::run_indexed(n, threads, [&](std::size_t k) {
    const Sample& s = *batch[k];
    require(s.target.has_value(), "run_training_batch: sample without target");
    Tape t;
    ForwardCtx ctx{true, &stats[k]};
    LayerOutputs out = net.forward(t, ps, s, ctx);
    const Tensor target = Tensor::from_grid(s.target->values);
    VarId loss = use_mpl ? t.mpl_loss(out.prediction, target, mpl.delta)
                         : t.mse_loss(out.prediction, target);
    t.backward(loss);
    losses[k] = t.value(loss)[0];
    maes[k] = mae(s.target->values, t.value(out.prediction).to_grid());
    grads[k] = t.param_grads();
  });

  BatchResult res;
  for (std::size_t k = 0; k < n; ++k) {
    res.loss += losses[k];
    res.mae += maes[k];
  }
  res.loss /= double(n);
  res.mae /= double(n);
  require(std::isfinite(res.loss), "run_training_batch: non-finite loss (divergence)");

  // Mean gradient, accumulated in sample order for bit determinism.
  for (std::size_t k = 0; k < n; ++k) {
    for (auto& [name, g] : grads[k]) {
      auto it = res.grads.find(name);
      if (it == res.grads.end()) {
        res.grads.emplace(name, g.clone());
      } else {
        double* acc = it->second.mut();
        for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g.data()[i];
      }
    }
  }
  for (auto& [name, g] : res.grads) {
    double* p = g.mut();
    for (std::size_t i = 0; i < g.size(); ++i) p[i] /= double(n);
  }

  // Running-statistic buffers: batch mean of the per-sample moments.
  if (!stats.empty() && !stats[0].empty()) {
    const double momentum = 0.1;
    for (std::size_t e = 0; e < stats[0].size(); ++e) {
      const std::string& prefix = stats[0][e].buffer_prefix;
      Tensor mean = stats[0][e].mean.clone();
      Tensor var = stats[0][e].var.clone();
      for (std::size_t k = 1; k < n; ++k) {
        for (std::size_t i = 0; i < mean.size(); ++i) {
          mean.mut()[i] += stats[k][e].mean.data()[i];
          var.mut()[i] += stats[k][e].var.data()[i];
        }
      }
      Tensor& rmean = ps.get(prefix + ".rmean");
      Tensor& rvar = ps.get(prefix + ".rvar");
      for (std::size_t i = 0; i < rmean.size(); ++i) {
        rmean.mut()[i] = (1.0 - momentum) * rmean.data()[i] + momentum * mean.data()[i] / double(n);
        rvar.mut()[i] = (1.0 - momentum) * rvar.data()[i] + momentum * var.data()[i] / double(n);
      }
    }
  }

  opt.step(ps, res.grads);
  if (use_mpl) update_delta(mpl, res.mae);
  return res;
}

inline double evaluate_rmse(const PathFinderNet& net, const ParamStore& ps,
                            const std::vector<const Sample*>& samples, int threads) {
  require(!samples.empty(), "evaluate_rmse: no samples");
  std::vector<double> mses(samples.size());
  detail::run_indexed(samples.size(), threads, [&](std::size_t k) {
    const Sample& s = *samples[k];
    require(s.target.has_value(), "evaluate_rmse: sample without target");
    PathLossMap pred = net.predict(ps, s);
    mses[k] = mse_loss(s.target->values, pred.values);
  });
  double acc = 0.0;
  for (double v : mses) acc += v;
  return std::sqrt(acc / double(mses.size()));
}

// ---- epoch construction (base augmentation + transmitter-oriented mixup) ----

// With TOM on, transmitters of one map are paired uniformly without
// replacement each epoch and mixed under a shared augmentation op; an odd
// leftover passes through augmented but unmixed. With TOM off every sample
// is used once, augmented when base augmentation is enabled.
inline std::vector<Sample> build_epoch_samples(const std::vector<LoadedSample>& train,
                                               const TrainConfig& cfg, int epoch) {
  const Rng base(cfg.seed);
  Rng mix_rng = base.stream("mixup", std::uint64_t(epoch));
  Rng aug_rng = base.stream("aug", std::uint64_t(epoch));
  Rng batch_rng = base.stream("batching", std::uint64_t(epoch));

  auto random_op = [&]() -> AugOp {
    if (!cfg.use_base_aug) return AugOp::identity;
    const auto& ops = all_aug_ops();
    return ops[aug_rng.below(ops.size())];
  };

  std::vector<Sample> out;
  if (!cfg.use_tom) {
    out.reserve(train.size());
    for (const auto& item : train) out.push_back(apply_aug(item.sample, random_op()));
  } else {
    std::map<std::string, std::vector<const LoadedSample*>> by_map;
    std::vector<std::string> order;
    for (const auto& item : train) {
      if (!by_map.count(item.map_id)) order.push_back(item.map_id);
      by_map[item.map_id].push_back(&item);
    }
    for (const auto& id : order) {
      auto& group = by_map[id];
      std::vector<std::size_t> idx(group.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      mix_rng.shuffle(idx);
      std::size_t i = 0;
      for (; i + 1 < idx.size(); i += 2) {
        const MixSpec spec = sample_mix_spec(mix_rng, cfg.mix_alpha);
        out.push_back(tom_mixup(group[idx[i]]->sample, group[idx[i + 1]]->sample, spec,
                                random_op()));
      }
      if (i < idx.size()) out.push_back(apply_aug(group[idx[i]]->sample, random_op()));
    }
  }
  batch_rng.shuffle(out);
  return out;
}

// ---- training loop ----

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_rmse = 0.0;
  double delta = 0.0;
  std::string loss_kind;
  long wall_ms = 0;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  int best_epoch = 0;
  double best_val_rmse = 0.0;
  fs::path checkpoint_path;
  MplState mpl;
};

inline std::string format_epoch_log(const EpochLog& e) {
  return strcat("epoch=", e.epoch, " train_loss=", e.train_loss, " val_rmse=", e.val_rmse,
                " delta=", e.delta, " loss_kind=", e.loss_kind, " wall_ms=", e.wall_ms);
}

inline TrainResult train_loop(const PathFinderNet& net, ParamStore& ps,
                              const std::vector<LoadedSample>& train,
                              const std::vector<LoadedSample>& val, const TrainConfig& cfg,
                              const fs::path& out_dir, bool quiet = false) {
  cfg.validate();
  require(!train.empty(), "train_loop: empty training split");
  require(!val.empty(), "train_loop: empty validation split");
  std::error_code ec;
  fs::create_directories(out_dir, ec);

  std::vector<const Sample*> val_ptrs;
  for (const auto& item : val) val_ptrs.push_back(&item.sample);

  Adam opt(cfg.lr);
  MplState mpl;
  mpl.delta = cfg.delta0;
  EarlyStopper stopper(cfg.patience);
  const int threads = cfg.effective_threads();
  const std::string loss_kind = cfg.use_mpl ? "mpl" : "mse";
  const std::string cfg_hash =
      strcat(std::hex, fnv1a(net.config().to_json().dump() + cfg.to_json().dump()));

  TrainResult result;
  result.checkpoint_path = out_dir / "best.ckpt";
  std::ofstream log(out_dir / "train_log.txt");
  require(log.good(), "train_loop: cannot write log in ", out_dir.string());

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<Sample> items = build_epoch_samples(train, cfg, epoch);
    double loss_acc = 0.0;
    int batches = 0;
    for (std::size_t off = 0; off < items.size(); off += std::size_t(cfg.batch_size)) {
      std::vector<const Sample*> batch;
      for (std::size_t k = off; k < std::min(items.size(), off + std::size_t(cfg.batch_size));
           ++k) {
        batch.push_back(&items[k]);
      }
      try {
        loss_acc += run_training_batch(net, ps, batch, opt, mpl, cfg.use_mpl, threads).loss;
      } catch (const Error& e) {
        fail("train_loop: epoch ", epoch, " batch ", batches, ": ", e.what());
      }
      ++batches;
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = loss_acc / std::max(1, batches);
    entry.val_rmse = evaluate_rmse(net, ps, val_ptrs, threads);
    require(std::isfinite(entry.val_rmse), "train_loop: non-finite validation RMSE at epoch ",
            epoch);
    entry.delta = mpl.delta;
    entry.loss_kind = loss_kind;
    entry.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
    result.epochs.push_back(entry);
    log << format_epoch_log(entry) << "\n" << std::flush;
    if (!quiet) std::cerr << format_epoch_log(entry) << "\n";

    if (stopper.observe(entry.val_rmse)) {
      nlohmann::json meta = {{"epoch", epoch},
                             {"seed", cfg.seed},
                             {"val_rmse", entry.val_rmse},
                             {"config_hash", cfg_hash},
                             {"network", net.config().to_json()},
                             {"train", cfg.to_json()}};
      write_checkpoint(result.checkpoint_path, ps, meta);
    }
    if (stopper.should_stop()) break;
  }
  result.best_epoch = stopper.best_epoch();
  result.best_val_rmse = stopper.best();
  result.mpl = mpl;
  return result;
}

}  // namespace pathfinder
