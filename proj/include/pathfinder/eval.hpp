#pragma once

#include <algorithm>
#include <functional>
#include <iostream>
#include <tuple>

#include "pathfinder/train.hpp"

namespace pathfinder {

// ---- the six core metrics ----

// Global coverage metrics: MSE, RMSE = sqrt(MSE), and NMSE which divides
// the total squared error by the total squared ground truth.
inline std::tuple<double, double, double> global_metrics(const Grid& y, const Grid& yhat) {
  require(y.same_shape(yhat), "global_metrics: shape mismatch");
  require(y.size() > 0, "global_metrics: empty grids");
  double se = 0.0, yy = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = y.v[i] - yhat.v[i];
    se += r * r;
    yy += y.v[i] * y.v[i];
  }
  require(yy > 0.0, "global_metrics: NMSE undefined for all-zero ground truth");
  const double mse = se / double(y.size());
  return {mse, std::sqrt(mse), se / yy};
}

// Receiver-area metrics: the same three forms restricted to the receiver
// mask, with denominators |M'| and the masked ground-truth energy.
inline std::tuple<double, double, double> receiver_metrics(const Grid& y, const Grid& yhat,
                                                           const RegionMask& receiver) {
  require(y.same_shape(yhat) && y.same_shape(receiver.values),
          "receiver_metrics: shape mismatch");
  double se = 0.0, yy = 0.0;
  long count = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (receiver.values.v[i] == 0.0) continue;
    const double r = y.v[i] - yhat.v[i];
    se += r * r;
    yy += y.v[i] * y.v[i];
    ++count;
  }
  require(count > 0, "receiver_metrics: empty receiver region");
  require(yy > 0.0, "receiver_metrics: NMSE-R undefined, masked ground truth all zero");
  const double mse_r = se / double(count);
  return {mse_r, std::sqrt(mse_r), se / yy};
}

struct PairMetrics {
  double mse = 0.0, rmse = 0.0, nmse = 0.0;
  double mse_r = 0.0, rmse_r = 0.0, nmse_r = 0.0;
};

inline PairMetrics pair_metrics(const Grid& y, const Grid& yhat, const RegionMask& receiver) {
  PairMetrics p;
  std::tie(p.mse, p.rmse, p.nmse) = global_metrics(y, yhat);
  std::tie(p.mse_r, p.rmse_r, p.nmse_r) = receiver_metrics(y, yhat, receiver);
  return p;
}

// Aggregate over samples: squared-error metrics are unweighted per-sample
// means; the RMSE forms are the square roots of the aggregated MSE forms,
// so rmse == sqrt(mse) holds at every level.
struct MetricReport {
  double mse = 0.0, rmse = 0.0, nmse = 0.0;
  double mse_r = 0.0, rmse_r = 0.0, nmse_r = 0.0;
  std::vector<PairMetrics> per_sample;
  std::size_t count = 0;
};

inline MetricReport aggregate_metrics(std::vector<PairMetrics> per_sample) {
  require(!per_sample.empty(), "aggregate_metrics: no samples");
  MetricReport r;
  r.count = per_sample.size();
  for (const auto& p : per_sample) {
    r.mse += p.mse;
    r.nmse += p.nmse;
    r.mse_r += p.mse_r;
    r.nmse_r += p.nmse_r;
  }
  r.mse /= double(r.count);
  r.nmse /= double(r.count);
  r.mse_r /= double(r.count);
  r.nmse_r /= double(r.count);
  r.rmse = std::sqrt(r.mse);
  r.rmse_r = std::sqrt(r.mse_r);
  r.per_sample = std::move(per_sample);
  return r;
}

// ---- coverage-importance RMSE ----

// RMSE over the pixels whose ground-truth value reaches the top p percent,
// threshold taken at the k-th largest value with ties included, selection
// by ground truth so the metric is model-independent.
inline double coverage_mse(const Grid& y, const Grid& yhat, double p) {
  require(p > 0.0 && p <= 100.0, "coverage_mse: p outside (0,100]");
  require(y.same_shape(yhat), "coverage_mse: shape mismatch");
  require(y.size() > 0, "coverage_mse: empty grids");
  std::vector<double> sorted = y.v;
  std::sort(sorted.begin(), sorted.end(), std::greater<double>());
  const std::size_t k =
      std::max<std::size_t>(1, static_cast<std::size_t>(double(y.size()) * p / 100.0));
  const double threshold = sorted[std::min(k, sorted.size()) - 1];
  double se = 0.0;
  long count = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y.v[i] < threshold) continue;
    const double r = y.v[i] - yhat.v[i];
    se += r * r;
    ++count;
  }
  require(count > 0, "coverage_mse: empty selection");
  return se / double(count);
}

inline double coverage_rmse(const Grid& y, const Grid& yhat, double p) {
  return std::sqrt(coverage_mse(y, yhat, p));
}

struct CoverageCurve {
  std::vector<std::pair<double, double>> points;  // (p percent, rmse)
};

// ---- empirical CDF ----

struct CdfCurve {
  std::vector<double> values;     // sorted unique evaluation grid
  std::vector<double> fractions;  // P(X <= value)
};

inline CdfCurve cdf(std::vector<double> values) {
  require(!values.empty(), "cdf: empty input");
  std::sort(values.begin(), values.end());
  CdfCurve out;
  const double n = double(values.size());
  std::size_t i = 0;
  while (i < values.size()) {
    std::size_t j = i;
    while (j < values.size() && values[j] == values[i]) ++j;
    out.values.push_back(values[i]);
    out.fractions.push_back(double(j) / n);
    i = j;
  }
  return out;
}

// Decimates a CDF to at most max_points for report files, always keeping
// the first and last point.
inline CdfCurve decimate(const CdfCurve& c, std::size_t max_points) {
  if (c.values.size() <= max_points || max_points < 2) return c;
  CdfCurve out;
  const std::size_t n = c.values.size();
  for (std::size_t k = 0; k < max_points; ++k) {
    const std::size_t i = k * (n - 1) / (max_points - 1);
    out.values.push_back(c.values[i]);
    out.fractions.push_back(c.fractions[i]);
  }
  return out;
}

// ---- model evaluation ----

struct Prediction {
  std::string map_id;
  int tx_index = 0;
  PathLossMap map;
};

// Anything that maps a sample to a path-loss map; lets the evaluation
// protocol run against stub predictors (perfect oracle, constants) as well
// as trained networks.
using Predictor = std::function<PathLossMap(const Sample&)>;

inline Predictor net_predictor(const PathFinderNet& net, const ParamStore& ps) {
  return [&net, &ps](const Sample& s) { return net.predict(ps, s); };
}

inline std::vector<Prediction> predict_all(const Predictor& predict,
                                           const std::vector<LoadedSample>& samples,
                                           int threads) {
  std::vector<Prediction> out(samples.size());
  detail::run_indexed(samples.size(), threads, [&](std::size_t k) {
    out[k] = {samples[k].map_id, samples[k].tx_index, predict(samples[k].sample)};
  });
  return out;
}

struct EvalResult {
  MetricReport report;
  CoverageCurve coverage;
  CdfCurve predicted_cdf;
  std::vector<Prediction> predictions;
};

inline EvalResult evaluate_model(const Predictor& predict,
                                 const std::vector<LoadedSample>& samples,
                                 const std::vector<double>& coverage_levels, int threads) {
  require(!samples.empty(), "evaluate_model: no samples");
  EvalResult res;
  res.predictions = predict_all(predict, samples, threads);

  std::vector<PairMetrics> pairs;
  std::vector<double> pooled_pred;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const Sample& s = samples[k].sample;
    require(s.target.has_value(), "evaluate_model: sample without target (map ",
            samples[k].map_id, ")");
    pairs.push_back(
        pair_metrics(s.target->values, res.predictions[k].map.values, receiver_mask(s.env)));
    pooled_pred.insert(pooled_pred.end(), res.predictions[k].map.values.v.begin(),
                       res.predictions[k].map.values.v.end());
  }
  res.report = aggregate_metrics(std::move(pairs));

  for (double p : coverage_levels) {
    double acc = 0.0;
    for (std::size_t k = 0; k < samples.size(); ++k) {
      acc += coverage_mse(samples[k].sample.target->values, res.predictions[k].map.values, p);
    }
    res.coverage.points.emplace_back(p, std::sqrt(acc / double(samples.size())));
  }
  res.predicted_cdf = decimate(cdf(std::move(pooled_pred)), 512);
  return res;
}

// ---- S2MT evaluation ----

struct S2mtRow {
  int n = 0;
  MetricReport report;
};

// Evaluates a predictor on seeded S2MT sets for each N. Ns without any
// constructible combination are omitted with a warning.
inline std::vector<S2mtRow> evaluate_s2mt(const Predictor& predict,
                                          const std::vector<LoadedSample>& test_samples,
                                          const std::vector<int>& ns, std::uint64_t seed,
                                          int combos_per_map, int threads) {
  std::vector<S2mtRow> rows;
  for (int n : ns) {
    const auto set = build_s2mt_set(test_samples, n, seed, combos_per_map);
    if (set.empty()) {
      std::cerr << "evaluate_s2mt: no combinations for N=" << n << ", row omitted\n";
      continue;
    }
    std::vector<PairMetrics> pairs(set.size());
    detail::run_indexed(set.size(), threads, [&](std::size_t k) {
      const Sample& s = set[k].sample;
      PathLossMap pred = predict(s);
      pairs[k] = pair_metrics(s.target->values, pred.values, receiver_mask(s.env));
    });
    rows.push_back({n, aggregate_metrics(std::move(pairs))});
  }
  return rows;
}

// ---- report files ----

inline nlohmann::json report_to_json(const MetricReport& r) {
  return {{"mse", r.mse},     {"rmse", r.rmse},     {"nmse", r.nmse},
          {"mse_r", r.mse_r}, {"rmse_r", r.rmse_r}, {"nmse_r", r.nmse_r},
          {"samples", r.count}};
}

inline nlohmann::json eval_result_to_json(const EvalResult& res) {
  nlohmann::json j;
  j["metrics"] = report_to_json(res.report);
  auto& per_sample = j["per_sample"] = nlohmann::json::array();
  for (const auto& p : res.report.per_sample) {
    per_sample.push_back({{"mse", p.mse},
                          {"rmse", p.rmse},
                          {"nmse", p.nmse},
                          {"mse_r", p.mse_r},
                          {"rmse_r", p.rmse_r},
                          {"nmse_r", p.nmse_r}});
  }
  auto& cov = j["coverage"] = nlohmann::json::array();
  for (const auto& [p, rmse] : res.coverage.points) {
    cov.push_back({{"percent", p}, {"rmse", rmse}});
  }
  j["cdf"] = {{"values", res.predicted_cdf.values},
              {"fractions", res.predicted_cdf.fractions}};
  return j;
}

inline nlohmann::json s2mt_rows_to_json(const std::vector<S2mtRow>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& row : rows) {
    nlohmann::json j = report_to_json(row.report);
    j["tx_num"] = row.n;
    arr.push_back(j);
  }
  return arr;
}

}  // namespace pathfinder
