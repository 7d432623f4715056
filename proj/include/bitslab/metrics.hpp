#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "bitslab/auction.hpp"
#include "bitslab/epoch.hpp"
#include "bitslab/errors.hpp"
#include "bitslab/stats.hpp"

namespace bitslab {

inline double mse_over_epochs(std::span<const double> estimates, double truth) {
  if (estimates.empty()) throw std::invalid_argument("mse_over_epochs: no estimates");
  double s = 0.0;
  for (double e : estimates) s += (e - truth) * (e - truth);
  return s / static_cast<double>(estimates.size());
}

inline double sample_mean(std::span<const double> x) {
  if (x.empty()) throw std::invalid_argument("sample_mean: empty sample");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

inline double sample_sd(std::span<const double> x) {
  if (x.size() < 2) throw std::invalid_argument("sample_sd: need at least two values");
  const double m = sample_mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(x.size() - 1));
}

/// Linear-interpolation quantile (the usual "type 7" definition).
inline double quantile(std::vector<double> x, double q) {
  if (x.empty()) throw std::invalid_argument("quantile: empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("quantile: q must lie in [0, 1]");
  std::sort(x.begin(), x.end());
  const double h = q * static_cast<double>(x.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, x.size() - 1);
  return x[lo] + (h - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

/// Silverman's rule of thumb for a Gaussian kernel: 1.06 sd n^(-1/5).
inline double silverman_bandwidth(std::span<const double> samples) {
  if (samples.size() < 2) throw std::invalid_argument("silverman_bandwidth: need at least two samples");
  const double sd = sample_sd(samples);
  if (!(sd > 0.0)) throw NumericalError("silverman_bandwidth: samples have zero variance");
  return 1.06 * sd * std::pow(static_cast<double>(samples.size()), -0.2);
}

inline std::vector<double> kde_density(std::span<const double> samples, std::span<const double> points,
                                       double bandwidth = 0.0) {
  const double h = bandwidth > 0.0 ? bandwidth : silverman_bandwidth(samples);
  const double norm = 1.0 / (static_cast<double>(samples.size()) * h);
  std::vector<double> out;
  out.reserve(points.size());
  for (double x : points) {
    double s = 0.0;
    for (double v : samples) s += std_normal_pdf((x - v) / h);
    out.push_back(norm * s);
  }
  return out;
}

inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
  if (n < 2) throw std::invalid_argument("linspace: need at least two points");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return out;
}

/// Location of the density maximum on a fine grid spanning the sample +- 3 bandwidths.
inline double kde_mode(std::span<const double> samples, std::size_t grid_points = 4001) {
  const double h = silverman_bandwidth(samples);
  const auto [mn, mx] = std::minmax_element(samples.begin(), samples.end());
  const auto grid = linspace(*mn - 3.0 * h, *mx + 3.0 * h, grid_points);
  const auto dens = kde_density(samples, grid, h);
  return grid[static_cast<std::size_t>(std::max_element(dens.begin(), dens.end()) - dens.begin())];
}

/// Ranks with ties sharing their average rank (1-based).
inline std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("pearson: need two equal-length samples");
  const double mx = sample_mean(x), my = sample_mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

/// Per-round summary across epochs of one policy.
struct AggregateRound {
  int round = 0;
  std::size_t epochs = 0;
  double avg_cum_regret = 0.0;
  double avg_regret = 0.0;
  double psi_opt_q25 = 0.0, psi_opt_median = 0.0, psi_opt_q75 = 0.0;          // first context / non-contextual
  double min_psi_opt_q25 = 0.0, min_psi_opt_median = 0.0, min_psi_opt_q75 = 0.0;  // min over contexts
};

/// psi on the best grid arm, per context.
inline std::vector<double> psi_on_optimum(const RoundRecord& rec, const OracleCard& oracle) {
  std::vector<double> out;
  for (std::size_t p = 0; p < rec.contexts.size(); ++p) out.push_back(rec.contexts[p].psi[oracle.contexts[p].best_arm]);
  return out;
}

inline std::vector<AggregateRound> aggregate_rounds(std::span<const EpochResult> epochs, const OracleCard& oracle) {
  std::size_t max_rounds = 0;
  for (const auto& e : epochs) max_rounds = std::max(max_rounds, e.rounds.size());
  std::vector<AggregateRound> out;
  for (std::size_t t = 0; t < max_rounds; ++t) {
    AggregateRound a;
    a.round = static_cast<int>(t);
    std::vector<double> first, mins;
    for (const auto& e : epochs) {
      if (t >= e.rounds.size()) continue;
      const RoundRecord& r = e.rounds[t];
      a.epochs += 1;
      a.avg_cum_regret += r.cum_pseudo_regret;
      a.avg_regret += r.pseudo_regret;
      const auto psi = psi_on_optimum(r, oracle);
      first.push_back(psi[0]);
      mins.push_back(*std::min_element(psi.begin(), psi.end()));
    }
    if (a.epochs == 0) continue;
    a.avg_cum_regret /= static_cast<double>(a.epochs);
    a.avg_regret /= static_cast<double>(a.epochs);
    a.psi_opt_q25 = quantile(first, 0.25);
    a.psi_opt_median = quantile(first, 0.5);
    a.psi_opt_q75 = quantile(first, 0.75);
    a.min_psi_opt_q25 = quantile(mins, 0.25);
    a.min_psi_opt_median = quantile(mins, 0.5);
    a.min_psi_opt_q75 = quantile(mins, 0.75);
    out.push_back(a);
  }
  return out;
}

/// True ATE: F_x-weighted CATE.
inline double true_ate(const ModelParams& theta, const std::vector<double>& weights) {
  double s = 0.0;
  for (std::size_t p = 0; p < weights.size(); ++p) s += weights[p] * true_cate(theta, p);
  return s;
}

}  // namespace bitslab
