#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "bitslab/auction.hpp"
#include "bitslab/epoch.hpp"
#include "bitslab/errors.hpp"
#include "bitslab/gibbs.hpp"
#include "bitslab/model.hpp"
#include "bitslab/rng.hpp"

namespace bitslab {

/// psi_t: per context, the probability that each arm is the payoff-maximizing bid.
struct OptimalityProfile {
  std::vector<std::vector<double>> psi;

  static OptimalityProfile uniform(const BidGrid& grid) {
    OptimalityProfile out;
    for (const auto& row : grid.arms) out.psi.emplace_back(row.size(), 1.0 / static_cast<double>(row.size()));
    return out;
  }

  std::size_t contexts() const { return psi.size(); }

  void validate() const {
    if (psi.empty()) throw std::invalid_argument("OptimalityProfile: no contexts");
    for (const auto& row : psi) {
      double total = 0.0;
      for (double v : row) {
        if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("OptimalityProfile: entries must lie in [0, 1]");
        total += v;
      }
      if (std::fabs(total - 1.0) > 1e-9) throw std::invalid_argument("OptimalityProfile: rows must sum to 1");
    }
  }
};

/// Same closed forms as the true expected payoff, evaluated at a posterior draw.
inline double expected_payoff_model(AuctionFormat format, double bid, std::size_t context, const ModelParams& theta) {
  return expected_payoff(format, bid, context, theta);
}

/// Fraction of draws in which each arm maximizes the model-implied payoff
/// (ties go to the lowest arm index).
inline OptimalityProfile optimality_probabilities(std::span<const ModelParams> draws, const BidGrid& grid,
                                                  AuctionFormat format) {
  if (draws.empty()) throw std::invalid_argument("optimality_probabilities: no posterior draws");
  OptimalityProfile out;
  const double n = static_cast<double>(draws.size());
  for (std::size_t p = 0; p < grid.contexts(); ++p) {
    const auto& arms = grid.arms[p];
    std::vector<std::size_t> wins(arms.size(), 0);
    for (const auto& theta : draws) {
      std::size_t best = 0;
      double best_value = expected_payoff_model(format, arms[0], p, theta);
      for (std::size_t r = 1; r < arms.size(); ++r) {
        const double v = expected_payoff_model(format, arms[r], p, theta);
        if (v > best_value) {
          best_value = v;
          best = r;
        }
      }
      ++wins[best];
    }
    std::vector<double> row(arms.size());
    for (std::size_t r = 0; r < arms.size(); ++r) row[r] = static_cast<double>(wins[r]) / n;
    out.psi.push_back(std::move(row));
  }
  return out;
}

inline std::size_t draw_categorical(const std::vector<double>& probs, RngHandle& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t r = 0; r < probs.size(); ++r) {
    acc += probs[r];
    if (u < acc) return r;
  }
  // Rounding left a sliver above the last cumulative sum: take the last arm with mass.
  for (std::size_t r = probs.size(); r-- > 0;)
    if (probs[r] > 0.0) return r;
  return probs.size() - 1;
}

/// Independent categorical arm choice for each impression, using its context's row.
inline std::vector<std::size_t> allocate_bids(const OptimalityProfile& profile, std::span<const std::size_t> contexts,
                                              RngHandle& rng) {
  std::vector<std::size_t> arms(contexts.size());
  for (std::size_t i = 0; i < contexts.size(); ++i) arms[i] = draw_categorical(profile.psi.at(contexts[i]), rng);
  return arms;
}

/// Second-price CATE estimate: the psi-weighted bid label.
inline std::vector<double> estimate_cate_spa(const OptimalityProfile& profile, const BidGrid& grid) {
  std::vector<double> out;
  for (std::size_t p = 0; p < grid.contexts(); ++p) {
    double s = 0.0;
    for (std::size_t r = 0; r < grid.arm_count(p); ++r) s += profile.psi[p][r] * grid.arms[p][r];
    out.push_back(s);
  }
  return out;
}

/// b plus the posterior-averaged inverse reversed hazard of the competing bid at b.
inline double chi_hat(double bid, std::size_t context, std::span<const ModelParams> draws) {
  if (!(bid > 0.0)) throw std::invalid_argument("chi_hat: bid must be positive");
  if (draws.empty()) throw std::invalid_argument("chi_hat: no posterior draws");
  double adj = 0.0;
  for (const auto& theta : draws)
    adj += inverse_reversed_hazard(bid, theta.deltaCP.at(context), std::sqrt(theta.sigmaCP_sq));
  return bid + adj / static_cast<double>(draws.size());
}

inline std::vector<double> estimate_cate_fpa(const OptimalityProfile& profile, const BidGrid& grid,
                                             std::span<const ModelParams> draws) {
  std::vector<double> out;
  for (std::size_t p = 0; p < grid.contexts(); ++p) {
    double s = 0.0;
    for (std::size_t r = 0; r < grid.arm_count(p); ++r) {
      const double psi = profile.psi[p][r];
      if (psi > 0.0) s += psi * chi_hat(grid.arms[p][r], p, draws);
    }
    out.push_back(s);
  }
  return out;
}

inline double weighted_ate(const std::vector<double>& cates, const std::vector<double>& weights) {
  double s = 0.0;
  for (std::size_t p = 0; p < cates.size(); ++p) s += weights[p] * cates[p];
  return s;
}

/// Posterior odds that an arm is optimal; 0.95 corresponds to odds of 19.
inline double posterior_odds(double psi) { return psi / (1.0 - psi); }

struct StoppingState {
  StoppingMode mode = StoppingMode::rounds;
  double value = 0.0;
  double threshold = 0.0;
  bool stop = false;
};

/// Probability mass of the most likely implied ATE value: each combination of one arm
/// per context implies an ATE, and combinations with the same value pool their mass.
inline double ate_grid_mass(const OptimalityProfile& profile, const std::vector<std::vector<double>>& arm_values,
                            const std::vector<double>& weights, double tolerance, std::size_t cap) {
  const std::size_t P = arm_values.size();
  std::size_t combos = 1;
  for (const auto& row : arm_values) {
    if (row.empty()) throw std::invalid_argument("ate_grid_mass: empty arm set");
    if (combos > cap / row.size()) throw NumericalError("ate_grid_mass: arm combinations exceed the configured cap");
    combos *= row.size();
  }
  std::vector<std::pair<double, double>> points;  // (implied ATE, joint mass)
  points.reserve(combos);
  std::vector<std::size_t> idx(P, 0);
  for (std::size_t c = 0; c < combos; ++c) {
    double value = 0.0;
    double mass = 1.0;
    for (std::size_t p = 0; p < P; ++p) {
      value += weights[p] * arm_values[p][idx[p]];
      mass *= profile.psi[p][idx[p]];
    }
    points.emplace_back(value, mass);
    for (std::size_t p = 0; p < P; ++p) {
      if (++idx[p] < arm_values[p].size()) break;
      idx[p] = 0;
    }
  }
  std::sort(points.begin(), points.end());
  double best = 0.0;
  std::size_t i = 0;
  while (i < points.size()) {
    const double anchor = points[i].first;
    double group = 0.0;
    while (i < points.size() && points[i].first - anchor <= tolerance) group += points[i++].second;
    best = std::max(best, group);
  }
  return best;
}

inline constexpr double kAteGridToleranceSpa = 1e-9;
inline constexpr double kAteGridToleranceFpa = 1e-6;

inline StoppingState stopping_value(const OptimalityProfile& profile, const StoppingSettings& settings,
                                    const std::vector<double>& weights, const BidGrid& grid,
                                    std::span<const ModelParams> draws, AuctionFormat format, int t, int rounds_cap) {
  StoppingState s;
  s.mode = settings.mode;
  s.threshold = settings.threshold;
  switch (settings.mode) {
    case StoppingMode::rounds:
      s.value = static_cast<double>(t);
      s.threshold = static_cast<double>(rounds_cap);
      s.stop = t >= rounds_cap;
      return s;
    case StoppingMode::noncontextual:
    case StoppingMode::contextual_min: {
      double v = 1.0;
      for (const auto& row : profile.psi) v = std::min(v, *std::max_element(row.begin(), row.end()));
      s.value = v;
      break;
    }
    case StoppingMode::ate_grid: {
      std::vector<std::vector<double>> values;
      for (std::size_t p = 0; p < grid.contexts(); ++p) {
        std::vector<double> row;
        for (double b : grid.arms[p]) row.push_back(format == AuctionFormat::spa ? b : chi_hat(b, p, draws));
        values.push_back(std::move(row));
      }
      const double tol = format == AuctionFormat::spa ? kAteGridToleranceSpa : kAteGridToleranceFpa;
      s.value = ate_grid_mass(profile, values, weights, tol, settings.ate_grid_cap);
      break;
    }
  }
  s.stop = s.value > settings.threshold || t >= rounds_cap;
  return s;
}

/// One epoch of Bidding Thompson Sampling.
inline EpochResult run_bits(const EpochConfig& cfg, std::uint64_t seed, std::size_t epoch = 0) {
  cfg.validate();
  EpochStreams streams = EpochStreams::from_seed(seed);
  const std::size_t P = cfg.contexts();
  const OracleCard oracle = build_oracle(cfg.format, cfg.truth, cfg.grid);
  const PriorParams priors = cfg.effective_priors();

  EpochResult result;
  result.policy = PolicyKind::bits;
  result.epoch = epoch;
  result.seed = seed;

  OptimalityProfile profile = OptimalityProfile::uniform(cfg.grid);
  std::vector<double> weights = cfg.context_spec.probs;

  RoundRecord initial = empty_round(0, cfg.grid);
  for (std::size_t p = 0; p < P; ++p) initial.contexts[p].psi = profile.psi[p];
  if (cfg.format == AuctionFormat::spa) {
    const auto cates = estimate_cate_spa(profile, cfg.grid);
    for (std::size_t p = 0; p < P; ++p) initial.contexts[p].cate_estimate = cates[p];
    initial.ate_estimate = weighted_ate(cates, weights);
  }
  if (cfg.stopping.mode == StoppingMode::rounds) initial.stop_value = 0.0;
  result.rounds.push_back(std::move(initial));

  std::vector<AuctionObservation> data;
  data.reserve(static_cast<std::size_t>(cfg.rounds) * static_cast<std::size_t>(cfg.batch));
  ModelParams start = ModelParams::initial(P);
  double cumulative = 0.0;

  for (int t = 1; t <= cfg.rounds; ++t) {
    const std::vector<Impression> batch = draw_batch(cfg, streams.env);
    std::vector<std::size_t> contexts(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) contexts[i] = batch[i].context;
    const std::vector<std::size_t> arms = allocate_bids(profile, contexts, streams.policy);

    RoundRecord rec = empty_round(t, cfg.grid);
    rec.pseudo_regret = pseudo_regret_round(profile.psi, oracle, cfg.context_spec.probs);
    cumulative += rec.pseudo_regret;
    rec.cum_pseudo_regret = cumulative;
    play_arms(cfg, batch, arms, rec, data);

    const PosteriorDraws post = cfg.rho_mode == RhoMode::independent
                                    ? run_gibbs(data, priors, start, cfg.gibbs, cfg.format, streams.policy)
                                    : run_gibbs_correlated(data, priors, start, cfg.gibbs, cfg.format, streams.policy);
    if (cfg.warm_start) start = post.last;
    if (post.bound_violations != 0) throw NumericalError("run_bits: truncated draw escaped its bound");

    profile = optimality_probabilities(post.draws, cfg.grid, cfg.format);
    if (cfg.stopping.empirical_weights) weights = empirical_context_weights(data, P);
    const std::vector<double> cates = cfg.format == AuctionFormat::spa
                                          ? estimate_cate_spa(profile, cfg.grid)
                                          : estimate_cate_fpa(profile, cfg.grid, post.draws);
    for (std::size_t p = 0; p < P; ++p) {
      rec.contexts[p].psi = profile.psi[p];
      rec.contexts[p].cate_estimate = cates[p];
    }
    rec.ate_estimate = weighted_ate(cates, weights);
    const StoppingState stop =
        stopping_value(profile, cfg.stopping, weights, cfg.grid, post.draws, cfg.format, t, cfg.rounds);
    rec.stop_value = stop.value;
    result.rounds.push_back(std::move(rec));
    if (stop.stop) {
      result.stopped_early = t < cfg.rounds;
      break;
    }
  }
  const RoundRecord& last = result.rounds.back();
  result.ate_estimate = last.ate_estimate;
  for (const auto& c : last.contexts) result.cate_estimates.push_back(c.cate_estimate);
  return result;
}

}  // namespace bitslab
