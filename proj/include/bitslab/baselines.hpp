#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "bitslab/auction.hpp"
#include "bitslab/epoch.hpp"
#include "bitslab/errors.hpp"
#include "bitslab/model.hpp"
#include "bitslab/policy.hpp"
#include "bitslab/rng.hpp"
#include "bitslab/stats.hpp"

namespace bitslab {

struct OlsAte {
  double estimate = 0.0;
  double variance = 0.0;  // heteroskedasticity-robust (HC0)
};

/// Slope of Y on D with an intercept: mean(Y | D=1) - mean(Y | D=0).
inline OlsAte ols_ate(std::span<const AuctionObservation> data) {
  double n1 = 0.0, n0 = 0.0, s1 = 0.0, s0 = 0.0;
  for (const auto& o : data) {
    if (o.win) {
      n1 += 1.0;
      s1 += o.outcome;
    } else {
      n0 += 1.0;
      s0 += o.outcome;
    }
  }
  if (n1 == 0.0 || n0 == 0.0) throw NumericalError("ols_ate: need at least one win and one loss");
  const double m1 = s1 / n1;
  const double m0 = s0 / n0;
  double r1 = 0.0, r0 = 0.0;
  for (const auto& o : data) {
    const double e = o.outcome - (o.win ? m1 : m0);
    (o.win ? r1 : r0) += e * e;
  }
  return {m1 - m0, r1 / (n1 * n1) + r0 / (n0 * n0)};
}

/// Per-context OLS slopes combined with weights F_x.
inline std::vector<double> ols_cates(std::span<const AuctionObservation> data, std::size_t P) {
  std::vector<std::vector<AuctionObservation>> split(P);
  for (const auto& o : data) split.at(o.context).push_back(o);
  std::vector<double> out;
  for (const auto& rows : split) out.push_back(ols_ate(rows).estimate);
  return out;
}

namespace detail {

inline std::vector<std::size_t> batch_contexts(const std::vector<Impression>& batch) {
  std::vector<std::size_t> c(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) c[i] = batch[i].context;
  return c;
}

inline EpochResult start_result(PolicyKind kind, const EpochConfig& cfg, std::uint64_t seed, std::size_t epoch,
                                const OptimalityProfile& profile) {
  EpochResult result;
  result.policy = kind;
  result.epoch = epoch;
  result.seed = seed;
  RoundRecord initial = empty_round(0, cfg.grid);
  for (std::size_t p = 0; p < cfg.contexts(); ++p) initial.contexts[p].psi = profile.psi[p];
  result.rounds.push_back(std::move(initial));
  return result;
}

inline void finish_result(EpochResult& result) {
  const RoundRecord& last = result.rounds.back();
  result.ate_estimate = last.ate_estimate;
  result.cate_estimates.clear();
  for (const auto& c : last.contexts) result.cate_estimates.push_back(c.cate_estimate);
}

}  // namespace detail

/// Uniform bid randomization over the grid for all rounds, then OLS of Y on D.
inline EpochResult run_ab(const EpochConfig& cfg, std::uint64_t seed, std::size_t epoch = 0) {
  cfg.validate();
  EpochStreams streams = EpochStreams::from_seed(seed);
  const OracleCard oracle = build_oracle(cfg.format, cfg.truth, cfg.grid);
  const OptimalityProfile profile = OptimalityProfile::uniform(cfg.grid);
  EpochResult result = detail::start_result(PolicyKind::ab, cfg, seed, epoch, profile);
  std::vector<AuctionObservation> data;
  const double regret = pseudo_regret_round(profile.psi, oracle, cfg.context_spec.probs);
  for (int t = 1; t <= cfg.rounds; ++t) {
    const auto batch = draw_batch(cfg, streams.env);
    const auto arms = allocate_bids(profile, detail::batch_contexts(batch), streams.policy);
    RoundRecord rec = empty_round(t, cfg.grid);
    for (std::size_t p = 0; p < cfg.contexts(); ++p) rec.contexts[p].psi = profile.psi[p];
    rec.pseudo_regret = regret;
    rec.cum_pseudo_regret = regret * static_cast<double>(t);
    play_arms(cfg, batch, arms, rec, data);
    result.rounds.push_back(std::move(rec));
  }
  if (cfg.rounds > 0) {
    const auto cates = ols_cates(data, cfg.contexts());
    auto& last = result.rounds.back();
    for (std::size_t p = 0; p < cfg.contexts(); ++p) last.contexts[p].cate_estimate = cates[p];
    last.ate_estimate = weighted_ate(cates, cfg.context_spec.probs);
  }
  detail::finish_result(result);
  return result;
}

/// A/B for the first half, then commit. Second-price commits to the first-half OLS
/// estimate as an off-grid bid; first-price commits to the arm with the highest
/// first-half mean payoff. The reported ATE is the first-half OLS estimate.
inline EpochResult run_etc(const EpochConfig& cfg, std::uint64_t seed, std::size_t epoch = 0) {
  cfg.validate();
  if (cfg.rounds % 2 != 0) throw ConfigError("run_etc: the number of rounds must be even");
  EpochStreams streams = EpochStreams::from_seed(seed);
  const std::size_t P = cfg.contexts();
  const OracleCard oracle = build_oracle(cfg.format, cfg.truth, cfg.grid);
  OptimalityProfile profile = OptimalityProfile::uniform(cfg.grid);
  EpochResult result = detail::start_result(PolicyKind::etc, cfg, seed, epoch, profile);
  std::vector<AuctionObservation> data;
  std::vector<std::vector<double>> pulls(P), payoffs(P);
  for (std::size_t p = 0; p < P; ++p) {
    pulls[p].assign(cfg.grid.arm_count(p), 0.0);
    payoffs[p].assign(cfg.grid.arm_count(p), 0.0);
  }
  const int half = cfg.rounds / 2;
  std::vector<double> cates(P, kNaN);
  std::vector<double> commit_bids(P, 0.0);
  double ate = kNaN;
  double cumulative = 0.0;
  bool off_grid = false;

  for (int t = 1; t <= cfg.rounds; ++t) {
    const auto batch = draw_batch(cfg, streams.env);
    RoundRecord rec = empty_round(t, cfg.grid);
    if (t <= half || !off_grid) {
      const auto arms = allocate_bids(profile, detail::batch_contexts(batch), streams.policy);
      rec.pseudo_regret = pseudo_regret_round(profile.psi, oracle, cfg.context_spec.probs);
      play_arms(cfg, batch, arms, rec, data);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        pulls[batch[i].context][arms[i]] += 1.0;
      }
      for (std::size_t p = 0; p < P; ++p)
        for (std::size_t r = 0; r < cfg.grid.arm_count(p); ++r) payoffs[p][r] += rec.contexts[p].payoff_sum[r];
    } else {
      rec.pseudo_regret = pseudo_regret_at_bids(commit_bids, oracle, cfg.truth, cfg.context_spec.probs);
      for (const auto& imp : batch) {
        const std::size_t p = imp.context;
        const AuctionResult res = run_auction(cfg.format, commit_bids[p], p, imp.draw);
        rec.contexts[p].committed_pulls += 1;
        rec.contexts[p].committed_payoff_sum += res.payoff;
      }
    }
    cumulative += rec.pseudo_regret;
    rec.cum_pseudo_regret = cumulative;

    if (t == half) {
      cates = ols_cates(data, P);
      ate = weighted_ate(cates, cfg.context_spec.probs);
      for (std::size_t p = 0; p < P; ++p) {
        if (cfg.format == AuctionFormat::spa) {
          commit_bids[p] = std::max(0.0, cates[p]);
          off_grid = true;
          std::fill(profile.psi[p].begin(), profile.psi[p].end(), 0.0);
        } else {
          std::size_t best = 0;
          auto mean = [&](std::size_t r) { return pulls[p][r] > 0.0 ? payoffs[p][r] / pulls[p][r] : -kInf; };
          for (std::size_t r = 1; r < cfg.grid.arm_count(p); ++r)
            if (mean(r) > mean(best)) best = r;
          std::fill(profile.psi[p].begin(), profile.psi[p].end(), 0.0);
          profile.psi[p][best] = 1.0;
        }
      }
    }
    for (std::size_t p = 0; p < P; ++p) {
      rec.contexts[p].psi = profile.psi[p];
      if (t >= half) rec.contexts[p].cate_estimate = cates[p];
      if (t >= half && off_grid) rec.contexts[p].committed_bid = commit_bids[p];
    }
    if (t >= half) rec.ate_estimate = ate;
    result.rounds.push_back(std::move(rec));
  }
  detail::finish_result(result);
  return result;
}

/// Normal-gamma belief over one arm's mean payoff, from that arm's rewards only.
struct ArmBelief {
  double n = 0.0;
  double sum = 0.0;
  double sum_sq = 0.0;

  void update(double reward) {
    n += 1.0;
    sum += reward;
    sum_sq += reward * reward;
  }

  double mean() const { return n > 0.0 ? sum / n : 0.0; }
  double ssr() const { return n > 0.0 ? std::max(0.0, sum_sq - sum * sum / n) : 0.0; }

  /// Draw of the arm's mean reward under the uninformative normal-gamma posterior.
  /// Falls back to a standard normal while the posterior is improper.
  double draw_mean(RngHandle& rng) const {
    const double s = ssr();
    if (n < 2.0 || !(s > 0.0)) return draw_std_normal(rng);
    const double precision = draw_gamma(0.5 * n, 0.5 * s, rng);
    return mean() + draw_std_normal(rng) / std::sqrt(n * precision);
  }
};

/// Monte Carlo probability that each arm has the highest mean, per context.
inline OptimalityProfile ts_profile(const std::vector<std::vector<ArmBelief>>& beliefs, int draws, RngHandle& rng) {
  OptimalityProfile out;
  for (const auto& arms : beliefs) {
    std::vector<int> wins(arms.size(), 0);
    for (int d = 0; d < draws; ++d) {
      std::size_t best = 0;
      double best_value = arms[0].draw_mean(rng);
      for (std::size_t r = 1; r < arms.size(); ++r) {
        const double v = arms[r].draw_mean(rng);
        if (v > best_value) {
          best_value = v;
          best = r;
        }
      }
      ++wins[best];
    }
    std::vector<double> row(arms.size());
    for (std::size_t r = 0; r < arms.size(); ++r) row[r] = static_cast<double>(wins[r]) / static_cast<double>(draws);
    out.psi.push_back(std::move(row));
  }
  return out;
}

/// Off-the-shelf Thompson Sampling with independent normal arms over realized payoffs.
/// The ATE readout (psi-weighted bid labels) is only meaningful for second-price auctions.
inline EpochResult run_vanilla_ts(const EpochConfig& cfg, std::uint64_t seed, std::size_t epoch = 0) {
  cfg.validate();
  EpochStreams streams = EpochStreams::from_seed(seed);
  const std::size_t P = cfg.contexts();
  const OracleCard oracle = build_oracle(cfg.format, cfg.truth, cfg.grid);
  OptimalityProfile profile = OptimalityProfile::uniform(cfg.grid);
  EpochResult result = detail::start_result(PolicyKind::vanilla_ts, cfg, seed, epoch, profile);
  std::vector<std::vector<ArmBelief>> beliefs(P);
  for (std::size_t p = 0; p < P; ++p) beliefs[p].resize(cfg.grid.arm_count(p));
  std::vector<AuctionObservation> data;
  double cumulative = 0.0;
  for (int t = 1; t <= cfg.rounds; ++t) {
    const auto batch = draw_batch(cfg, streams.env);
    const auto arms = allocate_bids(profile, detail::batch_contexts(batch), streams.policy);
    RoundRecord rec = empty_round(t, cfg.grid);
    rec.pseudo_regret = pseudo_regret_round(profile.psi, oracle, cfg.context_spec.probs);
    cumulative += rec.pseudo_regret;
    rec.cum_pseudo_regret = cumulative;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const std::size_t p = batch[i].context;
      const AuctionResult res = run_auction(cfg.format, cfg.grid.arms[p][arms[i]], p, batch[i].draw);
      rec.contexts[p].pulls[arms[i]] += 1;
      rec.contexts[p].payoff_sum[arms[i]] += res.payoff;
      beliefs[p][arms[i]].update(res.payoff);
    }
    profile = ts_profile(beliefs, cfg.ts_draws, streams.policy);
    for (std::size_t p = 0; p < P; ++p) rec.contexts[p].psi = profile.psi[p];
    if (cfg.format == AuctionFormat::spa) {
      const auto cates = estimate_cate_spa(profile, cfg.grid);
      for (std::size_t p = 0; p < P; ++p) rec.contexts[p].cate_estimate = cates[p];
      rec.ate_estimate = weighted_ate(cates, cfg.context_spec.probs);
    }
    result.rounds.push_back(std::move(rec));
  }
  detail::finish_result(result);
  return result;
}

inline EpochResult run_policy(PolicyKind kind, const EpochConfig& cfg, std::uint64_t seed, std::size_t epoch = 0) {
  switch (kind) {
    case PolicyKind::bits: return run_bits(cfg, seed, epoch);
    case PolicyKind::ab: return run_ab(cfg, seed, epoch);
    case PolicyKind::etc: return run_etc(cfg, seed, epoch);
    case PolicyKind::vanilla_ts: return run_vanilla_ts(cfg, seed, epoch);
  }
  throw ConfigError("run_policy: unknown policy");
}

}  // namespace bitslab
