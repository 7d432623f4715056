#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bitslab/auction.hpp"
#include "bitslab/errors.hpp"
#include "bitslab/gibbs.hpp"
#include "bitslab/model.hpp"
#include "bitslab/rng.hpp"

namespace bitslab {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

enum class PolicyKind { bits, ab, etc, vanilla_ts };

inline std::string_view to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::bits: return "bits";
    case PolicyKind::ab: return "ab";
    case PolicyKind::etc: return "etc";
    case PolicyKind::vanilla_ts: return "ts";
  }
  return "?";
}

inline PolicyKind parse_policy(std::string_view s) {
  if (s == "bits") return PolicyKind::bits;
  if (s == "ab") return PolicyKind::ab;
  if (s == "etc") return PolicyKind::etc;
  if (s == "ts" || s == "vanilla_ts") return PolicyKind::vanilla_ts;
  throw ConfigError("unknown policy '" + std::string(s) + "'");
}

enum class RhoMode { independent, correlated };

enum class StoppingMode { rounds, noncontextual, contextual_min, ate_grid };

inline std::string_view to_string(StoppingMode m) {
  switch (m) {
    case StoppingMode::rounds: return "rounds";
    case StoppingMode::noncontextual: return "noncontextual";
    case StoppingMode::contextual_min: return "contextual_min";
    case StoppingMode::ate_grid: return "ate_grid";
  }
  return "?";
}

inline StoppingMode parse_stopping_mode(std::string_view s) {
  if (s == "rounds") return StoppingMode::rounds;
  if (s == "noncontextual") return StoppingMode::noncontextual;
  if (s == "contextual_min") return StoppingMode::contextual_min;
  if (s == "ate_grid") return StoppingMode::ate_grid;
  throw ConfigError("unknown stopping mode '" + std::string(s) + "'");
}

struct StoppingSettings {
  StoppingMode mode = StoppingMode::rounds;
  double threshold = 0.95;
  std::size_t ate_grid_cap = 1'000'000;  // max arm combinations enumerated
  bool empirical_weights = false;        // F_x from observed context frequencies
};

/// Everything one epoch of any policy needs.
struct EpochConfig {
  AuctionFormat format = AuctionFormat::spa;
  ModelParams truth;
  ContextSpec context_spec;
  BidGrid grid;
  int rounds = 100;
  int batch = 50;
  bool equal_split = false;  // contexts split n_t equally instead of sampling from F_x
  GibbsSettings gibbs;
  RhoMode rho_mode = RhoMode::independent;
  bool warm_start = false;
  StoppingSettings stopping;
  std::optional<PriorParams> priors;  // uninformative when absent
  int ts_draws = 1000;

  std::size_t contexts() const { return grid.contexts(); }

  PriorParams effective_priors() const { return priors ? *priors : PriorParams::uninformative(contexts()); }

  void validate() const {
    truth.validate(format);
    context_spec.validate();
    grid.validate();
    if (grid.contexts() != truth.contexts() || context_spec.count() != truth.contexts())
      throw ConfigError("EpochConfig: grid, contexts and model disagree on the number of contexts");
    if (rounds < 0) throw ConfigError("EpochConfig: rounds must be >= 0");
    if (batch < 1) throw ConfigError("EpochConfig: batch size must be >= 1");
    if (equal_split && batch % static_cast<int>(contexts()) != 0)
      throw ConfigError("EpochConfig: batch size must be divisible by the number of contexts");
    gibbs.validate();
    if (ts_draws < 1) throw ConfigError("EpochConfig: ts_draws must be >= 1");
    if (!(stopping.threshold > 0.0)) throw ConfigError("EpochConfig: stopping threshold must be positive");
    if (priors) priors->validate(contexts());
  }
};

/// Two independent streams per epoch: `env` drives contexts and potential outcomes,
/// `policy` drives allocation and posterior sampling. Every policy sees the same
/// impressions for a given seed.
struct EpochStreams {
  RngHandle env;
  RngHandle policy;

  static EpochStreams from_seed(std::uint64_t seed) {
    std::uint64_t s = seed;
    const std::uint64_t a = splitmix64(s);
    const std::uint64_t b = splitmix64(s);
    return {RngHandle(a), RngHandle(b)};
  }
};

struct Impression {
  std::size_t context = 0;
  PotentialDraw draw;
};

inline std::vector<Impression> draw_batch(const EpochConfig& cfg, RngHandle& env) {
  const std::size_t P = cfg.contexts();
  const auto n = static_cast<std::size_t>(cfg.batch);
  std::vector<Impression> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t p = 0;
    if (cfg.equal_split) {
      p = i / (n / P);
    } else if (P > 1) {
      const double u = env.uniform();
      double acc = 0.0;
      p = P - 1;
      for (std::size_t k = 0; k < P; ++k) {
        acc += cfg.context_spec.probs[k];
        if (u < acc) {
          p = k;
          break;
        }
      }
    }
    out[i].context = p;
    out[i].draw = draw_unit(cfg.truth, p, env);
  }
  return out;
}

/// Per-context slice of one round.
struct ContextRound {
  std::vector<double> psi;  // profile after this round's update
  std::vector<std::size_t> pulls;
  std::vector<double> payoff_sum;
  double cate_estimate = kNaN;
  std::optional<double> committed_bid;  // off-grid bid (explore-then-commit)
  std::size_t committed_pulls = 0;
  double committed_payoff_sum = 0.0;
};

struct RoundRecord {
  int round = 0;
  std::vector<ContextRound> contexts;
  double pseudo_regret = 0.0;
  double cum_pseudo_regret = 0.0;
  double stop_value = kNaN;
  double ate_estimate = kNaN;
};

struct EpochResult {
  PolicyKind policy = PolicyKind::bits;
  std::size_t epoch = 0;
  std::uint64_t seed = 0;
  std::vector<RoundRecord> rounds;  // rounds[0] is the pre-experiment state
  double ate_estimate = kNaN;
  std::vector<double> cate_estimates;
  bool stopped_early = false;

  const RoundRecord& final_round() const { return rounds.back(); }
};

inline RoundRecord empty_round(int t, const BidGrid& grid) {
  RoundRecord r;
  r.round = t;
  for (std::size_t p = 0; p < grid.contexts(); ++p) {
    ContextRound c;
    const std::size_t R = grid.arm_count(p);
    c.psi.assign(R, 0.0);
    c.pulls.assign(R, 0);
    c.payoff_sum.assign(R, 0.0);
    r.contexts.push_back(std::move(c));
  }
  return r;
}

/// pi(b*) - sum_r Pr(b_r) pi(b_r), averaged over contexts with weights F_x.
inline double pseudo_regret_round(const std::vector<std::vector<double>>& pull_probs, const OracleCard& oracle,
                                  const std::vector<double>& weights) {
  double total = 0.0;
  for (std::size_t p = 0; p < oracle.contexts.size(); ++p) {
    const auto& c = oracle.contexts[p];
    double expected = 0.0;
    for (std::size_t r = 0; r < c.arm_payoffs.size(); ++r) expected += pull_probs[p][r] * c.arm_payoffs[r];
    total += weights[p] * (c.optimal_payoff - expected);
  }
  return total;
}

/// Pseudo-regret when context p places the single (possibly off-grid) bid `bids[p]`.
inline double pseudo_regret_at_bids(const std::vector<double>& bids, const OracleCard& oracle, const ModelParams& truth,
                                    const std::vector<double>& weights) {
  double total = 0.0;
  for (std::size_t p = 0; p < oracle.contexts.size(); ++p)
    total += weights[p] * (oracle.contexts[p].optimal_payoff - expected_payoff(oracle.format, bids[p], p, truth));
  return total;
}

/// Run the batch's auctions at the chosen arms, logging feedback and per-arm tallies.
inline void play_arms(const EpochConfig& cfg, const std::vector<Impression>& batch, const std::vector<std::size_t>& arms,
                      RoundRecord& record, std::vector<AuctionObservation>& data) {
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::size_t p = batch[i].context;
    const double bid = cfg.grid.arms[p][arms[i]];
    const AuctionResult res = run_auction(cfg.format, bid, p, batch[i].draw);
    data.push_back(res.observation);
    record.contexts[p].pulls[arms[i]] += 1;
    record.contexts[p].payoff_sum[arms[i]] += res.payoff;
  }
}

inline std::vector<double> empirical_context_weights(const std::vector<AuctionObservation>& data, std::size_t P) {
  std::vector<double> w(P, 0.0);
  if (data.empty()) return std::vector<double>(P, 1.0 / static_cast<double>(P));
  for (const auto& o : data) w[o.context] += 1.0;
  for (double& x : w) x /= static_cast<double>(data.size());
  return w;
}

/// Randomized-bid history: contexts from F_x, bids uniform over each context's grid.
inline std::vector<AuctionObservation> simulate_history(const EpochConfig& cfg, std::size_t n, std::uint64_t seed) {
  EpochStreams streams = EpochStreams::from_seed(seed);
  EpochConfig sampling = cfg;
  sampling.equal_split = false;
  sampling.batch = 1;
  std::vector<AuctionObservation> rows;
  rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Impression imp = draw_batch(sampling, streams.env).front();
    const auto& arms = cfg.grid.arms[imp.context];
    const double bid = arms[streams.policy.below(arms.size())];
    rows.push_back(run_auction(cfg.format, bid, imp.context, imp.draw).observation);
  }
  return rows;
}

}  // namespace bitslab
