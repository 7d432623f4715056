#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "bitslab/errors.hpp"
#include "bitslab/model.hpp"
#include "bitslab/rng.hpp"
#include "bitslab/stats.hpp"

namespace bitslab {

/// Potential outcomes and highest competing bid for one impression.
struct PotentialDraw {
  double y1 = 1.0;
  double y0 = 1.0;
  double b_cp = 1.0;
};

/// Draw (Y(1), Y(0), B_CP) for one impression in `context`.
/// The log outcome pair is correlated through rho; B_CP is independent of it.
inline PotentialDraw draw_unit(const ModelParams& theta, std::size_t context, RngHandle& rng) {
  const double s1 = std::sqrt(theta.sigma1_sq);
  const double s0 = std::sqrt(theta.sigma0_sq);
  const double z1 = draw_std_normal(rng);
  const double z0 = draw_std_normal(rng);
  const double zc = draw_std_normal(rng);
  const double log_y1 = theta.delta1.at(context) + s1 * z1;
  const double log_y0 = theta.delta0.at(context) + s0 * (theta.rho * z1 + std::sqrt(1.0 - theta.rho * theta.rho) * z0);
  const double log_cp = theta.deltaCP.at(context) + std::sqrt(theta.sigmaCP_sq) * zc;
  return {std::exp(log_y1), std::exp(log_y0), std::exp(log_cp)};
}

struct AuctionResult {
  AuctionObservation observation;
  double payoff = 0.0;  // realized, including the Y(0) term on a loss
};

/// Resolve a sealed-bid auction and record what the bidder gets to see.
inline AuctionResult run_auction(AuctionFormat format, double bid, std::size_t context, const PotentialDraw& draw) {
  if (!(bid >= 0.0) || !std::isfinite(bid)) throw std::invalid_argument("run_auction: bid must be finite and >= 0");
  AuctionResult r;
  auto& o = r.observation;
  o.bid = bid;
  o.context = context;
  o.win = draw.b_cp <= bid;
  o.outcome = o.win ? draw.y1 : draw.y0;
  if (!o.win) {
    o.bcp_kind = CompetingBidKind::lower_bound;
    o.bcp_value = bid;
    r.payoff = draw.y0;
  } else if (format == AuctionFormat::spa) {
    o.bcp_kind = CompetingBidKind::observed;
    o.bcp_value = draw.b_cp;
    r.payoff = draw.y1 - draw.b_cp;
  } else {
    o.bcp_kind = CompetingBidKind::upper_bound;
    o.bcp_value = bid;
    r.payoff = draw.y1 - bid;
  }
  return r;
}

/// Bid-dependent part of the expected payoff (the E[Y(0)] term is dropped).
///
///   SPA: Phi(z) CATE - Phi(z - s) exp(mu + s^2 / 2)
///   FPA: Phi(z) (CATE - b)
/// with z = (log b - mu) / s, mu = x'delta_CP and s = sigma_CP.
inline double expected_payoff(AuctionFormat format, double bid, std::size_t context, const ModelParams& theta) {
  if (!(bid >= 0.0)) throw std::invalid_argument("expected_payoff: bid must be >= 0");
  if (bid == 0.0) return 0.0;
  const double mu = theta.deltaCP.at(context);
  const double s = std::sqrt(theta.sigmaCP_sq);
  const double cate = true_cate(theta, context);
  const double z = (std::log(bid) - mu) / s;
  if (format == AuctionFormat::spa) return std_normal_cdf(z) * cate - std_normal_cdf(z - s) * lognormal_mean(mu, theta.sigmaCP_sq);
  return std_normal_cdf(z) * (cate - bid);
}

/// F_CP(b) / f_CP(b) for a log-normal competing bid: b s Phi(z) / phi(z).
inline double inverse_reversed_hazard(double bid, double mu_cp, double sigma_cp) {
  if (!(bid > 0.0)) throw std::invalid_argument("inverse_reversed_hazard: bid must be positive");
  const double z = (std::log(bid) - mu_cp) / sigma_cp;
  return bid * sigma_cp * cdf_over_pdf(z);
}

/// chi(b) = b + F_CP(b) / f_CP(b); the first-price optimality condition is chi(b) = CATE.
inline double chi(double bid, double mu_cp, double sigma_cp) { return bid + inverse_reversed_hazard(bid, mu_cp, sigma_cp); }

/// Optimal bid under the true model: max{0, CATE} for SPA, the root of chi(b) = CATE for FPA.
inline double optimal_bid(AuctionFormat format, std::size_t context, const ModelParams& theta) {
  const double cate = true_cate(theta, context);
  if (format == AuctionFormat::spa) return std::max(0.0, cate);
  if (cate <= 0.0) return 0.0;
  const double mu = theta.deltaCP.at(context);
  const double s = std::sqrt(theta.sigmaCP_sq);
  double lo = std::min(1e-6, 0.5 * cate);
  double hi = cate;
  if (chi(lo, mu, s) >= cate) return lo;
  for (int it = 0; it < 400; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (chi(mid, mu, s) < cate) lo = mid; else hi = mid;
    if (hi - lo <= 1e-14 * std::max(1.0, cate)) return 0.5 * (lo + hi);
  }
  throw NumericalError("optimal_bid: bisection on chi did not converge");
}

/// Ground truth per context, for regret accounting.
struct OracleContext {
  double cate = 0.0;
  double optimal_bid = 0.0;
  double optimal_payoff = 0.0;
  std::vector<double> arm_payoffs;
  std::size_t best_arm = 0;  // argmax of arm_payoffs (lowest index on ties)
};

struct OracleCard {
  AuctionFormat format = AuctionFormat::spa;
  std::vector<OracleContext> contexts;
};

inline OracleCard build_oracle(AuctionFormat format, const ModelParams& theta, const BidGrid& grid) {
  if (grid.contexts() != theta.contexts()) throw ConfigError("build_oracle: grid and model disagree on context count");
  OracleCard card{format, {}};
  for (std::size_t p = 0; p < grid.contexts(); ++p) {
    OracleContext c;
    c.cate = true_cate(theta, p);
    c.optimal_bid = optimal_bid(format, p, theta);
    c.optimal_payoff = expected_payoff(format, c.optimal_bid, p, theta);
    for (double b : grid.arms[p]) c.arm_payoffs.push_back(expected_payoff(format, b, p, theta));
    for (std::size_t r = 1; r < c.arm_payoffs.size(); ++r)
      if (c.arm_payoffs[r] > c.arm_payoffs[c.best_arm]) c.best_arm = r;
    card.contexts.push_back(std::move(c));
  }
  return card;
}

}  // namespace bitslab
