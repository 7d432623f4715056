#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "bitslab/errors.hpp"
#include "bitslab/model.hpp"
#include "bitslab/rng.hpp"
#include "bitslab/stats.hpp"

namespace bitslab {

struct GibbsSettings {
  int draws = 1000;   // Q
  int burn_in = 500;  // first half dropped
  int thin = 10;      // keep q % thin == 0

  void validate() const {
    if (draws < 20) throw ConfigError("GibbsSettings: need at least 20 draws");
    if (burn_in < 0 || burn_in >= draws) throw ConfigError("GibbsSettings: burn-in must lie in [0, draws)");
    if (thin < 1) throw ConfigError("GibbsSettings: thinning must be >= 1");
  }

  bool retains(int q) const { return q > burn_in && q % thin == 0; }

  std::size_t retained_count() const {
    std::size_t n = 0;
    for (int q = 1; q <= draws; ++q) n += retains(q) ? 1 : 0;
    return n;
  }
};

struct PosteriorDraws {
  std::vector<ModelParams> draws;
  ModelParams last;  // theta^(Q), used for warm starts
  std::size_t bound_violations = 0;

  std::size_t size() const { return draws.size(); }
  bool empty() const { return draws.empty(); }
};

/// One auction with every latent cell filled in (all on the log scale).
struct CompletedRow {
  double log_y1 = 0.0;
  double log_y0 = 0.0;
  double log_bcp = 0.0;
  double log_bid = 0.0;
  bool win = false;
  std::size_t context = 0;
};

struct CompletedDataset {
  std::size_t contexts = 0;
  std::vector<CompletedRow> rows;
};

/// Per-context count, sum and sum of squares of one completed regression equation.
/// With one-hot regressors these are sufficient for the normal-gamma update.
struct EquationStats {
  std::vector<double> n;
  std::vector<double> sum;
  std::vector<double> sum_sq;

  explicit EquationStats(std::size_t contexts = 0) : n(contexts, 0.0), sum(contexts, 0.0), sum_sq(contexts, 0.0) {}

  void add(std::size_t p, double x) {
    n[p] += 1.0;
    sum[p] += x;
    sum_sq[p] += x * x;
  }
  std::size_t contexts() const { return n.size(); }
  double total() const {
    double t = 0.0;
    for (double c : n) t += c;
    return t;
  }
};

struct CompletedStats {
  EquationStats y1;
  EquationStats y0;
  EquationStats cp;
};

inline CompletedStats summarize(const CompletedDataset& data) {
  CompletedStats s{EquationStats(data.contexts), EquationStats(data.contexts), EquationStats(data.contexts)};
  for (const auto& r : data.rows) {
    s.y1.add(r.context, r.log_y1);
    s.y0.add(r.context, r.log_y0);
    s.cp.add(r.context, r.log_bcp);
  }
  return s;
}

namespace detail {

inline void check_rows(std::span<const AuctionObservation> data, AuctionFormat format, std::size_t contexts) {
  for (const auto& o : data) {
    if (o.context >= contexts) throw ConfigError("auction data: context index out of range");
    o.validate(format);
    if (format == AuctionFormat::fpa && o.bcp_kind == CompetingBidKind::observed)
      throw ConfigError("auction data: first-price rows cannot carry an observed competing bid");
  }
}

}  // namespace detail

/// Fill every missing cell of `data` from its full conditional given `theta`, into `out`.
///
/// Missing potential outcomes use the bivariate-normal conditional (reducing to
/// N(x'delta, sigma^2) when rho = 0). Losers' competing bids are drawn above the
/// log bid; first-price winners' below it with unit variance.
inline void augment_missing_into(std::span<const AuctionObservation> data, const ModelParams& theta,
                                 AuctionFormat format, RngHandle& rng, CompletedDataset& out) {
  const std::size_t P = theta.contexts();
  detail::check_rows(data, format, P);
  out.contexts = P;
  out.rows.resize(data.size());
  const double s1 = std::sqrt(theta.sigma1_sq);
  const double s0 = std::sqrt(theta.sigma0_sq);
  const double cond_scale = 1.0 - theta.rho * theta.rho;
  const double cp_var = format == AuctionFormat::fpa ? 1.0 : theta.sigmaCP_sq;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& o = data[i];
    auto& r = out.rows[i];
    const std::size_t p = o.context;
    r.context = p;
    r.win = o.win;
    r.log_bid = std::log(o.bid);
    const double log_y = std::log(o.outcome);
    if (o.win) {
      r.log_y1 = log_y;
      const double mean = theta.delta0[p] + theta.rho * s0 / s1 * (log_y - theta.delta1[p]);
      r.log_y0 = draw_normal(mean, cond_scale * theta.sigma0_sq, rng);
    } else {
      r.log_y0 = log_y;
      const double mean = theta.delta1[p] + theta.rho * s1 / s0 * (log_y - theta.delta0[p]);
      r.log_y1 = draw_normal(mean, cond_scale * theta.sigma1_sq, rng);
    }
    switch (o.bcp_kind) {
      case CompetingBidKind::observed:
        r.log_bcp = std::log(o.bcp_value);
        break;
      case CompetingBidKind::lower_bound:
        r.log_bcp = draw_truncated_normal(theta.deltaCP[p], cp_var, TruncationBounds::above(r.log_bid), rng);
        break;
      case CompetingBidKind::upper_bound:
        r.log_bcp = draw_truncated_normal(theta.deltaCP[p], cp_var, TruncationBounds::below(r.log_bid), rng);
        break;
    }
  }
}

inline CompletedDataset augment_missing(std::span<const AuctionObservation> data, const ModelParams& theta,
                                        AuctionFormat format, RngHandle& rng) {
  CompletedDataset out;
  augment_missing_into(data, theta, format, rng, out);
  return out;
}

/// Normal-gamma posterior of one equation given completed-data statistics.
///
/// precision ~ Gamma(shape, rate); delta | sigma^2 ~ N(mean, sigma^2 * cov_scale) on the
/// identified contexts. A context with no rows and a zero prior-precision row is
/// unidentified; its coefficient gets the fallback N(0, 1e6) instead.
struct EquationPosterior {
  double shape = 0.0;
  double rate = 0.0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov_scale;     // (A + X'X)^-1 on identified contexts, zero elsewhere
  Eigen::MatrixXd chol_factor;   // L^-T with (A + X'X) = L L', identified block only
  std::vector<bool> unidentified;
};

inline constexpr double kUnidentifiedVariance = 1e6;

inline EquationPosterior equation_posterior(const EquationStats& stats, const NormalGammaPrior& prior) {
  const std::size_t P = stats.contexts();
  EquationPosterior post;
  post.unidentified.assign(P, false);
  post.mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(P));
  post.cov_scale = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(P), static_cast<Eigen::Index>(P));

  std::vector<Eigen::Index> active;
  for (std::size_t p = 0; p < P; ++p) {
    const auto i = static_cast<Eigen::Index>(p);
    const bool empty_row = prior.precision.row(i).cwiseAbs().maxCoeff() == 0.0;
    if (stats.n[p] == 0.0 && empty_row) post.unidentified[p] = true;
    else active.push_back(i);
  }
  const auto k = static_cast<Eigen::Index>(active.size());
  const double total = stats.total();
  post.shape = prior.alpha + 0.5 * total;

  double quad = 0.0;  // SSR + shrinkage term
  if (prior.precision_is_diagonal()) {
    post.chol_factor = Eigen::MatrixXd::Zero(k, k);
    for (Eigen::Index j = 0; j < k; ++j) {
      const auto p = static_cast<std::size_t>(active[j]);
      const double n = stats.n[p];
      const double a = prior.precision(active[j], active[j]);
      const double mu = prior.mean(active[j]);
      if (n > 0.0) {
        const double ybar = stats.sum[p] / n;
        quad += std::max(0.0, stats.sum_sq[p] - stats.sum[p] * ybar);
        quad += n * a / (a + n) * (ybar - mu) * (ybar - mu);
      }
      post.mean(active[j]) = (stats.sum[p] + a * mu) / (n + a);
      post.cov_scale(active[j], active[j]) = 1.0 / (n + a);
      post.chol_factor(j, j) = 1.0 / std::sqrt(n + a);
    }
  } else {
    Eigen::MatrixXd m(k, k);
    Eigen::VectorXd rhs(k);
    Eigen::VectorXd mu(k);
    const Eigen::VectorXd a_mu = prior.precision * prior.mean;
    double yty = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) {
      const auto p = static_cast<std::size_t>(active[j]);
      for (Eigen::Index l = 0; l < k; ++l) m(j, l) = prior.precision(active[j], active[l]);
      m(j, j) += stats.n[p];
      rhs(j) = stats.sum[p] + a_mu(active[j]);
      mu(j) = prior.mean(active[j]);
      yty += stats.sum_sq[p];
    }
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() != Eigen::Success) throw NumericalError("equation_posterior: A + X'X is singular");
    const Eigen::VectorXd m_n = llt.solve(rhs);
    Eigen::MatrixXd a_sub(k, k);
    for (Eigen::Index j = 0; j < k; ++j)
      for (Eigen::Index l = 0; l < k; ++l) a_sub(j, l) = prior.precision(active[j], active[l]);
    quad = std::max(0.0, yty + mu.dot(a_sub * mu) - m_n.dot(m * m_n));
    const Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(k, k));
    post.chol_factor = llt.matrixU().solve(Eigen::MatrixXd::Identity(k, k));  // U^-1 = L^-T
    for (Eigen::Index j = 0; j < k; ++j) {
      post.mean(active[j]) = m_n(j);
      for (Eigen::Index l = 0; l < k; ++l) post.cov_scale(active[j], active[l]) = inv(j, l);
    }
  }
  post.rate = prior.beta + 0.5 * quad;
  return post;
}

/// Draw (delta, sigma^2) for one equation; `fixed_variance` skips the precision draw.
inline std::pair<std::vector<double>, double> draw_equation(const EquationStats& stats, const NormalGammaPrior& prior,
                                                            std::optional<double> fixed_variance, RngHandle& rng) {
  const EquationPosterior post = equation_posterior(stats, prior);
  double sigma2;
  if (fixed_variance) {
    sigma2 = *fixed_variance;
  } else {
    if (!(post.shape > 0.0) || !(post.rate > 0.0))
      throw NumericalError("draw_equation: improper variance conditional (too little data for an uninformative prior)");
    sigma2 = 1.0 / draw_gamma(post.shape, post.rate, rng);
  }
  const std::size_t P = stats.contexts();
  Eigen::VectorXd z(static_cast<Eigen::Index>(post.chol_factor.rows()));
  std::vector<double> delta(P, 0.0);
  std::vector<double> fallback(P, 0.0);
  Eigen::Index j = 0;
  for (std::size_t p = 0; p < P; ++p) {
    const double e = draw_std_normal(rng);
    if (post.unidentified[p]) fallback[p] = e;
    else z(j++) = e;
  }
  const Eigen::VectorXd shock = std::sqrt(sigma2) * (post.chol_factor * z);
  j = 0;
  for (std::size_t p = 0; p < P; ++p) {
    if (post.unidentified[p]) delta[p] = std::sqrt(kUnidentifiedVariance) * fallback[p];
    else delta[p] = post.mean(static_cast<Eigen::Index>(p)) + shock(j++);
  }
  return {std::move(delta), sigma2};
}

/// One draw of theta from its full conditionals given completed-data statistics (rho = 0).
/// First-price auctions keep sigma_CP^2 fixed at 1.
inline ModelParams draw_full_conditionals(const CompletedStats& stats, const PriorParams& priors, AuctionFormat format,
                                          RngHandle& rng) {
  if (stats.y1.total() == 0.0) throw NumericalError("draw_full_conditionals: completed data is empty");
  ModelParams theta;
  std::tie(theta.delta1, theta.sigma1_sq) = draw_equation(stats.y1, priors.y1, std::nullopt, rng);
  std::tie(theta.delta0, theta.sigma0_sq) = draw_equation(stats.y0, priors.y0, std::nullopt, rng);
  std::optional<double> fixed;
  if (format == AuctionFormat::fpa) fixed = 1.0;
  std::tie(theta.deltaCP, theta.sigmaCP_sq) = draw_equation(stats.cp, priors.cp, fixed, rng);
  theta.rho = 0.0;
  return theta;
}

inline ModelParams draw_full_conditionals(const CompletedDataset& completed, const PriorParams& priors,
                                          AuctionFormat format, RngHandle& rng) {
  return draw_full_conditionals(summarize(completed), priors, format, rng);
}

namespace detail {

// Observed-data layout for the rho = 0 sampler. Missing outcomes only enter the
// conditionals through per-context sums, so each sweep draws those sums directly;
// censored competing bids are grouped by (context, bound) and drawn one by one.
struct CensoredGroup {
  std::size_t context = 0;
  double log_bound = 0.0;
  bool upper = false;  // true: B_CP <= bid (first-price win)
  std::size_t count = 0;
};

struct GibbsLayout {
  std::size_t contexts = 0;
  EquationStats y1_observed, y0_observed, cp_observed;
  std::vector<double> y1_missing, y0_missing;  // counts per context
  std::vector<CensoredGroup> groups;

  GibbsLayout(std::span<const AuctionObservation> data, AuctionFormat format, std::size_t P)
      : contexts(P), y1_observed(P), y0_observed(P), cp_observed(P), y1_missing(P, 0.0), y0_missing(P, 0.0) {
    check_rows(data, format, P);
    std::vector<CensoredGroup> raw;
    for (const auto& o : data) {
      const double log_y = std::log(o.outcome);
      if (o.win) {
        y1_observed.add(o.context, log_y);
        y0_missing[o.context] += 1.0;
      } else {
        y0_observed.add(o.context, log_y);
        y1_missing[o.context] += 1.0;
      }
      if (o.bcp_kind == CompetingBidKind::observed) cp_observed.add(o.context, std::log(o.bcp_value));
      else raw.push_back({o.context, std::log(o.bid), o.bcp_kind == CompetingBidKind::upper_bound, 1});
    }
    std::sort(raw.begin(), raw.end(), [](const CensoredGroup& a, const CensoredGroup& b) {
      return std::tie(a.context, a.upper, a.log_bound) < std::tie(b.context, b.upper, b.log_bound);
    });
    for (const auto& g : raw) {
      if (!groups.empty() && groups.back().context == g.context && groups.back().upper == g.upper &&
          groups.back().log_bound == g.log_bound)
        groups.back().count += 1;
      else groups.push_back(g);
    }
  }
};

// Adds the sum and sum of squares of m iid N(mean, var) draws to slot p.
inline void add_normal_block(EquationStats& s, std::size_t p, double m, double mean, double var, RngHandle& rng) {
  if (m <= 0.0) return;
  const double sd = std::sqrt(var);
  const double total = m * mean + sd * std::sqrt(m) * draw_std_normal(rng);
  double sq = total * total / m;
  if (m > 1.0) sq += var * draw_chi_squared(m - 1.0, rng);
  s.n[p] += m;
  s.sum[p] += total;
  s.sum_sq[p] += sq;
}

inline CompletedStats sweep_statistics(const GibbsLayout& layout, const ModelParams& theta, AuctionFormat format,
                                       RngHandle& rng, std::size_t& violations) {
  CompletedStats s{layout.y1_observed, layout.y0_observed, layout.cp_observed};
  for (std::size_t p = 0; p < layout.contexts; ++p) {
    add_normal_block(s.y1, p, layout.y1_missing[p], theta.delta1[p], theta.sigma1_sq, rng);
    add_normal_block(s.y0, p, layout.y0_missing[p], theta.delta0[p], theta.sigma0_sq, rng);
  }
  const double cp_sd = format == AuctionFormat::fpa ? 1.0 : std::sqrt(theta.sigmaCP_sq);
  for (const auto& g : layout.groups) {
    const double mu = theta.deltaCP[g.context];
    const double a = (g.log_bound - mu) / cp_sd;
    // Upper truncation is the mirror image of lower truncation at -a.
    const LowerTailSampler sampler(g.upper ? -a : a);
    double zsum = 0.0;
    double zsq = 0.0;
    for (std::size_t i = 0; i < g.count; ++i) {
      const double z = sampler(rng);
      if (!(z > sampler.bound())) ++violations;
      zsum += z;
      zsq += z * z;
    }
    if (g.upper) zsum = -zsum;
    const double m = static_cast<double>(g.count);
    s.cp.n[g.context] += m;
    s.cp.sum[g.context] += m * mu + cp_sd * zsum;
    s.cp.sum_sq[g.context] += m * mu * mu + 2.0 * mu * cp_sd * zsum + cp_sd * cp_sd * zsq;
  }
  return s;
}

inline ModelParams starting_point(const ModelParams& init, AuctionFormat format) {
  ModelParams theta = init;
  theta.rho = 0.0;
  if (format == AuctionFormat::fpa) theta.sigmaCP_sq = 1.0;
  return theta;
}

}  // namespace detail

/// Data-augmentation Gibbs sampler with rho = 0.
///
/// Each sweep completes the data given the current theta and then draws theta
/// from its normal-gamma full conditionals. Draws q with q > burn_in and
/// q % thin == 0 are retained.
inline PosteriorDraws run_gibbs(std::span<const AuctionObservation> data, const PriorParams& priors,
                                const ModelParams& init, const GibbsSettings& settings, AuctionFormat format,
                                RngHandle& rng) {
  settings.validate();
  const std::size_t P = init.contexts();
  priors.validate(P);
  if (data.empty()) throw NumericalError("run_gibbs: no observations");
  const detail::GibbsLayout layout(data, format, P);
  PosteriorDraws out;
  out.draws.reserve(settings.retained_count());
  ModelParams theta = detail::starting_point(init, format);
  for (int q = 1; q <= settings.draws; ++q) {
    const CompletedStats stats = detail::sweep_statistics(layout, theta, format, rng, out.bound_violations);
    theta = draw_full_conditionals(stats, priors, format, rng);
    if (settings.retains(q)) out.draws.push_back(theta);
  }
  out.last = theta;
  return out;
}

/// Row-by-row variant of `run_gibbs` (same chain in distribution, slower).
inline PosteriorDraws run_gibbs_rowwise(std::span<const AuctionObservation> data, const PriorParams& priors,
                                        const ModelParams& init, const GibbsSettings& settings, AuctionFormat format,
                                        RngHandle& rng) {
  settings.validate();
  priors.validate(init.contexts());
  if (data.empty()) throw NumericalError("run_gibbs: no observations");
  PosteriorDraws out;
  ModelParams theta = detail::starting_point(init, format);
  CompletedDataset completed;
  for (int q = 1; q <= settings.draws; ++q) {
    augment_missing_into(data, theta, format, rng, completed);
    theta = draw_full_conditionals(completed, priors, format, rng);
    if (settings.retains(q)) out.draws.push_back(theta);
  }
  out.last = theta;
  return out;
}

/// SUR-type conditional for the outcome pair: returns (Delta_tilde, SSR) given completed data.
struct OutcomePairPosterior {
  Eigen::MatrixXd delta_tilde;  // P x 2
  Eigen::Matrix2d ssr;
  Eigen::MatrixXd precision;    // X'X + A_delta
};

inline OutcomePairPosterior outcome_pair_posterior(const CompletedDataset& completed, const WishartPrior& prior) {
  const auto P = static_cast<Eigen::Index>(completed.contexts);
  Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(P, P);
  Eigen::MatrixXd xty = Eigen::MatrixXd::Zero(P, 2);
  Eigen::Matrix2d yty = Eigen::Matrix2d::Zero();
  for (const auto& r : completed.rows) {
    const auto p = static_cast<Eigen::Index>(r.context);
    xtx(p, p) += 1.0;
    xty(p, 0) += r.log_y1;
    xty(p, 1) += r.log_y0;
    yty(0, 0) += r.log_y1 * r.log_y1;
    yty(1, 1) += r.log_y0 * r.log_y0;
    yty(0, 1) += r.log_y1 * r.log_y0;
  }
  yty(1, 0) = yty(0, 1);
  Eigen::MatrixXd m_delta(P, 2);
  m_delta.col(0) = prior.mean.head(P);
  m_delta.col(1) = prior.mean.tail(P);
  OutcomePairPosterior post;
  post.precision = xtx + prior.precision;
  Eigen::LLT<Eigen::MatrixXd> llt(post.precision);
  if (llt.info() != Eigen::Success) throw NumericalError("outcome_pair_posterior: X'X + A_delta is singular");
  post.delta_tilde = llt.solve(xty + prior.precision * m_delta);
  // (Y - X D)'(Y - X D) expanded with per-context sums, plus the prior term.
  const Eigen::MatrixXd& d = post.delta_tilde;
  Eigen::Matrix2d resid = yty - d.transpose() * xty - xty.transpose() * d + d.transpose() * xtx * d;
  const Eigen::MatrixXd dm = d - m_delta;
  post.ssr = resid + dm.transpose() * prior.precision * dm;
  post.ssr = 0.5 * (post.ssr + post.ssr.transpose()).eval();
  return post;
}

/// Gibbs sampler that leaves rho free: Wishart/SUR update for the outcome pair,
/// the same normal-gamma (or probit) update for the competing bid.
inline PosteriorDraws run_gibbs_correlated(std::span<const AuctionObservation> data, const PriorParams& priors,
                                           const ModelParams& init, const GibbsSettings& settings,
                                           AuctionFormat format, RngHandle& rng) {
  settings.validate();
  const std::size_t P = init.contexts();
  priors.cp.validate(P);
  const auto& wp = priors.outcome_pair;
  if (!(wp.nu > 1.0)) throw ConfigError("run_gibbs_correlated: nu must exceed 1");
  if (wp.mean.size() != static_cast<Eigen::Index>(2 * P) || wp.precision.rows() != static_cast<Eigen::Index>(P))
    throw ConfigError("run_gibbs_correlated: prior dimension mismatch");
  if (data.empty()) throw NumericalError("run_gibbs_correlated: no observations");

  PosteriorDraws out;
  ModelParams theta = init;
  if (format == AuctionFormat::fpa) theta.sigmaCP_sq = 1.0;
  CompletedDataset completed;
  const auto Pi = static_cast<Eigen::Index>(P);
  for (int q = 1; q <= settings.draws; ++q) {
    augment_missing_into(data, theta, format, rng, completed);
    const CompletedStats stats = summarize(completed);
    std::optional<double> fixed;
    if (format == AuctionFormat::fpa) fixed = 1.0;
    ModelParams next;
    std::tie(next.deltaCP, next.sigmaCP_sq) = draw_equation(stats.cp, priors.cp, fixed, rng);

    const OutcomePairPosterior post = outcome_pair_posterior(completed, wp);
    const Eigen::Matrix2d scale_inv = wp.xi + post.ssr;
    Eigen::LLT<Eigen::Matrix2d> scale_llt(scale_inv);
    if (scale_llt.info() != Eigen::Success) throw NumericalError("run_gibbs_correlated: Xi + SSR is not positive definite");
    const Eigen::Matrix2d scale = scale_llt.solve(Eigen::Matrix2d::Identity());
    const Eigen::Matrix2d sigma_inv = draw_wishart(wp.nu + static_cast<double>(completed.rows.size()), scale, rng);
    Eigen::Matrix2d sigma = sigma_inv.inverse();
    sigma(0, 1) = sigma(1, 0);

    // vec(Delta) ~ N(vec(Delta_tilde), Sigma (x) M^-1): Delta = Delta_tilde + L_M^-T Z L_S'.
    Eigen::LLT<Eigen::MatrixXd> m_llt(post.precision);
    Eigen::LLT<Eigen::Matrix2d> s_llt(sigma);
    if (s_llt.info() != Eigen::Success) throw NumericalError("run_gibbs_correlated: Sigma draw is not positive definite");
    Eigen::MatrixXd z(Pi, 2);
    for (Eigen::Index c = 0; c < 2; ++c)
      for (Eigen::Index p = 0; p < Pi; ++p) z(p, c) = draw_std_normal(rng);
    const Eigen::MatrixXd left = m_llt.matrixU().solve(z);
    const Eigen::MatrixXd delta = post.delta_tilde + left * Eigen::Matrix2d(s_llt.matrixL()).transpose();

    next.delta1.assign(delta.col(0).data(), delta.col(0).data() + Pi);
    next.delta0.assign(delta.col(1).data(), delta.col(1).data() + Pi);
    next.sigma1_sq = sigma(0, 0);
    next.sigma0_sq = sigma(1, 1);
    next.rho = sigma(0, 1) / std::sqrt(sigma(0, 0) * sigma(1, 1));
    theta = std::move(next);
    if (settings.retains(q)) out.draws.push_back(theta);
  }
  out.last = theta;
  return out;
}

}  // namespace bitslab
