#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bitslab/errors.hpp"
#include "bitslab/model.hpp"
#include "bitslab/stats.hpp"

namespace bitslab {

/// OLS fit of one potential-outcome equation on its own rows (wins for Y(1), losses for Y(0)).
/// Asymptotic variances are for sqrt(n)-scaled estimators, with n the equation's row count.
struct EquationEstimate {
  Eigen::VectorXd delta;
  double sigma2 = 0.0;
  Eigen::MatrixXd avar_delta;  // Avar[sqrt(n)(delta_hat - delta)]
  double avar_sigma2 = 0.0;    // Avar[sqrt(n)(sigma2_hat - sigma2)]
  std::size_t n = 0;
  bool has_variance = true;    // false when sigma^2 is fixed by normalization
};

struct OutcomeFits {
  EquationEstimate y1;
  EquationEstimate y0;
};

namespace detail {

inline EquationEstimate ols_one_hot(const std::vector<std::vector<double>>& by_context, const char* label) {
  const std::size_t P = by_context.size();
  EquationEstimate e;
  e.delta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(P));
  std::vector<double> counts(P, 0.0);
  double ssr = 0.0;
  for (std::size_t p = 0; p < P; ++p) {
    const auto& ys = by_context[p];
    if (ys.size() < 2)
      throw NumericalError(std::string("fit_outcome_ols: fewer than two ") + label + " in a context");
    double s = 0.0;
    for (double y : ys) s += y;
    const double m = s / static_cast<double>(ys.size());
    for (double y : ys) ssr += (y - m) * (y - m);
    e.delta(static_cast<Eigen::Index>(p)) = m;
    counts[p] = static_cast<double>(ys.size());
    e.n += ys.size();
  }
  const double n = static_cast<double>(e.n);
  e.sigma2 = ssr / n;
  e.avar_delta = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(P), static_cast<Eigen::Index>(P));
  for (std::size_t p = 0; p < P; ++p)
    e.avar_delta(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p)) = e.sigma2 * n / counts[p];
  e.avar_sigma2 = 2.0 * e.sigma2 * e.sigma2;
  return e;
}

}  // namespace detail

/// Least squares of log Y on the context dummies, separately for winners and losers.
inline OutcomeFits fit_outcome_ols(std::span<const AuctionObservation> history, std::size_t contexts) {
  std::vector<std::vector<double>> wins(contexts), losses(contexts);
  for (const auto& o : history) {
    if (o.context >= contexts) throw ConfigError("fit_outcome_ols: context index out of range");
    (o.win ? wins : losses)[o.context].push_back(std::log(o.outcome));
  }
  return {detail::ols_one_hot(wins, "wins"), detail::ols_one_hot(losses, "losses")};
}

struct MleResult {
  Eigen::VectorXd estimate;    // original scale: delta_CP (P entries), then sigma_CP^2 for the Tobit
  Eigen::MatrixXd covariance;  // finite-sample covariance of `estimate`
  Eigen::VectorXd raw;         // optimizer coordinates
  Eigen::VectorXd gradient;    // at `raw`
  double loglik = 0.0;
  bool converged = false;
  int iterations = 0;
  std::size_t n = 0;
};

/// Value, gradient and Hessian of a log-likelihood at a point.
struct Objective {
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
};

/// Censored log-likelihood of log B_CP in Olsen coordinates (aleph = delta/sigma, beth = 1/sigma):
/// wins add log[beth phi(beth log b_CP - aleph_p)], losses add log Phi(aleph_p - beth log b).
/// `params` holds aleph (P entries) followed by beth. Globally concave.
inline Objective tobit_objective(const Eigen::VectorXd& params, std::span<const AuctionObservation> history,
                                 std::size_t contexts) {
  const auto P = static_cast<Eigen::Index>(contexts);
  const double beth = params(P);
  Objective f;
  f.gradient = Eigen::VectorXd::Zero(P + 1);
  f.hessian = Eigen::MatrixXd::Zero(P + 1, P + 1);
  if (!(beth > 0.0)) {
    f.value = -kInf;
    return f;
  }
  const double log_beth = std::log(beth);
  for (const auto& o : history) {
    const auto p = static_cast<Eigen::Index>(o.context);
    const double aleph = params(p);
    if (o.win) {
      const double c = std::log(o.bcp_value);
      const double e = beth * c - aleph;
      f.value += log_beth + log_std_normal_pdf(e);
      f.gradient(p) += e;
      f.gradient(P) += 1.0 / beth - e * c;
      f.hessian(p, p) -= 1.0;
      f.hessian(p, P) += c;
      f.hessian(P, P) -= 1.0 / (beth * beth) + c * c;
    } else {
      if (o.bid == 0.0) continue;  // Pr(B_CP > 0) = 1
      const double l = std::log(o.bid);
      const double u = aleph - beth * l;
      const double lambda = pdf_over_cdf(u);
      const double curv = lambda * (u + lambda);
      f.value += log_std_normal_cdf(u);
      f.gradient(p) += lambda;
      f.gradient(P) -= lambda * l;
      f.hessian(p, p) -= curv;
      f.hessian(p, P) += curv * l;
      f.hessian(P, P) -= curv * l * l;
    }
  }
  for (Eigen::Index i = 0; i < P; ++i) f.hessian(P, i) = f.hessian(i, P);
  return f;
}

/// Probit log-likelihood of first-price wins with sigma_CP = 1:
/// Pr(win) = Phi(log b - delta_p).
inline Objective probit_objective(const Eigen::VectorXd& delta, std::span<const AuctionObservation> history,
                                  std::size_t contexts) {
  const auto P = static_cast<Eigen::Index>(contexts);
  Objective f;
  f.gradient = Eigen::VectorXd::Zero(P);
  f.hessian = Eigen::MatrixXd::Zero(P, P);
  for (const auto& o : history) {
    if (o.bid == 0.0) {
      if (o.win) {
        f.value = -kInf;
        return f;
      }
      continue;
    }
    const auto p = static_cast<Eigen::Index>(o.context);
    const double v = std::log(o.bid) - delta(p);
    if (o.win) {
      const double lambda = pdf_over_cdf(v);
      f.value += log_std_normal_cdf(v);
      f.gradient(p) -= lambda;
      f.hessian(p, p) -= lambda * (v + lambda);
    } else {
      const double lambda = pdf_over_sf(v);
      f.value += log_std_normal_cdf(-v);
      f.gradient(p) += lambda;
      f.hessian(p, p) -= lambda * (lambda - v);
    }
  }
  return f;
}

struct NewtonSettings {
  double gradient_tolerance = 1e-8;  // sup-norm of the gradient
  int max_iterations = 100;
};

namespace detail {

// Newton-Raphson on a concave objective with step halving whenever the
// objective fails to improve. Inside the quadratic region, where the gain is
// below the rounding noise of the log-likelihood sum, a step that shrinks the
// gradient is accepted.
template <class F>
MleResult newton_maximize(F&& objective, Eigen::VectorXd x, const NewtonSettings& settings, const char* label) {
  MleResult r;
  Objective f = objective(x);
  for (int it = 0; it < settings.max_iterations; ++it) {
    if (!std::isfinite(f.value)) throw NumericalError(std::string(label) + ": log-likelihood is not finite");
    if (f.gradient.cwiseAbs().maxCoeff() < settings.gradient_tolerance) {
      r.converged = true;
      break;
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(-f.hessian);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.vectorD().minCoeff() <= 0.0)
      throw NumericalError(std::string(label) + ": Hessian is not negative definite");
    const Eigen::VectorXd step = ldlt.solve(f.gradient);
    const bool quadratic_region = f.gradient.dot(step) < 1e-6;  // Newton decrement
    const double grad_norm = f.gradient.cwiseAbs().maxCoeff();
    double scale = 1.0;
    bool moved = false;
    for (int h = 0; h < 60; ++h) {
      const Eigen::VectorXd trial = x + scale * step;
      Objective g = objective(trial);
      const bool ascent = g.value >= f.value;
      const bool flat = quadratic_region && g.gradient.cwiseAbs().maxCoeff() < grad_norm;
      if (std::isfinite(g.value) && (ascent || flat)) {
        x = trial;
        f = std::move(g);
        moved = true;
        break;
      }
      scale *= 0.5;
    }
    r.iterations = it + 1;
    if (!moved) break;  // no ascent left at working precision
  }
  if (!r.converged && f.gradient.cwiseAbs().maxCoeff() < settings.gradient_tolerance) r.converged = true;
  r.raw = x;
  r.gradient = f.gradient;
  r.loglik = f.value;
  if (!r.converged)
    throw NumericalError(std::string(label) + ": Newton-Raphson did not reach the gradient tolerance");
  return r;
}

inline void require_rows(std::span<const AuctionObservation> history, std::size_t contexts, AuctionFormat format,
                         bool need_losses, const char* label) {
  std::vector<std::size_t> wins(contexts, 0), losses(contexts, 0);
  for (const auto& o : history) {
    if (o.context >= contexts) throw ConfigError(std::string(label) + ": context index out of range");
    o.validate(format);
    (o.win ? wins : losses)[o.context] += 1;
  }
  for (std::size_t p = 0; p < contexts; ++p) {
    if (wins[p] == 0) throw NumericalError(std::string(label) + ": a context has no wins; the likelihood has no maximum");
    if (need_losses && losses[p] == 0)
      throw NumericalError(std::string(label) + ": a context has no losses; the likelihood has no maximum");
  }
}

}  // namespace detail

/// Tobit MLE of (delta_CP, sigma_CP^2) from second-price history; covariance by the delta method.
inline MleResult fit_tobit_mle(std::span<const AuctionObservation> history, std::size_t contexts,
                               const NewtonSettings& settings = {}) {
  detail::require_rows(history, contexts, AuctionFormat::spa, false, "fit_tobit_mle");
  const auto P = static_cast<Eigen::Index>(contexts);
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(P + 1);
  x0(P) = 1.0;
  MleResult r = detail::newton_maximize(
      [&](const Eigen::VectorXd& x) { return tobit_objective(x, history, contexts); }, x0, settings, "fit_tobit_mle");
  r.n = history.size();
  const Objective f = tobit_objective(r.raw, history, contexts);
  const Eigen::MatrixXd raw_cov = (-f.hessian).inverse();
  const double beth = r.raw(P);
  r.estimate.resize(P + 1);
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(P + 1, P + 1);
  for (Eigen::Index p = 0; p < P; ++p) {
    r.estimate(p) = r.raw(p) / beth;
    jac(p, p) = 1.0 / beth;
    jac(p, P) = -r.raw(p) / (beth * beth);
  }
  r.estimate(P) = 1.0 / (beth * beth);
  jac(P, P) = -2.0 / (beth * beth * beth);
  r.covariance = jac * raw_cov * jac.transpose();
  r.covariance = 0.5 * (r.covariance + r.covariance.transpose()).eval();
  return r;
}

/// Probit MLE of delta_CP from first-price history (sigma_CP = 1).
inline MleResult fit_probit_mle(std::span<const AuctionObservation> history, std::size_t contexts,
                                const NewtonSettings& settings = {}) {
  detail::require_rows(history, contexts, AuctionFormat::fpa, true, "fit_probit_mle");
  const auto P = static_cast<Eigen::Index>(contexts);
  MleResult r = detail::newton_maximize(
      [&](const Eigen::VectorXd& x) { return probit_objective(x, history, contexts); }, Eigen::VectorXd::Zero(P),
      settings, "fit_probit_mle");
  r.n = history.size();
  const Objective f = probit_objective(r.raw, history, contexts);
  r.estimate = r.raw;
  r.covariance = (-f.hessian).inverse();
  return r;
}

/// Competing-bid estimate in the same shape as the outcome equations.
inline EquationEstimate competing_bid_estimate(const MleResult& fit, AuctionFormat format) {
  EquationEstimate e;
  const double n = static_cast<double>(fit.n);
  e.n = fit.n;
  if (format == AuctionFormat::spa) {
    const auto P = fit.estimate.size() - 1;
    e.delta = fit.estimate.head(P);
    e.sigma2 = fit.estimate(P);
    e.avar_delta = n * fit.covariance.topLeftCorner(P, P);
    e.avar_sigma2 = n * fit.covariance(P, P);
  } else {
    e.delta = fit.estimate;
    e.sigma2 = 1.0;
    e.avar_delta = n * fit.covariance;
    e.has_variance = false;
  }
  return e;
}

/// Normal-gamma hyperparameters whose implied moments match an estimator's.
///
/// alpha/beta = sigma_hat^-2 and alpha/beta^2 = Avar(sigma_hat^-2)/n, where
/// Avar(sigma_hat^-2) = sigma_hat^-8 Avar(sigma_hat^2); A = n sigma_hat^2 Avar(delta_hat)^-1.
inline NormalGammaPrior moment_match(const EquationEstimate& e) {
  NormalGammaPrior prior;
  const double n = static_cast<double>(e.n);
  if (e.n == 0) throw NumericalError("moment_match: estimate has no observations");
  Eigen::LLT<Eigen::MatrixXd> llt(e.avar_delta);
  if (llt.info() != Eigen::Success) throw NumericalError("moment_match: Avar(delta) is not positive definite");
  prior.mean = e.delta;
  const auto P = e.delta.size();
  prior.precision = n * e.sigma2 * llt.solve(Eigen::MatrixXd::Identity(P, P));
  prior.precision = 0.5 * (prior.precision + prior.precision.transpose()).eval();
  if (e.has_variance) {
    if (!(e.sigma2 > 0.0) || !(e.avar_sigma2 > 0.0))
      throw NumericalError("moment_match: variance estimate and its Avar must be positive");
    const double s2 = e.sigma2;
    const double avar_precision = e.avar_sigma2 / std::pow(s2, 4);  // Avar[sqrt(n)(sigma^-2 hat - sigma^-2)]
    const double alpha_precision_form = n * std::pow(s2, -2) / avar_precision;
    const double beta_precision_form = n / s2 / avar_precision;
    prior.alpha = n * s2 * s2 / e.avar_sigma2;
    prior.beta = n * s2 * s2 * s2 / e.avar_sigma2;
    if (std::fabs(prior.alpha - alpha_precision_form) > 1e-9 * prior.alpha ||
        std::fabs(prior.beta - beta_precision_form) > 1e-9 * prior.beta)
      throw NumericalError("moment_match: the two variance parametrizations disagree");
  }
  return prior;
}

inline PriorParams moment_match_priors(const OutcomeFits& outcomes, const EquationEstimate& competing) {
  const std::size_t P = static_cast<std::size_t>(outcomes.y1.delta.size());
  PriorParams priors = PriorParams::uninformative(P);
  priors.y1 = moment_match(outcomes.y1);
  priors.y0 = moment_match(outcomes.y0);
  priors.cp = moment_match(competing);
  return priors;
}

/// Full pipeline: OLS for the outcomes, Tobit (second price) or Probit (first price) for B_CP.
inline PriorParams fit_priors(std::span<const AuctionObservation> history, std::size_t contexts, AuctionFormat format) {
  const OutcomeFits outcomes = fit_outcome_ols(history, contexts);
  const MleResult cp = format == AuctionFormat::spa ? fit_tobit_mle(history, contexts) : fit_probit_mle(history, contexts);
  return moment_match_priors(outcomes, competing_bid_estimate(cp, format));
}

}  // namespace bitslab
