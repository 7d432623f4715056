#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "bitslab/errors.hpp"
#include "bitslab/stats.hpp"

namespace bitslab {

enum class AuctionFormat { spa, fpa };

inline std::string_view to_string(AuctionFormat f) { return f == AuctionFormat::spa ? "spa" : "fpa"; }

inline AuctionFormat parse_format(std::string_view s) {
  if (s == "spa" || s == "SPA") return AuctionFormat::spa;
  if (s == "fpa" || s == "FPA") return AuctionFormat::fpa;
  throw ConfigError("unknown auction format '" + std::string(s) + "'");
}

/// Categorical context distribution F_x over P values. Context indices are 0-based.
struct ContextSpec {
  std::vector<double> probs;

  static ContextSpec uniform(std::size_t count) {
    if (count == 0) throw std::invalid_argument("ContextSpec: need at least one context");
    return ContextSpec{std::vector<double>(count, 1.0 / static_cast<double>(count))};
  }

  std::size_t count() const { return probs.size(); }

  void validate() const {
    if (probs.empty()) throw ConfigError("ContextSpec: need at least one context");
    double total = 0.0;
    for (double p : probs) {
      if (!(p >= 0.0)) throw ConfigError("ContextSpec: probabilities must be non-negative");
      total += p;
    }
    if (std::fabs(total - 1.0) > 1e-12) throw ConfigError("ContextSpec: probabilities must sum to 1");
  }
};

/// Parameters of the trivariate log-normal model for (Y(1), Y(0), B_CP) given the context.
struct ModelParams {
  std::vector<double> delta1;
  std::vector<double> delta0;
  std::vector<double> deltaCP;
  double sigma1_sq = 1.0;
  double sigma0_sq = 1.0;
  double sigmaCP_sq = 1.0;
  double rho = 0.0;

  std::size_t contexts() const { return delta1.size(); }

  /// The initial state used for every Gibbs run: all deltas zero, variances one.
  static ModelParams initial(std::size_t contexts) {
    ModelParams m;
    m.delta1.assign(contexts, 0.0);
    m.delta0.assign(contexts, 0.0);
    m.deltaCP.assign(contexts, 0.0);
    return m;
  }

  void validate(AuctionFormat format) const {
    if (delta1.empty() || delta0.size() != delta1.size() || deltaCP.size() != delta1.size())
      throw ConfigError("ModelParams: delta vectors must share a non-zero length");
    if (!(sigma1_sq > 0.0) || !(sigma0_sq > 0.0) || !(sigmaCP_sq > 0.0))
      throw ConfigError("ModelParams: variances must be positive");
    if (!(rho > -1.0 && rho < 1.0)) throw ConfigError("ModelParams: rho must lie in (-1, 1)");
    if (format == AuctionFormat::fpa && sigmaCP_sq != 1.0)
      throw ConfigError("ModelParams: first-price auctions require sigmaCP_sq == 1");
  }
};

/// Normal-gamma prior for one equation: sigma^-2 ~ Gamma(alpha, beta), delta | sigma^2 ~ N(mean, sigma^2 A^-1).
/// alpha = beta = 0 and A = 0 is the improper uninformative prior.
struct NormalGammaPrior {
  double alpha = 0.0;
  double beta = 0.0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd precision;  // A

  static NormalGammaPrior uninformative(std::size_t contexts) {
    const auto p = static_cast<Eigen::Index>(contexts);
    return {0.0, 0.0, Eigen::VectorXd::Zero(p), Eigen::MatrixXd::Zero(p, p)};
  }

  bool precision_is_diagonal() const {
    const auto p = precision.rows();
    for (Eigen::Index i = 0; i < p; ++i)
      for (Eigen::Index j = 0; j < p; ++j)
        if (i != j && precision(i, j) != 0.0) return false;
    return true;
  }

  void validate(std::size_t contexts) const {
    const auto p = static_cast<Eigen::Index>(contexts);
    if (mean.size() != p || precision.rows() != p || precision.cols() != p)
      throw ConfigError("NormalGammaPrior: dimension mismatch");
    if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ConfigError("NormalGammaPrior: alpha, beta must be >= 0");
    if ((precision - precision.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, precision.cwiseAbs().maxCoeff()))
      throw ConfigError("NormalGammaPrior: A must be symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(precision, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < -1e-10 * std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff()))
      throw ConfigError("NormalGammaPrior: A must be positive semidefinite");
  }
};

/// Joint prior on the potential-outcome pair when rho is left free:
/// Sigma^-1 ~ Wishart(nu, Xi^-1) and vec(Delta) ~ N(mean, Sigma (x) A^-1).
struct WishartPrior {
  double nu = 3.0;
  Eigen::Matrix2d xi = Eigen::Matrix2d::Identity();
  Eigen::VectorXd mean;       // 2P: [mu_delta1; mu_delta0]
  Eigen::MatrixXd precision;  // P x P

  static WishartPrior weak(std::size_t contexts) {
    const auto p = static_cast<Eigen::Index>(contexts);
    return {3.0, Eigen::Matrix2d::Identity(), Eigen::VectorXd::Zero(2 * p), Eigen::MatrixXd::Zero(p, p)};
  }
};

struct PriorParams {
  NormalGammaPrior y1;
  NormalGammaPrior y0;
  NormalGammaPrior cp;
  WishartPrior outcome_pair;

  static PriorParams uninformative(std::size_t contexts) {
    return {NormalGammaPrior::uninformative(contexts), NormalGammaPrior::uninformative(contexts),
            NormalGammaPrior::uninformative(contexts), WishartPrior::weak(contexts)};
  }

  void validate(std::size_t contexts) const {
    y1.validate(contexts);
    y0.validate(contexts);
    cp.validate(contexts);
  }
};

/// Per-context ordered arm sets; arms are bids.
struct BidGrid {
  std::vector<std::vector<double>> arms;

  std::size_t contexts() const { return arms.size(); }
  std::size_t arm_count(std::size_t context) const { return arms.at(context).size(); }

  void validate() const {
    if (arms.empty()) throw ConfigError("BidGrid: no contexts");
    for (const auto& row : arms) {
      if (row.empty()) throw ConfigError("BidGrid: context without arms");
      for (std::size_t r = 0; r < row.size(); ++r) {
        if (!(row[r] >= 0.0) || !std::isfinite(row[r])) throw ConfigError("BidGrid: bids must be finite and >= 0");
        if (r > 0 && !(row[r] > row[r - 1])) throw ConfigError("BidGrid: bids must be strictly increasing");
      }
    }
  }
};

/// What the advertiser learns about the highest competing bid after one auction.
enum class CompetingBidKind {
  observed,     // second-price win: B_CP itself
  lower_bound,  // any loss: B_CP > bid
  upper_bound,  // first-price win: B_CP <= bid
};

inline std::string_view to_string(CompetingBidKind k) {
  switch (k) {
    case CompetingBidKind::observed: return "observed";
    case CompetingBidKind::lower_bound: return "lower";
    case CompetingBidKind::upper_bound: return "upper";
  }
  return "?";
}

inline CompetingBidKind parse_competing_bid_kind(std::string_view s) {
  if (s == "observed") return CompetingBidKind::observed;
  if (s == "lower") return CompetingBidKind::lower_bound;
  if (s == "upper") return CompetingBidKind::upper_bound;
  throw ConfigError("unknown competing-bid kind '" + std::string(s) + "'");
}

/// One auction's feedback row.
struct AuctionObservation {
  double bid = 0.0;
  std::size_t context = 0;
  bool win = false;
  double outcome = 1.0;  // Y = D Y(1) + (1 - D) Y(0)
  CompetingBidKind bcp_kind = CompetingBidKind::lower_bound;
  double bcp_value = 0.0;  // observed B_CP or the bound (always the bid for bounds)

  void validate(AuctionFormat format) const {
    if (!(bid >= 0.0) || !std::isfinite(bid)) throw ConfigError("AuctionObservation: bid must be finite and >= 0");
    if (!(outcome > 0.0) || !std::isfinite(outcome)) throw ConfigError("AuctionObservation: outcome must be positive");
    switch (bcp_kind) {
      case CompetingBidKind::observed:
        if (format != AuctionFormat::spa || !win || !(bcp_value > 0.0) || bcp_value > bid)
          throw ConfigError("AuctionObservation: observed competing bid requires a second-price win with B_CP <= bid");
        break;
      case CompetingBidKind::lower_bound:
        if (win || bcp_value != bid) throw ConfigError("AuctionObservation: lower bound requires a loss at the bid");
        break;
      case CompetingBidKind::upper_bound:
        if (format != AuctionFormat::fpa || !win || bcp_value != bid)
          throw ConfigError("AuctionObservation: upper bound requires a first-price win at the bid");
        break;
    }
  }
};

/// One-hot context dummy vector for 0-based index `context` out of `count`.
inline std::vector<double> encode_context(std::size_t context, std::size_t count) {
  if (count == 0 || context >= count) throw std::out_of_range("encode_context: index out of range");
  std::vector<double> x(count, 0.0);
  x[context] = 1.0;
  return x;
}

inline std::size_t decode_context(const std::vector<double>& one_hot) {
  std::size_t found = one_hot.size();
  for (std::size_t i = 0; i < one_hot.size(); ++i) {
    if (one_hot[i] == 1.0) {
      if (found != one_hot.size()) throw std::invalid_argument("decode_context: more than one active entry");
      found = i;
    } else if (one_hot[i] != 0.0) {
      throw std::invalid_argument("decode_context: entries must be 0 or 1");
    }
  }
  if (found == one_hot.size()) throw std::invalid_argument("decode_context: no active entry");
  return found;
}

/// CATE(x) = E[Y(1) | x] - E[Y(0) | x]; independent of rho.
inline double true_cate(const ModelParams& theta, std::size_t context) {
  return lognormal_mean(theta.delta1.at(context), theta.sigma1_sq) -
         lognormal_mean(theta.delta0.at(context), theta.sigma0_sq);
}

/// Covariance of (log Y(1), log Y(0), log B_CP).
inline Eigen::Matrix3d model_covariance(const ModelParams& theta) {
  const double c = theta.rho * std::sqrt(theta.sigma1_sq * theta.sigma0_sq);
  Eigen::Matrix3d s;
  s << theta.sigma1_sq, c, 0.0, c, theta.sigma0_sq, 0.0, 0.0, 0.0, theta.sigmaCP_sq;
  return s;
}

}  // namespace bitslab
