#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include <Eigen/Dense>

#include "bitslab/errors.hpp"
#include "bitslab/rng.hpp"

namespace bitslab {

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kInvSqrt2 = 0.707106781186547524400844362105;
inline constexpr double kInvSqrt2Pi = 0.398942280401432677939946059934;  // 1/sqrt(2*pi)
inline constexpr double kLogSqrt2Pi = 0.918938533204672741780329736406;  // log(sqrt(2*pi))

inline double std_normal_pdf(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }

inline double log_std_normal_pdf(double z) { return -0.5 * z * z - kLogSqrt2Pi; }

/// Phi(z) through the complementary error function (a few ulp relative error).
inline double std_normal_cdf(double z) { return 0.5 * std::erfc(-z * kInvSqrt2); }

/// 1 - Phi(z), without cancellation for large z.
inline double std_normal_sf(double z) { return 0.5 * std::erfc(z * kInvSqrt2); }

/// Upper-tail Mills ratio (1 - Phi(x)) / phi(x).
///
/// Continued fraction for x >= 6, where the direct ratio would divide two
/// numbers near underflow.
inline double upper_mills_ratio(double x) {
  if (x < 6.0) return std_normal_sf(x) / std_normal_pdf(x);
  double tail = 0.0;
  for (int k = 60; k >= 1; --k) tail = k / (x + tail);
  return 1.0 / (x + tail);
}

/// Phi(z) / phi(z): the inverse reversed hazard rate of a standard normal.
inline double cdf_over_pdf(double z) { return upper_mills_ratio(-z); }

/// phi(z) / Phi(z) (inverse Mills ratio of the lower tail).
inline double pdf_over_cdf(double z) { return 1.0 / upper_mills_ratio(-z); }

/// phi(z) / (1 - Phi(z)) (hazard of the standard normal).
inline double pdf_over_sf(double z) { return 1.0 / upper_mills_ratio(z); }

inline double log_std_normal_cdf(double z) {
  if (z < -6.0) return log_std_normal_pdf(z) + std::log(upper_mills_ratio(-z));
  if (z < 0.0) return std::log(std_normal_cdf(z));
  return std::log1p(-std_normal_sf(z));
}

/// Inverse of Phi (Wichura's AS241, about 1e-16 relative accuracy).
inline double std_normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.0) return -kInf;
    if (p == 1.0) return kInf;
    throw std::invalid_argument("std_normal_quantile: p outside [0, 1]");
  }
  const double q = p - 0.5;
  if (std::fabs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q *
           (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r +
                 6.7265770927008700853e+4) * r + 4.5921953931549871457e+4) * r +
               1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r +
             1.3314166789178437745e+2) * r + 3.3871328727963666080e0) /
           (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r +
                 3.9307895800092710610e+4) * r + 2.1213794301586595867e+4) * r +
               5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r +
             4.2313330701600911252e+1) * r + 1.0);
  }
  double r = q < 0.0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double value;
  if (r <= 5.0) {
    r -= 1.6;
    value = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                  2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
                3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
              4.63033784615654529590e0) * r + 1.42343711074968357734e0) /
            (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                  1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
                6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
              2.05319162663775882187e0) * r + 1.0);
  } else {
    r -= 5.0;
    value = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                  1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
                2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
              5.46378491116411436990e0) * r + 6.65790464350110377720e0) /
            (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                  1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
                1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
              5.99832206555887937690e-1) * r + 1.0);
  }
  return q < 0.0 ? -value : value;
}

inline double lognormal_mean(double mu, double sigma2) { return std::exp(mu + 0.5 * sigma2); }

// ---------------------------------------------------------------------------
// Draws

inline double draw_std_normal(RngHandle& rng) { return std_normal_quantile(rng.uniform()); }

inline double draw_normal(double mean, double variance, RngHandle& rng) {
  return mean + std::sqrt(variance) * draw_std_normal(rng);
}

/// Half-open or closed support for a truncated normal; either side may be infinite.
struct TruncationBounds {
  double lower = -kInf;
  double upper = kInf;

  static TruncationBounds above(double l) { return {l, kInf}; }
  static TruncationBounds below(double u) { return {-kInf, u}; }

  void validate() const {
    if (std::isnan(lower) || std::isnan(upper) || !(lower < upper))
      throw std::invalid_argument("TruncationBounds: require lower < upper");
  }
  bool contains_strictly(double x) const { return x > lower && x < upper; }
};

/// Standard normal conditioned on z > a, with the per-bound work hoisted out.
///
/// Inverse-CDF through the upper tail for a <= 4, exponential accept-reject
/// (Robert, 1995) beyond. A single lower bound is drawn from many times per
/// Gibbs sweep when losers share a bid.
class LowerTailSampler {
 public:
  static constexpr double kExponentialCutoff = 4.0;

  explicit LowerTailSampler(double a) : a_(a) {
    if (a_ > kExponentialCutoff) {
      rate_ = 0.5 * (a_ + std::sqrt(a_ * a_ + 4.0));
    } else {
      tail_mass_ = std_normal_sf(a_);
    }
  }

  double operator()(RngHandle& rng) const {
    double z;
    if (a_ > kExponentialCutoff) {
      for (;;) {
        z = a_ - std::log(rng.uniform()) / rate_;
        const double d = z - rate_;
        if (rng.uniform() <= std::exp(-0.5 * d * d)) break;
      }
    } else {
      z = -std_normal_quantile(rng.uniform() * tail_mass_);
    }
    if (!(z > a_)) z = std::nextafter(a_, kInf);
    return z;
  }

  double bound() const { return a_; }

 private:
  double a_;
  double rate_ = 0.0;
  double tail_mass_ = 1.0;
};

namespace detail {

// Standard normal on (a, b) with 0 <= a < b < inf.
inline double positive_interval_normal(double a, double b, RngHandle& rng) {
  if (a > LowerTailSampler::kExponentialCutoff) {
    // Truncated exponential proposal with rate a; acceptance exp(-(z - a)^2 / 2).
    const double span = 1.0 - std::exp(-a * (b - a));
    for (;;) {
      const double z = a - std::log1p(-rng.uniform() * span) / a;
      const double d = z - a;
      if (rng.uniform() <= std::exp(-0.5 * d * d)) return z;
    }
  }
  const double qa = std_normal_sf(a);
  const double qb = std_normal_sf(b);
  return -std_normal_quantile(qb + rng.uniform() * (qa - qb));
}

inline double std_truncated_normal(double a, double b, RngHandle& rng) {
  double z;
  if (std::isinf(b)) {
    z = LowerTailSampler(a)(rng);
  } else if (std::isinf(a)) {
    z = -LowerTailSampler(-b)(rng);
  } else if (a >= 0.0) {
    z = positive_interval_normal(a, b, rng);
  } else if (b <= 0.0) {
    z = -positive_interval_normal(-b, -a, rng);
  } else {
    const double pa = std_normal_cdf(a);
    const double pb = std_normal_cdf(b);
    z = std_normal_quantile(pa + rng.uniform() * (pb - pa));
  }
  if (!(z > a)) z = std::nextafter(a, kInf);
  if (!(z < b)) z = std::nextafter(b, -kInf);
  return z;
}

}  // namespace detail

/// Draw from N(mean, variance) restricted to (bounds.lower, bounds.upper).
inline double draw_truncated_normal(double mean, double variance, const TruncationBounds& bounds,
                                    RngHandle& rng) {
  if (!(variance > 0.0) || !std::isfinite(variance))
    throw std::invalid_argument("draw_truncated_normal: variance must be positive");
  bounds.validate();
  const double sd = std::sqrt(variance);
  const double a = (bounds.lower - mean) / sd;
  const double b = (bounds.upper - mean) / sd;
  double x = mean + sd * detail::std_truncated_normal(a, b, rng);
  if (!(x > bounds.lower)) x = std::nextafter(bounds.lower, kInf);
  if (!(x < bounds.upper)) x = std::nextafter(bounds.upper, -kInf);
  return x;
}

/// Gamma(shape, rate) with E = shape / rate (Marsaglia-Tsang).
inline double draw_gamma(double shape, double rate, RngHandle& rng) {
  if (!(shape > 0.0) || !(rate > 0.0) || !std::isfinite(shape) || !std::isfinite(rate))
    throw std::invalid_argument("draw_gamma: shape and rate must be positive and finite");
  if (shape < 1.0) {
    const double boosted = draw_gamma(shape + 1.0, 1.0, rng);
    return boosted * std::pow(rng.uniform(), 1.0 / shape) / rate;
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x;
    double v;
    do {
      x = draw_std_normal(rng);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v / rate;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v / rate;
  }
}

inline double draw_chi_squared(double dof, RngHandle& rng) { return 2.0 * draw_gamma(0.5 * dof, 1.0, rng); }

/// Multivariate normal via the symmetric eigendecomposition, so singular PSD
/// covariances (including zero) are accepted; a zero covariance returns the mean exactly.
inline Eigen::VectorXd draw_mv_normal(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, RngHandle& rng) {
  const auto n = mean.size();
  if (cov.rows() != n || cov.cols() != n) throw std::invalid_argument("draw_mv_normal: dimension mismatch");
  if (n > 0 && (cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, cov.cwiseAbs().maxCoeff()))
    throw NumericalError("draw_mv_normal: covariance is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericalError("draw_mv_normal: eigendecomposition failed");
  const Eigen::VectorXd& lambda = eig.eigenvalues();
  const double scale = std::max(1.0, lambda.cwiseAbs().maxCoeff());
  if (lambda.size() > 0 && lambda.minCoeff() < -1e-10 * scale)
    throw NumericalError("draw_mv_normal: covariance is not positive semidefinite");
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = std::sqrt(std::max(lambda(i), 0.0)) * draw_std_normal(rng);
  Eigen::VectorXd x = mean;
  if (lambda.size() > 0 && lambda.maxCoeff() > 0.0) x += eig.eigenvectors() * z;
  return x;
}

/// 2x2 Wishart draw by Bartlett decomposition; E[W] = dof * scale.
inline Eigen::Matrix2d draw_wishart(double dof, const Eigen::Matrix2d& scale, RngHandle& rng) {
  if (!(dof > 1.0) || !std::isfinite(dof)) throw std::invalid_argument("draw_wishart: dof must exceed 1");
  if ((scale - scale.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, scale.cwiseAbs().maxCoeff()))
    throw NumericalError("draw_wishart: scale is not symmetric");
  Eigen::LLT<Eigen::Matrix2d> llt(scale);
  if (llt.info() != Eigen::Success) throw NumericalError("draw_wishart: scale is not positive definite");
  Eigen::Matrix2d bartlett = Eigen::Matrix2d::Zero();
  bartlett(0, 0) = std::sqrt(draw_chi_squared(dof, rng));
  bartlett(1, 1) = std::sqrt(draw_chi_squared(dof - 1.0, rng));
  bartlett(1, 0) = draw_std_normal(rng);
  const Eigen::Matrix2d lower = llt.matrixL() * bartlett;
  Eigen::Matrix2d w = lower * lower.transpose();
  w(0, 1) = w(1, 0);
  return w;
}

}  // namespace bitslab
