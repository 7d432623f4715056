#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "bitslab/auction.hpp"
#include "bitslab/gibbs.hpp"

using namespace bitslab;

namespace {

/// Textbook normal-gamma posterior with an explicit design matrix.
struct DenseOracle {
  Eigen::VectorXd mean;
  Eigen::MatrixXd precision;
  double alpha = 0.0;
  double beta = 0.0;
};

DenseOracle dense_posterior(const std::vector<std::size_t>& ctx, const std::vector<double>& y, std::size_t P,
                            const NormalGammaPrior& prior) {
  const auto n = static_cast<Eigen::Index>(y.size());
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(P));
  Eigen::VectorXd Y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    X(i, static_cast<Eigen::Index>(ctx[static_cast<std::size_t>(i)])) = 1.0;
    Y(i) = y[static_cast<std::size_t>(i)];
  }
  DenseOracle o;
  o.precision = prior.precision + X.transpose() * X;
  o.mean = o.precision.fullPivLu().solve(prior.precision * prior.mean + X.transpose() * Y);
  o.alpha = prior.alpha + 0.5 * static_cast<double>(n);
  o.beta = prior.beta + 0.5 * (Y.dot(Y) + prior.mean.dot(prior.precision * prior.mean) - o.mean.dot(o.precision * o.mean));
  return o;
}

EquationStats stats_of(const std::vector<std::size_t>& ctx, const std::vector<double>& y, std::size_t P) {
  EquationStats s(P);
  for (std::size_t i = 0; i < y.size(); ++i) s.add(ctx[i], y[i]);
  return s;
}

ModelParams three_context_truth() {
  ModelParams m;
  m.delta1 = {0.8, 1.0, 1.3};
  m.delta0 = {0.2, 0.3, 0.5};
  m.deltaCP = {0.4, 0.2, 0.6};
  m.sigma1_sq = 0.49;
  m.sigma0_sq = 0.81;
  m.sigmaCP_sq = 0.25;
  return m;
}

std::vector<AuctionObservation> simulate(const ModelParams& m, AuctionFormat format, const std::vector<double>& bids,
                                         std::size_t n, RngHandle& rng) {
  std::vector<AuctionObservation> rows;
  const std::size_t P = m.contexts();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t p = i % P;
    const double bid = bids[rng.below(bids.size())];
    rows.push_back(run_auction(format, bid, p, draw_unit(m, p, rng)).observation);
  }
  return rows;
}

/// Mean and a batch-means standard error of a chain.
std::pair<double, double> chain_mean(const std::vector<double>& x, std::size_t batches = 40) {
  const std::size_t len = x.size() / batches;
  std::vector<double> means;
  for (std::size_t b = 0; b < batches; ++b) {
    double s = 0.0;
    for (std::size_t i = b * len; i < (b + 1) * len; ++i) s += x[i];
    means.push_back(s / static_cast<double>(len));
  }
  double m = 0.0;
  for (double v : means) m += v;
  m /= static_cast<double>(batches);
  double v = 0.0;
  for (double b : means) v += (b - m) * (b - m);
  v /= static_cast<double>(batches - 1);
  return {m, std::sqrt(v / static_cast<double>(batches))};
}

NormalGammaPrior proper_prior(std::size_t P, double alpha, double beta, double mean, double precision) {
  NormalGammaPrior p;
  p.alpha = alpha;
  p.beta = beta;
  p.mean = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(P), mean);
  p.precision = precision * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(P), static_cast<Eigen::Index>(P));
  return p;
}

}  // namespace

TEST_CASE("equation posterior matches the dense textbook update for diagonal and full priors") {
  RngHandle rng(31);
  const std::size_t P = 3;
  std::vector<std::size_t> ctx;
  std::vector<double> y;
  for (int i = 0; i < 60; ++i) {
    ctx.push_back(static_cast<std::size_t>(i % 3));
    y.push_back(draw_normal(0.5 * (i % 3), 0.7, rng));
  }
  const EquationStats s = stats_of(ctx, y, P);

  NormalGammaPrior diag = proper_prior(P, 2.0, 1.5, 0.3, 4.0);
  diag.precision(1, 1) = 9.0;
  NormalGammaPrior full = diag;
  full.precision(0, 1) = full.precision(1, 0) = 1.5;
  full.precision(1, 2) = full.precision(2, 1) = -0.8;
  full.mean << 0.1, -0.2, 0.7;

  for (const auto& prior : {NormalGammaPrior::uninformative(P), diag, full}) {
    const EquationPosterior post = equation_posterior(s, prior);
    const DenseOracle o = dense_posterior(ctx, y, P, prior);
    REQUIRE(post.shape == Catch::Approx(o.alpha).epsilon(1e-12));
    REQUIRE(post.rate == Catch::Approx(o.beta).epsilon(1e-10));
    for (Eigen::Index i = 0; i < 3; ++i) REQUIRE(post.mean(i) == Catch::Approx(o.mean(i)).epsilon(1e-10).margin(1e-12));
    const Eigen::MatrixXd inv = o.precision.inverse();
    REQUIRE((post.cov_scale - inv).cwiseAbs().maxCoeff() < 1e-10);
    const Eigen::MatrixXd ut = post.chol_factor;
    REQUIRE((ut * ut.transpose() - inv).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("a context without rows or prior information is flagged and gets the diffuse fallback") {
  EquationStats s(3);
  for (int i = 0; i < 20; ++i) s.add(0, 0.1 * i), s.add(2, -0.05 * i);
  const auto post = equation_posterior(s, NormalGammaPrior::uninformative(3));
  REQUIRE(post.unidentified == std::vector<bool>{false, true, false});
  RngHandle rng(32);
  double ss = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const auto [delta, sigma2] = draw_equation(s, NormalGammaPrior::uninformative(3), std::nullopt, rng);
    ss += delta[1] * delta[1];
  }
  REQUIRE(ss / n == Catch::Approx(kUnidentifiedVariance).epsilon(3.0 * std::sqrt(2.0 / n)));
}

TEST_CASE("conjugate draws match the closed-form normal-gamma moments") {
  RngHandle rng(33);
  const std::size_t P = 2;
  std::vector<std::size_t> ctx;
  std::vector<double> y;
  for (int i = 0; i < 40; ++i) {
    ctx.push_back(static_cast<std::size_t>(i % 2));
    y.push_back(draw_normal(i % 2 ? 1.0 : -0.5, 0.5, rng));
  }
  NormalGammaPrior prior = proper_prior(P, 3.0, 2.0, 0.0, 1.0);
  prior.precision(0, 1) = prior.precision(1, 0) = 0.4;
  const DenseOracle o = dense_posterior(ctx, y, P, prior);
  const double e_sigma2 = o.beta / (o.alpha - 1.0);
  const double v_sigma2 = e_sigma2 * e_sigma2 / (o.alpha - 2.0);
  const Eigen::MatrixXd cov_delta = e_sigma2 * o.precision.inverse();

  const EquationStats s = stats_of(ctx, y, P);
  const int n = 200'000;
  double m0 = 0, m1 = 0, ms = 0;
  for (int i = 0; i < n; ++i) {
    const auto [delta, sigma2] = draw_equation(s, prior, std::nullopt, rng);
    m0 += delta[0];
    m1 += delta[1];
    ms += sigma2;
  }
  REQUIRE(std::fabs(m0 / n - o.mean(0)) < 3.0 * std::sqrt(cov_delta(0, 0) / n));
  REQUIRE(std::fabs(m1 / n - o.mean(1)) < 3.0 * std::sqrt(cov_delta(1, 1) / n));
  REQUIRE(std::fabs(ms / n - e_sigma2) < 3.0 * std::sqrt(v_sigma2 / n));
}

TEST_CASE("Gibbs draws of fully observed equations match the closed-form posterior within 3 SE") {
  // Bids far above every competing bid: second-price wins reveal Y(1) and B_CP for every row.
  RngHandle rng(34);
  const ModelParams truth = three_context_truth();
  const auto data = simulate(truth, AuctionFormat::spa, {50.0}, 90, rng);
  for (const auto& o : data) REQUIRE(o.bcp_kind == CompetingBidKind::observed);

  PriorParams priors = PriorParams::uninformative(3);
  priors.y0 = proper_prior(3, 3.0, 2.0, 0.0, 1.0);
  priors.cp = proper_prior(3, 2.0, 0.5, 0.3, 2.0);
  GibbsSettings g{20000, 100, 1};
  const PosteriorDraws post = run_gibbs(data, priors, ModelParams::initial(3), g, AuctionFormat::spa, rng);

  for (int k = 0; k < 2; ++k) {
    std::vector<std::size_t> ctx;
    std::vector<double> y;
    for (const auto& o : data) {
      ctx.push_back(o.context);
      y.push_back(std::log(k == 0 ? o.outcome : o.bcp_value));
    }
    const NormalGammaPrior& prior = k == 0 ? priors.y1 : priors.cp;
    const DenseOracle o = dense_posterior(ctx, y, 3, prior);
    const double e_sigma2 = o.beta / (o.alpha - 1.0);
    const double sd_sigma2 = e_sigma2 / std::sqrt(o.alpha - 2.0);
    const Eigen::MatrixXd cov = e_sigma2 * o.precision.inverse();
    const double n = static_cast<double>(post.size());
    double ms = 0.0;
    std::vector<double> md(3, 0.0);
    for (const auto& th : post.draws) {
      ms += k == 0 ? th.sigma1_sq : th.sigmaCP_sq;
      for (std::size_t p = 0; p < 3; ++p) md[p] += k == 0 ? th.delta1[p] : th.deltaCP[p];
    }
    INFO("equation " << (k == 0 ? "y1" : "cp"));
    REQUIRE(std::fabs(ms / n - e_sigma2) < 3.0 * sd_sigma2 / std::sqrt(n));
    for (Eigen::Index p = 0; p < 3; ++p)
      REQUIRE(std::fabs(md[static_cast<std::size_t>(p)] / n - o.mean(p)) < 3.0 * std::sqrt(cov(p, p) / n));
  }
}

TEST_CASE("sufficient-statistic sampler and row-by-row sampler target the same posterior") {
  for (AuctionFormat format : {AuctionFormat::spa, AuctionFormat::fpa}) {
    RngHandle rng(35);
    ModelParams truth = three_context_truth();
    if (format == AuctionFormat::fpa) truth.sigmaCP_sq = 1.0;
    const auto data = simulate(truth, format, {0.8, 1.4, 2.0}, 240, rng);
    const PriorParams priors = PriorParams::uninformative(3);
    GibbsSettings g{40000, 2000, 1};
    RngHandle ra(1), rb(2);
    const auto fast = run_gibbs(data, priors, ModelParams::initial(3), g, format, ra);
    const auto slow = run_gibbs_rowwise(data, priors, ModelParams::initial(3), g, format, rb);
    REQUIRE(fast.bound_violations == 0);
    auto series = [](const PosteriorDraws& d, auto get) {
      std::vector<double> v;
      for (const auto& th : d.draws) v.push_back(get(th));
      return v;
    };
    const std::vector<std::function<double(const ModelParams&)>> getters = {
        [](const ModelParams& t) { return t.delta1[0]; },  [](const ModelParams& t) { return t.delta0[2]; },
        [](const ModelParams& t) { return t.deltaCP[1]; }, [](const ModelParams& t) { return t.sigma1_sq; },
        [](const ModelParams& t) { return t.sigma0_sq; },  [](const ModelParams& t) { return t.sigmaCP_sq; }};
    for (std::size_t k = 0; k < getters.size(); ++k) {
      const auto [ma, sa] = chain_mean(series(fast, getters[k]));
      const auto [mb, sb] = chain_mean(series(slow, getters[k]));
      INFO(to_string(format) << " parameter " << k << ": " << ma << " vs " << mb);
      REQUIRE(std::fabs(ma - mb) < 4.0 * std::sqrt(sa * sa + sb * sb) + 1e-12);
    }
  }
}

TEST_CASE("first-price chains keep the competing-bid variance at one") {
  RngHandle rng(36);
  ModelParams truth = three_context_truth();
  truth.sigmaCP_sq = 1.0;
  const auto data = simulate(truth, AuctionFormat::fpa, {0.5, 1.0, 1.5}, 150, rng);
  const auto post = run_gibbs(data, PriorParams::uninformative(3), ModelParams::initial(3), GibbsSettings{},
                              AuctionFormat::fpa, rng);
  REQUIRE(post.size() == 50);
  for (const auto& th : post.draws) REQUIRE(th.sigmaCP_sq == 1.0);
  REQUIRE(post.last.sigmaCP_sq == 1.0);
}

TEST_CASE("retention keeps multiples of the thinning interval after burn-in") {
  GibbsSettings g;
  REQUIRE(g.retained_count() == 50);
  REQUIRE_FALSE(g.retains(500));
  REQUIRE(g.retains(510));
  REQUIRE(g.retains(1000));
  REQUIRE_FALSE(g.retains(515));
  REQUIRE_THROWS_AS((GibbsSettings{10, 5, 1}.validate()), ConfigError);
  REQUIRE_THROWS_AS((GibbsSettings{100, 100, 1}.validate()), ConfigError);
}

TEST_CASE("fixed seed gives identical posterior draws") {
  RngHandle rng(37);
  const auto data = simulate(three_context_truth(), AuctionFormat::spa, {0.8, 1.4}, 120, rng);
  for (auto runner : {&run_gibbs, &run_gibbs_rowwise, &run_gibbs_correlated}) {
    RngHandle a(99), b(99);
    const auto x = runner(data, PriorParams::uninformative(3), ModelParams::initial(3), GibbsSettings{}, AuctionFormat::spa, a);
    const auto y = runner(data, PriorParams::uninformative(3), ModelParams::initial(3), GibbsSettings{}, AuctionFormat::spa, b);
    REQUIRE(x.size() == y.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      REQUIRE(x.draws[i].delta1 == y.draws[i].delta1);
      REQUIRE(x.draws[i].deltaCP == y.draws[i].deltaCP);
      REQUIRE(x.draws[i].sigma0_sq == y.draws[i].sigma0_sq);
      REQUIRE(x.draws[i].rho == y.draws[i].rho);
    }
  }
}

TEST_CASE("augmentation respects every censoring bound, including far tails") {
  RngHandle rng(38);
  for (AuctionFormat format : {AuctionFormat::spa, AuctionFormat::fpa}) {
    ModelParams truth = three_context_truth();
    truth.sigmaCP_sq = 1.0;
    const auto data = simulate(truth, format, {0.05, 0.8, 1.4, 40.0}, 400, rng);
    for (double shift : {-9.0, 0.0, 9.0}) {
      ModelParams theta = truth;
      for (double& d : theta.deltaCP) d += shift;
      const CompletedDataset c = augment_missing(data, theta, format, rng);
      for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& o = data[i];
        const auto& r = c.rows[i];
        switch (o.bcp_kind) {
          case CompetingBidKind::lower_bound: REQUIRE(r.log_bcp > r.log_bid); break;
          case CompetingBidKind::upper_bound: REQUIRE(r.log_bcp < r.log_bid); break;
          case CompetingBidKind::observed: REQUIRE(r.log_bcp == std::log(o.bcp_value)); break;
        }
        REQUIRE((o.win ? r.log_y1 : r.log_y0) == std::log(o.outcome));
      }
    }
  }
}

TEST_CASE("simulation-based calibration: posterior ranks of the truth are uniform") {
  const int runs = 200;
  const int bins = 10;
  const boost::math::chi_squared_distribution<> chi2(bins - 1);
  const double critical = boost::math::quantile(chi2, 0.99);
  for (AuctionFormat format : {AuctionFormat::spa, AuctionFormat::fpa}) {
    PriorParams priors;
    priors.y1 = proper_prior(2, 4.0, 2.0, 0.8, 2.0);
    priors.y0 = proper_prior(2, 4.0, 3.0, 0.2, 2.0);
    priors.cp = format == AuctionFormat::spa ? proper_prior(2, 5.0, 1.0, 0.4, 4.0) : proper_prior(2, 0.0, 0.0, 0.4, 1.0);
    priors.outcome_pair = WishartPrior::weak(2);
    const std::vector<std::string> names = {"delta1[0]", "delta0[1]", "deltaCP[0]", "deltaCP[1]", "sigma1_sq", "sigmaCP_sq"};
    std::vector<std::vector<int>> hist(names.size(), std::vector<int>(bins, 0));
    RngHandle rng(format == AuctionFormat::spa ? 40 : 41);
    std::size_t violations = 0;
    for (int r = 0; r < runs; ++r) {
      ModelParams truth;
      auto draw_eq = [&](const NormalGammaPrior& pr, bool fixed, std::vector<double>& delta, double& s2) {
        s2 = fixed ? 1.0 : 1.0 / draw_gamma(pr.alpha, pr.beta, rng);
        delta.resize(2);
        for (int p = 0; p < 2; ++p) delta[p] = draw_normal(pr.mean(p), s2 / pr.precision(p, p), rng);
      };
      draw_eq(priors.y1, false, truth.delta1, truth.sigma1_sq);
      draw_eq(priors.y0, false, truth.delta0, truth.sigma0_sq);
      draw_eq(priors.cp, format == AuctionFormat::fpa, truth.deltaCP, truth.sigmaCP_sq);
      const auto data = simulate(truth, format, {1.0, 1.5, 2.5}, 40, rng);
      const GibbsSettings g{1990, 1000, 10};
      const auto post = run_gibbs(data, priors, ModelParams::initial(2), g, format, rng);
      violations += post.bound_violations;
      const std::vector<double> true_values = {truth.delta1[0], truth.delta0[1], truth.deltaCP[0],
                                               truth.deltaCP[1], truth.sigma1_sq, truth.sigmaCP_sq};
      for (std::size_t k = 0; k < names.size(); ++k) {
        if (format == AuctionFormat::fpa && names[k] == "sigmaCP_sq") continue;
        int rank = 0;
        for (const auto& th : post.draws) {
          const std::vector<double> v = {th.delta1[0], th.delta0[1], th.deltaCP[0], th.deltaCP[1], th.sigma1_sq, th.sigmaCP_sq};
          rank += v[k] < true_values[k] ? 1 : 0;
        }
        const int L = static_cast<int>(post.size());  // 99 retained draws, so 100 possible ranks
        hist[k][rank * bins / (L + 1)] += 1;
      }
    }
    REQUIRE(violations == 0);
    for (std::size_t k = 0; k < names.size(); ++k) {
      if (format == AuctionFormat::fpa && names[k] == "sigmaCP_sq") continue;
      double stat = 0.0;
      const double expected = static_cast<double>(runs) / bins;
      for (int c : hist[k]) stat += (c - expected) * (c - expected) / expected;
      INFO(to_string(format) << " " << names[k] << " chi-square " << stat << " vs " << critical);
      CHECK(stat < critical);
    }
  }
}

TEST_CASE("outcome-pair conditional matches the dense multivariate regression update") {
  RngHandle rng(42);
  ModelParams truth = three_context_truth();
  truth.rho = 0.5;
  const auto data = simulate(truth, AuctionFormat::spa, {0.8, 1.4}, 90, rng);
  const CompletedDataset c = augment_missing(data, truth, AuctionFormat::spa, rng);
  WishartPrior prior = WishartPrior::weak(3);
  prior.precision = 0.5 * Eigen::MatrixXd::Identity(3, 3);
  prior.mean << 0.1, 0.2, 0.3, 0.0, -0.1, 0.4;
  const auto post = outcome_pair_posterior(c, prior);

  const auto n = static_cast<Eigen::Index>(c.rows.size());
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(n, 3), Y(n, 2), M(3, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = c.rows[static_cast<std::size_t>(i)];
    X(i, static_cast<Eigen::Index>(r.context)) = 1.0;
    Y(i, 0) = r.log_y1;
    Y(i, 1) = r.log_y0;
  }
  M.col(0) = prior.mean.head(3);
  M.col(1) = prior.mean.tail(3);
  const Eigen::MatrixXd prec = X.transpose() * X + prior.precision;
  const Eigen::MatrixXd D = prec.inverse() * (X.transpose() * Y + prior.precision * M);
  const Eigen::MatrixXd E = Y - X * D;
  const Eigen::MatrixXd S = E.transpose() * E + (D - M).transpose() * prior.precision * (D - M);
  REQUIRE((post.delta_tilde - D).cwiseAbs().maxCoeff() < 1e-10);
  REQUIRE((post.ssr - S).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("correlated-mode sampler produces valid draws and tracks the location parameters") {
  RngHandle rng(43);
  ModelParams truth = three_context_truth();
  truth.rho = 0.5;
  const auto data = simulate(truth, AuctionFormat::spa, {0.8, 1.4, 2.0}, 3000, rng);
  const auto post = run_gibbs_correlated(data, PriorParams::uninformative(3), ModelParams::initial(3), GibbsSettings{},
                                         AuctionFormat::spa, rng);
  REQUIRE(post.size() == 50);
  double d1 = 0.0, cp = 0.0;
  for (const auto& th : post.draws) {
    REQUIRE(th.rho > -1.0);
    REQUIRE(th.rho < 1.0);
    REQUIRE(th.sigma1_sq > 0.0);
    d1 += th.delta1[1];
    cp += th.deltaCP[2];
  }
  REQUIRE(d1 / 50.0 == Catch::Approx(truth.delta1[1]).margin(0.1));
  REQUIRE(cp / 50.0 == Catch::Approx(truth.deltaCP[2]).margin(0.1));
}

TEST_CASE("sampler rejects empty data and malformed rows") {
  RngHandle rng(44);
  std::vector<AuctionObservation> none;
  REQUIRE_THROWS_AS(run_gibbs(none, PriorParams::uninformative(1), ModelParams::initial(1), GibbsSettings{},
                              AuctionFormat::spa, rng),
                    NumericalError);
  AuctionObservation bad;
  bad.bid = 1.0;
  bad.context = 4;
  bad.outcome = 1.0;
  bad.bcp_value = 1.0;
  std::vector<AuctionObservation> rows{bad};
  REQUIRE_THROWS_AS(run_gibbs(rows, PriorParams::uninformative(1), ModelParams::initial(1), GibbsSettings{},
                              AuctionFormat::spa, rng),
                    ConfigError);
}
