#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "bitslab/auction.hpp"
#include "bitslab/config.hpp"
#include "bitslab/model.hpp"

using namespace bitslab;

namespace {

ModelParams spa_truth() {
  ModelParams m;
  m.delta1 = {0.809};
  m.delta0 = {0.22};
  m.deltaCP = {0.4};
  m.sigma1_sq = 0.49;
  m.sigma0_sq = 0.81;
  m.sigmaCP_sq = 0.25;
  return m;
}

ModelParams fpa_truth() {
  ModelParams m = spa_truth();
  m.delta1 = {0.736};
  m.deltaCP = {0.481};
  m.sigmaCP_sq = 1.0;
  return m;
}

std::vector<ExperimentConfig> all_presets() {
  std::vector<ExperimentConfig> out;
  for (const auto& n : preset_names()) out.push_back(load_preset(n));
  return out;
}

}  // namespace

TEST_CASE("context encoding round-trips") {
  for (std::size_t P = 1; P <= 6; ++P)
    for (std::size_t p = 0; p < P; ++p) REQUIRE(decode_context(encode_context(p, P)) == p);
  REQUIRE_THROWS_AS(encode_context(3, 3), std::out_of_range);
  REQUIRE_THROWS_AS(decode_context({0.0, 0.0}), std::invalid_argument);
  REQUIRE_THROWS_AS(decode_context({1.0, 1.0}), std::invalid_argument);
  REQUIRE_THROWS_AS(decode_context({0.5, 0.5}), std::invalid_argument);
}

TEST_CASE("true CATE is the log-normal mean difference and ignores rho") {
  ModelParams m = spa_truth();
  const double expected = std::exp(0.809 + 0.245) - std::exp(0.22 + 0.405);
  REQUIRE(true_cate(m, 0) == Catch::Approx(expected).epsilon(1e-15));
  REQUIRE(true_cate(m, 0) == Catch::Approx(1.0).margin(1e-3));
  const double base = true_cate(m, 0);
  for (double rho : {-0.9, -0.3, 0.5, 0.95}) {
    m.rho = rho;
    REQUIRE(true_cate(m, 0) == base);
  }
  REQUIRE(true_cate(fpa_truth(), 0) == Catch::Approx(0.8).margin(2e-3));
}

TEST_CASE("realized payoff matches the closed-form expected payoff by Monte Carlo") {
  RngHandle rng(21);
  for (AuctionFormat format : {AuctionFormat::spa, AuctionFormat::fpa}) {
    const ModelParams m = format == AuctionFormat::spa ? spa_truth() : fpa_truth();
    const double ey0 = std::exp(m.delta0[0] + 0.5 * m.sigma0_sq);
    for (double bid : {0.3, 0.6, 1.0, 1.5, 3.0}) {
      const int n = 400'000;
      double s = 0.0, ss = 0.0;
      for (int i = 0; i < n; ++i) {
        const auto res = run_auction(format, bid, 0, draw_unit(m, 0, rng));
        s += res.payoff;
        ss += res.payoff * res.payoff;
      }
      const double mean = s / n;
      const double se = std::sqrt((ss / n - mean * mean) / n);
      INFO(to_string(format) << " bid " << bid);
      REQUIRE(std::fabs(mean - ey0 - expected_payoff(format, bid, 0, m)) < 3.0 * se);
    }
  }
}

TEST_CASE("auction feedback follows the format's disclosure rules") {
  const PotentialDraw d{2.0, 1.5, 0.8};
  const auto spa_win = run_auction(AuctionFormat::spa, 1.0, 0, d);
  REQUIRE(spa_win.observation.win);
  REQUIRE(spa_win.observation.bcp_kind == CompetingBidKind::observed);
  REQUIRE(spa_win.observation.bcp_value == 0.8);
  REQUIRE(spa_win.payoff == Catch::Approx(1.2));
  const auto fpa_win = run_auction(AuctionFormat::fpa, 1.0, 0, d);
  REQUIRE(fpa_win.observation.bcp_kind == CompetingBidKind::upper_bound);
  REQUIRE(fpa_win.observation.bcp_value == 1.0);
  REQUIRE(fpa_win.payoff == Catch::Approx(1.0));
  const auto loss = run_auction(AuctionFormat::spa, 0.5, 0, d);
  REQUIRE_FALSE(loss.observation.win);
  REQUIRE(loss.observation.outcome == 1.5);
  REQUIRE(loss.observation.bcp_kind == CompetingBidKind::lower_bound);
  REQUIRE(loss.observation.bcp_value == 0.5);
  REQUIRE(loss.payoff == 1.5);
  const auto tie = run_auction(AuctionFormat::spa, 0.8, 0, d);
  REQUIRE(tie.observation.win);
  REQUIRE(run_auction(AuctionFormat::fpa, 0.0, 0, d).observation.win == false);
  REQUIRE_THROWS_AS(run_auction(AuctionFormat::spa, -1.0, 0, d), std::invalid_argument);
}

TEST_CASE("competing bid is uncorrelated with potential outcomes within a context") {
  RngHandle rng(22);
  ModelParams m = spa_truth();
  m.rho = 0.6;
  const int n = 200'000;
  std::vector<double> c(n), y1(n), y0(n);
  for (int i = 0; i < n; ++i) {
    const auto d = draw_unit(m, 0, rng);
    c[i] = std::log(d.b_cp);
    y1[i] = std::log(d.y1);
    y0[i] = std::log(d.y0);
  }
  auto corr = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double ma = 0, mb = 0;
    for (int i = 0; i < n; ++i) ma += a[i], mb += b[i];
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (int i = 0; i < n; ++i) {
      sab += (a[i] - ma) * (b[i] - mb);
      saa += (a[i] - ma) * (a[i] - ma);
      sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
  };
  const double se = 1.0 / std::sqrt(static_cast<double>(n));
  REQUIRE(std::fabs(corr(c, y1)) < 3.0 * se);
  REQUIRE(std::fabs(corr(c, y0)) < 3.0 * se);
  REQUIRE(corr(y1, y0) == Catch::Approx(0.6).margin(3.0 * (1 - 0.36) * se));
}

TEST_CASE("second-price expected payoff peaks at the CATE") {
  for (const auto& cfg : all_presets()) {
    if (cfg.epoch.format != AuctionFormat::spa) continue;
    const auto& m = cfg.epoch.truth;
    for (std::size_t p = 0; p < m.contexts(); ++p) {
      const double cate = true_cate(m, p);
      double best_b = 0.0, best_v = -1e300;
      for (int i = 1; i <= 60000; ++i) {
        const double b = 6.0 * i / 60000.0;
        const double v = expected_payoff(AuctionFormat::spa, b, p, m);
        if (v > best_v) best_v = v, best_b = b;
      }
      REQUIRE(best_b == Catch::Approx(cate).margin(1e-4));
      REQUIRE(optimal_bid(AuctionFormat::spa, p, m) == std::max(0.0, cate));
    }
  }
  ModelParams neg = spa_truth();
  neg.delta1 = {-2.0};
  REQUIRE(optimal_bid(AuctionFormat::spa, 0, neg) == 0.0);
}

TEST_CASE("first-price chi is strictly increasing and the oracle solves chi(b*) = CATE") {
  for (const auto& cfg : all_presets()) {
    if (cfg.epoch.format != AuctionFormat::fpa) continue;
    const auto& m = cfg.epoch.truth;
    for (std::size_t p = 0; p < m.contexts(); ++p) {
      const double mu = m.deltaCP[p], s = std::sqrt(m.sigmaCP_sq);
      double prev = -1e300;
      for (int i = 1; i <= 1000; ++i) {
        const double v = chi(5.0 * i / 1000.0, mu, s);
        REQUIRE(v > prev);
        prev = v;
      }
      const double b = optimal_bid(AuctionFormat::fpa, p, m);
      REQUIRE(std::fabs(chi(b, mu, s) - true_cate(m, p)) < 1e-6);
      double best_b = 0.0, best_v = -1e300;
      for (int i = 1; i <= 40000; ++i) {
        const double x = 3.0 * i / 40000.0;
        const double v = expected_payoff(AuctionFormat::fpa, x, p, m);
        if (v > best_v) best_v = v, best_b = x;
      }
      REQUIRE(best_b == Catch::Approx(b).margin(1e-4));
    }
  }
  REQUIRE(optimal_bid(AuctionFormat::fpa, 0, fpa_truth()) == Catch::Approx(0.5).margin(2e-3));
}

TEST_CASE("the contextual presets place b* at the values the experiments are built around") {
  const auto spa = load_preset("spa_ctxt");
  const std::vector<double> spa_b = {1.00, 1.50, 2.00, 2.50, 3.00};
  for (std::size_t p = 0; p < 5; ++p)
    REQUIRE(optimal_bid(AuctionFormat::spa, p, spa.epoch.truth) == Catch::Approx(spa_b[p]).margin(0.025));
  const auto fpa = load_preset("fpa_ctxt");
  const std::vector<double> fpa_b = {0.50, 0.75, 1.00, 1.25, 1.50};
  for (std::size_t p = 0; p < 5; ++p)
    REQUIRE(optimal_bid(AuctionFormat::fpa, p, fpa.epoch.truth) == Catch::Approx(fpa_b[p]).margin(0.025));
}

TEST_CASE("oracle card picks the best grid arm") {
  const auto cfg = load_preset("spa_nc");
  const auto card = build_oracle(AuctionFormat::spa, cfg.epoch.truth, cfg.epoch.grid);
  REQUIRE(card.contexts.size() == 1);
  REQUIRE(cfg.epoch.grid.arms[0][card.contexts[0].best_arm] == 1.0);
  for (double v : card.contexts[0].arm_payoffs) REQUIRE(v <= card.contexts[0].optimal_payoff);
  const auto f = load_preset("fpa_nc");
  const auto fc = build_oracle(AuctionFormat::fpa, f.epoch.truth, f.epoch.grid);
  REQUIRE(f.epoch.grid.arms[0][fc.contexts[0].best_arm] == 0.5);
}

TEST_CASE("observation validation rejects inconsistent feedback") {
  AuctionObservation o;
  o.bid = 1.0;
  o.win = true;
  o.outcome = 2.0;
  o.bcp_kind = CompetingBidKind::observed;
  o.bcp_value = 0.5;
  REQUIRE_NOTHROW(o.validate(AuctionFormat::spa));
  REQUIRE_THROWS_AS(o.validate(AuctionFormat::fpa), ConfigError);
  o.bcp_value = 1.5;
  REQUIRE_THROWS_AS(o.validate(AuctionFormat::spa), ConfigError);
  o.win = false;
  o.bcp_kind = CompetingBidKind::lower_bound;
  o.bcp_value = 1.0;
  REQUIRE_NOTHROW(o.validate(AuctionFormat::fpa));
  o.outcome = -1.0;
  REQUIRE_THROWS_AS(o.validate(AuctionFormat::spa), ConfigError);
}
