#include <catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <vector>

#include "bitslab/config.hpp"
#include "bitslab/metrics.hpp"
#include "bitslab/policy.hpp"

using namespace bitslab;

namespace {

EpochConfig preset_epoch(const std::string& name, std::size_t arms = 3) {
  ExperimentConfig cfg = load_preset(name);
  cfg.select_grid(arms);
  return cfg.epoch;
}

}  // namespace

TEST_CASE("model payoff at the truth equals the true payoff and has the right limits") {
  const EpochConfig spa = preset_epoch("spa_nc");
  const auto& th = spa.truth;
  for (double b : {0.2, 0.6, 1.0, 1.5, 4.0})
    REQUIRE(expected_payoff_model(AuctionFormat::spa, b, 0, th) == expected_payoff(AuctionFormat::spa, b, 0, th));
  const double limit = true_cate(th, 0) - std::exp(th.deltaCP[0] + 0.5 * th.sigmaCP_sq);
  REQUIRE(expected_payoff_model(AuctionFormat::spa, 1e9, 0, th) == Catch::Approx(limit).epsilon(1e-9));
  const EpochConfig fpa = preset_epoch("fpa_nc");
  for (double b : {0.8, 1.0, 2.0}) REQUIRE(expected_payoff_model(AuctionFormat::fpa, b, 0, fpa.truth) <= 0.0);
}

TEST_CASE("posterior draws at the truth put all mass on the optimal arm") {
  const EpochConfig spa = preset_epoch("spa_nc");
  const std::vector<ModelParams> draws(10, spa.truth);
  const auto psi = optimality_probabilities(draws, spa.grid, AuctionFormat::spa);
  REQUIRE(psi.psi[0] == std::vector<double>{0.0, 1.0, 0.0});
  const EpochConfig fpa = preset_epoch("fpa_nc");
  const auto fpsi = optimality_probabilities(std::vector<ModelParams>(3, fpa.truth), fpa.grid, AuctionFormat::fpa);
  REQUIRE(fpsi.psi[0][1] == 1.0);
  REQUIRE_THROWS_AS(optimality_probabilities(std::vector<ModelParams>{}, spa.grid, AuctionFormat::spa), std::invalid_argument);
}

TEST_CASE("symmetric draws split the optimality mass evenly") {
  const EpochConfig spa = preset_epoch("spa_nc");
  const BidGrid grid{{{0.8, 1.2}}};
  const double ey0 = std::exp(spa.truth.delta0[0] + 0.5 * spa.truth.sigma0_sq);
  RngHandle rng(51);
  const int n = 4000;
  std::vector<ModelParams> draws;
  for (int i = 0; i < n; ++i) {
    ModelParams t = spa.truth;
    const double cate = rng.uniform() < 0.5 ? 0.8 : 1.2;
    t.delta1 = {std::log(cate + ey0) - 0.5 * t.sigma1_sq};
    draws.push_back(t);
  }
  const auto psi = optimality_probabilities(draws, grid, AuctionFormat::spa);
  REQUIRE(std::fabs(psi.psi[0][0] - 0.5) < 3.0 * std::sqrt(0.25 / n));
  REQUIRE(psi.psi[0][0] + psi.psi[0][1] == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("optimality probabilities are invariant to rescaling every payoff") {
  const EpochConfig cfg = preset_epoch("spa_ctxt", 5);
  RngHandle rng(52);
  std::vector<ModelParams> draws;
  for (int i = 0; i < 200; ++i) {
    ModelParams t = cfg.truth;
    for (auto* v : {&t.delta1, &t.delta0, &t.deltaCP})
      for (double& d : *v) d += draw_normal(0.0, 0.04, rng);
    draws.push_back(t);
  }
  for (AuctionFormat format : {AuctionFormat::spa, AuctionFormat::fpa}) {
    const auto base = optimality_probabilities(draws, cfg.grid, format);
    for (double c : {0.01, 3.0, 250.0}) {
      std::vector<ModelParams> scaled = draws;
      for (auto& t : scaled)
        for (auto* v : {&t.delta1, &t.delta0, &t.deltaCP})
          for (double& d : *v) d += std::log(c);
      BidGrid g = cfg.grid;
      for (auto& row : g.arms)
        for (double& b : row) b *= c;
      const auto s = optimality_probabilities(scaled, g, format);
      for (std::size_t p = 0; p < 5; ++p)
        for (std::size_t r = 0; r < 5; ++r) REQUIRE(s.psi[p][r] == Catch::Approx(base.psi[p][r]).margin(1e-12));
    }
  }
}

TEST_CASE("allocation follows each context's own row") {
  RngHandle rng(53);
  OptimalityProfile prof{{{1.0 / 3, 1.0 / 3, 1.0 / 3}, {0.0, 1.0, 0.0}}};
  const std::size_t n = 100000;
  std::vector<std::size_t> ctx(n);
  for (std::size_t i = 0; i < n; ++i) ctx[i] = i % 2;
  const auto arms = allocate_bids(prof, ctx, rng);
  std::vector<double> counts(3, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (ctx[i] == 1) REQUIRE(arms[i] == 1);
    else counts[arms[i]] += 1.0;
  }
  const double m = n / 2.0;
  for (double c : counts) REQUIRE(std::fabs(c - m / 3) < 3.0 * std::sqrt(m * (1.0 / 3) * (2.0 / 3)));
  REQUIRE(draw_categorical({0.0, 0.0, 1.0}, rng) == 2);
}

TEST_CASE("second-price CATE estimate is the psi-weighted bid") {
  BidGrid g{{{0.6, 1.0, 1.5}}};
  REQUIRE(estimate_cate_spa(OptimalityProfile{{{0.0, 1.0, 0.0}}}, g)[0] == 1.0);
  REQUIRE(estimate_cate_spa(OptimalityProfile{{{0.5, 0.0, 0.5}}}, g)[0] == Catch::Approx(1.05).epsilon(1e-15));
  for (std::size_t r = 0; r < 3; ++r) {
    OptimalityProfile one{{{0.0, 0.0, 0.0}}};
    one.psi[0][r] = 1.0;
    REQUIRE(estimate_cate_spa(one, g)[0] == g.arms[0][r]);
  }
}

TEST_CASE("first-price bid adjustment reproduces the CATE at the optimal bid") {
  const EpochConfig fpa = preset_epoch("fpa_nc");
  const std::vector<ModelParams> truth(5, fpa.truth);
  const double mu = 0.481;
  const double z = std::log(0.5) - mu;
  const double closed_form = 0.5 + 0.5 * std_normal_cdf(z) / std_normal_pdf(z);
  REQUIRE(chi_hat(0.5, 0, truth) == Catch::Approx(closed_form).epsilon(1e-14));
  REQUIRE(std::fabs(chi_hat(0.5, 0, truth) - 0.8) < 1e-3);
  for (double b : {1e-3, 1e-6, 1e-9, 1e-30}) {
    const double adj = chi_hat(b, 0, truth) - b;
    REQUIRE(adj > 0.0);
    REQUIRE(adj < b / std::fabs(std::log(b) - mu));
  }
  REQUIRE(estimate_cate_fpa(OptimalityProfile{{{0.0, 1.0, 0.0}}}, fpa.grid, truth)[0] == Catch::Approx(0.8).margin(1e-3));
  const auto uni = estimate_cate_fpa(OptimalityProfile::uniform(fpa.grid), fpa.grid, truth)[0];
  double mean = 0.0;
  for (double b : fpa.grid.arms[0]) mean += chi_hat(b, 0, truth) / 3.0;
  REQUIRE(uni == Catch::Approx(mean).epsilon(1e-14));
  REQUIRE_THROWS_AS(chi_hat(0.0, 0, truth), std::invalid_argument);
}

TEST_CASE("stopping values for each rule") {
  const BidGrid g1{{{0.6, 1.0}}};
  const std::vector<ModelParams> none;
  StoppingSettings s;
  s.mode = StoppingMode::noncontextual;
  const auto st = stopping_value(OptimalityProfile{{{0.95, 0.05}}}, s, {1.0}, g1, none, AuctionFormat::spa, 3, 100);
  REQUIRE(st.value == 0.95);
  REQUIRE(posterior_odds(st.value) == Catch::Approx(19.0));
  REQUIRE_FALSE(st.stop);
  const auto st2 = stopping_value(OptimalityProfile{{{0.96, 0.04}}}, s, {1.0}, g1, none, AuctionFormat::spa, 3, 100);
  REQUIRE(st2.stop);

  s.mode = StoppingMode::contextual_min;
  const BidGrid g2{{{0.6, 1.0}, {0.6, 1.0}}};
  const auto sc = stopping_value(OptimalityProfile{{{0.01, 0.99}, {0.8, 0.2}}}, s, {0.5, 0.5}, g2, none,
                                 AuctionFormat::spa, 3, 100);
  REQUIRE(sc.value == 0.8);

  s.mode = StoppingMode::ate_grid;
  const BidGrid g3{{{0.0, 1.0}, {0.0, 1.0}}};
  const auto sa = stopping_value(OptimalityProfile{{{0.6, 0.4}, {0.6, 0.4}}}, s, {0.5, 0.5}, g3, none,
                                 AuctionFormat::spa, 3, 100);
  REQUIRE(sa.value == Catch::Approx(0.48).epsilon(1e-12));

  s.mode = StoppingMode::rounds;
  REQUIRE(stopping_value(OptimalityProfile{{{0.5, 0.5}}}, s, {1.0}, g1, none, AuctionFormat::spa, 100, 100).stop);
  REQUIRE_FALSE(stopping_value(OptimalityProfile{{{0.5, 0.5}}}, s, {1.0}, g1, none, AuctionFormat::spa, 99, 100).stop);
}

TEST_CASE("ATE-grid mass agrees with brute-force enumeration and honours the cap") {
  RngHandle rng(54);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t P = 3;
    OptimalityProfile prof;
    std::vector<std::vector<double>> values(P);
    for (std::size_t p = 0; p < P; ++p) {
      std::vector<double> row(3);
      double s = 0.0;
      for (double& v : row) s += (v = rng.uniform());
      for (double& v : row) v /= s;
      prof.psi.push_back(row);
      values[p] = {0.0, 1.0, 2.0};
    }
    const std::vector<double> w(P, 1.0 / 3.0);
    std::map<long, double> mass;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        for (int c = 0; c < 3; ++c) mass[a + b + c] += prof.psi[0][a] * prof.psi[1][b] * prof.psi[2][c];
    double best = 0.0;
    for (const auto& [k, v] : mass) best = std::max(best, v);
    REQUIRE(ate_grid_mass(prof, values, w, 1e-9, 1000) == Catch::Approx(best).epsilon(1e-12));
  }
  OptimalityProfile big;
  std::vector<std::vector<double>> vals;
  for (int p = 0; p < 5; ++p) {
    big.psi.emplace_back(10, 0.1);
    vals.emplace_back(10, 1.0);
  }
  REQUIRE_THROWS_AS(ate_grid_mass(big, vals, std::vector<double>(5, 0.2), 1e-9, 1000), NumericalError);
}

TEST_CASE("a zero-round epoch returns only the uniform starting profile") {
  EpochConfig cfg = preset_epoch("spa_nc");
  cfg.rounds = 0;
  const auto r = run_bits(cfg, 5);
  REQUIRE(r.rounds.size() == 1);
  REQUIRE(r.rounds[0].contexts[0].psi == std::vector<double>(3, 1.0 / 3.0));
  REQUIRE(r.ate_estimate == Catch::Approx((0.6 + 1.0 + 1.5) / 3.0));
}

TEST_CASE("noncontextual stopping ends the epoch once the threshold is crossed") {
  EpochConfig cfg = preset_epoch("spa_nc");
  cfg.rounds = 60;
  cfg.stopping.mode = StoppingMode::noncontextual;
  cfg.stopping.threshold = 0.9;
  const auto r = run_bits(cfg, 3);
  REQUIRE(r.stopped_early);
  REQUIRE(r.rounds.back().stop_value > 0.9);
  for (std::size_t t = 1; t + 1 < r.rounds.size(); ++t) REQUIRE(r.rounds[t].stop_value <= 0.9);
}

TEST_CASE("first-price epochs keep the bid adjustment increasing over the grid") {
  EpochConfig cfg = preset_epoch("fpa_ctxt", 5);
  cfg.rounds = 4;
  const auto r = run_bits(cfg, 8);
  REQUIRE(r.rounds.size() == 5);
  EpochStreams streams = EpochStreams::from_seed(8);
  std::vector<AuctionObservation> data;
  for (int t = 0; t < 2; ++t) {
    const auto batch = draw_batch(cfg, streams.env);
    for (const auto& imp : batch) {
      const auto& arms = cfg.grid.arms[imp.context];
      data.push_back(run_auction(cfg.format, arms[streams.policy.below(arms.size())], imp.context, imp.draw).observation);
    }
  }
  const auto post = run_gibbs(data, cfg.effective_priors(), ModelParams::initial(5), cfg.gibbs, cfg.format, streams.policy);
  for (std::size_t p = 0; p < 5; ++p) {
    double prev = 0.0;
    for (double b : cfg.grid.arms[p]) {
      const double v = chi_hat(b, p, post.draws);
      REQUIRE(v > prev);
      prev = v;
    }
  }
  for (const auto& rec : r.rounds)
    for (const auto& c : rec.contexts) {
      double s = 0.0;
      for (double v : c.psi) s += v;
      REQUIRE(s == Catch::Approx(1.0).margin(1e-9));
    }
}

TEST_CASE("small second-price instance: mass on the optimal bid trends upward") {
  EpochConfig cfg = preset_epoch("spa_nc");
  cfg.rounds = 200;
  cfg.gibbs = GibbsSettings{400, 200, 4};
  std::vector<EpochResult> epochs;
  for (std::uint64_t seed = 1; seed <= 6; ++seed) epochs.push_back(run_bits(cfg, seed, seed - 1));
  const auto oracle = build_oracle(cfg.format, cfg.truth, cfg.grid);
  const auto agg = aggregate_rounds(epochs, oracle);
  std::vector<double> t, med;
  for (const auto& a : agg) {
    t.push_back(a.round);
    med.push_back(a.psi_opt_median);
  }
  REQUIRE(spearman(t, med) > 0.9);
  for (const auto& e : epochs)
    for (const auto& rec : e.rounds) {
      double s = 0.0;
      for (double v : rec.contexts[0].psi) s += v;
      REQUIRE(s == Catch::Approx(1.0).margin(1e-9));
    }
  REQUIRE(agg.back().psi_opt_median >= 0.9);
}
