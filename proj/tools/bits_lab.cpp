#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bitslab/bitslab.hpp"

namespace {

using namespace bitslab;

struct Source {
  std::string preset;
  std::string config;
  std::size_t arms = 0;

  void attach(CLI::App* app) {
    app->add_option("--preset", preset, "Named preset: spa_nc, spa_ctxt, fpa_nc, fpa_ctxt");
    app->add_option("--config", config, "Experiment config file (INI)");
    app->add_option("--arms", arms, "Grid size to use (3, 5 or 10 for the non-contextual presets)");
  }

  ExperimentConfig load() const {
    if (preset.empty() == config.empty()) throw ConfigError("give exactly one of --preset or --config");
    ExperimentConfig cfg = preset.empty() ? load_config(config) : load_preset(preset);
    if (arms != 0) cfg.select_grid(arms);
    return cfg;
  }
};

void print_oracle(const ExperimentConfig& cfg) {
  const auto& e = cfg.epoch;
  const OracleCard card = build_oracle(e.format, e.truth, e.grid);
  std::printf("preset %s, format %s, %zu arms\n", cfg.name.c_str(), std::string(to_string(e.format)).c_str(), cfg.arms);
  for (std::size_t p = 0; p < card.contexts.size(); ++p) {
    const auto& c = card.contexts[p];
    std::printf("context %zu: CATE %.6f  b* %.6f  payoff(b*) %.6f  best grid bid %.6g\n", p + 1, c.cate, c.optimal_bid,
                c.optimal_payoff, e.grid.arms[p][c.best_arm]);
    if (e.format == AuctionFormat::fpa && c.optimal_bid > 0.0) {
      const double gap = chi(c.optimal_bid, e.truth.deltaCP[p], std::sqrt(e.truth.sigmaCP_sq)) - c.cate;
      std::printf("  chi(b*) - CATE = %.3e\n", gap);
    }
    for (std::size_t r = 0; r < c.arm_payoffs.size(); ++r)
      std::printf("  bid %-8.6g expected payoff %.6f%s\n", e.grid.arms[p][r], c.arm_payoffs[r],
                  r == c.best_arm ? "  <- best" : "");
  }
  std::printf("ATE %.6f\n", true_ate(e.truth, e.context_spec.probs));
}

struct Moments {
  double mean = 0.0, sd = 0.0;
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  m.mean = sample_mean(v);
  m.sd = v.size() > 1 ? sample_sd(v) : 0.0;
  return m;
}

// Posterior summaries against the truth on randomized-bid data, plus the
// complete-data conjugacy check (sampler versus closed-form posterior).
int gibbs_check(const ExperimentConfig& cfg, std::size_t n, std::uint64_t seed) {
  const auto& e = cfg.epoch;
  const auto data = simulate_history(e, n, seed);
  RngHandle rng(seed ^ 0x5bd1e995ULL);
  const PriorParams priors = e.effective_priors();
  const PosteriorDraws post = e.rho_mode == RhoMode::independent
                                  ? run_gibbs(data, priors, ModelParams::initial(e.contexts()), e.gibbs, e.format, rng)
                                  : run_gibbs_correlated(data, priors, ModelParams::initial(e.contexts()), e.gibbs,
                                                         e.format, rng);
  std::printf("gibbs-check: %zu observations, %zu retained draws, truncation-bound violations %zu\n", data.size(),
              post.size(), post.bound_violations);
  std::printf("%-14s %10s %10s %10s %8s\n", "parameter", "truth", "post.mean", "post.sd", "z");
  int flagged = 0;
  auto row = [&](const std::string& name, double truth, const std::vector<double>& draws) {
    const Moments m = moments(draws);
    const double z = m.sd > 0.0 ? (m.mean - truth) / m.sd : 0.0;
    std::printf("%-14s %10.5f %10.5f %10.5f %8.2f\n", name.c_str(), truth, m.mean, m.sd, z);
    if (std::fabs(z) > 4.0) ++flagged;
  };
  for (std::size_t p = 0; p < e.contexts(); ++p) {
    std::vector<double> d1, d0, dc;
    for (const auto& t : post.draws) {
      d1.push_back(t.delta1[p]);
      d0.push_back(t.delta0[p]);
      dc.push_back(t.deltaCP[p]);
    }
    const std::string s = "[" + std::to_string(p + 1) + "]";
    row("delta1" + s, e.truth.delta1[p], d1);
    row("delta0" + s, e.truth.delta0[p], d0);
    row("deltaCP" + s, e.truth.deltaCP[p], dc);
  }
  std::vector<double> s1, s0, sc;
  for (const auto& t : post.draws) {
    s1.push_back(t.sigma1_sq);
    s0.push_back(t.sigma0_sq);
    sc.push_back(t.sigmaCP_sq);
  }
  row("sigma1_sq", e.truth.sigma1_sq, s1);
  row("sigma0_sq", e.truth.sigma0_sq, s0);
  if (e.format == AuctionFormat::spa) row("sigmaCP_sq", e.truth.sigmaCP_sq, sc);

  // Conjugacy on complete data: all potential outcomes observed.
  CompletedDataset complete;
  complete.contexts = e.contexts();
  EpochStreams streams = EpochStreams::from_seed(seed + 1);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t p = i % e.contexts();
    const PotentialDraw u = draw_unit(e.truth, p, streams.env);
    complete.rows.push_back({std::log(u.y1), std::log(u.y0), std::log(u.b_cp), 0.0, true, p});
  }
  const CompletedStats stats = summarize(complete);
  const EquationPosterior closed = equation_posterior(stats.y1, priors.y1);
  std::vector<double> draws_delta, draws_sigma;
  for (int q = 0; q < 2000; ++q) {
    const ModelParams t = draw_full_conditionals(stats, priors, e.format, rng);
    draws_delta.push_back(t.delta1[0]);
    draws_sigma.push_back(t.sigma1_sq);
  }
  const double expected_sigma = closed.rate / (closed.shape - 1.0);
  const double expected_sd = std::sqrt(expected_sigma * closed.cov_scale(0, 0));
  const Moments md = moments(draws_delta), ms = moments(draws_sigma);
  const double z_delta = (md.mean - closed.mean(0)) / (md.sd / std::sqrt(2000.0));
  const double z_sigma = (ms.mean - expected_sigma) / (ms.sd / std::sqrt(2000.0));
  std::printf("conjugacy delta1[1]: closed-form mean %.6f, sampled %.6f (z %.2f); closed-form sd ~%.6f, sampled %.6f\n",
              closed.mean(0), md.mean, z_delta, expected_sd, md.sd);
  std::printf("conjugacy sigma1_sq: closed-form mean %.6f, sampled %.6f (z %.2f)\n", expected_sigma, ms.mean, z_sigma);
  if (std::fabs(z_delta) > 4.0 || std::fabs(z_sigma) > 4.0) ++flagged;
  if (post.bound_violations != 0) ++flagged;
  std::printf("%s\n", flagged == 0 ? "gibbs-check: ok" : "gibbs-check: some summaries are more than 4 SD off");
  return 0;
}

int fit_priors_command(const std::string& history_path, const std::string& format_name, std::size_t contexts,
                       const std::string& out_path) {
  const AuctionFormat format = parse_format(format_name);
  const auto history = load_history(history_path, format, contexts);
  const OutcomeFits outcomes = fit_outcome_ols(history, contexts);
  const MleResult cp = format == AuctionFormat::spa ? fit_tobit_mle(history, contexts) : fit_probit_mle(history, contexts);
  const EquationEstimate cp_est = competing_bid_estimate(cp, format);
  const PriorParams priors = moment_match_priors(outcomes, cp_est);
  std::fprintf(stderr, "%zu rows; %s converged in %d iterations (|grad| %.2e)\n", history.size(),
               format == AuctionFormat::spa ? "Tobit" : "Probit", cp.iterations, cp.gradient.cwiseAbs().maxCoeff());
  for (std::size_t p = 0; p < contexts; ++p) {
    const auto i = static_cast<Eigen::Index>(p);
    std::fprintf(stderr, "context %zu: delta1 %.5f  delta0 %.5f  deltaCP %.5f (se %.5f)\n", p + 1, outcomes.y1.delta(i),
                 outcomes.y0.delta(i), cp_est.delta(i), std::sqrt(cp.covariance(i, i)));
  }
  std::fprintf(stderr, "sigma1_sq %.5f  sigma0_sq %.5f  sigmaCP_sq %.5f\n", outcomes.y1.sigma2, outcomes.y0.sigma2,
               cp_est.sigma2);
  if (out_path.empty() || out_path == "-") {
    write_priors(std::cout, priors);
  } else {
    auto out = open_output(out_path);
    write_priors(out, priors);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bits-lab: Bidding Thompson Sampling auction-experiment simulator"};
  app.require_subcommand(1);

  Source run_src;
  int epochs = 0, workers = 0, rounds = -1;
  bool full = false, warm = false;
  std::optional<std::uint64_t> seed;
  std::string policy, out_dir, priors_path, rho_mode, stop_mode;
  std::optional<double> threshold;
  auto* run = app.add_subcommand("run", "Run an experiment and write traces, metrics, figures and a manifest");
  run_src.attach(run);
  run->add_option("--epochs", epochs, "Number of epochs (default from the config)");
  run->add_flag("--full", full, "Use the paper-scale epoch count");
  run->add_option("--seed", seed, "Base seed; epoch e uses seed + e");
  run->add_option("--policy", policy, "bits, ab, etc, ts or all");
  run->add_option("--out", out_dir, "Output directory");
  run->add_option("--workers", workers, "Worker threads (overrides BITSLAB_WORKERS)");
  run->add_option("--rounds", rounds, "Rounds per epoch");
  run->add_option("--priors", priors_path, "Prior file written by fit-priors");
  run->add_flag("--warm-start", warm, "Start each round's chain at the previous round's last draw");
  run->add_option("--rho-mode", rho_mode, "independent or correlated");
  run->add_option("--stopping", stop_mode, "rounds, noncontextual, contextual_min or ate_grid");
  run->add_option("--threshold", threshold, "Stopping threshold on the criterion");

  std::string history_path, format_name = "spa", priors_out;
  std::size_t contexts = 1;
  auto* fit = app.add_subcommand("fit-priors", "Fit prior hyperparameters from a historical auction log");
  fit->add_option("--history", history_path, "History CSV (context,bid,win,outcome,bcp_kind,bcp_value)")->required();
  fit->add_option("--format", format_name, "spa or fpa");
  fit->add_option("--contexts", contexts, "Number of contexts");
  fit->add_option("--out", priors_out, "Output prior file (default stdout)");

  Source oracle_src;
  auto* oracle = app.add_subcommand("oracle", "Print the true CATEs, optimal bids and arm payoffs");
  oracle_src.attach(oracle);

  Source check_src;
  std::size_t check_n = 5000;
  std::uint64_t check_seed = 1;
  auto* check = app.add_subcommand("gibbs-check", "Posterior recovery and conjugacy diagnostics on simulated data");
  check_src.attach(check);
  check->add_option("--n", check_n, "Simulated observations");
  check->add_option("--seed", check_seed, "Seed");

  Source hist_src;
  std::size_t hist_n = 100000;
  std::uint64_t hist_seed = 1;
  std::string hist_out;
  auto* hist = app.add_subcommand("history", "Simulate a randomized-bid history CSV from a preset's true model");
  hist_src.attach(hist);
  hist->add_option("--n", hist_n, "Rows");
  hist->add_option("--seed", hist_seed, "Seed");
  hist->add_option("--out", hist_out, "Output CSV (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*run) {
      ExperimentConfig cfg = run_src.load();
      if (full) cfg.epochs = cfg.full_epochs;
      if (epochs > 0) cfg.epochs = epochs;
      if (seed) cfg.seed = *seed;
      if (!policy.empty())
        cfg.policies = policy == "all" ? std::vector<PolicyKind>{PolicyKind::bits, PolicyKind::ab, PolicyKind::etc,
                                                                 PolicyKind::vanilla_ts}
                                       : std::vector<PolicyKind>{parse_policy(policy)};
      if (rounds >= 0) cfg.epoch.rounds = rounds;
      if (warm) cfg.epoch.warm_start = true;
      if (!rho_mode.empty()) {
        if (rho_mode == "independent") cfg.epoch.rho_mode = RhoMode::independent;
        else if (rho_mode == "correlated") cfg.epoch.rho_mode = RhoMode::correlated;
        else throw ConfigError("--rho-mode must be 'independent' or 'correlated'");
      }
      if (!stop_mode.empty()) cfg.epoch.stopping.mode = parse_stopping_mode(stop_mode);
      if (threshold) cfg.epoch.stopping.threshold = *threshold;
      if (!priors_path.empty()) cfg.priors_file = priors_path;
      if (!cfg.priors_file.empty()) cfg.epoch.priors = load_priors(cfg.priors_file, cfg.epoch.contexts());
      const int k = resolve_workers(workers, cfg.workers);
      if (out_dir.empty()) out_dir = "out/" + cfg.name + "_" + std::to_string(cfg.arms);
      const ExperimentOutput res = run_experiment(cfg, k);
      write_experiment(res, cfg, out_dir);
      std::printf("%s, %zu arms, %d epochs, true ATE %.6f -> %s\n", cfg.name.c_str(), cfg.arms, cfg.epochs,
                  res.true_ate, out_dir.c_str());
      for (const auto& r : res.runs) {
        const auto& last = r.aggregate.back();
        std::printf("  %-5s MSE %-12.6g avg cum pseudo-regret %.4f  median psi(b*) %.3f\n",
                    std::string(to_string(r.policy)).c_str(), r.mse, last.avg_cum_regret, last.psi_opt_median);
      }
    } else if (*fit) {
      return fit_priors_command(history_path, format_name, contexts, priors_out);
    } else if (*oracle) {
      print_oracle(oracle_src.load());
    } else if (*check) {
      return gibbs_check(check_src.load(), check_n, check_seed);
    } else if (*hist) {
      const ExperimentConfig cfg = hist_src.load();
      const auto rows = simulate_history(cfg.epoch, hist_n, hist_seed);
      if (hist_out.empty() || hist_out == "-") {
        write_history(std::cout, rows);
      } else {
        auto out = open_output(hist_out);
        write_history(out, rows);
      }
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
