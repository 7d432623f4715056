#pragma once

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "bitslab/auction.hpp"
#include "bitslab/baselines.hpp"
#include "bitslab/config.hpp"
#include "bitslab/epoch.hpp"
#include "bitslab/io.hpp"
#include "bitslab/metrics.hpp"
#include "bitslab/policy.hpp"
#include "bitslab/svg.hpp"

namespace bitslab {

/// Worker count: an explicit request wins, then BITSLAB_WORKERS, then the config file, then the hardware.
inline int resolve_workers(int requested, int configured = 0) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("BITSLAB_WORKERS")) {
    const long long v = detail::parse_int(env, "BITSLAB_WORKERS");
    if (v < 1) throw ConfigError("BITSLAB_WORKERS must be >= 1");
    return static_cast<int>(v);
  }
  if (configured > 0) return configured;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Runs `task(i)` for i in [0, n) on `workers` threads pulling from a shared counter.
/// The first exception thrown by any task is rethrown after all threads finish.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& task) {
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto body = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n || failed.load()) return;
      try {
        task(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        failed = true;
      }
    }
  };
  const auto k = static_cast<std::size_t>(std::max(1, workers));
  if (k == 1 || n <= 1) {
    body();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < std::min(k, n); ++t) threads.emplace_back(body);
    for (auto& t : threads) t.join();
  }
  if (error) std::rethrow_exception(error);
}

/// Epoch e uses seed base_seed + e, for every policy.
inline std::vector<EpochResult> run_epochs(PolicyKind policy, const EpochConfig& cfg, int epochs,
                                           std::uint64_t base_seed, int workers) {
  std::vector<EpochResult> out(static_cast<std::size_t>(epochs));
  parallel_for(out.size(), workers, [&](std::size_t e) { out[e] = run_policy(policy, cfg, base_seed + e, e); });
  return out;
}

struct PolicyRun {
  PolicyKind policy = PolicyKind::bits;
  std::vector<EpochResult> epochs;
  std::vector<AggregateRound> aggregate;
  double mse = kNaN;  // NaN when the policy has no ATE readout

  std::vector<double> ate_estimates() const {
    std::vector<double> v;
    for (const auto& e : epochs)
      if (std::isfinite(e.ate_estimate)) v.push_back(e.ate_estimate);
    return v;
  }
};

struct ExperimentOutput {
  OracleCard oracle;
  double true_ate = 0.0;
  std::vector<PolicyRun> runs;

  const PolicyRun* find(PolicyKind k) const {
    for (const auto& r : runs)
      if (r.policy == k) return &r;
    return nullptr;
  }
};

inline ExperimentOutput run_experiment(const ExperimentConfig& cfg, int workers) {
  cfg.validate();
  ExperimentOutput out;
  out.oracle = build_oracle(cfg.epoch.format, cfg.epoch.truth, cfg.epoch.grid);
  out.true_ate = true_ate(cfg.epoch.truth, cfg.epoch.context_spec.probs);
  for (PolicyKind k : cfg.policies) {
    PolicyRun run;
    run.policy = k;
    run.epochs = run_epochs(k, cfg.epoch, cfg.epochs, cfg.seed, workers);
    run.aggregate = aggregate_rounds(run.epochs, out.oracle);
    const auto ates = run.ate_estimates();
    if (ates.size() == run.epochs.size() && !ates.empty()) run.mse = mse_over_epochs(ates, out.true_ate);
    out.runs.push_back(std::move(run));
  }
  return out;
}

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  auto out = open_output(path);
  out << text;
}

inline SvgChart regret_chart(const ExperimentOutput& res, bool cumulative) {
  SvgChart c;
  c.title = cumulative ? "Average cumulative pseudo-regret" : "Average pseudo-regret per round";
  c.x_label = "round";
  c.y_label = cumulative ? "cumulative pseudo-regret" : "pseudo-regret";
  for (const auto& run : res.runs) {
    LineSeries s;
    s.label = std::string(to_string(run.policy));
    for (const auto& a : run.aggregate) {
      if (a.round == 0) continue;
      s.x.push_back(a.round);
      s.y.push_back(cumulative ? a.avg_cum_regret : a.avg_regret);
    }
    c.lines.push_back(std::move(s));
  }
  return c;
}

inline SvgChart psi_chart(const PolicyRun& run, bool min_over_contexts) {
  SvgChart c;
  c.title = min_over_contexts ? "Lowest optimality probability of the optimal bid across contexts"
                              : "Optimality probability of the optimal bid";
  c.x_label = "round";
  c.y_label = "psi";
  BoxSeries b;
  b.label = std::string(to_string(run.policy));
  for (const auto& a : run.aggregate) {
    b.x.push_back(a.round);
    b.q25.push_back(min_over_contexts ? a.min_psi_opt_q25 : a.psi_opt_q25);
    b.median.push_back(min_over_contexts ? a.min_psi_opt_median : a.psi_opt_median);
    b.q75.push_back(min_over_contexts ? a.min_psi_opt_q75 : a.psi_opt_q75);
  }
  c.boxes.push_back(std::move(b));
  return c;
}

inline std::optional<SvgChart> ate_density_chart(const ExperimentOutput& res) {
  SvgChart c;
  c.title = "Density of ATE estimates across epochs";
  c.x_label = "ATE estimate";
  c.y_label = "density";
  for (const auto& run : res.runs) {
    const auto ates = run.ate_estimates();
    if (ates.size() < 2 || !(sample_sd(ates) > 0.0)) continue;
    const double h = silverman_bandwidth(ates);
    const auto [mn, mx] = std::minmax_element(ates.begin(), ates.end());
    LineSeries s;
    s.label = std::string(to_string(run.policy));
    s.x = linspace(*mn - 3 * h, *mx + 3 * h, 200);
    s.y = kde_density(ates, s.x, h);
    c.lines.push_back(std::move(s));
  }
  if (c.lines.empty()) return std::nullopt;
  LineSeries truth;
  truth.label = "true ATE";
  double top = 0.0;
  for (const auto& s : c.lines) top = std::max(top, *std::max_element(s.y.begin(), s.y.end()));
  truth.x = {res.true_ate, res.true_ate};
  truth.y = {0.0, top};
  c.lines.push_back(std::move(truth));
  return c;
}

}  // namespace detail

/// Write traces, aggregate metrics, MSE table, figures and a manifest into `dir`.
inline void write_experiment(const ExperimentOutput& res, const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "figures");
  const std::string canonical = to_ini(cfg);
  detail::write_text(dir / "config.ini", canonical);

  {
    auto metrics = open_output(dir / "metrics.csv");
    bool header = true;
    for (const auto& run : res.runs) {
      write_metrics(metrics, std::string(to_string(run.policy)), run.aggregate, header);
      header = false;
    }
  }
  {
    auto mse = open_output(dir / "mse.csv");
    mse << "policy,arms,epochs,true_ate,mse\n";
    for (const auto& run : res.runs)
      mse << to_string(run.policy) << "," << cfg.arms << "," << run.epochs.size() << "," << fmt_double(res.true_ate)
          << "," << fmt_double(run.mse) << "\n";
  }
  for (const auto& run : res.runs) {
    const std::string tag(to_string(run.policy));
    write_trace(dir / ("trace_" + tag + ".csv"), run.epochs, cfg.epoch.grid);
    write_estimates(dir / ("estimates_" + tag + ".csv"), run.epochs);
  }

  detail::write_text(dir / "figures" / "cum_regret.svg", detail::regret_chart(res, true).render());
  detail::write_text(dir / "figures" / "regret.svg", detail::regret_chart(res, false).render());
  for (const auto& run : res.runs) {
    if (run.policy == PolicyKind::ab) continue;
    const std::string tag(to_string(run.policy));
    detail::write_text(dir / "figures" / ("psi_opt_" + tag + ".svg"), detail::psi_chart(run, false).render());
    if (cfg.epoch.contexts() > 1)
      detail::write_text(dir / "figures" / ("min_psi_opt_" + tag + ".svg"), detail::psi_chart(run, true).render());
  }
  if (auto kde = detail::ate_density_chart(res)) detail::write_text(dir / "figures" / "ate_kde.svg", kde->render());

  nlohmann::ordered_json m;
  m["name"] = cfg.name;
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a(canonical)));
  m["config_hash"] = std::string("fnv1a64:") + hash;
  m["format"] = std::string(to_string(cfg.epoch.format));
  m["arms"] = cfg.arms;
  m["epochs"] = cfg.epochs;
  m["base_seed"] = cfg.seed;
  std::vector<std::uint64_t> seeds;
  for (int e = 0; e < cfg.epochs; ++e) seeds.push_back(cfg.seed + static_cast<std::uint64_t>(e));
  m["epoch_seeds"] = seeds;
  m["true_ate"] = res.true_ate;
  nlohmann::ordered_json pol = nlohmann::ordered_json::array();
  for (const auto& run : res.runs) {
    nlohmann::ordered_json p;
    p["policy"] = std::string(to_string(run.policy));
    p["mse"] = std::isfinite(run.mse) ? nlohmann::ordered_json(run.mse) : nlohmann::ordered_json(nullptr);
    p["final_avg_cum_pseudo_regret"] = run.aggregate.empty() ? 0.0 : run.aggregate.back().avg_cum_regret;
    pol.push_back(p);
  }
  m["policies"] = pol;
  detail::write_text(dir / "manifest.json", m.dump(2) + "\n");
}

}  // namespace bitslab
