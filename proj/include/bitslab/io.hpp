#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "bitslab/config.hpp"
#include "bitslab/epoch.hpp"
#include "bitslab/errors.hpp"
#include "bitslab/metrics.hpp"
#include "bitslab/model.hpp"

namespace bitslab {

/// 17 significant digits: round-trips every double.
inline std::string fmt_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  return out;
}

inline const char* kTraceHeader =
    "epoch,round,context,arm_bid,psi,pulls,realized_payoff_sum,cum_pseudo_regret,cate_estimate,stop_value\n";

/// One row per (epoch, round, context, arm); explore-then-commit adds a row for its off-grid bid.
/// Contexts are written 1-based.
inline void write_trace_rows(std::ostream& out, const EpochResult& r, const BidGrid& grid) {
  for (const auto& rec : r.rounds) {
    for (std::size_t p = 0; p < rec.contexts.size(); ++p) {
      const auto& c = rec.contexts[p];
      const std::string prefix = std::to_string(r.epoch) + "," + std::to_string(rec.round) + "," + std::to_string(p + 1) + ",";
      const std::string suffix = "," + fmt_double(rec.cum_pseudo_regret) + "," + fmt_double(c.cate_estimate) + "," +
                                 fmt_double(rec.stop_value) + "\n";
      for (std::size_t a = 0; a < c.psi.size(); ++a)
        out << prefix << fmt_double(grid.arms[p][a]) << "," << fmt_double(c.psi[a]) << "," << c.pulls[a] << ","
            << fmt_double(c.payoff_sum[a]) << suffix;
      if (c.committed_bid)
        out << prefix << fmt_double(*c.committed_bid) << "," << fmt_double(1.0) << "," << c.committed_pulls << ","
            << fmt_double(c.committed_payoff_sum) << suffix;
    }
  }
}

inline void write_trace(const std::filesystem::path& path, const std::vector<EpochResult>& epochs, const BidGrid& grid) {
  auto out = open_output(path);
  out << kTraceHeader;
  for (const auto& e : epochs) write_trace_rows(out, e, grid);
}

inline void write_metrics(std::ostream& out, const std::string& policy, const std::vector<AggregateRound>& rows,
                          bool header) {
  if (header)
    out << "policy,round,epochs,avg_cum_pseudo_regret,avg_pseudo_regret,psi_opt_q25,psi_opt_median,psi_opt_q75,"
           "min_psi_opt_q25,min_psi_opt_median,min_psi_opt_q75\n";
  for (const auto& a : rows)
    out << policy << "," << a.round << "," << a.epochs << "," << fmt_double(a.avg_cum_regret) << ","
        << fmt_double(a.avg_regret) << "," << fmt_double(a.psi_opt_q25) << "," << fmt_double(a.psi_opt_median) << ","
        << fmt_double(a.psi_opt_q75) << "," << fmt_double(a.min_psi_opt_q25) << ","
        << fmt_double(a.min_psi_opt_median) << "," << fmt_double(a.min_psi_opt_q75) << "\n";
}

inline void write_estimates(const std::filesystem::path& path, const std::vector<EpochResult>& epochs) {
  auto out = open_output(path);
  out << "epoch,seed,ate_estimate";
  const std::size_t P = epochs.empty() ? 0 : epochs.front().cate_estimates.size();
  for (std::size_t p = 1; p <= P; ++p) out << ",cate_" << p;
  out << "\n";
  for (const auto& e : epochs) {
    out << e.epoch << "," << e.seed << "," << fmt_double(e.ate_estimate);
    for (double c : e.cate_estimates) out << "," << fmt_double(c);
    out << "\n";
  }
}

// ---------------------------------------------------------------------------
// Auction histories: context,bid,win,outcome,bcp_kind,bcp_value (context 1-based)

inline const char* kHistoryHeader = "context,bid,win,outcome,bcp_kind,bcp_value";

inline void write_history(std::ostream& out, const std::vector<AuctionObservation>& rows) {
  out << kHistoryHeader << "\n";
  for (const auto& o : rows)
    out << (o.context + 1) << "," << fmt_double(o.bid) << "," << (o.win ? 1 : 0) << "," << fmt_double(o.outcome) << ","
        << to_string(o.bcp_kind) << "," << fmt_double(o.bcp_value) << "\n";
}

inline std::vector<AuctionObservation> read_history(std::istream& in, AuctionFormat format, std::size_t contexts) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("history: empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kHistoryHeader) throw ConfigError("history: unexpected header '" + line + "'");
  std::vector<AuctionObservation> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 6) throw ConfigError("history: line " + std::to_string(lineno) + " must have 6 fields");
    const std::string where = "history line " + std::to_string(lineno);
    AuctionObservation o;
    const long long ctx = detail::parse_int(f[0], where + " context");
    if (ctx < 1 || static_cast<std::size_t>(ctx) > contexts) throw ConfigError(where + ": context out of range");
    o.context = static_cast<std::size_t>(ctx - 1);
    o.bid = detail::parse_double(f[1], where + " bid");
    const long long win = detail::parse_int(f[2], where + " win");
    if (win != 0 && win != 1) throw ConfigError(where + ": win must be 0 or 1");
    o.win = win == 1;
    o.outcome = detail::parse_double(f[3], where + " outcome");
    o.bcp_kind = parse_competing_bid_kind(detail::trim(f[4]));
    o.bcp_value = detail::parse_double(f[5], where + " bcp_value");
    try {
      o.validate(format);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
    rows.push_back(o);
  }
  return rows;
}

inline std::vector<AuctionObservation> load_history(const std::filesystem::path& path, AuctionFormat format,
                                                    std::size_t contexts) {
  std::ifstream in(path);
  if (!in) throw ConfigError("history: cannot open '" + path.string() + "'");
  return read_history(in, format, contexts);
}

inline void write_prior(std::ostream& out, const std::string& name, const NormalGammaPrior& prior) {
  out << "[" << name << "]\n";
  out << "alpha = " << fmt_double(prior.alpha) << "\n";
  out << "beta = " << fmt_double(prior.beta) << "\n";
  out << "mean = ";
  for (Eigen::Index i = 0; i < prior.mean.size(); ++i) out << (i ? ", " : "") << fmt_double(prior.mean(i));
  out << "\nprecision = ";
  for (Eigen::Index i = 0; i < prior.precision.rows(); ++i)
    for (Eigen::Index j = 0; j < prior.precision.cols(); ++j)
      out << (i || j ? ", " : "") << fmt_double(prior.precision(i, j));
  out << "\n\n";
}

/// Priors in the INI layout read back by `parse_priors`.
inline void write_priors(std::ostream& out, const PriorParams& priors) {
  write_prior(out, "y1", priors.y1);
  write_prior(out, "y0", priors.y0);
  write_prior(out, "cp", priors.cp);
}

}  // namespace bitslab
