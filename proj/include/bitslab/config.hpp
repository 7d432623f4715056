#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "bitslab/epoch.hpp"
#include "bitslab/errors.hpp"
#include "bitslab/model.hpp"

namespace bitslab {

/// A whole experiment: one epoch template plus how many epochs, which policies, where to write.
struct ExperimentConfig {
  std::string name = "custom";
  EpochConfig epoch;
  std::map<std::size_t, BidGrid> grids;  // keyed by arms per context
  std::size_t arms = 0;                  // selected grid
  int epochs = 100;
  int full_epochs = 1000;
  std::uint64_t seed = 1;
  std::vector<PolicyKind> policies{PolicyKind::bits};
  int workers = 0;  // 0: hardware concurrency
  std::string priors_file;

  void select_grid(std::size_t arm_count) {
    const auto it = grids.find(arm_count);
    if (it == grids.end()) throw ConfigError("config: no grid with " + std::to_string(arm_count) + " arms");
    arms = arm_count;
    epoch.grid = it->second;
  }

  void validate() const {
    if (epochs < 1) throw ConfigError("config: epochs must be >= 1");
    if (policies.empty()) throw ConfigError("config: no policies selected");
    epoch.validate();
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& raw, const std::string& key) {
  const std::string s = trim(raw);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' is not a number: '" + s + "'");
  }
  if (used != s.size()) throw ConfigError("config: '" + key + "' is not a number: '" + s + "'");
  return v;
}

inline long long parse_int(const std::string& raw, const std::string& key) {
  const std::string s = trim(raw);
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &used);
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' is not an integer: '" + s + "'");
  }
  if (used != s.size()) throw ConfigError("config: '" + key + "' is not an integer: '" + s + "'");
  return v;
}

inline bool parse_bool(const std::string& raw, const std::string& key) {
  const std::string s = trim(raw);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("config: '" + key + "' is not a boolean: '" + s + "'");
}

inline std::vector<double> parse_list(const std::string& raw, const std::string& key) {
  std::vector<double> out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(item, key));
  if (out.empty()) throw ConfigError("config: '" + key + "' is an empty list");
  return out;
}

using Section = boost::property_tree::ptree;

inline void check_keys(const Section& sec, const std::string& name, const std::set<std::string>& allowed) {
  for (const auto& [k, v] : sec) {
    if (!v.empty()) throw ConfigError("config: nested key '" + k + "' in [" + name + "]");
    if (!allowed.count(k)) throw ConfigError("config: unknown key '" + k + "' in [" + name + "]");
  }
}

inline std::string get_raw(const Section& sec, const std::string& section, const std::string& key) {
  const auto v = sec.get_optional<std::string>(boost::property_tree::ptree::path_type(key, '/'));
  if (!v) throw ConfigError("config: missing key '" + key + "' in [" + section + "]");
  return *v;
}

inline std::optional<std::string> get_opt(const Section& sec, const std::string& key) {
  const auto v = sec.get_optional<std::string>(boost::property_tree::ptree::path_type(key, '/'));
  if (!v) return std::nullopt;
  return *v;
}

inline std::vector<double> read_prior_matrix(const std::vector<double>& flat, std::size_t P, const std::string& key) {
  if (flat.size() != P * P) throw ConfigError("config: '" + key + "' must have P*P entries");
  return flat;
}

}  // namespace detail

/// Read priors written by `write_priors` (sections [y1], [y0], [cp]).
inline PriorParams parse_priors(std::istream& in, std::size_t P) {
  boost::property_tree::ptree root;
  try {
    boost::property_tree::read_ini(in, root);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("priors: ") + e.what());
  }
  PriorParams out = PriorParams::uninformative(P);
  auto read_one = [&](const std::string& name, NormalGammaPrior& prior) {
    const auto sec = root.get_child_optional(boost::property_tree::ptree::path_type(name, '/'));
    if (!sec) throw ConfigError("priors: missing section [" + name + "]");
    detail::check_keys(*sec, name, {"alpha", "beta", "mean", "precision"});
    prior.alpha = detail::parse_double(detail::get_raw(*sec, name, "alpha"), name + ".alpha");
    prior.beta = detail::parse_double(detail::get_raw(*sec, name, "beta"), name + ".beta");
    const auto mean = detail::parse_list(detail::get_raw(*sec, name, "mean"), name + ".mean");
    if (mean.size() != P) throw ConfigError("priors: '" + name + ".mean' must have P entries");
    const auto prec = detail::read_prior_matrix(
        detail::parse_list(detail::get_raw(*sec, name, "precision"), name + ".precision"), P, name + ".precision");
    const auto Pi = static_cast<Eigen::Index>(P);
    prior.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), Pi);
    prior.precision = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(prec.data(), Pi, Pi);
  };
  read_one("y1", out.y1);
  read_one("y0", out.y0);
  read_one("cp", out.cp);
  out.validate(P);
  return out;
}

inline PriorParams load_priors(const std::filesystem::path& path, std::size_t P) {
  std::ifstream in(path);
  if (!in) throw ConfigError("priors: cannot open '" + path.string() + "'");
  return parse_priors(in, P);
}

/// Parse an experiment config in INI form. Sections: [experiment], [dgp],
/// [grid_<arms>] (keys context1, context2, ...), [gibbs], [stopping].
inline ExperimentConfig parse_config(std::istream& in) {
  using detail::get_opt;
  using detail::get_raw;
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_int;
  using detail::parse_list;
  boost::property_tree::ptree root;
  try {
    boost::property_tree::read_ini(in, root);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  ExperimentConfig cfg;
  std::optional<std::size_t> default_arms;
  std::size_t P = 0;

  for (const auto& [name, sec] : root) {
    if (sec.empty() && !sec.data().empty()) throw ConfigError("config: key '" + name + "' outside any section");
    if (name == "experiment") {
      detail::check_keys(sec, name, {"name", "format", "epochs", "full_epochs", "rounds", "batch", "equal_split",
                                     "arms", "seed", "policy", "workers", "ts_draws", "priors"});
      if (auto v = get_opt(sec, "name")) cfg.name = detail::trim(*v);
      cfg.epoch.format = parse_format(detail::trim(get_raw(sec, name, "format")));
      if (auto v = get_opt(sec, "epochs")) cfg.epochs = static_cast<int>(parse_int(*v, "epochs"));
      if (auto v = get_opt(sec, "full_epochs")) cfg.full_epochs = static_cast<int>(parse_int(*v, "full_epochs"));
      cfg.epoch.rounds = static_cast<int>(parse_int(get_raw(sec, name, "rounds"), "rounds"));
      cfg.epoch.batch = static_cast<int>(parse_int(get_raw(sec, name, "batch"), "batch"));
      if (auto v = get_opt(sec, "equal_split")) cfg.epoch.equal_split = parse_bool(*v, "equal_split");
      if (auto v = get_opt(sec, "arms")) default_arms = static_cast<std::size_t>(parse_int(*v, "arms"));
      if (auto v = get_opt(sec, "seed")) cfg.seed = static_cast<std::uint64_t>(parse_int(*v, "seed"));
      if (auto v = get_opt(sec, "policy")) {
        const std::string s = detail::trim(*v);
        cfg.policies = s == "all" ? std::vector<PolicyKind>{PolicyKind::bits, PolicyKind::ab, PolicyKind::etc,
                                                            PolicyKind::vanilla_ts}
                                  : std::vector<PolicyKind>{parse_policy(s)};
      }
      if (auto v = get_opt(sec, "workers")) cfg.workers = static_cast<int>(parse_int(*v, "workers"));
      if (auto v = get_opt(sec, "ts_draws")) cfg.epoch.ts_draws = static_cast<int>(parse_int(*v, "ts_draws"));
      if (auto v = get_opt(sec, "priors")) cfg.priors_file = detail::trim(*v);
    } else if (name == "dgp") {
      detail::check_keys(sec, name, {"probs", "delta1", "delta0", "deltaCP", "sigma1_sq", "sigma0_sq", "sigmaCP_sq", "rho"});
      auto& th = cfg.epoch.truth;
      th.delta1 = parse_list(get_raw(sec, name, "delta1"), "delta1");
      th.delta0 = parse_list(get_raw(sec, name, "delta0"), "delta0");
      th.deltaCP = parse_list(get_raw(sec, name, "deltaCP"), "deltaCP");
      th.sigma1_sq = parse_double(get_raw(sec, name, "sigma1_sq"), "sigma1_sq");
      th.sigma0_sq = parse_double(get_raw(sec, name, "sigma0_sq"), "sigma0_sq");
      th.sigmaCP_sq = parse_double(get_raw(sec, name, "sigmaCP_sq"), "sigmaCP_sq");
      if (auto v = get_opt(sec, "rho")) th.rho = parse_double(*v, "rho");
      P = th.delta1.size();
      if (auto v = get_opt(sec, "probs")) cfg.epoch.context_spec.probs = parse_list(*v, "probs");
      else cfg.epoch.context_spec = ContextSpec::uniform(P);
    } else if (name.rfind("grid_", 0) == 0) {
      const auto arms = static_cast<std::size_t>(parse_int(name.substr(5), "grid section"));
      BidGrid grid;
      std::set<std::string> allowed;
      for (std::size_t p = 1; p <= sec.size(); ++p) allowed.insert("context" + std::to_string(p));
      detail::check_keys(sec, name, allowed);
      for (std::size_t p = 1; p <= sec.size(); ++p) {
        const std::string key = "context" + std::to_string(p);
        grid.arms.push_back(parse_list(get_raw(sec, name, key), name + "." + key));
        if (grid.arms.back().size() != arms)
          throw ConfigError("config: [" + name + "] " + key + " must list " + std::to_string(arms) + " bids");
      }
      grid.validate();
      cfg.grids[arms] = std::move(grid);
    } else if (name == "gibbs") {
      detail::check_keys(sec, name, {"draws", "burn_in", "thin", "rho_mode", "warm_start"});
      auto& g = cfg.epoch.gibbs;
      if (auto v = get_opt(sec, "draws")) {
        g.draws = static_cast<int>(parse_int(*v, "draws"));
        g.burn_in = g.draws / 2;
      }
      if (auto v = get_opt(sec, "burn_in")) g.burn_in = static_cast<int>(parse_int(*v, "burn_in"));
      if (auto v = get_opt(sec, "thin")) g.thin = static_cast<int>(parse_int(*v, "thin"));
      if (auto v = get_opt(sec, "rho_mode")) {
        const std::string s = detail::trim(*v);
        if (s == "independent") cfg.epoch.rho_mode = RhoMode::independent;
        else if (s == "correlated") cfg.epoch.rho_mode = RhoMode::correlated;
        else throw ConfigError("config: rho_mode must be 'independent' or 'correlated'");
      }
      if (auto v = get_opt(sec, "warm_start")) cfg.epoch.warm_start = parse_bool(*v, "warm_start");
    } else if (name == "stopping") {
      detail::check_keys(sec, name, {"mode", "threshold", "ate_grid_cap", "empirical_weights"});
      auto& s = cfg.epoch.stopping;
      if (auto v = get_opt(sec, "mode")) s.mode = parse_stopping_mode(detail::trim(*v));
      if (auto v = get_opt(sec, "threshold")) s.threshold = parse_double(*v, "threshold");
      if (auto v = get_opt(sec, "ate_grid_cap")) s.ate_grid_cap = static_cast<std::size_t>(parse_int(*v, "ate_grid_cap"));
      if (auto v = get_opt(sec, "empirical_weights")) s.empirical_weights = parse_bool(*v, "empirical_weights");
    } else {
      throw ConfigError("config: unknown section [" + name + "]");
    }
  }
  if (P == 0) throw ConfigError("config: missing [dgp] section");
  if (!root.get_child_optional("experiment")) throw ConfigError("config: missing [experiment] section");
  if (cfg.grids.empty()) throw ConfigError("config: no [grid_<arms>] section");
  for (const auto& [arms, grid] : cfg.grids)
    if (grid.contexts() != P) throw ConfigError("config: grid with " + std::to_string(arms) + " arms has the wrong number of contexts");
  cfg.select_grid(default_arms ? *default_arms : cfg.grids.begin()->first);
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
  return parse_config(in);
}

#ifdef BITSLAB_PRESET_DIR
inline std::filesystem::path preset_directory() {
  if (const char* env = std::getenv("BITSLAB_PRESET_DIR")) return env;
  return BITSLAB_PRESET_DIR;
}
#else
inline std::filesystem::path preset_directory() {
  if (const char* env = std::getenv("BITSLAB_PRESET_DIR")) return env;
  return "configs/presets";
}
#endif

inline std::vector<std::string> preset_names() { return {"spa_nc", "spa_ctxt", "fpa_nc", "fpa_ctxt"}; }

inline ExperimentConfig load_preset(const std::string& name) {
  bool known = false;
  for (const auto& n : preset_names()) known = known || n == name;
  if (!known) throw ConfigError("unknown preset '" + name + "'");
  return load_config(preset_directory() / (name + ".ini"));
}

namespace detail {

inline std::string list_text(const std::vector<double>& v) {
  std::string out;
  char buf[40];
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", v[i]);
    out += (i ? ", " : "") + std::string(buf);
  }
  return out;
}

}  // namespace detail

/// Canonical INI text of the effective configuration (selected grid only, no worker count).
inline std::string to_ini(const ExperimentConfig& cfg) {
  const auto& e = cfg.epoch;
  auto num = [](double v) { return detail::list_text({v}); };
  std::ostringstream o;
  o << "[experiment]\nname = " << cfg.name << "\nformat = " << to_string(e.format) << "\nepochs = " << cfg.epochs
    << "\nrounds = " << e.rounds << "\nbatch = " << e.batch << "\nequal_split = " << (e.equal_split ? "true" : "false")
    << "\narms = " << cfg.arms << "\nseed = " << cfg.seed << "\npolicy = ";
  if (cfg.policies.size() == 4) o << "all";
  else o << to_string(cfg.policies.front());
  o << "\nts_draws = " << e.ts_draws << "\n";
  if (!cfg.priors_file.empty()) o << "priors = " << cfg.priors_file << "\n";
  o << "\n[dgp]\nprobs = " << detail::list_text(e.context_spec.probs) << "\ndelta1 = " << detail::list_text(e.truth.delta1)
    << "\ndelta0 = " << detail::list_text(e.truth.delta0) << "\ndeltaCP = " << detail::list_text(e.truth.deltaCP)
    << "\nsigma1_sq = " << num(e.truth.sigma1_sq) << "\nsigma0_sq = " << num(e.truth.sigma0_sq)
    << "\nsigmaCP_sq = " << num(e.truth.sigmaCP_sq) << "\nrho = " << num(e.truth.rho) << "\n";
  o << "\n[grid_" << cfg.arms << "]\n";
  for (std::size_t p = 0; p < e.grid.contexts(); ++p)
    o << "context" << p + 1 << " = " << detail::list_text(e.grid.arms[p]) << "\n";
  o << "\n[gibbs]\ndraws = " << e.gibbs.draws << "\nburn_in = " << e.gibbs.burn_in << "\nthin = " << e.gibbs.thin
    << "\nrho_mode = " << (e.rho_mode == RhoMode::independent ? "independent" : "correlated")
    << "\nwarm_start = " << (e.warm_start ? "true" : "false") << "\n";
  o << "\n[stopping]\nmode = " << to_string(e.stopping.mode) << "\nthreshold = " << num(e.stopping.threshold)
    << "\nate_grid_cap = " << e.stopping.ate_grid_cap
    << "\nempirical_weights = " << (e.stopping.empirical_weights ? "true" : "false") << "\n";
  return o.str();
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace bitslab
