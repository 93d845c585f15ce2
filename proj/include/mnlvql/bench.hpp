#pragma once

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <chrono>
#include <climits>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <functional>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "agents.hpp"

namespace mnlvql {

enum class EnvKind { kShopping, kHard, kCustom };
enum class AgentKind { kMnlVql, kMyopic, kLsviUcb, kOptimal, kRandom };

inline constexpr const char* kEnvNames[] = {"shopping", "hard"};
inline constexpr const char* kAgentNames[] = {"mnl_vql", "myopic", "lsvi_ucb",
                                              "optimal", "random"};

inline const char* to_string(EnvKind kind) {
  switch (kind) {
    case EnvKind::kShopping: return "shopping";
    case EnvKind::kHard: return "hard";
    case EnvKind::kCustom: return "custom";
  }
  return "?";
}

inline const char* to_string(AgentKind kind) {
  switch (kind) {
    case AgentKind::kMnlVql: return "mnl_vql";
    case AgentKind::kMyopic: return "myopic";
    case AgentKind::kLsviUcb: return "lsvi_ucb";
    case AgentKind::kOptimal: return "optimal";
    case AgentKind::kRandom: return "random";
  }
  return "?";
}

inline std::optional<EnvKind> parse_env_kind(std::string_view name) {
  if (name == "shopping") return EnvKind::kShopping;
  if (name == "hard") return EnvKind::kHard;
  if (name == "custom") return EnvKind::kCustom;
  return std::nullopt;
}

inline std::optional<AgentKind> parse_agent_kind(std::string_view name) {
  if (name == "mnl_vql") return AgentKind::kMnlVql;
  if (name == "myopic") return AgentKind::kMyopic;
  if (name == "lsvi_ucb") return AgentKind::kLsviUcb;
  if (name == "optimal") return AgentKind::kOptimal;
  if (name == "random") return AgentKind::kRandom;
  return std::nullopt;
}

struct ExperimentConfig {
  EnvKind env_kind = EnvKind::kShopping;
  int n_items = 10;
  int n_states = 5;
  int horizon = 5;
  int max_assortment = 6;  // M, outside option included
  int d_mnl = 5;
  int d_lin = 6;  // hard instance only; shopping derives its own
  std::uint64_t env_seed = 0;
  // kCustom bypasses the built-in constructions; the pointee must outlive
  // every run_experiment call made with this config.
  const TabularEnv* custom_env = nullptr;

  AgentKind agent_kind = AgentKind::kMnlVql;
  double radius_scale = 1.0;
  double beta_scale = 1.0;
  double u_scale = 1.0;
  double delta = 0.1;
  SigmaMode sigma_mode = SigmaMode::kSimple;

  int episodes = 1000;
  int replications = 1;
  std::uint64_t base_seed = 0;
  std::string out_path;
  bool timing_wall = true;  // false writes episode_ms = 0 for byte-stable CSVs
  int threads = 0;          // replication-level parallelism; 0 = hardware

  std::vector<std::string> validate() const {
    std::vector<std::string> errs;
    auto fail = [&errs](const std::string& msg) { errs.push_back(msg); };
    if (episodes < 1) fail("run.episodes: must be >= 1");
    if (replications < 1) fail("run.replications: must be >= 1");
    if (threads < 0) fail("run.threads: must be >= 0");
    if (radius_scale < 0.0) fail("agent.radius_scale: must be >= 0");
    if (beta_scale < 0.0) fail("agent.beta_scale: must be >= 0");
    if (u_scale < 0.0) fail("agent.u_scale: must be >= 0");
    if (!(delta > 0.0 && delta < 1.0)) fail("agent.delta: must be in (0, 1)");
    switch (env_kind) {
      case EnvKind::kShopping:
        if (n_items < 2) fail("env.n_items: must be >= 2");
        if (n_states < 2) fail("env.n_states: must be >= 2");
        if (horizon < 1) fail("env.horizon: must be >= 1");
        if (max_assortment < 2 || max_assortment > n_items + 1)
          fail("env.max_assortment: must be in [2, n_items + 1]");
        if (d_mnl < 1) fail("env.d: must be >= 1");
        break;
      case EnvKind::kHard:
        if (horizon < 1) fail("env.horizon: must be >= 1");
        if (d_mnl < 2 || (d_mnl - 1) % 4 != 0)
          fail("env.d: must be >= 2 with d - 1 divisible by 4");
        if (d_lin < 6) fail("env.d_lin: must be >= 6");
        break;
      case EnvKind::kCustom:
        if (custom_env == nullptr)
          fail("env.kind: custom requires a programmatic environment");
        break;
    }
    return errs;
  }
};

// ---------------------------------------------------------------------------
// Config text: `[section]` headers, `key = value` lines, `#` comments.

struct ConfigParse {
  ExperimentConfig cfg;
  std::vector<std::string> errors;
  std::set<std::string> seen;  // "section.key" for every assignment applied

  bool ok() const { return errors.empty(); }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const char* ws = " \t\r";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

inline std::optional<long long> parse_int(std::string_view s) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  const std::string buf(s);
  errno = 0;
  const long long v = std::strtoll(buf.c_str(), &end, 10);
  if (errno != 0 || end != buf.c_str() + buf.size()) return std::nullopt;
  return v;
}

inline std::optional<std::uint64_t> parse_uint(std::string_view s) {
  if (s.empty() || s.front() == '-') return std::nullopt;
  char* end = nullptr;
  const std::string buf(s);
  errno = 0;
  const unsigned long long v = std::strtoull(buf.c_str(), &end, 10);
  if (errno != 0 || end != buf.c_str() + buf.size()) return std::nullopt;
  return v;
}

inline std::optional<double> parse_double(std::string_view s) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  const std::string buf(s);
  errno = 0;
  const double v = std::strtod(buf.c_str(), &end);
  if (errno != 0 || end != buf.c_str() + buf.size()) return std::nullopt;
  return v;
}

// Applies one `section.key = value` assignment. Returns an error message, or
// nothing on success.
inline std::optional<std::string> apply_config_entry(ExperimentConfig& cfg,
                                                     const std::string& section,
                                                     const std::string& key,
                                                     std::string_view value) {
  const std::string field = section + "." + key;
  auto bad = [&field](std::string_view why) {
    return std::optional<std::string>(field + ": " + std::string(why));
  };
  auto set_int = [&](int& slot) -> std::optional<std::string> {
    const auto v = parse_int(value);
    if (!v || *v < INT_MIN || *v > INT_MAX) return bad("expected an integer");
    slot = static_cast<int>(*v);
    return std::nullopt;
  };
  auto set_uint = [&](std::uint64_t& slot) -> std::optional<std::string> {
    const auto v = parse_uint(value);
    if (!v) return bad("expected a nonnegative integer");
    slot = *v;
    return std::nullopt;
  };
  auto set_double = [&](double& slot) -> std::optional<std::string> {
    const auto v = parse_double(value);
    if (!v) return bad("expected a number");
    slot = *v;
    return std::nullopt;
  };

  if (section == "env") {
    if (key == "kind") {
      const auto kind = parse_env_kind(value);
      if (!kind) return bad("expected one of shopping|hard|custom");
      cfg.env_kind = *kind;
      return std::nullopt;
    }
    if (key == "n_items") return set_int(cfg.n_items);
    if (key == "n_states") return set_int(cfg.n_states);
    if (key == "horizon") return set_int(cfg.horizon);
    if (key == "max_assortment") return set_int(cfg.max_assortment);
    if (key == "d") return set_int(cfg.d_mnl);
    if (key == "d_lin") return set_int(cfg.d_lin);
    if (key == "seed") return set_uint(cfg.env_seed);
    return bad("unknown key");
  }
  if (section == "agent") {
    if (key == "kind") {
      const auto kind = parse_agent_kind(value);
      if (!kind)
        return bad("expected one of mnl_vql|myopic|lsvi_ucb|optimal|random");
      cfg.agent_kind = *kind;
      return std::nullopt;
    }
    if (key == "radius_scale") return set_double(cfg.radius_scale);
    if (key == "beta_scale") return set_double(cfg.beta_scale);
    if (key == "u_scale") return set_double(cfg.u_scale);
    if (key == "delta") return set_double(cfg.delta);
    if (key == "sigma_mode") {
      if (value == "simple") cfg.sigma_mode = SigmaMode::kSimple;
      else if (value == "full") cfg.sigma_mode = SigmaMode::kFull;
      else return bad("expected simple|full");
      return std::nullopt;
    }
    return bad("unknown key");
  }
  if (section == "run") {
    if (key == "episodes") return set_int(cfg.episodes);
    if (key == "replications") return set_int(cfg.replications);
    if (key == "seed") return set_uint(cfg.base_seed);
    if (key == "out") {
      cfg.out_path = std::string(value);
      return std::nullopt;
    }
    if (key == "timing") {
      if (value == "wall") cfg.timing_wall = true;
      else if (value == "zero") cfg.timing_wall = false;
      else return bad("expected wall|zero");
      return std::nullopt;
    }
    if (key == "threads") return set_int(cfg.threads);
    return bad("unknown key");
  }
  return std::optional<std::string>("unknown section [" + section + "]");
}

}  // namespace detail

inline ConfigParse parse_config_text(std::string_view text) {
  ConfigParse out;
  std::string section;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(
        pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;

    const auto hash = line.find('#');
    if (hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        out.errors.push_back("config line " + std::to_string(line_no) +
                             ": malformed section header");
        continue;
      }
      section = std::string(detail::trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      out.errors.push_back("config line " + std::to_string(line_no) +
                           ": expected key = value");
      continue;
    }
    const std::string key(detail::trim(line.substr(0, eq)));
    const std::string_view value = detail::trim(line.substr(eq + 1));
    if (section.empty()) {
      out.errors.push_back("config line " + std::to_string(line_no) +
                           ": key outside any [section]");
      continue;
    }
    if (key.empty()) {
      out.errors.push_back("config line " + std::to_string(line_no) +
                           ": empty key");
      continue;
    }
    if (auto err = detail::apply_config_entry(out.cfg, section, key, value))
      out.errors.push_back(*err);
    else
      out.seen.insert(section + "." + key);
  }
  return out;
}

inline ConfigParse parse_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    ConfigParse out;
    out.errors.push_back("config: cannot read " + path);
    return out;
  }
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_config_text(text);
}

// ---------------------------------------------------------------------------
// Execution.

struct RunRecord {
  std::string agent;
  std::uint64_t seed = 0;
  int episode = 0;
  double ret = 0.0;
  double cum_regret_realized = 0.0;
  double cum_regret_expected = 0.0;
  double episode_ms = 0.0;
};

inline TabularEnv make_env(const ExperimentConfig& cfg, std::uint64_t seed) {
  switch (cfg.env_kind) {
    case EnvKind::kShopping:
      return online_shopping_env(cfg.n_items, cfg.n_states, cfg.horizon,
                                 cfg.d_mnl, cfg.max_assortment, seed);
    case EnvKind::kHard:
      return hard_instance_env(cfg.d_mnl, cfg.d_lin, cfg.horizon, cfg.episodes)
          .env;
    case EnvKind::kCustom:
      if (cfg.custom_env == nullptr)
        throw std::invalid_argument("custom environment not provided");
      return *cfg.custom_env;
  }
  throw std::invalid_argument("unknown environment kind");
}

inline TabularEnv make_env(const ExperimentConfig& cfg) {
  return make_env(cfg, cfg.env_seed);
}

inline std::unique_ptr<AgentBase> make_agent(const ExperimentConfig& cfg,
                                             const TabularEnv& env,
                                             std::uint64_t seed) {
  switch (cfg.agent_kind) {
    case AgentKind::kMnlVql: {
      MnlVqlOptions opt;
      opt.episodes = cfg.episodes;
      opt.delta = cfg.delta;
      opt.radius_scale = cfg.radius_scale;
      opt.beta_scale = cfg.beta_scale;
      opt.u_scale = cfg.u_scale;
      opt.sigma_mode = cfg.sigma_mode;
      return std::make_unique<MnlVqlAgent>(env, opt, seed);
    }
    case AgentKind::kMyopic: {
      MyopicOptions opt;
      opt.episodes = cfg.episodes;
      opt.delta = cfg.delta;
      opt.radius_scale = cfg.radius_scale;
      opt.beta_scale = cfg.beta_scale;
      return std::make_unique<MyopicAgent>(env, opt, seed);
    }
    case AgentKind::kLsviUcb: {
      LsviOptions opt;
      opt.episodes = cfg.episodes;
      opt.delta = cfg.delta;
      opt.beta_scale = cfg.beta_scale;
      return std::make_unique<LsviUcbAtomicAgent>(env, opt, seed);
    }
    case AgentKind::kOptimal:
      return std::make_unique<OptimalAgent>(env);
    case AgentKind::kRandom:
      return std::make_unique<RandomAgent>(env, seed);
  }
  throw std::invalid_argument("unknown agent kind");
}

namespace detail {

inline std::vector<RunRecord> run_one_replication(const ExperimentConfig& cfg,
                                                  int r) {
  const std::uint64_t seed = cfg.base_seed + static_cast<std::uint64_t>(r);
  const TabularEnv env = make_env(cfg, seed);
  const double v_star = dp_optimal_values(env).v[0][static_cast<std::size_t>(
      env.initial_state)];

  Rng root(seed);
  Rng step_rng = root.derive(0x53544550);  // environment choice/transition
  auto agent = make_agent(cfg, env, root.derive(0x4147454e).next_u64());
  const std::string agent_name = to_string(cfg.agent_kind);

  std::vector<RunRecord> records;
  records.reserve(static_cast<std::size_t>(cfg.episodes));
  double cum_real = 0.0, cum_exp = 0.0;
  using clock = std::chrono::steady_clock;
  for (int k = 1; k <= cfg.episodes; ++k) {
    // The timed window covers the agent's own work (planning and acting);
    // regret accounting below is benchmark overhead and stays outside it.
    const auto t0 = clock::now();
    agent->begin_episode(k);
    int s = env.initial_state;
    double ret = 0.0;
    for (int h = 0; h < env.horizon; ++h) {
      const auto assortment = agent->act(k, h, s);
      const StepOutcome out = step(env, h, s, assortment, step_rng);
      agent->observe(k, h, s, assortment, out);
      ret += out.reward;
      s = out.next_state;
    }
    const auto t1 = clock::now();
    cum_real += v_star - ret;
    cum_exp += v_star - agent->expected_episode_value();

    RunRecord rec;
    rec.agent = agent_name;
    rec.seed = seed;
    rec.episode = k;
    rec.ret = ret;
    rec.cum_regret_realized = cum_real;
    rec.cum_regret_expected = cum_exp;
    rec.episode_ms =
        cfg.timing_wall
            ? std::chrono::duration<double, std::milli>(t1 - t0).count()
            : 0.0;
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace detail

// Runs all replications (replication r uses seed base+r for the environment,
// the agent, and the episode stream) and returns records in seed order
// regardless of the execution schedule. `progress` is invoked once per
// finished replication, possibly from worker threads, under a lock.
inline std::vector<RunRecord> run_experiment(
    const ExperimentConfig& cfg,
    const std::function<void(int)>& progress = nullptr) {
  {
    const auto errs = cfg.validate();
    if (!errs.empty()) throw std::invalid_argument(errs.front());
  }
  const int reps = cfg.replications;
  std::vector<std::vector<RunRecord>> buckets(
      static_cast<std::size_t>(reps));

  int workers = cfg.threads > 0
                    ? cfg.threads
                    : static_cast<int>(std::thread::hardware_concurrency());
  if (workers < 1) workers = 1;
  if (workers > reps) workers = reps;

  if (workers == 1) {
    for (int r = 0; r < reps; ++r) {
      buckets[static_cast<std::size_t>(r)] = detail::run_one_replication(cfg, r);
      if (progress) progress(r);
    }
  } else {
    std::atomic<int> next{0};
    std::mutex mu;
    std::exception_ptr failure;
    auto work = [&]() {
      for (;;) {
        const int r = next.fetch_add(1);
        if (r >= reps) return;
        try {
          auto rows = detail::run_one_replication(cfg, r);
          std::lock_guard<std::mutex> lock(mu);
          buckets[static_cast<std::size_t>(r)] = std::move(rows);
          if (progress) progress(r);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!failure) failure = std::current_exception();
          return;
        }
      }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
  }

  std::vector<RunRecord> records;
  records.reserve(static_cast<std::size_t>(reps) *
                  static_cast<std::size_t>(cfg.episodes));
  for (auto& bucket : buckets)
    for (auto& rec : bucket) records.push_back(std::move(rec));
  return records;
}

// ---------------------------------------------------------------------------
// CSV.

inline constexpr const char* kCsvHeader =
    "agent,seed,episode,return,cum_regret_realized,cum_regret_expected,"
    "episode_ms";

namespace detail {

inline void append_g9(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  out += buf;
}

}  // namespace detail

inline std::string to_csv(const std::vector<RunRecord>& records) {
  std::string out(kCsvHeader);
  out += '\n';
  for (const auto& rec : records) {
    out += rec.agent;
    out += ',';
    out += std::to_string(rec.seed);
    out += ',';
    out += std::to_string(rec.episode);
    out += ',';
    detail::append_g9(out, rec.ret);
    out += ',';
    detail::append_g9(out, rec.cum_regret_realized);
    out += ',';
    detail::append_g9(out, rec.cum_regret_expected);
    out += ',';
    detail::append_g9(out, rec.episode_ms);
    out += '\n';
  }
  return out;
}

inline void emit_csv(const std::vector<RunRecord>& records,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  const std::string text = to_csv(records);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.flush();
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline std::vector<RunRecord> parse_csv(std::string_view text) {
  std::vector<RunRecord> records;
  std::size_t pos = 0;
  bool first = true;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    if (first) {
      if (line != kCsvHeader) throw std::runtime_error("csv: bad header");
      first = false;
      continue;
    }
    std::vector<std::string_view> cells;
    std::size_t cell = 0;
    while (true) {
      auto comma = line.find(',', cell);
      if (comma == std::string_view::npos) {
        cells.push_back(line.substr(cell));
        break;
      }
      cells.push_back(line.substr(cell, comma - cell));
      cell = comma + 1;
    }
    if (cells.size() != 7) throw std::runtime_error("csv: bad row");
    RunRecord rec;
    rec.agent = std::string(cells[0]);
    const auto seed = detail::parse_uint(cells[1]);
    const auto episode = detail::parse_int(cells[2]);
    const auto ret = detail::parse_double(cells[3]);
    const auto cr = detail::parse_double(cells[4]);
    const auto ce = detail::parse_double(cells[5]);
    const auto ms = detail::parse_double(cells[6]);
    if (!seed || !episode || !ret || !cr || !ce || !ms)
      throw std::runtime_error("csv: bad row");
    rec.seed = *seed;
    rec.episode = static_cast<int>(*episode);
    rec.ret = *ret;
    rec.cum_regret_realized = *cr;
    rec.cum_regret_expected = *ce;
    rec.episode_ms = *ms;
    records.push_back(std::move(rec));
  }
  if (first && !records.empty()) throw std::runtime_error("csv: bad header");
  return records;
}

// ---------------------------------------------------------------------------
// Aggregates consumed by the runtime and ordering checks.

// Mean per-episode milliseconds across all records with episode > warmup.
inline double mean_episode_ms(const std::vector<RunRecord>& records,
                              int warmup = 5) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& rec : records)
    if (rec.episode > warmup) {
      total += rec.episode_ms;
      ++n;
    }
  return n == 0 ? 0.0 : total / static_cast<double>(n);
}

// Mean realized return over the last `window` episodes of every replication.
inline double final_window_mean_return(const std::vector<RunRecord>& records,
                                       int window) {
  int k_max = 0;
  for (const auto& rec : records) k_max = std::max(k_max, rec.episode);
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& rec : records)
    if (rec.episode > k_max - window) {
      total += rec.ret;
      ++n;
    }
  return n == 0 ? 0.0 : total / static_cast<double>(n);
}

}  // namespace mnlvql
