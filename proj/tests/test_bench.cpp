#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <mnlvql/bench.hpp>

using namespace mnlvql;

namespace {

ExperimentConfig small_shopping_config() {
  ExperimentConfig cfg;
  cfg.env_kind = EnvKind::kShopping;
  cfg.n_items = 4;
  cfg.n_states = 3;
  cfg.horizon = 2;
  cfg.max_assortment = 3;
  cfg.d_mnl = 3;
  cfg.agent_kind = AgentKind::kMnlVql;
  cfg.radius_scale = 0.1;
  cfg.beta_scale = 0.01;
  cfg.u_scale = 1.0;
  cfg.episodes = 8;
  cfg.replications = 3;
  cfg.base_seed = 17;
  cfg.timing_wall = false;
  cfg.threads = 1;
  return cfg;
}

bool contains(const std::vector<std::string>& errs, const std::string& needle) {
  return std::any_of(errs.begin(), errs.end(), [&](const std::string& e) {
    return e.find(needle) != std::string::npos;
  });
}

}  // namespace

TEST_CASE("config text parses sections, comments, and every field", "[bench]") {
  const char* text = R"(# experiment description
[env]
kind = shopping
n_items = 7       # trailing comment
n_states = 4
horizon = 3
max_assortment = 5
d = 6
seed = 99

[agent]
kind = myopic
radius_scale = 0.25
beta_scale = 0.5
u_scale = 2.0
delta = 0.05
sigma_mode = full

[run]
episodes = 42
replications = 4
seed = 1234
out = results/run.csv
timing = zero
threads = 2
)";
  const auto parsed = parse_config_text(text);
  REQUIRE(parsed.ok());
  const auto& cfg = parsed.cfg;
  CHECK(cfg.env_kind == EnvKind::kShopping);
  CHECK(cfg.n_items == 7);
  CHECK(cfg.n_states == 4);
  CHECK(cfg.horizon == 3);
  CHECK(cfg.max_assortment == 5);
  CHECK(cfg.d_mnl == 6);
  CHECK(cfg.env_seed == 99);
  CHECK(cfg.agent_kind == AgentKind::kMyopic);
  CHECK(cfg.radius_scale == 0.25);
  CHECK(cfg.beta_scale == 0.5);
  CHECK(cfg.u_scale == 2.0);
  CHECK(cfg.delta == 0.05);
  CHECK(cfg.sigma_mode == SigmaMode::kFull);
  CHECK(cfg.episodes == 42);
  CHECK(cfg.replications == 4);
  CHECK(cfg.base_seed == 1234);
  CHECK(cfg.out_path == "results/run.csv");
  CHECK_FALSE(cfg.timing_wall);
  CHECK(cfg.threads == 2);
  CHECK(parsed.seen.count("agent.kind") == 1);
  CHECK(parsed.seen.count("run.out") == 1);
  CHECK(parsed.seen.count("env.d_lin") == 0);
}

TEST_CASE("config text errors carry field and line information", "[bench]") {
  SECTION("unknown key names the field") {
    const auto parsed = parse_config_text("[env]\nfoo = 3\n");
    REQUIRE_FALSE(parsed.ok());
    CHECK(contains(parsed.errors, "env.foo"));
  }
  SECTION("unknown section is reported") {
    const auto parsed = parse_config_text("[misc]\nx = 1\n");
    REQUIRE_FALSE(parsed.ok());
    CHECK(contains(parsed.errors, "[misc]"));
  }
  SECTION("bad value names the field") {
    const auto parsed = parse_config_text("[run]\nepisodes = soon\n");
    REQUIRE_FALSE(parsed.ok());
    CHECK(contains(parsed.errors, "run.episodes"));
  }
  SECTION("bad enum value lists the choices") {
    const auto parsed = parse_config_text("[agent]\nkind = sarsa\n");
    REQUIRE_FALSE(parsed.ok());
    CHECK(contains(parsed.errors, "agent.kind"));
    CHECK(contains(parsed.errors, "mnl_vql"));
  }
  SECTION("lines outside a section and malformed lines carry line numbers") {
    const auto parsed = parse_config_text("a = 1\n[env]\nno equals here\n");
    REQUIRE(parsed.errors.size() == 2);
    CHECK(contains(parsed.errors, "line 1"));
    CHECK(contains(parsed.errors, "line 3"));
  }
  SECTION("valid assignments before an error still apply") {
    const auto parsed = parse_config_text("[run]\nepisodes = 9\nbad = 1\n");
    CHECK(parsed.cfg.episodes == 9);
    REQUIRE_FALSE(parsed.ok());
  }
}

TEST_CASE("config validation reports field-level messages", "[bench]") {
  ExperimentConfig cfg = small_shopping_config();
  REQUIRE(cfg.validate().empty());

  SECTION("episode and replication counts") {
    cfg.episodes = 0;
    cfg.replications = 0;
    const auto errs = cfg.validate();
    CHECK(contains(errs, "run.episodes"));
    CHECK(contains(errs, "run.replications"));
  }
  SECTION("scales must be nonnegative") {
    cfg.radius_scale = -1.0;
    cfg.beta_scale = -0.5;
    cfg.u_scale = -2.0;
    const auto errs = cfg.validate();
    CHECK(contains(errs, "agent.radius_scale"));
    CHECK(contains(errs, "agent.beta_scale"));
    CHECK(contains(errs, "agent.u_scale"));
  }
  SECTION("delta in the open unit interval") {
    cfg.delta = 1.0;
    CHECK(contains(cfg.validate(), "agent.delta"));
  }
  SECTION("shopping environment shape") {
    cfg.n_items = 1;
    cfg.max_assortment = 9;
    const auto errs = cfg.validate();
    CHECK(contains(errs, "env.n_items"));
    CHECK(contains(errs, "env.max_assortment"));
  }
  SECTION("hard instance dimension rules") {
    cfg.env_kind = EnvKind::kHard;
    cfg.d_mnl = 4;  // d - 1 not divisible by 4
    cfg.d_lin = 5;
    const auto errs = cfg.validate();
    CHECK(contains(errs, "env.d"));
    CHECK(contains(errs, "env.d_lin"));
  }
  SECTION("custom kind needs an environment") {
    cfg.env_kind = EnvKind::kCustom;
    CHECK(contains(cfg.validate(), "env.kind"));
  }
}

TEST_CASE("runs are deterministic and schedule-independent", "[bench]") {
  const ExperimentConfig cfg = small_shopping_config();
  const auto first = run_experiment(cfg);
  const auto second = run_experiment(cfg);
  REQUIRE(to_csv(first) == to_csv(second));

  ExperimentConfig parallel = cfg;
  parallel.threads = 3;
  const auto third = run_experiment(parallel);
  REQUIRE(to_csv(first) == to_csv(third));
}

TEST_CASE("records are bookkept per replication in seed order", "[bench]") {
  const ExperimentConfig cfg = small_shopping_config();
  const auto records = run_experiment(cfg);
  REQUIRE(records.size() ==
          static_cast<std::size_t>(cfg.replications * cfg.episodes));
  std::size_t i = 0;
  for (int r = 0; r < cfg.replications; ++r) {
    double prev_exp = 0.0;
    for (int k = 1; k <= cfg.episodes; ++k, ++i) {
      const auto& rec = records[i];
      CHECK(rec.agent == "mnl_vql");
      CHECK(rec.seed == cfg.base_seed + static_cast<std::uint64_t>(r));
      CHECK(rec.episode == k);
      CHECK(std::isfinite(rec.ret));
      CHECK(rec.ret >= 0.0);
      CHECK(rec.ret <= 1.0 + 1e-12);
      // Expectation-form contributions are nonnegative, so the cumulative
      // series cannot decrease (tiny slack for summation order).
      CHECK(rec.cum_regret_expected >= prev_exp - 1e-12);
      prev_exp = rec.cum_regret_expected;
      CHECK(rec.episode_ms == 0.0);
    }
  }
}

TEST_CASE("optimal agent reports zero expected regret", "[bench]") {
  ExperimentConfig cfg = small_shopping_config();
  cfg.agent_kind = AgentKind::kOptimal;
  cfg.episodes = 5;
  cfg.replications = 2;
  const auto records = run_experiment(cfg);
  REQUIRE(records.size() == 10);
  for (const auto& rec : records) CHECK(rec.cum_regret_expected == 0.0);
}

TEST_CASE("csv emission matches the schema", "[bench]") {
  SECTION("empty record list gives a header-only file") {
    const std::string text = to_csv({});
    REQUIRE(text == std::string(kCsvHeader) + "\n");
  }
  SECTION("three records give four LF-terminated lines") {
    std::vector<RunRecord> records(3);
    for (int i = 0; i < 3; ++i) {
      records[static_cast<std::size_t>(i)].agent = "random";
      records[static_cast<std::size_t>(i)].episode = i + 1;
    }
    const std::string text = to_csv(records);
    CHECK(std::count(text.begin(), text.end(), '\n') == 4);
    CHECK(text.find('\r') == std::string::npos);
    CHECK(text.back() == '\n');
  }
  SECTION("round trip recovers values at nine significant digits") {
    std::vector<RunRecord> records(2);
    records[0] = {"mnl_vql", 18446744073709551615ull, 12345,
                  1.0 / 3.0,  0.123456789123,         -0.5,
                  3.14159265358979};
    records[1] = {"lsvi_ucb", 0, 1, 0.0, 1e-17, 12345.6789, 2.5e8};
    const std::string text = to_csv(records);
    const auto parsed = parse_csv(text);
    REQUIRE(parsed.size() == 2);
    CHECK(parsed[0].agent == "mnl_vql");
    CHECK(parsed[0].seed == 18446744073709551615ull);
    CHECK(parsed[0].episode == 12345);
    // Re-rendering the parsed records must reproduce the text exactly.
    REQUIRE(to_csv(parsed) == text);
  }
  SECTION("a real run round-trips through parse and re-render") {
    ExperimentConfig cfg = small_shopping_config();
    cfg.agent_kind = AgentKind::kRandom;
    const auto records = run_experiment(cfg);
    const std::string text = to_csv(records);
    REQUIRE(to_csv(parse_csv(text)) == text);
  }
  SECTION("parse rejects a foreign header") {
    CHECK_THROWS(parse_csv("a,b\n1,2\n"));
  }
}

TEST_CASE("runtime and return aggregates honor their windows", "[bench]") {
  std::vector<RunRecord> records;
  for (int r = 0; r < 2; ++r)
    for (int k = 1; k <= 10; ++k) {
      RunRecord rec;
      rec.episode = k;
      rec.episode_ms = k;      // warm-up mean over k = 6..10 is 8
      rec.ret = k <= 8 ? 0.0 : 1.0;  // last-2 window mean is 1
      records.push_back(rec);
    }
  CHECK(mean_episode_ms(records, 5) == Catch::Approx(8.0));
  CHECK(final_window_mean_return(records, 2) == Catch::Approx(1.0));
  CHECK(mean_episode_ms({}, 5) == 0.0);
}

TEST_CASE("hard instance runs end to end", "[bench]") {
  ExperimentConfig cfg;
  cfg.env_kind = EnvKind::kHard;
  cfg.d_mnl = 5;
  cfg.d_lin = 6;
  cfg.horizon = 3;
  cfg.agent_kind = AgentKind::kMnlVql;
  cfg.radius_scale = 0.1;
  cfg.beta_scale = 0.01;
  cfg.episodes = 4;
  cfg.replications = 1;
  cfg.base_seed = 5;
  cfg.timing_wall = false;
  const auto records = run_experiment(cfg);
  REQUIRE(records.size() == 4);
  double prev = 0.0;
  for (const auto& rec : records) {
    CHECK(std::isfinite(rec.ret));
    CHECK(rec.cum_regret_expected >= prev - 1e-12);
    prev = rec.cum_regret_expected;
  }
}

TEST_CASE("run_experiment rejects invalid configs with field names",
          "[bench]") {
  ExperimentConfig cfg = small_shopping_config();
  cfg.episodes = 0;
  try {
    run_experiment(cfg);
    FAIL("expected invalid_argument");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("run.episodes") != std::string::npos);
  }
}
