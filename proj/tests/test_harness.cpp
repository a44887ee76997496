#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "hexbench/harness.hpp"

using namespace hexbench;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("hexbench-test-" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

harness::RunConfig oracle_me_config(const fs::path& out, std::uint64_t seed) {
    harness::RunConfig c;
    c.algorithm = tuning::Algorithm::MapElites;
    c.env_kind = env::EnvKind::Oracle;
    c.env_cfg.episode_len = 20;
    c.env_cfg.dt = 5.0 / 20.0;
    c.me.arch = {1, 2, 2, 18};
    c.me.batch_per_gen = 10;
    c.budget_frames = 4000;
    c.seed = seed;
    c.out_dir = out.string();
    return c;
}

harness::RunConfig oracle_ppo_config(const fs::path& out, std::uint64_t seed) {
    harness::RunConfig c;
    c.algorithm = tuning::Algorithm::Ppo;
    c.env_kind = env::EnvKind::Oracle;
    c.env_cfg.episode_len = 16;
    c.env_cfg.dt = 5.0 / 16.0;
    c.ppo.arch = {1, 2, 2, 18};
    c.ppo.batch_frames = 128;
    c.ppo.num_actors = 4;
    c.ppo.num_minibatches = 8;
    c.ppo.epochs = 2;
    c.budget_frames = 10 * 128;
    c.seed = seed;
    c.out_dir = out.string();
    return c;
}

}  // namespace

TEST_CASE("format_double prints shortest round-trippable decimals") {
    CHECK(harness::format_double(0.1) == "0.1");
    CHECK(harness::format_double(1.0) == "1");
    CHECK(harness::format_double(-2.5) == "-2.5");
    auto rng = make_rng(61);
    for (int i = 0; i < 2000; ++i) {
        const double v = (uniform01(rng) - 0.5) * std::pow(10.0, uniform(rng, -12, 12));
        const double back = std::stod(harness::format_double(v));
        CHECK(back == v);
    }
}

TEST_CASE("run configs round-trip through print and parse") {
    harness::RunConfig c;
    c.algorithm = tuning::Algorithm::Ppo;
    c.mode = env::ControllerMode::ClosedLoop;
    c.env_kind = env::EnvKind::Hexapod;
    c.ppo.learning_rate = 0.00037;
    c.ppo.c2 = 0.003;
    c.ppo.arch = {18, 5, 5, 18};
    c.ppo.batch_frames = 2048;
    c.me.mutation_rate = 0.31;
    c.me.descriptor_base = 5;
    c.budget_frames = 123456;
    c.seed = 987654321;
    c.curve_interval = 5000;
    c.out_dir = "elsewhere";

    std::stringstream ss;
    harness::print_config(ss, c);
    harness::RunConfig parsed = harness::parse_config(ss);
    // input sizes are resolved from the environment at run time, not parsed
    parsed.ppo.arch.input_size = c.ppo.arch.input_size;
    parsed.me.arch.input_size = c.me.arch.input_size;
    CHECK(parsed == c);
}

TEST_CASE("config parsing diagnoses unknown keys, bad values, duplicates") {
    const auto parse_str = [](const std::string& text) {
        std::istringstream is(text);
        return harness::parse_config(is, "test.kv");
    };
    CHECK_NOTHROW(parse_str("algorithm = map-elites\n# a comment\nseed = 3\n"));

    CHECK_THROWS_WITH_AS(parse_str("nonsense = 1\n"), doctest::Contains("unknown field"),
                         harness::ConfigError);
    CHECK_THROWS_WITH_AS(parse_str("seed = banana\n"), doctest::Contains("test.kv:1"),
                         harness::ConfigError);
    CHECK_THROWS_WITH_AS(parse_str("seed = 1\nseed = 2\n"), doctest::Contains("duplicate"),
                         harness::ConfigError);
    CHECK_THROWS_WITH_AS(parse_str("algorithm = spam\n"), doctest::Contains("ppo|map-elites"),
                         harness::ConfigError);
    CHECK_THROWS_WITH_AS(parse_str("just some text\n"), doctest::Contains("key = value"),
                         harness::ConfigError);
    CHECK_THROWS_AS(parse_str("me.descriptor_base = 7\n"), harness::ConfigError);
    CHECK_THROWS_AS(parse_str("ppo.batch_frames = 100\nppo.num_minibatches = 32\n"),
                    harness::ConfigError);
}

TEST_CASE("map-elites runs persist, skip, and reproduce byte-identically") {
    const fs::path out = fresh_dir("me-run");
    const auto config = oracle_me_config(out, 11);

    const auto first = harness::run(config);
    CHECK_FALSE(first.skipped);
    CHECK(first.record.frames_consumed == 4000);
    CHECK(fs::exists(first.paths.config));
    CHECK(fs::exists(first.paths.curve));
    CHECK(fs::exists(first.paths.record));
    CHECK(fs::exists(first.paths.artifact));
    CHECK(fs::exists(first.paths.archive_csv));
    CHECK(fs::exists(first.paths.insertions_csv));
    CHECK(first.paths.dir.filename().string() == "map-elites-open-loop-oracle-s11");

    const std::string curve1 = slurp(first.paths.curve);
    const std::string record1 = slurp(first.paths.record);
    const std::string artifact1 = slurp(first.paths.artifact);

    const auto second = harness::run(config);
    CHECK(second.skipped);
    CHECK(second.record.final_performance == first.record.final_performance);
    CHECK(slurp(second.paths.curve) == curve1);

    const auto forced = harness::run(config, /*force=*/true);
    CHECK_FALSE(forced.skipped);
    CHECK(slurp(forced.paths.curve) == curve1);
    CHECK(slurp(forced.paths.artifact) == artifact1);
    // the record differs only in wall clock; all determinism-contract fields match
    const auto rec = harness::read_record(forced.paths.record);
    const auto rec1 = harness::read_record(first.paths.record);
    CHECK(rec.seed == rec1.seed);
    CHECK(rec.frames_consumed == rec1.frames_consumed);
    CHECK(rec.final_performance == rec1.final_performance);
    CHECK(rec.final_policy_fitness == rec1.final_policy_fitness);
    (void)record1;

    // the stored config reparses to the original
    auto reparsed = harness::parse_config_file(first.paths.config);
    reparsed.ppo.arch.input_size = config.ppo.arch.input_size;
    reparsed.me.arch.input_size = config.me.arch.input_size;
    CHECK(reparsed == config);
}

TEST_CASE("archived elites replay to their stored fitness") {
    const fs::path out = fresh_dir("me-replay");
    const auto outcome = harness::run(oracle_me_config(out, 21));
    const auto report = harness::replay(outcome.paths.artifact);
    CHECK(report.checked > 0);
    CHECK(report.mismatched == 0);

    // single-cell replay works too
    const auto record = harness::read_record(outcome.paths.record);
    std::ifstream blob(outcome.paths.artifact, std::ios::binary);
    nn::MlpArchitecture arch;
    const auto archive = qd::read_archive(blob, arch);
    const int cell = archive.occupied_cells().front();
    const auto one = harness::replay(outcome.paths.artifact, cell);
    CHECK(one.checked == 1);
    CHECK(one.mismatched == 0);
    CHECK_THROWS_AS(harness::replay(outcome.paths.artifact, -5), harness::ConfigError);
    (void)record;
}

TEST_CASE("ppo runs persist and their checkpoint replays exactly") {
    const fs::path out = fresh_dir("ppo-run");
    const auto config = oracle_ppo_config(out, 31);
    const auto outcome = harness::run(config);
    CHECK_FALSE(outcome.skipped);
    CHECK(outcome.record.frames_consumed == config.budget_frames);
    CHECK(outcome.paths.artifact.filename() == "checkpoint.bin");
    CHECK(fs::exists(outcome.paths.artifact));

    const auto report = harness::replay(outcome.paths.artifact);
    CHECK(report.checked == 1);
    CHECK(report.mismatched == 0);

    const auto again = harness::run(config, /*force=*/true);
    CHECK(slurp(again.paths.curve) == slurp(outcome.paths.curve));
    CHECK(slurp(again.paths.artifact) == slurp(outcome.paths.artifact));
}

TEST_CASE("curve downsampling keeps the grid sparse but retains the last point") {
    const fs::path out = fresh_dir("me-downsample");
    auto config = oracle_me_config(out, 41);
    const auto full = harness::run(config);
    const std::string full_curve = slurp(full.paths.curve);
    const auto lines = static_cast<int>(std::count(full_curve.begin(), full_curve.end(), '\n'));
    CHECK(lines == 20 + 1);  // 4000 frames / 200-frame generations + header

    config.curve_interval = 1000;
    const auto sparse = harness::run(config, false, 1, out / "sparse");
    const std::string sparse_curve = slurp(sparse.paths.curve);
    const auto sparse_lines =
        static_cast<int>(std::count(sparse_curve.begin(), sparse_curve.end(), '\n'));
    CHECK(sparse_lines < lines);
    CHECK(sparse_curve.find("\n4000,") != std::string::npos);  // final sample retained

    std::ostringstream dumped;
    harness::dump_curves(sparse.paths.dir, dumped);
    CHECK(dumped.str() == sparse_curve);
}

TEST_CASE("comparison reports quartiles, wilcoxon, and outperform counts") {
    const fs::path out = fresh_dir("compare");
    std::vector<fs::path> me_dirs, ppo_dirs;
    std::vector<double> me_finals, ppo_finals;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto me = harness::run(oracle_me_config(out / "me", seed));
        const auto ppo = harness::run(oracle_ppo_config(out / "ppo", seed));
        me_dirs.push_back(me.paths.dir);
        ppo_dirs.push_back(ppo.paths.dir);
        me_finals.push_back(me.record.final_performance);
        ppo_finals.push_back(ppo.record.final_performance);
    }
    const fs::path report_dir = out / "report";
    const auto result = harness::compare(me_dirs, ppo_dirs, report_dir);
    CHECK(result.finals_a == me_finals);
    CHECK(result.finals_b == ppo_finals);
    REQUIRE(result.wilcoxon.has_value());
    const auto direct = stats::wilcoxon_signed_rank(me_finals, ppo_finals);
    CHECK(result.wilcoxon->p_value == direct.p_value);
    CHECK(result.wilcoxon->statistic == direct.statistic);

    CHECK(fs::exists(report_dir / "quartiles_a.csv"));
    CHECK(fs::exists(report_dir / "quartiles_b.csv"));
    CHECK(fs::exists(report_dir / "wilcoxon.csv"));
    CHECK(fs::exists(report_dir / "outperform_counts.csv"));

    const std::string qa = slurp(report_dir / "quartiles_a.csv");
    CHECK(qa.rfind("frames,q1_m,median_m,q3_m", 0) == 0);
    const std::string wil = slurp(report_dir / "wilcoxon.csv");
    CHECK(wil.find("exact") != std::string::npos);
    const std::string oc = slurp(report_dir / "outperform_counts.csv");
    CHECK(oc.rfind("frames,count_rep0", 0) == 0);
    CHECK(std::count(oc.begin(), oc.end(), '\n') == 20 + 1);  // one row per curve sample

    // mismatched replication counts abort the pairing
    CHECK_THROWS_AS(
        harness::compare({me_dirs[0]}, ppo_dirs, out / "bad"),
        harness::MismatchedReplications);
}

TEST_CASE("plan files parse and searches resume from persisted runs") {
    const fs::path out = fresh_dir("search");
    const fs::path plan_path = out / "plan.kv";
    {
        std::ofstream f(plan_path);
        f << "algorithm = map-elites\n"
          << "mode = open-loop\n"
          << "env = oracle\n"
          << "env.episode_len = 20\n"
          << "phase1.num_configs = 4\n"
          << "phase1.replications = 1\n"
          << "phase1.horizon_frames = 2000\n"
          << "phase2.top_k = 2\n"
          << "phase2.replications = 3\n"
          << "phase2.horizon_frames = 4000\n"
          << "seed = 303\n"
          << "out_dir = " << (out / "report").string() << "\n";
    }
    const auto plan = harness::parse_plan_file(plan_path);
    CHECK(plan.plan.phase1_num_configs == 4);
    CHECK(plan.plan.env_kind == env::EnvKind::Oracle);
    CHECK(plan.seed == 303);

    const auto outcome = harness::search(plan);
    CHECK(outcome.report.winner_config >= 0);
    CHECK(fs::exists(outcome.report_dir / "ranking.csv"));
    CHECK(fs::exists(outcome.report_dir / "winner.kv"));
    CHECK(fs::exists(outcome.report_dir / "runs" / "p1-c0-r0" / "record.kv"));
    const std::string p2_name =
        "p2-c" + std::to_string(outcome.report.phase1_ranking[0]) + "-r2";
    CHECK(fs::exists(outcome.report_dir / "runs" / p2_name));

    // the winner config re-parses and matches the promoted sample
    const auto winner = harness::parse_config_file(outcome.report_dir / "winner.kv");
    CHECK(winner.budget_frames == 4000);
    CHECK(winner.algorithm == tuning::Algorithm::MapElites);

    // a second invocation reuses every stored run and lands on the same winner
    const auto resumed = harness::search(plan);
    CHECK(resumed.report.winner_config == outcome.report.winner_config);
    CHECK(resumed.report.phase1_ranking == outcome.report.phase1_ranking);
    for (std::size_t i = 0; i < resumed.report.runs.size(); ++i) {
        CHECK(resumed.report.runs[i].final_performance ==
              outcome.report.runs[i].final_performance);
    }
}

TEST_CASE("failing plan fields raise config errors") {
    const fs::path out = fresh_dir("bad-plan");
    const fs::path plan_path = out / "plan.kv";
    {
        std::ofstream f(plan_path);
        f << "phase1.num_configs = 2\nphase2.top_k = 5\nphase1.horizon_frames = 10\n"
          << "phase2.horizon_frames = 10\n";
    }
    CHECK_THROWS_WITH_AS(harness::parse_plan_file(plan_path), doctest::Contains("top_k"),
                         harness::ConfigError);
    CHECK_THROWS_AS(harness::parse_plan_file(out / "missing.kv"), harness::ConfigError);
}
