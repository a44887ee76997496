#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "hexbench/env.hpp"
#include "hexbench/qd.hpp"
#include "hexbench/rl.hpp"
#include "hexbench/stats.hpp"
#include "hexbench/tuning.hpp"

namespace hexbench::harness {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};
struct MismatchedReplications : std::runtime_error {
    explicit MismatchedReplications(const std::string& what) : std::runtime_error(what) {}
};

/// One experiment run, fully determined by (this config, build).
struct RunConfig {
    tuning::Algorithm algorithm = tuning::Algorithm::MapElites;
    env::ControllerMode mode = env::ControllerMode::OpenLoop;
    env::EnvKind env_kind = env::EnvKind::Hexapod;
    env::HexapodConfig env_cfg;
    rl::PpoHyperParams ppo;  // arch input_size resolved from env+mode at run time
    qd::MeHyperParams me;
    std::int64_t budget_frames = 1000000;
    std::uint64_t seed = 1;
    std::int64_t curve_interval = 0;  // frames between emitted samples; 0 = all
    std::string out_dir = "out";

    bool operator==(const RunConfig&) const = default;
};

/// Flat key=value text, one pair per line, '#' comments. parse(print(c)) == c.
RunConfig parse_config(std::istream& is, const std::string& origin = "<config>");
RunConfig parse_config_file(const std::filesystem::path& path);
void print_config(std::ostream& os, const RunConfig& c);

struct RunPaths {
    std::filesystem::path dir;
    std::filesystem::path config;      // config.kv
    std::filesystem::path curve;       // curve.csv
    std::filesystem::path record;      // record.kv
    std::filesystem::path artifact;    // archive.bin or checkpoint.bin
    std::filesystem::path archive_csv;     // MAP-Elites only
    std::filesystem::path insertions_csv;  // MAP-Elites only
};

RunPaths run_paths(const RunConfig& c);
/// Seed-keyed directory for a run under an explicit parent.
RunPaths run_paths_in(const std::filesystem::path& dir);

struct RunRecord {
    std::uint64_t seed = 0;
    std::int64_t frames_consumed = 0;
    double final_performance = 0.0;     // last curve sample's best statistic
    double final_policy_fitness = 0.0;  // deterministic replay target
    double wall_clock_s = 0.0;          // excluded from the determinism contract
    std::string artifact;
};

struct RunOutcome {
    RunPaths paths;
    RunRecord record;
    bool skipped = false;  // already complete, not re-executed
};

/// Dispatches to MAP-Elites or PPO and persists config snapshot, curve CSV,
/// artifact, and record into the seed-keyed run directory. A completed
/// directory is never mutated: re-running returns the stored outcome unless
/// force is set.
RunOutcome run(const RunConfig& config, bool force = false, int workers = 1,
               std::optional<std::filesystem::path> dir_override = {});

RunRecord read_record(const std::filesystem::path& record_file);

// --- compare ----------------------------------------------------------------

struct CurvePoint {
    std::int64_t frames = 0;
    double value = 0.0;  // comparison statistic (meters)
};

struct CompareResult {
    std::optional<stats::WilcoxonResult> wilcoxon;  // empty when the pairing failed
    std::string wilcoxon_failure;
    std::vector<double> finals_a;
    std::vector<double> finals_b;
};

/// Emits quartile curves per side, the paired Wilcoxon test on final
/// performances (paired by replication order), and, when side A holds
/// archives, per-sample outperform counts of A against B's median curve.
CompareResult compare(const std::vector<std::filesystem::path>& run_dirs_a,
                      const std::vector<std::filesystem::path>& run_dirs_b,
                      const std::filesystem::path& out_dir);

// --- search -----------------------------------------------------------------

struct PlanFile {
    tuning::SearchPlan plan;
    std::uint64_t seed = 1;
    std::string out_dir = "search-out";
};

PlanFile parse_plan_file(const std::filesystem::path& path);

struct SearchOutcome {
    std::filesystem::path report_dir;
    tuning::SearchReport report;
    RunConfig winner;  // ready-to-run config at the phase-2 horizon
};

/// Two-phase search with persisted, resumable runs: a run directory with a
/// record is detected and skipped on restart.
SearchOutcome search(const PlanFile& plan_file, int workers = 1);

// --- replay -----------------------------------------------------------------

struct ReplayReport {
    int checked = 0;
    int mismatched = 0;
};

/// Re-evaluates stored elites (one cell or all) or a checkpoint's mean policy
/// against the recorded fitness, bit-exact.
ReplayReport replay(const std::filesystem::path& artifact, std::optional<int> cell = {});

/// Re-emits a run's curve CSV to the stream.
void dump_curves(const std::filesystem::path& run_dir, std::ostream& os);

std::string format_double(double v);  // shortest round-trippable decimal

}  // namespace hexbench::harness
