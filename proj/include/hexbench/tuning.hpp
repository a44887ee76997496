#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "hexbench/env.hpp"
#include "hexbench/qd.hpp"
#include "hexbench/rl.hpp"
#include "hexbench/rng.hpp"

namespace hexbench::tuning {

enum class Algorithm { Ppo, MapElites };

/// Two-phase random search: screen many sampled configurations on a short
/// horizon, replicate the best on a long one.
struct SearchPlan {
    Algorithm algorithm = Algorithm::MapElites;
    env::ControllerMode mode = env::ControllerMode::OpenLoop;
    env::EnvKind env_kind = env::EnvKind::Oracle;
    env::HexapodConfig env_cfg;
    int phase1_num_configs = 10;
    int phase1_replications = 1;
    std::int64_t phase1_horizon_frames = 0;
    int phase2_top_k = 1;
    int phase2_replications = 1;
    std::int64_t phase2_horizon_frames = 0;
};

/// Exactly one of the two is meaningful, per plan.algorithm.
struct SampledConfig {
    rl::PpoHyperParams ppo;
    qd::MeHyperParams me;
};

/// Fixed draw order: learning rate, clip, entropy gate, entropy value,
/// batch frames, architecture.
rl::PpoHyperParams sample_ppo_config(Rng& rng, env::ControllerMode mode);
/// Draw order: mutation rate, architecture, descriptor base.
qd::MeHyperParams sample_me_config(Rng& rng, env::ControllerMode mode);

struct TuningRunRecord {
    int phase = 1;
    int config_index = 0;
    int replication = 0;
    std::uint64_t run_seed = 0;
    double final_performance = 0.0;  // -inf for failed runs
    std::int64_t frames_consumed = 0;
    bool failed = false;
};

struct SearchReport {
    SearchPlan plan;
    std::vector<SampledConfig> configs;
    std::vector<TuningRunRecord> runs;
    std::vector<int> phase1_ranking;  // config indices, best first
    std::vector<double> phase1_medians;  // indexed by config
    int winner_config = -1;
    std::int64_t phase1_frames = 0;
    std::int64_t phase2_frames = 0;
};

/// Seed for one run; pure in (master_seed, phase, config, replication).
std::uint64_t run_seed(std::uint64_t master_seed, int phase, int config_index, int replication);

/// Executes one run to the horizon and reports its final performance
/// (MAP-Elites: best archive fitness; PPO: mean episode reward). Harness
/// overrides this to persist artifacts and skip completed runs on restart.
using RunExecutor = std::function<TuningRunRecord(
    int phase, int config_index, int replication, const SampledConfig& config,
    std::int64_t horizon_frames)>;

/// In-process executor with no persistence.
RunExecutor make_default_executor(const SearchPlan& plan, std::uint64_t master_seed);

/// Runs both phases. Configurations are sampled deterministically from the
/// master seed; runs execute on `workers` threads; ranking is by median final
/// performance, ties broken by lower config index.
SearchReport run_search(const SearchPlan& plan, std::uint64_t master_seed, int workers = 1,
                        const RunExecutor& executor = nullptr);

/// Final performance of a finished run per the plan's algorithm.
double me_final_performance(const qd::EvolveResult& r);
double ppo_final_performance(const rl::TrainResult& r);

}  // namespace hexbench::tuning
