#include "hexbench/tuning.hpp"

#include <algorithm>
#include <cassert>
#include <limits>
#include <mutex>
#include <thread>

#include "hexbench/stats.hpp"

namespace hexbench::tuning {

rl::PpoHyperParams sample_ppo_config(Rng& rng, env::ControllerMode mode) {
    rl::PpoHyperParams hp;
    hp.learning_rate = log_uniform(rng, 5e-5, 1e-2);
    hp.clip_eps = log_uniform(rng, 5e-2, 4e-1);
    hp.c2 = uniform01(rng) < 0.75 ? 0.0 : log_uniform(rng, 1e-4, 1e-2);
    if (mode == env::ControllerMode::OpenLoop) {
        hp.batch_frames = 1024 * static_cast<int>(2 + uniform_index(rng, 31));  // [2,32] Ki
    } else {
        static constexpr int kOptionsKi[3] = {16, 32, 64};
        hp.batch_frames = 1024 * kOptionsKi[uniform_index(rng, 3)];
    }
    const auto& menu =
        mode == env::ControllerMode::OpenLoop ? nn::open_loop_menu() : nn::closed_loop_menu();
    hp.arch = menu[uniform_index(rng, menu.size())];
    return hp;
}

qd::MeHyperParams sample_me_config(Rng& rng, env::ControllerMode mode) {
    qd::MeHyperParams hp;
    hp.mutation_rate = uniform(rng, 0.0, 0.5);
    const auto& menu =
        mode == env::ControllerMode::OpenLoop ? nn::open_loop_menu() : nn::closed_loop_menu();
    hp.arch = menu[uniform_index(rng, menu.size())];
    hp.descriptor_base = uniform_index(rng, 2) == 0 ? 4 : 5;
    return hp;
}

std::uint64_t run_seed(std::uint64_t master_seed, int phase, int config_index, int replication) {
    return derive_seed(master_seed,
                       (static_cast<std::uint64_t>(phase) << 32) |
                           static_cast<std::uint64_t>(config_index),
                       static_cast<std::uint64_t>(replication));
}

double me_final_performance(const qd::EvolveResult& r) {
    return r.curve.empty() ? -std::numeric_limits<double>::infinity() : r.curve.back().best_fitness;
}

double ppo_final_performance(const rl::TrainResult& r) {
    return r.curve.empty() ? -std::numeric_limits<double>::infinity()
                           : r.curve.back().mean_episode_reward;
}

RunExecutor make_default_executor(const SearchPlan& plan, std::uint64_t master_seed) {
    return [plan, master_seed](int phase, int config_index, int replication,
                               const SampledConfig& config,
                               std::int64_t horizon_frames) -> TuningRunRecord {
        TuningRunRecord rec;
        rec.phase = phase;
        rec.config_index = config_index;
        rec.replication = replication;
        rec.run_seed = run_seed(master_seed, phase, config_index, replication);
        const auto factory = env::make_env_factory(plan.env_kind, plan.env_cfg);
        try {
            if (plan.algorithm == Algorithm::MapElites) {
                const auto r = qd::evolve(factory, plan.mode, config.me, rec.run_seed,
                                          horizon_frames);
                rec.final_performance = me_final_performance(r);
                rec.frames_consumed = r.frames_consumed;
            } else {
                const auto r = rl::train(factory, plan.mode, config.ppo, rec.run_seed,
                                         horizon_frames);
                rec.final_performance = ppo_final_performance(r);
                rec.frames_consumed = r.frames_consumed;
            }
            if (!std::isfinite(rec.final_performance)) rec.failed = true;
        } catch (const std::exception&) {
            rec.failed = true;
        }
        if (rec.failed) rec.final_performance = -std::numeric_limits<double>::infinity();
        return rec;
    };
}

namespace {

struct PendingRun {
    int phase;
    int config_index;
    int replication;
    std::int64_t horizon;
};

// results keyed by (config, replication), never by completion order
void execute_all(const std::vector<PendingRun>& pending, const std::vector<SampledConfig>& configs,
                 const RunExecutor& executor, int workers, std::vector<TuningRunRecord>& out) {
    out.resize(pending.size());
    std::size_t next = 0;
    std::mutex mu;
    const auto worker_fn = [&] {
        while (true) {
            std::size_t i;
            {
                std::lock_guard lock(mu);
                if (next >= pending.size()) return;
                i = next++;
            }
            const PendingRun& p = pending[i];
            out[i] = executor(p.phase, p.config_index, p.replication,
                              configs[static_cast<std::size_t>(p.config_index)], p.horizon);
        }
    };
    if (workers <= 1) {
        worker_fn();
        return;
    }
    std::vector<std::thread> threads;
    const int nw = std::min<int>(workers, static_cast<int>(pending.size()));
    threads.reserve(static_cast<std::size_t>(nw));
    for (int w = 0; w < nw; ++w) threads.emplace_back(worker_fn);
    for (auto& t : threads) t.join();
}

double median_for_config(const std::vector<TuningRunRecord>& runs, int phase, int config) {
    std::vector<double> finals;
    for (const auto& r : runs) {
        if (r.phase == phase && r.config_index == config) finals.push_back(r.final_performance);
    }
    assert(!finals.empty());
    // -inf scores sort below everything, so failed runs sink the median
    return stats::median(finals);
}

}  // namespace

SearchReport run_search(const SearchPlan& plan, std::uint64_t master_seed, int workers,
                        const RunExecutor& executor) {
    assert(plan.phase2_top_k <= plan.phase1_num_configs);
    SearchReport report;
    report.plan = plan;

    auto config_rng = make_rng(derive_seed(master_seed, 0xc0f1));
    report.configs.reserve(static_cast<std::size_t>(plan.phase1_num_configs));
    for (int i = 0; i < plan.phase1_num_configs; ++i) {
        SampledConfig c;
        if (plan.algorithm == Algorithm::Ppo) {
            c.ppo = sample_ppo_config(config_rng, plan.mode);
        } else {
            c.me = sample_me_config(config_rng, plan.mode);
        }
        report.configs.push_back(c);
    }

    const RunExecutor exec = executor ? executor : make_default_executor(plan, master_seed);

    std::vector<PendingRun> phase1;
    for (int c = 0; c < plan.phase1_num_configs; ++c) {
        for (int r = 0; r < plan.phase1_replications; ++r) {
            phase1.push_back({1, c, r, plan.phase1_horizon_frames});
        }
    }
    std::vector<TuningRunRecord> phase1_runs;
    execute_all(phase1, report.configs, exec, workers, phase1_runs);
    for (const auto& r : phase1_runs) {
        report.phase1_frames += r.frames_consumed;
        report.runs.push_back(r);
    }

    report.phase1_medians.resize(static_cast<std::size_t>(plan.phase1_num_configs));
    report.phase1_ranking.resize(static_cast<std::size_t>(plan.phase1_num_configs));
    for (int c = 0; c < plan.phase1_num_configs; ++c) {
        report.phase1_medians[static_cast<std::size_t>(c)] = median_for_config(phase1_runs, 1, c);
        report.phase1_ranking[static_cast<std::size_t>(c)] = c;
    }
    std::stable_sort(report.phase1_ranking.begin(), report.phase1_ranking.end(),
                     [&](int a, int b) {
                         return report.phase1_medians[static_cast<std::size_t>(a)] >
                                report.phase1_medians[static_cast<std::size_t>(b)];
                     });

    std::vector<PendingRun> phase2;
    for (int k = 0; k < plan.phase2_top_k; ++k) {
        const int c = report.phase1_ranking[static_cast<std::size_t>(k)];
        for (int r = 0; r < plan.phase2_replications; ++r) {
            phase2.push_back({2, c, r, plan.phase2_horizon_frames});
        }
    }
    std::vector<TuningRunRecord> phase2_runs;
    execute_all(phase2, report.configs, exec, workers, phase2_runs);
    for (const auto& r : phase2_runs) {
        report.phase2_frames += r.frames_consumed;
        report.runs.push_back(r);
    }

    double best_median = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < plan.phase2_top_k; ++k) {
        const int c = report.phase1_ranking[static_cast<std::size_t>(k)];
        const double m = median_for_config(phase2_runs, 2, c);
        if (m > best_median || (m == best_median && c < report.winner_config)) {
            best_median = m;
            report.winner_config = c;
        }
    }
    if (report.winner_config < 0 && !report.phase1_ranking.empty()) {
        report.winner_config = report.phase1_ranking.front();
    }
    return report;
}

}  // namespace hexbench::tuning
