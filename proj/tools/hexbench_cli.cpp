#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hexbench/harness.hpp"

namespace fs = std::filesystem;
using namespace hexbench;

namespace {

// 0 success, 2 usage/config error, 3 run failure, 4 verification mismatch
constexpr int kExitConfig = 2;
constexpr int kExitRun = 3;
constexpr int kExitMismatch = 4;

int env_workers(int cli_value) {
    if (cli_value > 0) return cli_value;
    if (const char* v = std::getenv("HEXBENCH_WORKERS")) {
        const int n = std::atoi(v);
        if (n > 0) return n;
    }
    return 1;
}

std::optional<fs::path> env_out_root() {
    if (const char* v = std::getenv("HEXBENCH_OUT_ROOT")) return fs::path(v);
    return std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hexbench: MAP-Elites vs PPO benchmarking harness"};
    app.require_subcommand(1);
    int workers = 0;
    app.add_option("-j,--workers", workers, "worker threads (default: $HEXBENCH_WORKERS or 1)");

    std::string config_path;
    bool force = false;
    auto* run_cmd = app.add_subcommand("run", "execute one configured run");
    run_cmd->add_option("config", config_path, "key=value run config file")->required();
    run_cmd->add_flag("--force", force, "re-execute even if the run directory is complete");

    std::string plan_path;
    auto* search_cmd = app.add_subcommand("search", "two-phase hyper-parameter search");
    search_cmd->add_option("plan", plan_path, "key=value search plan file")->required();

    std::vector<std::string> dirs_a, dirs_b;
    std::string compare_out;
    auto* compare_cmd = app.add_subcommand("compare", "paired comparison of two run sets");
    compare_cmd->add_option("-a", dirs_a, "run directories, side A")->required();
    compare_cmd->add_option("-b", dirs_b, "run directories, side B")->required();
    compare_cmd->add_option("-o,--out", compare_out, "report directory")->required();

    std::string artifact_path;
    int cell = -1;
    auto* replay_cmd = app.add_subcommand("replay", "re-evaluate a stored artifact bit-exactly");
    replay_cmd->add_option("artifact", artifact_path, "archive.bin or checkpoint.bin")->required();
    replay_cmd->add_option("--cell", cell, "check a single archive cell");

    std::string curves_dir;
    auto* dump_cmd = app.add_subcommand("dump-curves", "print a run's curve CSV to stdout");
    dump_cmd->add_option("run_dir", curves_dir, "run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        if (*run_cmd) {
            harness::RunConfig config = harness::parse_config_file(config_path);
            if (const auto root = env_out_root()) config.out_dir = root->string();
            const auto outcome = harness::run(config, force, env_workers(workers));
            std::cout << (outcome.skipped ? "skipped (complete): " : "finished: ")
                      << outcome.paths.dir.string() << "\n"
                      << "frames_consumed = " << outcome.record.frames_consumed << "\n"
                      << "final_performance = "
                      << harness::format_double(outcome.record.final_performance) << "\n";
        } else if (*search_cmd) {
            harness::PlanFile plan = harness::parse_plan_file(plan_path);
            if (const auto root = env_out_root()) plan.out_dir = root->string();
            const auto outcome = harness::search(plan, env_workers(workers));
            std::cout << "report: " << outcome.report_dir.string() << "\n"
                      << "winner_config = " << outcome.report.winner_config << "\n"
                      << "phase1_frames = " << outcome.report.phase1_frames << "\n"
                      << "phase2_frames = " << outcome.report.phase2_frames << "\n";
        } else if (*compare_cmd) {
            std::vector<fs::path> a(dirs_a.begin(), dirs_a.end());
            std::vector<fs::path> b(dirs_b.begin(), dirs_b.end());
            const auto result = harness::compare(a, b, compare_out);
            if (result.wilcoxon) {
                std::cout << "wilcoxon: W = " << harness::format_double(result.wilcoxon->statistic)
                          << ", p = " << harness::format_double(result.wilcoxon->p_value)
                          << ", n = " << result.wilcoxon->n_effective << " ("
                          << stats::wilcoxon_method_name(result.wilcoxon->method) << ")\n";
            } else {
                std::cout << "wilcoxon: unavailable (" << result.wilcoxon_failure << ")\n";
            }
            std::cout << "report: " << compare_out << "\n";
        } else if (*replay_cmd) {
            std::optional<int> cell_opt;
            if (replay_cmd->count("--cell") > 0) cell_opt = cell;
            const auto report = harness::replay(artifact_path, cell_opt);
            std::cout << "checked = " << report.checked
                      << ", mismatched = " << report.mismatched << "\n";
            if (report.mismatched > 0) return kExitMismatch;
        } else if (*dump_cmd) {
            harness::dump_curves(curves_dir, std::cout);
        }
    } catch (const harness::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRun;
    }
    return 0;
}
