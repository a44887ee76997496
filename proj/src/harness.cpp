#include "hexbench/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace hexbench::harness {

namespace fs = std::filesystem;

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

// --- key=value parsing ------------------------------------------------------

namespace {

struct KvFile {
    std::string origin;
    std::map<std::string, std::pair<std::string, int>> entries;  // value, line
    mutable std::vector<std::string> consumed;

    [[noreturn]] void fail(const std::string& msg, int line = 0) const {
        std::ostringstream oss;
        oss << origin;
        if (line > 0) oss << ":" << line;
        oss << ": " << msg;
        throw ConfigError(oss.str());
    }

    bool has(const std::string& key) const { return entries.count(key) != 0; }

    std::optional<std::string> raw(const std::string& key) const {
        const auto it = entries.find(key);
        if (it == entries.end()) return std::nullopt;
        consumed.push_back(key);
        return it->second.first;
    }

    int line_of(const std::string& key) const {
        const auto it = entries.find(key);
        return it == entries.end() ? 0 : it->second.second;
    }

    std::string get_string(const std::string& key, const std::string& def) const {
        return raw(key).value_or(def);
    }

    double get_double(const std::string& key, double def) const {
        const auto v = raw(key);
        if (!v) return def;
        try {
            std::size_t pos = 0;
            const double d = std::stod(*v, &pos);
            if (pos != v->size()) throw std::invalid_argument("trailing characters");
            return d;
        } catch (const std::exception& e) {
            fail("field '" + key + "': not a number: '" + *v + "'", line_of(key));
        }
    }

    std::int64_t get_int(const std::string& key, std::int64_t def) const {
        const auto v = raw(key);
        if (!v) return def;
        try {
            std::size_t pos = 0;
            const std::int64_t i = std::stoll(*v, &pos);
            if (pos != v->size()) throw std::invalid_argument("trailing characters");
            return i;
        } catch (const std::exception& e) {
            fail("field '" + key + "': not an integer: '" + *v + "'", line_of(key));
        }
    }

    std::uint64_t get_uint(const std::string& key, std::uint64_t def) const {
        const auto v = raw(key);
        if (!v) return def;
        try {
            std::size_t pos = 0;
            const std::uint64_t i = std::stoull(*v, &pos);
            if (pos != v->size()) throw std::invalid_argument("trailing characters");
            return i;
        } catch (const std::exception& e) {
            fail("field '" + key + "': not an unsigned integer: '" + *v + "'", line_of(key));
        }
    }

    bool get_bool(const std::string& key, bool def) const {
        const auto v = raw(key);
        if (!v) return def;
        if (*v == "true" || *v == "1") return true;
        if (*v == "false" || *v == "0") return false;
        fail("field '" + key + "': expected true/false", line_of(key));
    }

    void reject_unknown() const {
        for (const auto& [key, value] : entries) {
            if (std::find(consumed.begin(), consumed.end(), key) == consumed.end()) {
                fail("unknown field '" + key + "'", value.second);
            }
        }
    }
};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

KvFile read_kv(std::istream& is, const std::string& origin) {
    KvFile kv;
    kv.origin = origin;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) kv.fail("expected 'key = value'", line_no);
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key.empty()) kv.fail("empty key", line_no);
        if (kv.entries.count(key)) kv.fail("duplicate key '" + key + "'", line_no);
        kv.entries[key] = {value, line_no};
    }
    return kv;
}

const char* algo_name(tuning::Algorithm a) {
    return a == tuning::Algorithm::Ppo ? "ppo" : "map-elites";
}
const char* mode_name(env::ControllerMode m) {
    return m == env::ControllerMode::OpenLoop ? "open-loop" : "closed-loop";
}
const char* env_name(env::EnvKind k) { return k == env::EnvKind::Hexapod ? "hexapod" : "oracle"; }

tuning::Algorithm parse_algo(const KvFile& kv, const std::string& key) {
    const std::string v = kv.get_string(key, "map-elites");
    if (v == "ppo") return tuning::Algorithm::Ppo;
    if (v == "map-elites") return tuning::Algorithm::MapElites;
    kv.fail("field '" + key + "': expected ppo|map-elites, got '" + v + "'", kv.line_of(key));
}

env::ControllerMode parse_mode(const KvFile& kv, const std::string& key) {
    const std::string v = kv.get_string(key, "open-loop");
    if (v == "open-loop") return env::ControllerMode::OpenLoop;
    if (v == "closed-loop") return env::ControllerMode::ClosedLoop;
    kv.fail("field '" + key + "': expected open-loop|closed-loop, got '" + v + "'", kv.line_of(key));
}

env::EnvKind parse_env_kind(const KvFile& kv, const std::string& key) {
    const std::string v = kv.get_string(key, "hexapod");
    if (v == "hexapod") return env::EnvKind::Hexapod;
    if (v == "oracle") return env::EnvKind::Oracle;
    kv.fail("field '" + key + "': expected hexapod|oracle, got '" + v + "'", kv.line_of(key));
}

env::HexapodConfig parse_env_cfg(const KvFile& kv) {
    env::HexapodConfig cfg;
    cfg.episode_len = static_cast<int>(kv.get_int("env.episode_len", cfg.episode_len));
    if (cfg.episode_len <= 0) kv.fail("env.episode_len must be positive");
    cfg.dt = 5.0 / static_cast<double>(cfg.episode_len);  // 5 s episodes throughout
    cfg.hip_radius = kv.get_double("env.hip_radius", cfg.hip_radius);
    cfg.l1 = kv.get_double("env.l1", cfg.l1);
    cfg.l2 = kv.get_double("env.l2", cfg.l2);
    cfg.l3 = kv.get_double("env.l3", cfg.l3);
    cfg.joint_limit = kv.get_double("env.joint_limit", cfg.joint_limit);
    cfg.max_joint_speed = kv.get_double("env.max_joint_speed", cfg.max_joint_speed);
    cfg.body_half_height = kv.get_double("env.body_half_height", cfg.body_half_height);
    cfg.contact_tolerance = kv.get_double("env.contact_tolerance", cfg.contact_tolerance);
    if (cfg.hip_radius <= 0 || cfg.l1 <= 0 || cfg.l2 <= 0 || cfg.l3 <= 0) {
        kv.fail("env lengths must be strictly positive");
    }
    if (!(cfg.joint_limit > 0 && cfg.joint_limit <= 3.14159265358979323847)) {
        kv.fail("env.joint_limit must be in (0, pi]");
    }
    return cfg;
}

void print_env_cfg(std::ostream& os, const env::HexapodConfig& cfg) {
    os << "env.episode_len = " << cfg.episode_len << "\n";
    os << "env.hip_radius = " << format_double(cfg.hip_radius) << "\n";
    os << "env.l1 = " << format_double(cfg.l1) << "\n";
    os << "env.l2 = " << format_double(cfg.l2) << "\n";
    os << "env.l3 = " << format_double(cfg.l3) << "\n";
    os << "env.joint_limit = " << format_double(cfg.joint_limit) << "\n";
    os << "env.max_joint_speed = " << format_double(cfg.max_joint_speed) << "\n";
    os << "env.body_half_height = " << format_double(cfg.body_half_height) << "\n";
    os << "env.contact_tolerance = " << format_double(cfg.contact_tolerance) << "\n";
}

}  // namespace

RunConfig parse_config(std::istream& is, const std::string& origin) {
    const KvFile kv = read_kv(is, origin);
    RunConfig c;
    c.algorithm = parse_algo(kv, "algorithm");
    c.mode = parse_mode(kv, "mode");
    c.env_kind = parse_env_kind(kv, "env");
    c.env_cfg = parse_env_cfg(kv);
    c.budget_frames = kv.get_int("budget_frames", c.budget_frames);
    c.seed = kv.get_uint("seed", c.seed);
    c.curve_interval = kv.get_int("curve_interval", c.curve_interval);
    c.out_dir = kv.get_string("out_dir", c.out_dir);
    if (c.budget_frames <= 0) kv.fail("budget_frames must be positive");

    c.ppo.learning_rate = kv.get_double("ppo.learning_rate", c.ppo.learning_rate);
    c.ppo.clip_eps = kv.get_double("ppo.clip_eps", c.ppo.clip_eps);
    c.ppo.c1 = kv.get_double("ppo.c1", c.ppo.c1);
    c.ppo.c2 = kv.get_double("ppo.c2", c.ppo.c2);
    c.ppo.epochs = static_cast<int>(kv.get_int("ppo.epochs", c.ppo.epochs));
    c.ppo.num_minibatches =
        static_cast<int>(kv.get_int("ppo.num_minibatches", c.ppo.num_minibatches));
    c.ppo.batch_frames = static_cast<int>(kv.get_int("ppo.batch_frames", c.ppo.batch_frames));
    c.ppo.gamma = kv.get_double("ppo.gamma", c.ppo.gamma);
    c.ppo.gae_lambda = kv.get_double("ppo.gae_lambda", c.ppo.gae_lambda);
    c.ppo.arch.hidden0 = static_cast<int>(kv.get_int("ppo.hidden0", c.ppo.arch.hidden0));
    c.ppo.arch.hidden1 = static_cast<int>(kv.get_int("ppo.hidden1", c.ppo.arch.hidden1));
    c.ppo.num_actors = static_cast<int>(kv.get_int("ppo.num_actors", c.ppo.num_actors));
    c.ppo.normalize_advantages =
        kv.get_bool("ppo.normalize_advantages", c.ppo.normalize_advantages);
    c.ppo.normalize_observations =
        kv.get_bool("ppo.normalize_observations", c.ppo.normalize_observations);
    c.ppo.max_grad_norm = kv.get_double("ppo.max_grad_norm", c.ppo.max_grad_norm);
    c.ppo.init_log_std = kv.get_double("ppo.init_log_std", c.ppo.init_log_std);
    if (c.ppo.clip_eps <= 0) kv.fail("ppo.clip_eps must be positive");
    if (!(c.ppo.gamma > 0 && c.ppo.gamma <= 1)) kv.fail("ppo.gamma must be in (0, 1]");
    if (!(c.ppo.gae_lambda >= 0 && c.ppo.gae_lambda <= 1)) {
        kv.fail("ppo.gae_lambda must be in [0, 1]");
    }
    if (c.ppo.num_minibatches <= 0 || c.ppo.batch_frames % c.ppo.num_minibatches != 0) {
        kv.fail("ppo.batch_frames must be divisible by ppo.num_minibatches");
    }
    if (c.ppo.num_actors <= 0 || c.ppo.batch_frames % c.ppo.num_actors != 0) {
        kv.fail("ppo.batch_frames must be divisible by ppo.num_actors");
    }

    c.me.mutation_rate = kv.get_double("me.mutation_rate", c.me.mutation_rate);
    c.me.arch.hidden0 = static_cast<int>(kv.get_int("me.hidden0", c.me.arch.hidden0));
    c.me.arch.hidden1 = static_cast<int>(kv.get_int("me.hidden1", c.me.arch.hidden1));
    c.me.descriptor_base =
        static_cast<int>(kv.get_int("me.descriptor_base", c.me.descriptor_base));
    c.me.batch_per_gen = static_cast<int>(kv.get_int("me.batch_per_gen", c.me.batch_per_gen));
    c.me.nb_gen = static_cast<int>(kv.get_int("me.nb_gen", c.me.nb_gen));
    c.me.mutation_sigma = kv.get_double("me.mutation_sigma", c.me.mutation_sigma);
    c.me.init_range = kv.get_double("me.init_range", c.me.init_range);
    c.me.weight_bound = kv.get_double("me.weight_bound", c.me.weight_bound);
    if (!(c.me.mutation_rate >= 0 && c.me.mutation_rate <= 0.5)) {
        kv.fail("me.mutation_rate must be in [0, 0.5]");
    }
    if (c.me.descriptor_base != 4 && c.me.descriptor_base != 5) {
        kv.fail("me.descriptor_base must be 4 or 5");
    }
    if (c.me.batch_per_gen < 1) kv.fail("me.batch_per_gen must be >= 1");

    kv.reject_unknown();
    return c;
}

RunConfig parse_config_file(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path.string());
    return parse_config(f, path.string());
}

void print_config(std::ostream& os, const RunConfig& c) {
    os << "algorithm = " << algo_name(c.algorithm) << "\n";
    os << "mode = " << mode_name(c.mode) << "\n";
    os << "env = " << env_name(c.env_kind) << "\n";
    os << "budget_frames = " << c.budget_frames << "\n";
    os << "seed = " << c.seed << "\n";
    os << "curve_interval = " << c.curve_interval << "\n";
    os << "out_dir = " << c.out_dir << "\n";
    print_env_cfg(os, c.env_cfg);
    os << "ppo.learning_rate = " << format_double(c.ppo.learning_rate) << "\n";
    os << "ppo.clip_eps = " << format_double(c.ppo.clip_eps) << "\n";
    os << "ppo.c1 = " << format_double(c.ppo.c1) << "\n";
    os << "ppo.c2 = " << format_double(c.ppo.c2) << "\n";
    os << "ppo.epochs = " << c.ppo.epochs << "\n";
    os << "ppo.num_minibatches = " << c.ppo.num_minibatches << "\n";
    os << "ppo.batch_frames = " << c.ppo.batch_frames << "\n";
    os << "ppo.gamma = " << format_double(c.ppo.gamma) << "\n";
    os << "ppo.gae_lambda = " << format_double(c.ppo.gae_lambda) << "\n";
    os << "ppo.hidden0 = " << c.ppo.arch.hidden0 << "\n";
    os << "ppo.hidden1 = " << c.ppo.arch.hidden1 << "\n";
    os << "ppo.num_actors = " << c.ppo.num_actors << "\n";
    os << "ppo.normalize_advantages = " << (c.ppo.normalize_advantages ? "true" : "false") << "\n";
    os << "ppo.normalize_observations = " << (c.ppo.normalize_observations ? "true" : "false")
       << "\n";
    os << "ppo.max_grad_norm = " << format_double(c.ppo.max_grad_norm) << "\n";
    os << "ppo.init_log_std = " << format_double(c.ppo.init_log_std) << "\n";
    os << "me.mutation_rate = " << format_double(c.me.mutation_rate) << "\n";
    os << "me.hidden0 = " << c.me.arch.hidden0 << "\n";
    os << "me.hidden1 = " << c.me.arch.hidden1 << "\n";
    os << "me.descriptor_base = " << c.me.descriptor_base << "\n";
    os << "me.batch_per_gen = " << c.me.batch_per_gen << "\n";
    os << "me.nb_gen = " << c.me.nb_gen << "\n";
    os << "me.mutation_sigma = " << format_double(c.me.mutation_sigma) << "\n";
    os << "me.init_range = " << format_double(c.me.init_range) << "\n";
    os << "me.weight_bound = " << format_double(c.me.weight_bound) << "\n";
}

// --- run --------------------------------------------------------------------

RunPaths run_paths_in(const fs::path& dir) {
    RunPaths p;
    p.dir = dir;
    p.config = dir / "config.kv";
    p.curve = dir / "curve.csv";
    p.record = dir / "record.kv";
    p.archive_csv = dir / "archive.csv";
    p.insertions_csv = dir / "insertions.csv";
    return p;
}

RunPaths run_paths(const RunConfig& c) {
    std::ostringstream name;
    name << algo_name(c.algorithm) << "-" << mode_name(c.mode) << "-" << env_name(c.env_kind)
         << "-s" << c.seed;
    return run_paths_in(fs::path(c.out_dir) / name.str());
}

namespace {

void write_record(const fs::path& path, const RunRecord& r) {
    std::ofstream f(path);
    f << "seed = " << r.seed << "\n";
    f << "frames_consumed = " << r.frames_consumed << "\n";
    f << "final_performance = " << format_double(r.final_performance) << "\n";
    f << "final_policy_fitness = " << format_double(r.final_policy_fitness) << "\n";
    f << "wall_clock_s = " << format_double(r.wall_clock_s) << "\n";
    f << "artifact = " << r.artifact << "\n";
}

template <typename Sample>
std::vector<const Sample*> downsample(const std::vector<Sample>& curve, std::int64_t interval) {
    std::vector<const Sample*> out;
    std::int64_t next = interval;
    for (std::size_t i = 0; i < curve.size(); ++i) {
        const bool last = i + 1 == curve.size();
        if (interval <= 0 || curve[i].frames >= next || last) {
            out.push_back(&curve[i]);
            if (interval > 0) {
                while (next <= curve[i].frames) next += interval;
            }
        }
    }
    return out;
}

}  // namespace

RunRecord read_record(const fs::path& record_file) {
    std::ifstream f(record_file);
    if (!f) throw ConfigError("cannot open record file: " + record_file.string());
    const KvFile kv = read_kv(f, record_file.string());
    RunRecord r;
    r.seed = kv.get_uint("seed", 0);
    r.frames_consumed = kv.get_int("frames_consumed", 0);
    r.final_performance = kv.get_double("final_performance", 0.0);
    r.final_policy_fitness = kv.get_double("final_policy_fitness", 0.0);
    r.wall_clock_s = kv.get_double("wall_clock_s", 0.0);
    r.artifact = kv.get_string("artifact", "");
    return r;
}

RunOutcome run(const RunConfig& config, bool force, int workers,
               std::optional<fs::path> dir_override) {
    RunPaths paths = dir_override ? run_paths_in(*dir_override) : run_paths(config);
    const bool is_me = config.algorithm == tuning::Algorithm::MapElites;
    paths.artifact = paths.dir / (is_me ? "archive.bin" : "checkpoint.bin");

    if (!force && fs::exists(paths.record)) {
        return {paths, read_record(paths.record), true};
    }
    fs::create_directories(paths.dir);
    {
        std::ofstream f(paths.config);
        print_config(f, config);
    }

    const auto factory = env::make_env_factory(config.env_kind, config.env_cfg);
    const int obs_size = factory()->observation_size(config.mode);

    RunRecord record;
    record.seed = config.seed;
    record.artifact = paths.artifact.filename().string();
    const auto t0 = std::chrono::steady_clock::now();

    try {
        if (is_me) {
            qd::MeHyperParams hp = config.me;
            hp.arch.input_size = obs_size;
            const auto r = qd::evolve(factory, config.mode, hp, config.seed, config.budget_frames,
                                      workers, config.env_cfg.joint_limit);
            record.frames_consumed = r.frames_consumed;
            record.final_performance = tuning::me_final_performance(r);
            record.final_policy_fitness = record.final_performance;

            std::ofstream curve(paths.curve);
            curve << "frames,best_fitness_m,occupancy\n";
            for (const auto* s : downsample(r.curve, config.curve_interval)) {
                curve << s->frames << ',' << format_double(s->best_fitness) << ',' << s->occupancy
                      << '\n';
            }
            std::ofstream blob(paths.artifact, std::ios::binary);
            qd::write_archive(blob, r.archive, hp.arch);
            std::ofstream acsv(paths.archive_csv);
            qd::write_archive_csv(acsv, r.archive);
            std::ofstream icsv(paths.insertions_csv);
            icsv << "frames,cell_index,fitness_m\n";
            for (const auto& e : r.insertions) {
                icsv << e.frames << ',' << e.cell << ',' << format_double(e.fitness) << '\n';
            }
        } else {
            rl::PpoHyperParams hp = config.ppo;
            hp.arch.input_size = obs_size;
            hp.action_scale = config.env_cfg.joint_limit;
            const auto r = rl::train(factory, config.mode, hp, config.seed, config.budget_frames);
            record.frames_consumed = r.frames_consumed;
            record.final_performance = tuning::ppo_final_performance(r);
            record.final_policy_fitness =
                r.curve.empty() ? 0.0 : r.curve.back().mean_policy_reward;

            std::ofstream curve(paths.curve);
            curve << "frames,mean_episode_reward_m,mean_policy_fitness_m,policy_objective,"
                     "value_loss,entropy,kl_estimate,clip_fraction\n";
            for (const auto* s : downsample(r.curve, config.curve_interval)) {
                curve << s->frames << ',' << format_double(s->mean_episode_reward) << ','
                      << format_double(s->mean_policy_reward) << ','
                      << format_double(s->policy_objective) << ',' << format_double(s->value_loss)
                      << ',' << format_double(s->entropy) << ',' << format_double(s->kl_estimate)
                      << ',' << format_double(s->clip_fraction) << '\n';
            }
            std::ofstream blob(paths.artifact, std::ios::binary);
            rl::write_checkpoint(blob, r.policy, r.value_net, hp, r.obs_normalizer);
        }
    } catch (const std::exception& e) {
        std::ofstream fail(paths.dir / "failure.txt");
        fail << e.what() << "\n";
        throw;
    }

    record.wall_clock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_record(paths.record, record);
    return {paths, record, false};
}

// --- curve reading ----------------------------------------------------------

namespace {

struct LoadedRun {
    fs::path dir;
    RunConfig config;
    RunRecord record;
    std::vector<CurvePoint> curve;  // frames + comparison statistic
};

LoadedRun load_run(const fs::path& dir) {
    LoadedRun run;
    run.dir = dir;
    run.config = parse_config_file(dir / "config.kv");
    run.record = read_record(dir / "record.kv");
    std::ifstream f(dir / "curve.csv");
    if (!f) throw ConfigError("cannot open curve file in " + dir.string());
    std::string line;
    std::getline(f, line);  // header; the statistic is always column 1
    while (std::getline(f, line)) {
        if (trim(line).empty()) continue;
        std::istringstream row(line);
        std::string cell;
        CurvePoint p;
        std::getline(row, cell, ',');
        p.frames = std::stoll(cell);
        std::getline(row, cell, ',');
        p.value = std::stod(cell);
        run.curve.push_back(p);
    }
    return run;
}

constexpr const char* kQuantileMethod = "linear-interpolation(h=(n-1)p)";

void write_quartile_curve(const fs::path& path, const std::vector<LoadedRun>& runs) {
    for (const auto& r : runs) {
        if (r.curve.size() != runs.front().curve.size()) {
            throw ConfigError("curve sample grids differ between replications of " +
                              r.dir.string());
        }
    }
    std::ofstream f(path);
    f << "frames,q1_m,median_m,q3_m,quantile_method\n";
    for (std::size_t i = 0; i < runs.front().curve.size(); ++i) {
        std::vector<double> vals;
        vals.reserve(runs.size());
        for (const auto& r : runs) vals.push_back(r.curve[i].value);
        const auto q = stats::quartiles(vals);
        f << runs.front().curve[i].frames << ',' << format_double(q.q1) << ','
          << format_double(q.median) << ',' << format_double(q.q3) << ',' << kQuantileMethod
          << '\n';
    }
}

// step interpolation: median at the last sample with frames <= f
double median_at(const std::vector<LoadedRun>& runs, std::int64_t frames) {
    std::vector<double> vals;
    for (const auto& r : runs) {
        double v = r.curve.front().value;
        for (const auto& p : r.curve) {
            if (p.frames <= frames) v = p.value;
        }
        vals.push_back(v);
    }
    return stats::quartiles(vals).median;
}

struct Insertion {
    std::int64_t frames;
    int cell;
    double fitness;
};

std::vector<Insertion> load_insertions(const fs::path& dir) {
    std::ifstream f(dir / "insertions.csv");
    if (!f) throw ConfigError("no insertions.csv in " + dir.string());
    std::vector<Insertion> out;
    std::string line;
    std::getline(f, line);
    while (std::getline(f, line)) {
        if (trim(line).empty()) continue;
        std::istringstream row(line);
        std::string cell;
        Insertion ins{};
        std::getline(row, cell, ',');
        ins.frames = std::stoll(cell);
        std::getline(row, cell, ',');
        ins.cell = std::stoi(cell);
        std::getline(row, cell, ',');
        ins.fitness = std::stod(cell);
        out.push_back(ins);
    }
    return out;
}

}  // namespace

CompareResult compare(const std::vector<fs::path>& run_dirs_a,
                      const std::vector<fs::path>& run_dirs_b, const fs::path& out_dir) {
    if (run_dirs_a.empty() || run_dirs_b.empty()) {
        throw ConfigError("compare needs at least one run directory per side");
    }
    std::vector<LoadedRun> side_a, side_b;
    for (const auto& d : run_dirs_a) side_a.push_back(load_run(d));
    for (const auto& d : run_dirs_b) side_b.push_back(load_run(d));

    fs::create_directories(out_dir);
    write_quartile_curve(out_dir / "quartiles_a.csv", side_a);
    write_quartile_curve(out_dir / "quartiles_b.csv", side_b);

    CompareResult result;
    for (const auto& r : side_a) result.finals_a.push_back(r.record.final_performance);
    for (const auto& r : side_b) result.finals_b.push_back(r.record.final_performance);

    // Fig-1-style outperform distribution when side A carries archives
    if (side_a.front().config.algorithm == tuning::Algorithm::MapElites) {
        std::ofstream f(out_dir / "outperform_counts.csv");
        f << "frames";
        for (std::size_t i = 0; i < side_a.size(); ++i) f << ",count_rep" << i;
        f << ",median_count\n";
        std::vector<std::vector<Insertion>> logs;
        for (const auto& r : side_a) logs.push_back(load_insertions(r.dir));
        std::vector<std::map<int, double>> cells(side_a.size());
        std::vector<std::size_t> cursor(side_a.size(), 0);
        for (const auto& p : side_a.front().curve) {
            std::vector<double> counts;
            const double threshold = median_at(side_b, p.frames);
            for (std::size_t i = 0; i < side_a.size(); ++i) {
                auto& state = cells[i];
                auto& cur = cursor[i];
                while (cur < logs[i].size() && logs[i][cur].frames <= p.frames) {
                    state[logs[i][cur].cell] = logs[i][cur].fitness;
                    ++cur;
                }
                int count = 0;
                for (const auto& [cell, fit] : state) {
                    if (fit > threshold) ++count;
                }
                counts.push_back(static_cast<double>(count));
            }
            f << p.frames;
            for (double c : counts) f << ',' << static_cast<int>(c);
            f << ',' << format_double(stats::quartiles(counts).median) << '\n';
        }
    }

    std::ofstream wf(out_dir / "wilcoxon.csv");
    wf << "statistic_w,p_value,n_effective,method,pairing\n";
    if (result.finals_a.size() != result.finals_b.size()) {
        result.wilcoxon_failure = "mismatched replication counts (" +
                                  std::to_string(result.finals_a.size()) + " vs " +
                                  std::to_string(result.finals_b.size()) + ")";
        wf << ",,," << result.wilcoxon_failure << ",by-replication-index\n";
        throw MismatchedReplications(result.wilcoxon_failure);
    }
    try {
        result.wilcoxon = stats::wilcoxon_signed_rank(result.finals_a, result.finals_b);
        wf << format_double(result.wilcoxon->statistic) << ','
           << format_double(result.wilcoxon->p_value) << ',' << result.wilcoxon->n_effective << ','
           << stats::wilcoxon_method_name(result.wilcoxon->method) << ",by-replication-index\n";
    } catch (const stats::AllZeroDifferences& e) {
        result.wilcoxon_failure = e.what();
        wf << ",,," << result.wilcoxon_failure << ",by-replication-index\n";
    }
    return result;
}

// --- search -----------------------------------------------------------------

PlanFile parse_plan_file(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open plan file: " + path.string());
    const KvFile kv = read_kv(f, path.string());
    PlanFile p;
    p.plan.algorithm = parse_algo(kv, "algorithm");
    p.plan.mode = parse_mode(kv, "mode");
    p.plan.env_kind = parse_env_kind(kv, "env");
    p.plan.env_cfg = parse_env_cfg(kv);
    p.plan.phase1_num_configs =
        static_cast<int>(kv.get_int("phase1.num_configs", p.plan.phase1_num_configs));
    p.plan.phase1_replications =
        static_cast<int>(kv.get_int("phase1.replications", p.plan.phase1_replications));
    p.plan.phase1_horizon_frames = kv.get_int("phase1.horizon_frames", p.plan.phase1_horizon_frames);
    p.plan.phase2_top_k = static_cast<int>(kv.get_int("phase2.top_k", p.plan.phase2_top_k));
    p.plan.phase2_replications =
        static_cast<int>(kv.get_int("phase2.replications", p.plan.phase2_replications));
    p.plan.phase2_horizon_frames = kv.get_int("phase2.horizon_frames", p.plan.phase2_horizon_frames);
    p.seed = kv.get_uint("seed", p.seed);
    p.out_dir = kv.get_string("out_dir", p.out_dir);
    if (p.plan.phase1_horizon_frames <= 0 || p.plan.phase2_horizon_frames <= 0) {
        kv.fail("phase horizons must be positive");
    }
    if (p.plan.phase2_top_k > p.plan.phase1_num_configs) {
        kv.fail("phase2.top_k must not exceed phase1.num_configs");
    }
    if (p.plan.phase1_replications < 1 || p.plan.phase2_replications < 1) {
        kv.fail("replications must be >= 1");
    }
    kv.reject_unknown();
    return p;
}

namespace {

RunConfig config_for_sample(const PlanFile& plan, const tuning::SampledConfig& sample,
                            std::int64_t budget, std::uint64_t seed) {
    RunConfig c;
    c.algorithm = plan.plan.algorithm;
    c.mode = plan.plan.mode;
    c.env_kind = plan.plan.env_kind;
    c.env_cfg = plan.plan.env_cfg;
    c.ppo = sample.ppo;
    c.ppo.arch.input_size = 1;  // resolved from the env on run
    c.me = sample.me;
    c.me.arch.input_size = 1;
    c.budget_frames = budget;
    c.seed = seed;
    c.out_dir = plan.out_dir;
    return c;
}

}  // namespace

SearchOutcome search(const PlanFile& plan_file, int workers) {
    const fs::path report_dir(plan_file.out_dir);
    fs::create_directories(report_dir / "runs");

    const tuning::RunExecutor executor =
        [&](int phase, int config_index, int replication, const tuning::SampledConfig& sample,
            std::int64_t horizon) -> tuning::TuningRunRecord {
        tuning::TuningRunRecord rec;
        rec.phase = phase;
        rec.config_index = config_index;
        rec.replication = replication;
        rec.run_seed = tuning::run_seed(plan_file.seed, phase, config_index, replication);
        std::ostringstream name;
        name << "p" << phase << "-c" << config_index << "-r" << replication;
        const fs::path dir = report_dir / "runs" / name.str();
        const RunConfig rc = config_for_sample(plan_file, sample, horizon, rec.run_seed);
        try {
            const RunOutcome outcome = run(rc, /*force=*/false, /*workers=*/1, dir);
            rec.final_performance = outcome.record.final_performance;
            rec.frames_consumed = outcome.record.frames_consumed;
            if (!std::isfinite(rec.final_performance)) rec.failed = true;
        } catch (const std::exception&) {
            rec.failed = true;
        }
        if (rec.failed) rec.final_performance = -std::numeric_limits<double>::infinity();
        return rec;
    };

    SearchOutcome outcome;
    outcome.report_dir = report_dir;
    outcome.report = tuning::run_search(plan_file.plan, plan_file.seed, workers, executor);

    {
        std::ofstream f(report_dir / "ranking.csv");
        const bool is_ppo = plan_file.plan.algorithm == tuning::Algorithm::Ppo;
        f << "rank,config_index,phase1_median_m";
        if (is_ppo) {
            f << ",learning_rate,clip_eps,entropy_c2,batch_frames,hidden0,hidden1\n";
        } else {
            f << ",mutation_rate,descriptor_base,hidden0,hidden1\n";
        }
        for (std::size_t rank = 0; rank < outcome.report.phase1_ranking.size(); ++rank) {
            const int c = outcome.report.phase1_ranking[rank];
            const auto& sample = outcome.report.configs[static_cast<std::size_t>(c)];
            f << rank << ',' << c << ','
              << format_double(outcome.report.phase1_medians[static_cast<std::size_t>(c)]);
            if (is_ppo) {
                f << ',' << format_double(sample.ppo.learning_rate) << ','
                  << format_double(sample.ppo.clip_eps) << ',' << format_double(sample.ppo.c2)
                  << ',' << sample.ppo.batch_frames << ',' << sample.ppo.arch.hidden0 << ','
                  << sample.ppo.arch.hidden1 << '\n';
            } else {
                f << ',' << format_double(sample.me.mutation_rate) << ','
                  << sample.me.descriptor_base << ',' << sample.me.arch.hidden0 << ','
                  << sample.me.arch.hidden1 << '\n';
            }
        }
    }

    outcome.winner = config_for_sample(
        plan_file, outcome.report.configs[static_cast<std::size_t>(outcome.report.winner_config)],
        plan_file.plan.phase2_horizon_frames, plan_file.seed);
    outcome.winner.out_dir = (report_dir / "winner-runs").string();
    {
        std::ofstream f(report_dir / "winner.kv");
        print_config(f, outcome.winner);
    }
    {
        std::ofstream f(report_dir / "plan.kv");
        f << "algorithm = " << algo_name(plan_file.plan.algorithm) << "\n";
        f << "mode = " << mode_name(plan_file.plan.mode) << "\n";
        f << "env = " << env_name(plan_file.plan.env_kind) << "\n";
        print_env_cfg(f, plan_file.plan.env_cfg);
        f << "phase1.num_configs = " << plan_file.plan.phase1_num_configs << "\n";
        f << "phase1.replications = " << plan_file.plan.phase1_replications << "\n";
        f << "phase1.horizon_frames = " << plan_file.plan.phase1_horizon_frames << "\n";
        f << "phase2.top_k = " << plan_file.plan.phase2_top_k << "\n";
        f << "phase2.replications = " << plan_file.plan.phase2_replications << "\n";
        f << "phase2.horizon_frames = " << plan_file.plan.phase2_horizon_frames << "\n";
        f << "seed = " << plan_file.seed << "\n";
        f << "out_dir = " << plan_file.out_dir << "\n";
    }
    return outcome;
}

// --- replay and dump --------------------------------------------------------

ReplayReport replay(const fs::path& artifact, std::optional<int> cell) {
    const fs::path dir = artifact.parent_path();
    const RunConfig config = parse_config_file(dir / "config.kv");
    const auto factory = env::make_env_factory(config.env_kind, config.env_cfg);

    ReplayReport report;
    if (artifact.filename() == "archive.bin") {
        std::ifstream blob(artifact, std::ios::binary);
        if (!blob) throw ConfigError("cannot open " + artifact.string());
        nn::MlpArchitecture arch;
        const qd::Archive archive = qd::read_archive(blob, arch);
        auto e = factory();
        std::vector<int> targets;
        if (cell) {
            if (*cell < 0 || *cell >= archive.capacity() || !archive.cell(*cell)) {
                throw ConfigError("no elite in cell " + std::to_string(*cell));
            }
            targets.push_back(*cell);
        } else {
            targets = archive.occupied_cells();
        }
        for (int idx : targets) {
            const qd::Elite& elite = *archive.cell(idx);
            const env::PolicyFn policy = [&](std::span<const double> obs,
                                             std::span<double> action) {
                nn::forward(elite.genome, arch, obs, nn::OutputActivation::ScaledTanh,
                            config.env_cfg.joint_limit, action);
            };
            const env::EpisodeResult r = env::run_episode(*e, policy, config.mode);
            const qd::Descriptor d = qd::descriptor_from_contacts(r.contact_fraction,
                                                                  archive.base());
            ++report.checked;
            if (r.fitness != elite.fitness || !(d == elite.descriptor)) ++report.mismatched;
        }
    } else {
        std::ifstream blob(artifact, std::ios::binary);
        if (!blob) throw ConfigError("cannot open " + artifact.string());
        const rl::Checkpoint ck = rl::read_checkpoint(blob);
        const RunRecord record = read_record(dir / "record.kv");
        auto e = factory();
        const env::PolicyFn policy = [&](std::span<const double> obs, std::span<double> action) {
            std::vector<double> o(obs.begin(), obs.end());
            if (ck.hp.normalize_observations) ck.obs_normalizer.apply(o);
            ck.policy.mean_action(o, action);
        };
        const env::EpisodeResult r = env::run_episode(*e, policy, config.mode);
        ++report.checked;
        if (r.fitness != record.final_policy_fitness) ++report.mismatched;
    }
    return report;
}

void dump_curves(const fs::path& run_dir, std::ostream& os) {
    std::ifstream f(run_dir / "curve.csv");
    if (!f) throw ConfigError("cannot open curve file in " + run_dir.string());
    os << f.rdbuf();
}

}  // namespace hexbench::harness
