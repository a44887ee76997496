#include "hexbench/qd.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <istream>
#include <ostream>
#include <thread>

namespace hexbench::qd {

Descriptor descriptor_from_contacts(const std::array<double, kDescriptorDims>& contact_fraction,
                                    int base) {
    Descriptor d;
    for (int i = 0; i < kDescriptorDims; ++i) {
        const double f = contact_fraction[static_cast<std::size_t>(i)];
        const int b = static_cast<int>(std::floor(f * static_cast<double>(base)));
        d.buckets[static_cast<std::size_t>(i)] = std::clamp(b, 0, base - 1);
    }
    return d;
}

int cell_index(const Descriptor& d, int base) {
    int idx = 0;
    int radix = 1;
    for (int i = 0; i < kDescriptorDims; ++i) {
        idx += d.buckets[static_cast<std::size_t>(i)] * radix;
        radix *= base;
    }
    return idx;
}

int archive_capacity(int base) {
    int c = 1;
    for (int i = 0; i < kDescriptorDims; ++i) c *= base;
    return c;
}

Archive::Archive(int base) : base_(base), cells_(static_cast<std::size_t>(archive_capacity(base))) {}

InsertOutcome Archive::try_insert(nn::ParamVector genome, const Descriptor& d, double fitness,
                                  int generation) {
    const int idx = cell_index(d, base_);
    auto& cell = cells_[static_cast<std::size_t>(idx)];
    if (!cell) {
        cell = Elite{std::move(genome), fitness, d, generation};
        occupied_.push_back(idx);
        ++occupancy_;
        return InsertOutcome::InsertedEmpty;
    }
    if (cell->fitness < fitness) {
        cell = Elite{std::move(genome), fitness, d, generation};
        return InsertOutcome::Replaced;
    }
    return InsertOutcome::Rejected;
}

int Archive::random_occupied_cell(Rng& rng) const {
    if (occupancy_ == 0) throw EmptyArchive{};
    return occupied_[uniform_index(rng, static_cast<std::uint64_t>(occupancy_))];
}

double Archive::best_fitness() const {
    double best = -std::numeric_limits<double>::infinity();
    for (int idx : occupied_) {
        best = std::max(best, cells_[static_cast<std::size_t>(idx)]->fitness);
    }
    return best;
}

std::vector<int> Archive::occupied_cells() const {
    std::vector<int> sorted = occupied_;
    std::sort(sorted.begin(), sorted.end());
    return sorted;
}

nn::ParamVector random_genome(const nn::MlpArchitecture& arch, double init_range, Rng& rng) {
    nn::ParamVector g(static_cast<std::size_t>(nn::param_count(arch)));
    for (auto& v : g) v = uniform(rng, -init_range, init_range);
    return g;
}

nn::ParamVector mutate(const nn::ParamVector& genome, const MeHyperParams& hp, Rng& rng) {
    nn::ParamVector child = genome;
    for (auto& v : child) {
        if (uniform01(rng) < hp.mutation_rate) {
            v = std::clamp(v + normal(rng, 0.0, hp.mutation_sigma), -hp.weight_bound,
                           hp.weight_bound);
        }
    }
    return child;
}

namespace {

struct Evaluated {
    double fitness = 0.0;
    Descriptor descriptor;
};

// index-ordered parallel evaluation; scheduling cannot affect results
std::vector<Evaluated> evaluate_batch(const env::EnvFactory& env_factory, env::ControllerMode mode,
                                      const std::vector<nn::ParamVector>& genomes,
                                      const nn::MlpArchitecture& arch, double action_scale,
                                      int base, int workers) {
    std::vector<Evaluated> out(genomes.size());
    const auto eval_range = [&](std::size_t lo, std::size_t hi) {
        auto e = env_factory();
        std::vector<double> action_buf(static_cast<std::size_t>(arch.output_size));
        for (std::size_t i = lo; i < hi; ++i) {
            const auto& genome = genomes[i];
            const env::PolicyFn policy = [&](std::span<const double> obs, std::span<double> action) {
                nn::forward(genome, arch, obs, nn::OutputActivation::ScaledTanh, action_scale,
                            action);
            };
            const env::EpisodeResult r = env::run_episode(*e, policy, mode);
            out[i] = {r.fitness, descriptor_from_contacts(r.contact_fraction, base)};
        }
    };
    if (workers <= 1 || genomes.size() < 2) {
        eval_range(0, genomes.size());
        return out;
    }
    const std::size_t n = genomes.size();
    const std::size_t nw = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
    std::vector<std::thread> threads;
    threads.reserve(nw);
    for (std::size_t w = 0; w < nw; ++w) {
        const std::size_t lo = n * w / nw;
        const std::size_t hi = n * (w + 1) / nw;
        threads.emplace_back(eval_range, lo, hi);
    }
    for (auto& t : threads) t.join();
    return out;
}

}  // namespace

EvolveResult evolve(const env::EnvFactory& env_factory, env::ControllerMode mode,
                    const MeHyperParams& hp, std::uint64_t seed, std::int64_t budget_frames,
                    int workers, double action_scale) {
    assert(hp.batch_per_gen >= 1);
    auto rng = make_rng(seed);
    const auto probe = env_factory();
    const auto frames_per_eval = static_cast<std::int64_t>(probe->episode_len());

    EvolveResult result{Archive(hp.descriptor_base), {}, {}, 0};
    Archive& archive = result.archive;

    int generation = 0;
    while (true) {
        if (hp.nb_gen > 0 && generation >= hp.nb_gen) break;
        if (result.frames_consumed + frames_per_eval * hp.batch_per_gen > budget_frames) break;

        std::vector<nn::ParamVector> candidates;
        candidates.reserve(static_cast<std::size_t>(hp.batch_per_gen));
        for (int i = 0; i < hp.batch_per_gen; ++i) {
            if (generation == 0) {
                candidates.push_back(random_genome(hp.arch, hp.init_range, rng));
            } else {
                const int parent_cell = archive.random_occupied_cell(rng);
                candidates.push_back(mutate(archive.cell(parent_cell)->genome, hp, rng));
            }
        }

        const auto evaluated = evaluate_batch(env_factory, mode, candidates, hp.arch, action_scale,
                                              hp.descriptor_base, workers);
        const std::int64_t gen_frames = result.frames_consumed + frames_per_eval * hp.batch_per_gen;
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            const Descriptor& d = evaluated[i].descriptor;
            const InsertOutcome outcome =
                archive.try_insert(std::move(candidates[i]), d, evaluated[i].fitness, generation);
            if (outcome != InsertOutcome::Rejected) {
                result.insertions.push_back(
                    {gen_frames, cell_index(d, hp.descriptor_base), evaluated[i].fitness});
            }
        }
        result.frames_consumed = gen_frames;
        ++generation;
        result.curve.push_back({result.frames_consumed, archive.best_fitness(), archive.occupancy()});
    }
    return result;
}

// --- archive dump io --------------------------------------------------------

namespace {
constexpr std::uint64_t kArchiveMagic = 0x4858415243485631ULL;  // "HXARCHV1"
}

void write_archive(std::ostream& os, const Archive& archive, const nn::MlpArchitecture& arch) {
    nn::write_u64_le(os, kArchiveMagic);
    nn::write_i32_le(os, archive.base());
    nn::write_i32_le(os, archive.occupancy());
    for (int idx : archive.occupied_cells()) {
        const Elite& e = *archive.cell(idx);
        nn::write_i32_le(os, idx);
        for (int b : e.descriptor.buckets) nn::write_i32_le(os, b);
        nn::write_f64_le(os, e.fitness);
        nn::write_i32_le(os, e.generation_added);
        nn::write_param_blob(os, arch, e.genome);
    }
}

Archive read_archive(std::istream& is, nn::MlpArchitecture& arch_out) {
    if (nn::read_u64_le(is) != kArchiveMagic) throw std::runtime_error("bad archive magic");
    const int base = nn::read_i32_le(is);
    const int count = nn::read_i32_le(is);
    Archive archive(base);
    for (int i = 0; i < count; ++i) {
        const int idx = nn::read_i32_le(is);
        Descriptor d;
        for (auto& b : d.buckets) b = nn::read_i32_le(is);
        const double fitness = nn::read_f64_le(is);
        const int generation = nn::read_i32_le(is);
        auto [arch, genome] = nn::read_param_blob(is);
        arch_out = arch;
        if (cell_index(d, base) != idx) throw std::runtime_error("archive record index mismatch");
        archive.try_insert(std::move(genome), d, fitness, generation);
    }
    return archive;
}

void write_archive_csv(std::ostream& os, const Archive& archive) {
    os << "cell_index,bucket_0,bucket_1,bucket_2,bucket_3,bucket_4,bucket_5,fitness_m,generation_added\n";
    for (int idx : archive.occupied_cells()) {
        const Elite& e = *archive.cell(idx);
        os << idx;
        for (int b : e.descriptor.buckets) os << ',' << b;
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", e.fitness);
        os << ',' << buf << ',' << e.generation_added << '\n';
    }
}

}  // namespace hexbench::qd
