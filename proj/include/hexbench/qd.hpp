#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <vector>

#include "hexbench/env.hpp"
#include "hexbench/nn.hpp"
#include "hexbench/rng.hpp"

namespace hexbench::qd {

inline constexpr int kDescriptorDims = 6;

struct EmptyArchive : std::runtime_error {
    EmptyArchive() : std::runtime_error("selection from an empty archive") {}
};

/// Per-leg duty-factor buckets: bucket_i = min(floor(f_i * base), base - 1).
struct Descriptor {
    std::array<int, kDescriptorDims> buckets{};

    bool operator==(const Descriptor&) const = default;
};

Descriptor descriptor_from_contacts(const std::array<double, kDescriptorDims>& contact_fraction,
                                    int base);

/// Mixed-radix linearization, bijective on [0, base^6).
int cell_index(const Descriptor& d, int base);
int archive_capacity(int base);  // base^6

struct Elite {
    nn::ParamVector genome;
    double fitness = 0.0;
    Descriptor descriptor;
    int generation_added = 0;
};

enum class InsertOutcome { InsertedEmpty, Replaced, Rejected };

class Archive {
  public:
    explicit Archive(int base);

    int base() const { return base_; }
    int capacity() const { return static_cast<int>(cells_.size()); }
    int occupancy() const { return occupancy_; }
    const std::optional<Elite>& cell(int index) const { return cells_[static_cast<std::size_t>(index)]; }

    /// Alg-style elitist insertion: empty cell or strict fitness improvement.
    InsertOutcome try_insert(nn::ParamVector genome, const Descriptor& d, double fitness,
                             int generation);

    /// Uniform over occupied cells; returns the cell index.
    int random_occupied_cell(Rng& rng) const;

    double best_fitness() const;
    std::vector<int> occupied_cells() const;

  private:
    int base_;
    int occupancy_ = 0;
    std::vector<std::optional<Elite>> cells_;
    std::vector<int> occupied_;  // insertion-ordered list of occupied indices
};

struct MeHyperParams {
    double mutation_rate = 0.1;           // per-gene Bernoulli probability, in [0, 0.5]
    nn::MlpArchitecture arch;
    int descriptor_base = 4;              // 4 or 5
    int batch_per_gen = 200;
    int nb_gen = 0;                       // 0: run to the frame budget
    double mutation_sigma = 0.2;
    double init_range = 1.0;              // initial genomes uniform in [-r, r]
    double weight_bound = 5.0;            // clamp after mutation

    bool operator==(const MeHyperParams&) const = default;
};

nn::ParamVector random_genome(const nn::MlpArchitecture& arch, double init_range, Rng& rng);

/// Per-gene Bernoulli(mutation_rate) additive Gaussian perturbation, clamped
/// to the weight bound. Parent untouched.
nn::ParamVector mutate(const nn::ParamVector& genome, const MeHyperParams& hp, Rng& rng);

struct CurveSample {
    std::int64_t frames = 0;
    double best_fitness = 0.0;
    int occupancy = 0;
};

/// One successful archive write, stamped with the cumulative frame count of
/// its generation; replaying the log reconstructs the archive contents at any
/// point of the run.
struct InsertionEvent {
    std::int64_t frames = 0;
    int cell = 0;
    double fitness = 0.0;
};

struct EvolveResult {
    Archive archive;
    std::vector<CurveSample> curve;
    std::vector<InsertionEvent> insertions;
    std::int64_t frames_consumed = 0;
};

/// Full MAP-Elites loop. The first generation is entirely random genomes;
/// later generations select and mutate. One episode per candidate. Stops
/// before a generation whose evaluations would exceed the frame budget.
/// Candidate evaluations run on `workers` threads; insertion order is the
/// candidate index, so results do not depend on scheduling.
EvolveResult evolve(const env::EnvFactory& env_factory, env::ControllerMode mode,
                    const MeHyperParams& hp, std::uint64_t seed, std::int64_t budget_frames,
                    int workers = 1, double action_scale = 0.7853981633974483);

// --- archive dump io --------------------------------------------------------

/// Binary dump: one record per occupied cell (cell index, buckets, fitness,
/// generation, genome blob). The CSV sidecar carries everything but genomes.
void write_archive(std::ostream& os, const Archive& archive, const nn::MlpArchitecture& arch);
Archive read_archive(std::istream& is, nn::MlpArchitecture& arch_out);
void write_archive_csv(std::ostream& os, const Archive& archive);

}  // namespace hexbench::qd
