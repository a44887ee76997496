#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <set>
#include <sstream>

#include "hexbench/qd.hpp"

using namespace hexbench;

namespace {

qd::Descriptor desc(std::array<int, 6> b) {
    qd::Descriptor d;
    d.buckets = b;
    return d;
}

nn::ParamVector tiny_genome(double v) { return nn::ParamVector{v, v, v}; }

env::HexapodConfig oracle_cfg(int episode_len) {
    env::HexapodConfig cfg;
    cfg.episode_len = episode_len;
    cfg.dt = 5.0 / episode_len;
    return cfg;
}

qd::MeHyperParams small_hp() {
    qd::MeHyperParams hp;
    hp.arch = {1, 2, 2, 18};
    hp.mutation_rate = 0.2;
    hp.batch_per_gen = 10;
    return hp;
}

}  // namespace

TEST_CASE("duty factors land in the right buckets") {
    std::array<double, 6> f{0.0, 0.24, 0.25, 0.5, 0.999, 1.0};
    const auto d4 = qd::descriptor_from_contacts(f, 4);
    CHECK(d4.buckets == std::array<int, 6>{0, 0, 1, 2, 3, 3});  // 1.0 clamps into the top bucket
    const auto d5 = qd::descriptor_from_contacts(f, 5);
    CHECK(d5.buckets == std::array<int, 6>{0, 1, 1, 2, 4, 4});
}

TEST_CASE("cell index is a bijection over the whole grid") {
    for (int base : {4, 5}) {
        CAPTURE(base);
        const int cap = qd::archive_capacity(base);
        CHECK(cap == (base == 4 ? 4096 : 15625));
        std::set<int> seen;
        std::array<int, 6> b{};
        for (int count = 0; count < cap; ++count) {
            const int idx = qd::cell_index(desc(b), base);
            REQUIRE(idx >= 0);
            REQUIRE(idx < cap);
            seen.insert(idx);
            for (int i = 0; i < 6; ++i) {  // odometer increment
                if (++b[static_cast<std::size_t>(i)] < base) break;
                b[static_cast<std::size_t>(i)] = 0;
            }
        }
        CHECK(static_cast<int>(seen.size()) == cap);
    }
}

TEST_CASE("insertion is elitist with strict improvement") {
    qd::Archive archive(4);
    CHECK(archive.capacity() == 4096);
    CHECK(archive.occupancy() == 0);
    const auto d = desc({1, 2, 3, 0, 1, 2});

    CHECK(archive.try_insert(tiny_genome(1.0), d, -5.0, 0) == qd::InsertOutcome::InsertedEmpty);
    CHECK(archive.occupancy() == 1);
    CHECK(archive.try_insert(tiny_genome(2.0), d, -6.0, 1) == qd::InsertOutcome::Rejected);
    CHECK(archive.try_insert(tiny_genome(3.0), d, -5.0, 1) == qd::InsertOutcome::Rejected);  // ties lose
    CHECK(archive.try_insert(tiny_genome(4.0), d, -4.5, 2) == qd::InsertOutcome::Replaced);
    CHECK(archive.occupancy() == 1);

    const auto& e = archive.cell(qd::cell_index(d, 4));
    REQUIRE(e.has_value());
    CHECK(e->fitness == -4.5);
    CHECK(e->generation_added == 2);
    CHECK(e->genome == tiny_genome(4.0));
    CHECK(archive.best_fitness() == -4.5);
}

TEST_CASE("selection is uniform over occupied cells") {
    qd::Archive archive(4);
    std::vector<int> cells;
    for (int i = 0; i < 10; ++i) {
        const auto d = desc({i % 4, (i / 4) % 4, 0, i % 2, 3, (i * 3) % 4});
        archive.try_insert(tiny_genome(i), d, static_cast<double>(i), 0);
        cells.push_back(qd::cell_index(d, 4));
    }
    REQUIRE(archive.occupancy() == 10);

    auto rng = make_rng(900);
    std::map<int, int> counts;
    const int draws = 50000;
    for (int i = 0; i < draws; ++i) counts[archive.random_occupied_cell(rng)] += 1;
    CHECK(counts.size() == 10);
    for (int c : cells) {
        // binomial(50000, 0.1): sd ~ 67, so 300 is beyond 4 sigma
        CHECK(std::abs(counts[c] - 5000) < 300);
    }

    qd::Archive empty(4);
    CHECK_THROWS_AS(empty.random_occupied_cell(rng), qd::EmptyArchive);
}

TEST_CASE("mutation flips the expected fraction of genes and respects bounds") {
    qd::MeHyperParams hp;
    hp.mutation_rate = 0.1;
    hp.mutation_sigma = 0.05;
    hp.weight_bound = 5.0;
    auto rng = make_rng(4);
    const nn::ParamVector parent(1000, 0.5);

    long changed = 0;
    const int trials = 200;
    for (int t = 0; t < trials; ++t) {
        const auto child = qd::mutate(parent, hp, rng);
        REQUIRE(child.size() == parent.size());
        for (std::size_t i = 0; i < child.size(); ++i) {
            if (child[i] != parent[i]) ++changed;
            CHECK(std::abs(child[i]) <= hp.weight_bound);
        }
    }
    // 200 * 1000 * 0.1 = 20000 expected; sd ~ 134
    CHECK(std::abs(changed - 20000) < 700);
    CHECK(parent == nn::ParamVector(1000, 0.5));  // parent untouched

    // a huge sigma exercises the clamp
    hp.mutation_rate = 0.5;
    hp.mutation_sigma = 50.0;
    bool clamped = false;
    for (int t = 0; t < 20; ++t) {
        const auto child = qd::mutate(parent, hp, rng);
        for (double v : child) {
            CHECK(std::abs(v) <= hp.weight_bound);
            if (std::abs(v) == hp.weight_bound) clamped = true;
        }
    }
    CHECK(clamped);
}

TEST_CASE("evolution respects the frame budget exactly") {
    const auto factory = env::make_env_factory(env::EnvKind::Oracle, oracle_cfg(10));
    auto hp = small_hp();  // 10 candidates x 10 frames = 100 frames per generation
    const auto r = qd::evolve(factory, env::ControllerMode::OpenLoop, hp, 5, 570);
    CHECK(r.frames_consumed == 500);  // 5 full generations fit, the 6th would overflow
    CHECK(r.curve.size() == 5);
    CHECK(r.curve.back().frames == 500);

    hp.nb_gen = 3;
    const auto r2 = qd::evolve(factory, env::ControllerMode::OpenLoop, hp, 5, 100000);
    CHECK(r2.frames_consumed == 300);
    CHECK(r2.curve.size() == 3);
}

TEST_CASE("best fitness and occupancy are monotone along the curve") {
    const auto factory = env::make_env_factory(env::EnvKind::Oracle, oracle_cfg(20));
    auto hp = small_hp();
    hp.batch_per_gen = 20;
    const auto r = qd::evolve(factory, env::ControllerMode::OpenLoop, hp, 99, 20 * 20 * 25);
    REQUIRE(r.curve.size() >= 10);
    for (std::size_t i = 1; i < r.curve.size(); ++i) {
        CHECK(r.curve[i].best_fitness >= r.curve[i - 1].best_fitness);
        CHECK(r.curve[i].occupancy >= r.curve[i - 1].occupancy);
        CHECK(r.curve[i].frames > r.curve[i - 1].frames);
    }
    CHECK(r.archive.best_fitness() == r.curve.back().best_fitness);
    CHECK(r.archive.occupancy() == r.curve.back().occupancy);
}

TEST_CASE("worker count does not change the outcome") {
    const auto factory = env::make_env_factory(env::EnvKind::Oracle, oracle_cfg(15));
    const auto hp = small_hp();
    const auto r1 = qd::evolve(factory, env::ControllerMode::OpenLoop, hp, 7, 3000, 1);
    const auto r4 = qd::evolve(factory, env::ControllerMode::OpenLoop, hp, 7, 3000, 4);
    REQUIRE(r1.curve.size() == r4.curve.size());
    for (std::size_t i = 0; i < r1.curve.size(); ++i) {
        CHECK(r1.curve[i].best_fitness == r4.curve[i].best_fitness);
        CHECK(r1.curve[i].occupancy == r4.curve[i].occupancy);
    }
    CHECK(r1.archive.occupied_cells() == r4.archive.occupied_cells());
    for (int c : r1.archive.occupied_cells()) {
        CHECK(r1.archive.cell(c)->fitness == r4.archive.cell(c)->fitness);
        CHECK(r1.archive.cell(c)->genome == r4.archive.cell(c)->genome);
    }
}

TEST_CASE("the insertion log replays into the final archive") {
    const auto factory = env::make_env_factory(env::EnvKind::Oracle, oracle_cfg(15));
    const auto hp = small_hp();
    const auto r = qd::evolve(factory, env::ControllerMode::OpenLoop, hp, 13, 4500);
    std::map<int, double> replayed;
    std::int64_t prev_frames = 0;
    for (const auto& e : r.insertions) {
        CHECK(e.frames >= prev_frames);
        prev_frames = e.frames;
        const auto it = replayed.find(e.cell);
        if (it != replayed.end()) CHECK(e.fitness > it->second);  // strict improvement
        replayed[e.cell] = e.fitness;
    }
    REQUIRE(static_cast<int>(replayed.size()) == r.archive.occupancy());
    for (const auto& [cell, fitness] : replayed) {
        REQUIRE(r.archive.cell(cell).has_value());
        CHECK(r.archive.cell(cell)->fitness == fitness);
    }
}

TEST_CASE("archive io round-trips bitwise") {
    const auto factory = env::make_env_factory(env::EnvKind::Oracle, oracle_cfg(15));
    const auto hp = small_hp();
    const auto r = qd::evolve(factory, env::ControllerMode::OpenLoop, hp, 21, 3000);
    REQUIRE(r.archive.occupancy() > 0);

    std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
    qd::write_archive(ss, r.archive, hp.arch);
    nn::MlpArchitecture arch_out;
    const qd::Archive loaded = qd::read_archive(ss, arch_out);
    CHECK(arch_out == hp.arch);
    CHECK(loaded.base() == r.archive.base());
    REQUIRE(loaded.occupied_cells() == r.archive.occupied_cells());
    for (int c : loaded.occupied_cells()) {
        CHECK(loaded.cell(c)->fitness == r.archive.cell(c)->fitness);
        CHECK(loaded.cell(c)->descriptor == r.archive.cell(c)->descriptor);
        CHECK(loaded.cell(c)->generation_added == r.archive.cell(c)->generation_added);
        CHECK(loaded.cell(c)->genome == r.archive.cell(c)->genome);
    }

    std::ostringstream csv;
    qd::write_archive_csv(csv, r.archive);
    const std::string text = csv.str();
    CHECK(text.rfind("cell_index,bucket_0", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == r.archive.occupancy() + 1);
}
