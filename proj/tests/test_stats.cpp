#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "hexbench/qd.hpp"
#include "hexbench/rng.hpp"
#include "hexbench/stats.hpp"

using namespace hexbench;

namespace {

// independent oracle: enumerate all 2^n sign assignments over the mid-ranks
double brute_force_p(const std::vector<double>& diffs) {
    std::vector<double> mags;
    for (double d : diffs) {
        if (d != 0.0) mags.push_back(std::abs(d));
    }
    const int n = static_cast<int>(mags.size());
    std::vector<std::size_t> order(mags.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return mags[a] < mags[b]; });
    std::vector<double> ranks(mags.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && mags[order[j]] == mags[order[i]]) ++j;
        const double mid = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k) ranks[order[k]] = mid;
        i = j;
    }
    double w_plus = 0.0;
    std::size_t k = 0;
    for (double d : diffs) {
        if (d == 0.0) continue;
        if (d > 0.0) w_plus += ranks[k];
        ++k;
    }
    const double total = std::accumulate(ranks.begin(), ranks.end(), 0.0);
    const double w_obs = std::min(w_plus, total - w_plus);
    long low = 0, high = 0;
    const long combos = 1L << n;
    for (long mask = 0; mask < combos; ++mask) {
        double w = 0.0;
        for (int b = 0; b < n; ++b) {
            if (mask & (1L << b)) w += ranks[static_cast<std::size_t>(b)];
        }
        if (w <= w_obs + 1e-12) ++low;
        if (w >= total - w_obs - 1e-12) ++high;
    }
    return std::min(1.0, static_cast<double>(low + high) / static_cast<double>(combos));
}

}  // namespace

TEST_CASE("quartiles by linear interpolation") {
    const std::vector<double> five{5.0, 1.0, 3.0, 2.0, 4.0};  // order must not matter
    const auto q5 = stats::quartiles(five);
    CHECK(q5.q1 == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(q5.median == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(q5.q3 == doctest::Approx(4.0).epsilon(1e-15));

    const std::vector<double> four{4.0, 1.0, 3.0, 2.0};
    const auto q4 = stats::quartiles(four);
    CHECK(q4.q1 == doctest::Approx(1.75).epsilon(1e-15));
    CHECK(q4.median == doctest::Approx(2.5).epsilon(1e-15));
    CHECK(q4.q3 == doctest::Approx(3.25).epsilon(1e-15));

    const std::vector<double> constant{7.0, 7.0, 7.0};
    const auto qc = stats::quartiles(constant);
    CHECK(qc.q1 == 7.0);
    CHECK(qc.median == 7.0);
    CHECK(qc.q3 == 7.0);

    const std::vector<double> one{42.0};
    CHECK(stats::quartiles(one).median == 42.0);
    CHECK(stats::median(one) == 42.0);

    CHECK_THROWS_AS(stats::quartiles(std::vector<double>{}), stats::EmptyInput);
    CHECK_THROWS_AS(stats::median(std::vector<double>{}), stats::EmptyInput);
}

TEST_CASE("five uniformly positive pairs give the canonical smallest p") {
    const std::vector<double> x{1.0, 2.0, 3.0, 4.0, 5.0};
    const std::vector<double> y{0.5, 1.0, 2.0, 2.5, 3.0};
    const auto r = stats::wilcoxon_signed_rank(x, y);
    CHECK(r.n_effective == 5);
    CHECK(r.statistic == 0.0);
    CHECK(r.p_value == doctest::Approx(0.0625).epsilon(1e-15));
    CHECK(r.method == stats::WilcoxonMethod::Exact);
}

TEST_CASE("the test is antisymmetric and scale invariant") {
    const std::vector<double> x{0.3, -1.2, 2.2, 0.9, -0.4, 1.7, 0.05};
    const std::vector<double> y{0.1, -0.2, 1.4, 1.3, -0.4, 0.6, 0.3};
    const auto r1 = stats::wilcoxon_signed_rank(x, y);
    const auto r2 = stats::wilcoxon_signed_rank(y, x);
    CHECK(r1.p_value == r2.p_value);
    CHECK(r1.statistic == r2.statistic);
    CHECK(r1.n_effective == 6);  // one zero difference dropped

    std::vector<double> xs(x), ys(y);
    for (auto& v : xs) v *= 37.0;
    for (auto& v : ys) v *= 37.0;
    const auto r3 = stats::wilcoxon_signed_rank(xs, ys);
    CHECK(r3.p_value == r1.p_value);
    CHECK(r3.statistic == r1.statistic);
}

TEST_CASE("degenerate inputs are rejected") {
    const std::vector<double> x{1.0, 2.0, 3.0};
    CHECK_THROWS_AS(stats::wilcoxon_signed_rank(x, x), stats::AllZeroDifferences);
    CHECK_THROWS_AS(stats::wilcoxon_signed_rank(std::vector<double>{}, std::vector<double>{}),
                    stats::EmptyInput);
    CHECK_THROWS_AS(stats::wilcoxon_signed_rank(x, std::vector<double>{1.0}), std::exception);
}

TEST_CASE("exact p matches full enumeration, with and without ties") {
    auto rng = make_rng(3141);
    for (int trial = 0; trial < 120; ++trial) {
        const int n = 2 + static_cast<int>(uniform_index(rng, 10));
        std::vector<double> x(static_cast<std::size_t>(n)), y(x.size()), diffs(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            // quantized values produce frequent tied magnitudes
            x[i] = std::round(uniform(rng, -4, 4));
            y[i] = std::round(uniform(rng, -4, 4));
            diffs[i] = x[i] - y[i];
        }
        bool any = false;
        for (double d : diffs) any = any || d != 0.0;
        if (!any) continue;
        const auto r = stats::wilcoxon_signed_rank(x, y);
        CHECK(r.method == stats::WilcoxonMethod::Exact);
        CHECK(r.p_value == doctest::Approx(brute_force_p(diffs)).epsilon(1e-12));
        CHECK(r.p_value <= 1.0);
        CHECK(r.p_value > 0.0);
    }
}

TEST_CASE("the normal approximation takes over for large n and stays close") {
    auto rng = make_rng(2718);
    std::vector<double> x(26), y(26);
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = normal01(rng);
        y[i] = normal01(rng) - 0.6;
    }
    const auto approx = stats::wilcoxon_signed_rank(x, y);
    CHECK(approx.method == stats::WilcoxonMethod::NormalApproximation);
    CHECK(approx.n_effective == 26);

    // drop one pair: 25 pairs still use the exact method
    const std::vector<double> x25(x.begin(), x.end() - 1), y25(y.begin(), y.end() - 1);
    const auto exact = stats::wilcoxon_signed_rank(x25, y25);
    CHECK(exact.method == stats::WilcoxonMethod::Exact);
    CHECK(exact.n_effective == 25);

    // oracle: continuity-corrected normal approximation computed from scratch
    // (the data is continuous, so there are no ties and no tie correction)
    std::vector<double> diffs(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) diffs[i] = x[i] - y[i];
    std::vector<std::size_t> order(diffs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::abs(diffs[a]) < std::abs(diffs[b]);
    });
    double w_plus = 0.0;
    for (std::size_t r = 0; r < order.size(); ++r) {
        if (diffs[order[r]] > 0.0) w_plus += static_cast<double>(r + 1);
    }
    const double nd = 26.0;
    const double total = nd * (nd + 1.0) / 2.0;
    const double w = std::min(w_plus, total - w_plus);
    CHECK(approx.statistic == w);
    const double z = (w - total / 2.0 + 0.5) / std::sqrt(nd * (nd + 1.0) * (2.0 * nd + 1.0) / 24.0);
    const double p = std::min(1.0, std::erfc(-z / std::sqrt(2.0)));
    CHECK(approx.p_value == doctest::Approx(p).epsilon(1e-12));

    CHECK(std::string(stats::wilcoxon_method_name(stats::WilcoxonMethod::Exact)) == "exact");
    CHECK(std::string(stats::wilcoxon_method_name(stats::WilcoxonMethod::NormalApproximation)) ==
          "normal-approximation");
}

TEST_CASE("outperform counts use strict comparison over occupied cells") {
    qd::Archive archive(4);
    const auto d = [](int i) {
        qd::Descriptor dd;
        dd.buckets = {i % 4, (i / 4) % 4, 0, 0, 0, 0};
        return dd;
    };
    archive.try_insert({0.0}, d(0), 1.0, 0);
    archive.try_insert({0.0}, d(1), 2.0, 0);
    archive.try_insert({0.0}, d(2), 3.0, 0);
    archive.try_insert({0.0}, d(3), 3.0, 0);

    CHECK(stats::outperform_count(archive, 0.0) == 4);
    CHECK(stats::outperform_count(archive, 2.0) == 2);
    CHECK(stats::outperform_count(archive, 3.0) == 0);  // strict
    CHECK(stats::outperform_count(archive, -10.0) == 4);
    CHECK(stats::outperform_count(qd::Archive(4), 0.0) == 0);
}
