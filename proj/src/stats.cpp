#include "hexbench/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "hexbench/qd.hpp"

namespace hexbench::stats {

int outperform_count(const qd::Archive& archive, double threshold) {
    int count = 0;
    for (int idx : archive.occupied_cells()) {
        if (archive.cell(idx)->fitness > threshold) ++count;
    }
    return count;
}

Quartiles quartiles(std::span<const double> samples) {
    if (samples.empty()) throw EmptyInput{};
    std::vector<double> s(samples.begin(), samples.end());
    std::sort(s.begin(), s.end());
    const auto at = [&](double p) {
        const double h = static_cast<double>(s.size() - 1) * p;
        const auto lo = static_cast<std::size_t>(std::floor(h));
        const auto hi = static_cast<std::size_t>(std::ceil(h));
        if (lo == hi) return s[lo];  // keeps infinities finite-safe
        return s[lo] + (h - std::floor(h)) * (s[hi] - s[lo]);
    };
    return {at(0.25), at(0.5), at(0.75)};
}

double median(std::span<const double> samples) { return quartiles(samples).median; }

const char* wilcoxon_method_name(WilcoxonMethod m) {
    return m == WilcoxonMethod::Exact ? "exact" : "normal-approximation";
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.empty()) throw EmptyInput{};
    std::vector<double> diffs;
    diffs.reserve(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        if (d != 0.0) diffs.push_back(d);
    }
    if (diffs.empty()) throw AllZeroDifferences{};
    const int n = static_cast<int>(diffs.size());

    // mid-ranks over |d|, doubled so ties stay integral
    std::vector<std::size_t> order(diffs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::abs(diffs[a]) < std::abs(diffs[b]);
    });
    std::vector<std::int64_t> rank2(diffs.size());  // 2 * rank
    double tie_term = 0.0;                          // sum of t^3 - t over tie groups
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && std::abs(diffs[order[j]]) == std::abs(diffs[order[i]])) ++j;
        // positions i..j-1 share the mid-rank (i+1 + j) / 2
        const std::int64_t r2 = static_cast<std::int64_t>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) rank2[order[k]] = r2;
        const double t = static_cast<double>(j - i);
        tie_term += t * t * t - t;
        i = j;
    }

    std::int64_t w_plus2 = 0;
    std::int64_t total2 = 0;
    for (std::size_t i = 0; i < diffs.size(); ++i) {
        total2 += rank2[i];
        if (diffs[i] > 0.0) w_plus2 += rank2[i];
    }
    const std::int64_t w_minus2 = total2 - w_plus2;
    const std::int64_t w2 = std::min(w_plus2, w_minus2);

    WilcoxonResult res;
    res.statistic = static_cast<double>(w2) / 2.0;
    res.n_effective = n;

    if (n <= 25) {
        res.method = WilcoxonMethod::Exact;
        // distribution of W+ (doubled) over all 2^n sign assignments
        std::vector<double> dist(static_cast<std::size_t>(total2) + 1, 0.0);
        dist[0] = 1.0;
        std::int64_t reach = 0;
        for (std::size_t i = 0; i < diffs.size(); ++i) {
            const std::int64_t r = rank2[i];
            for (std::int64_t s = reach; s >= 0; --s) {
                if (dist[static_cast<std::size_t>(s)] != 0.0) {
                    dist[static_cast<std::size_t>(s + r)] += dist[static_cast<std::size_t>(s)];
                }
            }
            reach += r;
        }
        double tail = 0.0;
        for (std::int64_t s = 0; s <= total2; ++s) {
            if (s <= w2 || s >= total2 - w2) tail += dist[static_cast<std::size_t>(s)];
        }
        res.p_value = std::min(1.0, tail / std::ldexp(1.0, n));
    } else {
        res.method = WilcoxonMethod::NormalApproximation;
        const double nd = static_cast<double>(n);
        const double mu = nd * (nd + 1.0) / 4.0;
        const double var = nd * (nd + 1.0) * (2.0 * nd + 1.0) / 24.0 - tie_term / 48.0;
        const double w = res.statistic;
        const double z = (w - mu + 0.5) / std::sqrt(var);
        res.p_value = std::min(1.0, 2.0 * 0.5 * std::erfc(-z / std::sqrt(2.0)));
    }
    return res;
}

}  // namespace hexbench::stats
