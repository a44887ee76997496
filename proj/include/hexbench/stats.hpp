#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hexbench::stats {

struct EmptyInput : std::runtime_error {
    EmptyInput() : std::runtime_error("empty sample") {}
};
struct AllZeroDifferences : std::runtime_error {
    AllZeroDifferences() : std::runtime_error("all paired differences are zero") {}
};

struct Quartiles {
    double q1 = 0.0;
    double median = 0.0;
    double q3 = 0.0;
};

/// Linear-interpolation quantiles at h = (n-1)p between order statistics.
Quartiles quartiles(std::span<const double> samples);
double median(std::span<const double> samples);

enum class WilcoxonMethod { Exact, NormalApproximation };

struct WilcoxonResult {
    double statistic = 0.0;  // W = min(W+, W-)
    double p_value = 1.0;    // two-sided
    int n_effective = 0;     // pairs remaining after dropping zero differences
    WilcoxonMethod method = WilcoxonMethod::Exact;
};

/// Two-sided signed-rank test on paired samples. Zero differences are
/// dropped; tied magnitudes get mid-ranks. Exact sign-assignment enumeration
/// for n_effective <= 25, otherwise a tie-corrected normal approximation
/// with continuity correction.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y);

const char* wilcoxon_method_name(WilcoxonMethod m);

}  // namespace hexbench::stats

namespace hexbench::qd {
class Archive;
}

namespace hexbench::stats {

/// Number of occupied archive cells whose fitness strictly exceeds the
/// threshold (e.g. the contender's median).
int outperform_count(const qd::Archive& archive, double threshold);

}  // namespace hexbench::stats
