#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace hexbench::nn {

struct NonFiniteParams : std::runtime_error {
    NonFiniteParams() : std::runtime_error("non-finite network parameters") {}
};

inline constexpr int kActionDim = 18;

/// Two-hidden-layer fully connected MLP shape. Hidden layers use tanh;
/// the output layer is either tanh scaled to the joint limit (policies)
/// or identity (value networks).
struct MlpArchitecture {
    int input_size = 1;
    int hidden0 = 2;
    int hidden1 = 2;
    int output_size = kActionDim;

    bool operator==(const MlpArchitecture&) const = default;
};

enum class OutputActivation { ScaledTanh, Identity };

/// Flat parameter storage, layer by layer: weights row-major
/// (fan_out x fan_in) then biases.
using ParamVector = std::vector<double>;

int param_count(const MlpArchitecture& arch);

/// The 8 fixed architecture options per controller mode. Open-loop counts
/// span exactly [64, 130]; closed-loop counts span exactly [98, 282].
const std::vector<MlpArchitecture>& open_loop_menu();
const std::vector<MlpArchitecture>& closed_loop_menu();

/// Per-layer activations retained by forward() for the reverse pass.
struct ForwardCache {
    std::vector<double> input;
    std::vector<double> h0;  // post-tanh
    std::vector<double> h1;  // post-tanh
    std::vector<double> pre_out;
    std::vector<double> out;
};

/// Deterministic forward pass. output_scale applies only to ScaledTanh.
void forward(std::span<const double> params, const MlpArchitecture& arch,
             std::span<const double> input, OutputActivation out_act, double output_scale,
             std::span<double> output, ForwardCache* cache = nullptr);

/// Reverse-mode pass: accumulates d(output_grad . output)/dparams into
/// param_grad (same length as params, += semantics; zero it yourself).
void backward(std::span<const double> params, const MlpArchitecture& arch,
              const ForwardCache& cache, OutputActivation out_act, double output_scale,
              std::span<const double> output_grad, std::span<double> param_grad);

// --- diagonal Gaussian policy head -----------------------------------------

double gaussian_logprob(std::span<const double> mean, std::span<const double> log_std,
                        std::span<const double> action);

double gaussian_entropy(std::span<const double> log_std);

/// d logprob / d mean_i = (a_i - mu_i) / sigma_i^2
void gaussian_logprob_grad_mean(std::span<const double> mean, std::span<const double> log_std,
                                std::span<const double> action, std::span<double> grad_mean);

/// d logprob / d log_std_i = ((a_i - mu_i)/sigma_i)^2 - 1
void gaussian_logprob_grad_log_std(std::span<const double> mean, std::span<const double> log_std,
                                   std::span<const double> action, std::span<double> grad_log_std);

/// Stochastic policy: tanh-bounded mean network plus state-independent
/// learnable log standard deviations.
struct GaussianPolicy {
    MlpArchitecture arch;
    ParamVector mean_params;
    std::vector<double> log_std;  // length kActionDim
    double action_scale = 1.0;    // joint limit

    void mean_action(std::span<const double> obs, std::span<double> out,
                     ForwardCache* cache = nullptr) const;
};

/// Samples action = mean + sigma * z; returns the log density of the sample.
double sample_action(const GaussianPolicy& policy, std::span<const double> obs,
                     std::mt19937_64& rng, std::span<double> action);

// --- flat parameter blob io -------------------------------------------------

/// Header (magic, version, arch, length) followed by the values as
/// little-endian IEEE-754 doubles.
void write_param_blob(std::ostream& os, const MlpArchitecture& arch, const ParamVector& values);
std::pair<MlpArchitecture, ParamVector> read_param_blob(std::istream& is);

void write_f64_le(std::ostream& os, double v);
double read_f64_le(std::istream& is);
void write_u64_le(std::ostream& os, std::uint64_t v);
std::uint64_t read_u64_le(std::istream& is);
void write_i32_le(std::ostream& os, std::int32_t v);
std::int32_t read_i32_le(std::istream& is);

}  // namespace hexbench::nn
