#include "hexbench/nn.hpp"

#include <cassert>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include "hexbench/rng.hpp"

namespace hexbench::nn {

namespace {

constexpr double kLn2Pi = 1.8378770664093454835606594728112;

bool all_finite(std::span<const double> v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

}  // namespace

int param_count(const MlpArchitecture& a) {
    return (a.input_size * a.hidden0 + a.hidden0) + (a.hidden0 * a.hidden1 + a.hidden1) +
           (a.hidden1 * a.output_size + a.output_size);
}

const std::vector<MlpArchitecture>& open_loop_menu() {
    // param counts: 64 68 72 90 112 118 124 130
    static const std::vector<MlpArchitecture> menu = {
        {1, 2, 2, kActionDim}, {1, 3, 2, kActionDim}, {1, 4, 2, kActionDim},
        {1, 3, 3, kActionDim}, {1, 3, 4, kActionDim}, {1, 4, 4, kActionDim},
        {1, 5, 4, kActionDim}, {1, 6, 4, kActionDim},
    };
    return menu;
}

const std::vector<MlpArchitecture>& closed_loop_menu() {
    // param counts: 98 141 163 186 209 233 257 282
    static const std::vector<MlpArchitecture> menu = {
        {18, 2, 2, kActionDim}, {18, 3, 3, kActionDim}, {18, 3, 4, kActionDim},
        {18, 4, 4, kActionDim}, {18, 4, 5, kActionDim}, {18, 5, 5, kActionDim},
        {18, 5, 6, kActionDim}, {18, 6, 6, kActionDim},
    };
    return menu;
}

namespace {

// y = W x + b, with W row-major (rows x cols) starting at params[off].
void affine(std::span<const double> params, std::size_t off, int rows, int cols,
            std::span<const double> x, std::span<double> y) {
    for (int r = 0; r < rows; ++r) {
        double acc = params[off + static_cast<std::size_t>(rows) * cols + r];  // bias
        const double* w = params.data() + off + static_cast<std::size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) acc += w[c] * x[static_cast<std::size_t>(c)];
        y[static_cast<std::size_t>(r)] = acc;
    }
}

}  // namespace

void forward(std::span<const double> params, const MlpArchitecture& arch,
             std::span<const double> input, OutputActivation out_act, double output_scale,
             std::span<double> output, ForwardCache* cache) {
    assert(static_cast<int>(params.size()) == param_count(arch));
    assert(static_cast<int>(input.size()) == arch.input_size);
    assert(static_cast<int>(output.size()) == arch.output_size);
    if (!all_finite(params)) throw NonFiniteParams{};

    std::vector<double> h0(static_cast<std::size_t>(arch.hidden0));
    std::vector<double> h1(static_cast<std::size_t>(arch.hidden1));
    std::vector<double> pre_out(static_cast<std::size_t>(arch.output_size));

    std::size_t off = 0;
    affine(params, off, arch.hidden0, arch.input_size, input, h0);
    off += static_cast<std::size_t>(arch.hidden0) * (arch.input_size + 1);
    for (double& v : h0) v = std::tanh(v);

    affine(params, off, arch.hidden1, arch.hidden0, h0, h1);
    off += static_cast<std::size_t>(arch.hidden1) * (arch.hidden0 + 1);
    for (double& v : h1) v = std::tanh(v);

    affine(params, off, arch.output_size, arch.hidden1, h1, pre_out);

    for (int i = 0; i < arch.output_size; ++i) {
        const double z = pre_out[static_cast<std::size_t>(i)];
        output[static_cast<std::size_t>(i)] =
            out_act == OutputActivation::ScaledTanh ? output_scale * std::tanh(z) : z;
    }

    if (cache != nullptr) {
        cache->input.assign(input.begin(), input.end());
        cache->h0 = std::move(h0);
        cache->h1 = std::move(h1);
        cache->pre_out = std::move(pre_out);
        cache->out.assign(output.begin(), output.end());
    }
}

void backward(std::span<const double> params, const MlpArchitecture& arch,
              const ForwardCache& cache, OutputActivation out_act, double output_scale,
              std::span<const double> output_grad, std::span<double> param_grad) {
    assert(static_cast<int>(params.size()) == param_count(arch));
    assert(param_grad.size() == params.size());
    if (!all_finite(params)) throw NonFiniteParams{};

    const std::size_t off0 = 0;
    const std::size_t off1 = off0 + static_cast<std::size_t>(arch.hidden0) * (arch.input_size + 1);
    const std::size_t off2 = off1 + static_cast<std::size_t>(arch.hidden1) * (arch.hidden0 + 1);

    // d/d pre_out
    std::vector<double> d_pre(static_cast<std::size_t>(arch.output_size));
    for (int i = 0; i < arch.output_size; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        if (out_act == OutputActivation::ScaledTanh) {
            const double t = std::tanh(cache.pre_out[ui]);
            d_pre[ui] = output_grad[ui] * output_scale * (1.0 - t * t);
        } else {
            d_pre[ui] = output_grad[ui];
        }
    }

    // output layer params and d/d h1
    std::vector<double> d_h1(static_cast<std::size_t>(arch.hidden1), 0.0);
    for (int r = 0; r < arch.output_size; ++r) {
        const auto ur = static_cast<std::size_t>(r);
        for (int c = 0; c < arch.hidden1; ++c) {
            const auto uc = static_cast<std::size_t>(c);
            param_grad[off2 + ur * arch.hidden1 + uc] += d_pre[ur] * cache.h1[uc];
            d_h1[uc] += d_pre[ur] * params[off2 + ur * arch.hidden1 + uc];
        }
        param_grad[off2 + static_cast<std::size_t>(arch.output_size) * arch.hidden1 + ur] +=
            d_pre[ur];
    }

    // through tanh of h1, hidden layer 1 params, d/d h0
    std::vector<double> d_h0(static_cast<std::size_t>(arch.hidden0), 0.0);
    for (int r = 0; r < arch.hidden1; ++r) {
        const auto ur = static_cast<std::size_t>(r);
        const double t = cache.h1[ur];
        const double dz = d_h1[ur] * (1.0 - t * t);
        for (int c = 0; c < arch.hidden0; ++c) {
            const auto uc = static_cast<std::size_t>(c);
            param_grad[off1 + ur * arch.hidden0 + uc] += dz * cache.h0[uc];
            d_h0[uc] += dz * params[off1 + ur * arch.hidden0 + uc];
        }
        param_grad[off1 + static_cast<std::size_t>(arch.hidden1) * arch.hidden0 + ur] += dz;
    }

    // through tanh of h0, input layer params
    for (int r = 0; r < arch.hidden0; ++r) {
        const auto ur = static_cast<std::size_t>(r);
        const double t = cache.h0[ur];
        const double dz = d_h0[ur] * (1.0 - t * t);
        for (int c = 0; c < arch.input_size; ++c) {
            const auto uc = static_cast<std::size_t>(c);
            param_grad[off0 + ur * arch.input_size + uc] += dz * cache.input[uc];
        }
        param_grad[off0 + static_cast<std::size_t>(arch.hidden0) * arch.input_size + ur] += dz;
    }
}

double gaussian_logprob(std::span<const double> mean, std::span<const double> log_std,
                        std::span<const double> action) {
    double lp = 0.0;
    for (std::size_t i = 0; i < mean.size(); ++i) {
        const double z = (action[i] - mean[i]) * std::exp(-log_std[i]);
        lp += -0.5 * kLn2Pi - log_std[i] - 0.5 * z * z;
    }
    return lp;
}

double gaussian_entropy(std::span<const double> log_std) {
    double s = 0.0;
    for (double ls : log_std) s += ls;
    return s + 0.5 * static_cast<double>(log_std.size()) * (1.0 + kLn2Pi);
}

void gaussian_logprob_grad_mean(std::span<const double> mean, std::span<const double> log_std,
                                std::span<const double> action, std::span<double> grad_mean) {
    for (std::size_t i = 0; i < mean.size(); ++i) {
        const double inv_var = std::exp(-2.0 * log_std[i]);
        grad_mean[i] = (action[i] - mean[i]) * inv_var;
    }
}

void gaussian_logprob_grad_log_std(std::span<const double> mean, std::span<const double> log_std,
                                   std::span<const double> action, std::span<double> grad_log_std) {
    for (std::size_t i = 0; i < mean.size(); ++i) {
        const double z = (action[i] - mean[i]) * std::exp(-log_std[i]);
        grad_log_std[i] = z * z - 1.0;
    }
}

void GaussianPolicy::mean_action(std::span<const double> obs, std::span<double> out,
                                 ForwardCache* cache) const {
    forward(mean_params, arch, obs, OutputActivation::ScaledTanh, action_scale, out, cache);
}

double sample_action(const GaussianPolicy& policy, std::span<const double> obs,
                     std::mt19937_64& rng, std::span<double> action) {
    std::vector<double> mean(static_cast<std::size_t>(policy.arch.output_size));
    policy.mean_action(obs, mean);
    for (std::size_t i = 0; i < mean.size(); ++i) {
        action[i] = mean[i] + std::exp(policy.log_std[i]) * normal01(rng);
    }
    return gaussian_logprob(mean, policy.log_std, action);
}

// --- blob io ----------------------------------------------------------------

namespace {
constexpr std::uint64_t kParamMagic = 0x4858504152415631ULL;  // "HXPARAV1"
}

void write_u64_le(std::ostream& os, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 8);
}

std::uint64_t read_u64_le(std::istream& is) {
    char b[8];
    is.read(b, 8);
    if (!is) throw std::runtime_error("truncated blob");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
}

void write_i32_le(std::ostream& os, std::int32_t v) {
    const auto u = static_cast<std::uint32_t>(v);
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((u >> (8 * i)) & 0xff);
    os.write(b, 4);
}

std::int32_t read_i32_le(std::istream& is) {
    char b[4];
    is.read(b, 4);
    if (!is) throw std::runtime_error("truncated blob");
    std::uint32_t u = 0;
    for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return static_cast<std::int32_t>(u);
}

void write_f64_le(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_u64_le(os, bits);
}

double read_f64_le(std::istream& is) {
    const std::uint64_t bits = read_u64_le(is);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

void write_param_blob(std::ostream& os, const MlpArchitecture& arch, const ParamVector& values) {
    write_u64_le(os, kParamMagic);
    write_i32_le(os, arch.input_size);
    write_i32_le(os, arch.hidden0);
    write_i32_le(os, arch.hidden1);
    write_i32_le(os, arch.output_size);
    write_u64_le(os, values.size());
    for (double v : values) write_f64_le(os, v);
}

std::pair<MlpArchitecture, ParamVector> read_param_blob(std::istream& is) {
    if (read_u64_le(is) != kParamMagic) throw std::runtime_error("bad parameter blob magic");
    MlpArchitecture arch;
    arch.input_size = read_i32_le(is);
    arch.hidden0 = read_i32_le(is);
    arch.hidden1 = read_i32_le(is);
    arch.output_size = read_i32_le(is);
    const std::uint64_t n = read_u64_le(is);
    if (n != static_cast<std::uint64_t>(param_count(arch))) {
        throw std::runtime_error("parameter blob length does not match architecture");
    }
    ParamVector values(n);
    for (auto& v : values) v = read_f64_le(is);
    return {arch, std::move(values)};
}

}  // namespace hexbench::nn
