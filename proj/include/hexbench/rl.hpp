#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <vector>

#include "hexbench/env.hpp"
#include "hexbench/nn.hpp"
#include "hexbench/rng.hpp"

namespace hexbench::rl {

struct NonFiniteLoss : std::runtime_error {
    explicit NonFiniteLoss(const std::string& what) : std::runtime_error(what) {}
};

struct PpoHyperParams {
    double learning_rate = 3e-4;
    double clip_eps = 0.2;
    double c1 = 0.5;  // value-loss coefficient
    double c2 = 0.0;  // entropy coefficient
    int epochs = 10;
    int num_minibatches = 32;
    int batch_frames = 2048;  // NT
    double gamma = 0.99;
    double gae_lambda = 0.95;
    nn::MlpArchitecture arch;
    int num_actors = 4;
    bool normalize_advantages = true;
    bool normalize_observations = false;  // available, off by default
    double max_grad_norm = 0.0;           // 0 disables clipping
    double init_log_std = -0.6931471805599453;  // ln 0.5
    double action_scale = 0.7853981633974483;   // joint limit
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    bool operator==(const PpoHyperParams&) const = default;
};

/// Flat per-frame storage, actor-major (actor 0's T frames, then actor 1's...).
struct RolloutBatch {
    int obs_dim = 0;
    int frames = 0;       // NT
    int frames_per_actor = 0;  // T
    std::vector<double> observations;  // frames * obs_dim
    std::vector<double> actions;       // frames * 18
    std::vector<double> log_probs;     // under pi_theta_old
    std::vector<double> rewards;
    std::vector<double> value_preds;
    std::vector<std::uint8_t> dones;
    std::vector<double> advantages;  // post-normalization when the flag is set
    std::vector<double> returns;     // unnormalized advantage + value_pred
    bool advantages_normalized = false;
    std::vector<double> completed_episode_rewards;
};

/// Backward GAE recursion: delta_t = r_t + gamma*v_{t+1}*(1-done_t) - v_t,
/// A_t = delta_t + gamma*lambda*(1-done_t)*A_{t+1}. returns_t = A_t + v_t.
void compute_gae(std::span<const double> rewards, std::span<const double> values,
                 std::span<const std::uint8_t> dones, double bootstrap_value, double gamma,
                 double lambda, std::span<double> advantages, std::span<double> returns);

/// Eq.-style pessimistic clipped surrogate for a single sample.
double clip_objective(double ratio, double advantage, double clip_eps);
/// Minibatch mean of the elementwise surrogate.
double clip_objective(std::span<const double> ratios, std::span<const double> advantages,
                      double clip_eps);

/// Running per-dimension standardization (Welford); identity until two
/// samples have been seen. Only active when normalize_observations is set.
struct ObsNormalizer {
    std::int64_t count = 0;
    std::vector<double> mean;
    std::vector<double> m2;

    void update(std::span<const double> obs);
    void apply(std::span<double> obs) const;
};

struct UpdateMetrics {
    double policy_objective = 0.0;  // mean clipped surrogate
    double value_loss = 0.0;
    double entropy = 0.0;
    double kl_estimate = 0.0;      // mean(logp_old - logp_new)
    double clip_fraction = 0.0;
};

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::int64_t t = 0;
};

struct MinibatchStats {
    double surrogate = 0.0;   // mean clipped surrogate over the subset
    double value_loss = 0.0;
    double kl = 0.0;          // mean(logp_old - logp_new)
    std::int64_t clipped = 0;  // samples with |ratio - 1| > clip_eps
};

/// Value function with the policy's architecture, separate weights, scalar
/// identity output.
struct ValueNet {
    nn::MlpArchitecture arch;  // output_size 1
    nn::ParamVector params;

    double value(std::span<const double> obs, nn::ForwardCache* cache = nullptr) const;
};

/// Minimized total loss -(L^clip - c1 L^v + c2 S) averaged over the sample
/// subset, accumulating its gradient into `grad` laid out as
/// [mean params | log_std | value params] (same length, zero it yourself).
double minibatch_loss(const RolloutBatch& batch, std::span<const std::uint32_t> indices,
                      const nn::GaussianPolicy& policy, const ValueNet& value_net,
                      const PpoHyperParams& hp, std::span<double> grad,
                      MinibatchStats* stats = nullptr);

/// One PPO update: K epochs of shuffled minibatches maximizing
/// L^clip - c1*L^v + c2*S with Adam. The old policy is the snapshot whose
/// log-probs are already in the batch.
UpdateMetrics ppo_update(const RolloutBatch& batch, nn::GaussianPolicy& policy, ValueNet& value_net,
                         const PpoHyperParams& hp, AdamState& adam, Rng& rng);

/// Persistent per-actor collection state; episodes continue across rollout
/// boundaries and auto-reset at the horizon.
struct ActorState {
    std::unique_ptr<env::Env> env;
    env::ControllerMode mode = env::ControllerMode::OpenLoop;
    std::vector<double> observation;
    Rng rng;
    double episode_reward = 0.0;
};

RolloutBatch collect_rollouts(const nn::GaussianPolicy& policy, const ValueNet& value_net,
                              std::vector<ActorState>& actors, int frames_per_actor,
                              const PpoHyperParams& hp, ObsNormalizer* norm = nullptr);

struct PpoCurveSample {
    std::int64_t frames = 0;
    double mean_episode_reward = 0.0;  // stochastic policy, episodes completed this iteration
    double mean_policy_reward = 0.0;   // deterministic (mean-action) evaluation episode
    double policy_objective = 0.0;
    double value_loss = 0.0;
    double entropy = 0.0;
    double kl_estimate = 0.0;
    double clip_fraction = 0.0;
};

struct TrainResult {
    nn::GaussianPolicy policy;
    ValueNet value_net;
    ObsNormalizer obs_normalizer;
    std::vector<PpoCurveSample> curve;
    std::int64_t frames_consumed = 0;
};

/// Full PPO loop: collect -> GAE -> update until the next batch would exceed
/// the frame budget. Deterministic per (hp, seed).
TrainResult train(const env::EnvFactory& env_factory, env::ControllerMode mode,
                  const PpoHyperParams& hp, std::uint64_t seed, std::int64_t budget_frames);

// --- checkpoint io ----------------------------------------------------------

void write_checkpoint(std::ostream& os, const nn::GaussianPolicy& policy, const ValueNet& value_net,
                      const PpoHyperParams& hp, const ObsNormalizer& norm);
struct Checkpoint {
    nn::GaussianPolicy policy;
    ValueNet value_net;
    PpoHyperParams hp;
    ObsNormalizer obs_normalizer;
};
Checkpoint read_checkpoint(std::istream& is);

}  // namespace hexbench::rl
