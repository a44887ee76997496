#include "hexbench/rl.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace hexbench::rl {

void compute_gae(std::span<const double> rewards, std::span<const double> values,
                 std::span<const std::uint8_t> dones, double bootstrap_value, double gamma,
                 double lambda, std::span<double> advantages, std::span<double> returns) {
    const std::size_t n = rewards.size();
    assert(values.size() == n && dones.size() == n && advantages.size() == n &&
           returns.size() == n);
    double next_adv = 0.0;
    double next_value = bootstrap_value;
    for (std::size_t i = n; i-- > 0;) {
        const double not_done = dones[i] ? 0.0 : 1.0;
        const double delta = rewards[i] + gamma * next_value * not_done - values[i];
        next_adv = delta + gamma * lambda * not_done * next_adv;
        advantages[i] = next_adv;
        returns[i] = next_adv + values[i];
        next_value = values[i];
    }
}

double clip_objective(double ratio, double advantage, double clip_eps) {
    const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
    return std::min(ratio * advantage, clipped * advantage);
}

double clip_objective(std::span<const double> ratios, std::span<const double> advantages,
                      double clip_eps) {
    assert(ratios.size() == advantages.size() && !ratios.empty());
    double acc = 0.0;
    for (std::size_t i = 0; i < ratios.size(); ++i) {
        acc += clip_objective(ratios[i], advantages[i], clip_eps);
    }
    return acc / static_cast<double>(ratios.size());
}

void ObsNormalizer::update(std::span<const double> obs) {
    if (mean.empty()) {
        mean.assign(obs.size(), 0.0);
        m2.assign(obs.size(), 0.0);
    }
    ++count;
    for (std::size_t i = 0; i < obs.size(); ++i) {
        const double d = obs[i] - mean[i];
        mean[i] += d / static_cast<double>(count);
        m2[i] += d * (obs[i] - mean[i]);
    }
}

void ObsNormalizer::apply(std::span<double> obs) const {
    if (count < 2) return;
    for (std::size_t i = 0; i < obs.size(); ++i) {
        const double var = m2[i] / static_cast<double>(count - 1);
        obs[i] = (obs[i] - mean[i]) / std::sqrt(var + 1e-8);
    }
}

double ValueNet::value(std::span<const double> obs, nn::ForwardCache* cache) const {
    double out = 0.0;
    nn::forward(params, arch, obs, nn::OutputActivation::Identity, 1.0, std::span(&out, 1), cache);
    return out;
}

RolloutBatch collect_rollouts(const nn::GaussianPolicy& policy, const ValueNet& value_net,
                              std::vector<ActorState>& actors, int frames_per_actor,
                              const PpoHyperParams& hp, ObsNormalizer* norm) {
    const int n_actors = static_cast<int>(actors.size());
    const int nt = n_actors * frames_per_actor;
    const int obs_dim = policy.arch.input_size;
    const int act_dim = policy.arch.output_size;

    RolloutBatch batch;
    batch.obs_dim = obs_dim;
    batch.frames = nt;
    batch.frames_per_actor = frames_per_actor;
    batch.observations.resize(static_cast<std::size_t>(nt) * obs_dim);
    batch.actions.resize(static_cast<std::size_t>(nt) * act_dim);
    batch.log_probs.resize(static_cast<std::size_t>(nt));
    batch.rewards.resize(static_cast<std::size_t>(nt));
    batch.value_preds.resize(static_cast<std::size_t>(nt));
    batch.dones.resize(static_cast<std::size_t>(nt));
    batch.advantages.resize(static_cast<std::size_t>(nt));
    batch.returns.resize(static_cast<std::size_t>(nt));

    std::vector<double> obs_buf(static_cast<std::size_t>(obs_dim));
    for (int a = 0; a < n_actors; ++a) {
        ActorState& actor = actors[static_cast<std::size_t>(a)];
        const std::size_t base = static_cast<std::size_t>(a) * frames_per_actor;
        bool last_done = false;
        for (int t = 0; t < frames_per_actor; ++t) {
            const std::size_t f = base + static_cast<std::size_t>(t);
            std::copy(actor.observation.begin(), actor.observation.end(), obs_buf.begin());
            if (norm != nullptr) {
                norm->update(actor.observation);
                norm->apply(obs_buf);
            }
            std::copy(obs_buf.begin(), obs_buf.end(),
                      batch.observations.begin() + static_cast<std::ptrdiff_t>(f) * obs_dim);
            batch.value_preds[f] = value_net.value(obs_buf);
            const std::span<double> action(batch.actions.data() + f * static_cast<std::size_t>(act_dim),
                                           static_cast<std::size_t>(act_dim));
            batch.log_probs[f] = nn::sample_action(policy, obs_buf, actor.rng, action);
            env::StepResult sr = actor.env->step(action);
            batch.rewards[f] = sr.reward;
            batch.dones[f] = sr.done ? 1 : 0;
            actor.episode_reward += sr.reward;
            last_done = sr.done;
            if (sr.done) {
                batch.completed_episode_rewards.push_back(actor.episode_reward);
                actor.episode_reward = 0.0;
                actor.observation = actor.env->reset(actor.mode);
            } else {
                actor.observation = std::move(sr.observation);
            }
        }
        double bootstrap = 0.0;
        if (!last_done) {
            std::copy(actor.observation.begin(), actor.observation.end(), obs_buf.begin());
            if (norm != nullptr) norm->apply(obs_buf);
            bootstrap = value_net.value(obs_buf);
        }
        compute_gae(std::span(batch.rewards).subspan(base, static_cast<std::size_t>(frames_per_actor)),
                    std::span(batch.value_preds).subspan(base, static_cast<std::size_t>(frames_per_actor)),
                    std::span(batch.dones).subspan(base, static_cast<std::size_t>(frames_per_actor)),
                    bootstrap, hp.gamma, hp.gae_lambda,
                    std::span(batch.advantages).subspan(base, static_cast<std::size_t>(frames_per_actor)),
                    std::span(batch.returns).subspan(base, static_cast<std::size_t>(frames_per_actor)));
    }

    if (hp.normalize_advantages) {
        double mean = 0.0;
        for (double a : batch.advantages) mean += a;
        mean /= static_cast<double>(batch.advantages.size());
        double var = 0.0;
        for (double a : batch.advantages) var += (a - mean) * (a - mean);
        var /= static_cast<double>(batch.advantages.size());
        const double sd = std::sqrt(var) + 1e-8;
        for (double& a : batch.advantages) a = (a - mean) / sd;
        batch.advantages_normalized = true;
    }
    return batch;
}

namespace {

void adam_step(AdamState& adam, std::span<double> params, std::span<const double> grad,
               const PpoHyperParams& hp) {
    if (adam.m.empty()) {
        adam.m.assign(params.size(), 0.0);
        adam.v.assign(params.size(), 0.0);
    }
    ++adam.t;
    const double b1 = hp.adam_beta1, b2 = hp.adam_beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(adam.t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(adam.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        adam.m[i] = b1 * adam.m[i] + (1.0 - b1) * grad[i];
        adam.v[i] = b2 * adam.v[i] + (1.0 - b2) * grad[i] * grad[i];
        const double mhat = adam.m[i] / bc1;
        const double vhat = adam.v[i] / bc2;
        params[i] -= hp.learning_rate * mhat / (std::sqrt(vhat) + hp.adam_eps);
    }
}

void shuffle_indices(std::vector<std::uint32_t>& idx, Rng& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) {
        const std::size_t j = uniform_index(rng, i);
        std::swap(idx[i - 1], idx[j]);
    }
}

}  // namespace

double minibatch_loss(const RolloutBatch& batch, std::span<const std::uint32_t> indices,
                      const nn::GaussianPolicy& policy, const ValueNet& value_net,
                      const PpoHyperParams& hp, std::span<double> grad, MinibatchStats* stats) {
    const int act_dim = policy.arch.output_size;
    const std::size_t np = policy.mean_params.size();
    const std::size_t nls = policy.log_std.size();
    const std::size_t nv = value_net.params.size();
    assert(grad.size() == np + nls + nv);
    assert(!indices.empty());
    const double inv_m = 1.0 / static_cast<double>(indices.size());

    std::vector<double> mean(static_cast<std::size_t>(act_dim));
    std::vector<double> grad_mean(static_cast<std::size_t>(act_dim));
    std::vector<double> grad_ls(static_cast<std::size_t>(act_dim));
    std::vector<double> out_grad(static_cast<std::size_t>(act_dim));
    nn::ForwardCache cache;
    nn::ForwardCache vcache;

    double mb_obj = 0.0, mb_vloss = 0.0, mb_kl = 0.0;
    std::int64_t clipped_count = 0;
    for (const std::uint32_t f : indices) {
        const std::span<const double> obs(
            batch.observations.data() + static_cast<std::size_t>(f) * batch.obs_dim,
            static_cast<std::size_t>(batch.obs_dim));
        const std::span<const double> action(
            batch.actions.data() + static_cast<std::size_t>(f) * act_dim,
            static_cast<std::size_t>(act_dim));
        const double adv = batch.advantages[f];

        policy.mean_action(obs, mean, &cache);
        const double logp_new = nn::gaussian_logprob(mean, policy.log_std, action);
        const double ratio = std::exp(logp_new - batch.log_probs[f]);
        const double surr1 = ratio * adv;
        const double clipped = std::clamp(ratio, 1.0 - hp.clip_eps, 1.0 + hp.clip_eps);
        const double surr2 = clipped * adv;
        mb_obj += std::min(surr1, surr2) * inv_m;
        mb_kl += (batch.log_probs[f] - logp_new) * inv_m;
        if (std::abs(ratio - 1.0) > hp.clip_eps) ++clipped_count;

        // gradient of the minimized loss -(L^c - c1 L^v + c2 S)
        const double coef = surr1 <= surr2 ? surr1 : 0.0;  // dL^c/dlogp
        if (coef != 0.0) {
            nn::gaussian_logprob_grad_mean(mean, policy.log_std, action, grad_mean);
            for (int i = 0; i < act_dim; ++i) {
                out_grad[static_cast<std::size_t>(i)] =
                    -coef * inv_m * grad_mean[static_cast<std::size_t>(i)];
            }
            nn::backward(policy.mean_params, policy.arch, cache,
                         nn::OutputActivation::ScaledTanh, policy.action_scale, out_grad,
                         grad.subspan(0, np));
            nn::gaussian_logprob_grad_log_std(mean, policy.log_std, action, grad_ls);
            for (int i = 0; i < act_dim; ++i) {
                grad[np + static_cast<std::size_t>(i)] -=
                    coef * inv_m * grad_ls[static_cast<std::size_t>(i)];
            }
        }

        const double v = value_net.value(obs, &vcache);
        const double vdiff = v - batch.returns[f];
        mb_vloss += vdiff * vdiff * inv_m;
        const double v_out_grad = hp.c1 * 2.0 * vdiff * inv_m;
        nn::backward(value_net.params, value_net.arch, vcache, nn::OutputActivation::Identity, 1.0,
                     std::span(&v_out_grad, 1), grad.subspan(np + nls, nv));
    }
    // entropy bonus is state-independent for a diagonal Gaussian
    for (std::size_t i = 0; i < nls; ++i) grad[np + i] -= hp.c2;

    const double entropy = nn::gaussian_entropy(policy.log_std);
    if (stats != nullptr) {
        stats->surrogate = mb_obj;
        stats->value_loss = mb_vloss;
        stats->kl = mb_kl;
        stats->clipped = clipped_count;
    }
    return -mb_obj + hp.c1 * mb_vloss - hp.c2 * entropy;
}

UpdateMetrics ppo_update(const RolloutBatch& batch, nn::GaussianPolicy& policy, ValueNet& value_net,
                         const PpoHyperParams& hp, AdamState& adam, Rng& rng) {
    const int nt = batch.frames;
    assert(nt % hp.num_minibatches == 0);
    const int mb_size = nt / hp.num_minibatches;
    const std::size_t np = policy.mean_params.size();
    const std::size_t nls = policy.log_std.size();
    const std::size_t nv = value_net.params.size();

    std::vector<std::uint32_t> indices(static_cast<std::size_t>(nt));
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = static_cast<std::uint32_t>(i);

    std::vector<double> grad(np + nls + nv);

    UpdateMetrics metrics;
    std::int64_t samples_seen = 0;
    std::int64_t clipped_seen = 0;
    double obj_acc = 0.0, vloss_acc = 0.0, kl_acc = 0.0;
    int mb_count = 0;

    for (int epoch = 0; epoch < hp.epochs; ++epoch) {
        shuffle_indices(indices, rng);
        for (int mb = 0; mb < hp.num_minibatches; ++mb) {
            std::fill(grad.begin(), grad.end(), 0.0);
            MinibatchStats st;
            const double loss = minibatch_loss(
                batch,
                std::span(indices).subspan(static_cast<std::size_t>(mb) * mb_size,
                                           static_cast<std::size_t>(mb_size)),
                policy, value_net, hp, grad, &st);
            const double mb_obj = st.surrogate;
            const double mb_vloss = st.value_loss;
            const double mb_kl = st.kl;
            clipped_seen += st.clipped;
            if (!std::isfinite(loss)) {
                std::ostringstream oss;
                oss << "non-finite PPO loss: surrogate=" << mb_obj << " value=" << mb_vloss
                    << " entropy=" << nn::gaussian_entropy(policy.log_std);
                throw NonFiniteLoss(oss.str());
            }

            if (hp.max_grad_norm > 0.0) {
                double sq = 0.0;
                for (double g : grad) sq += g * g;
                const double nrm = std::sqrt(sq);
                if (nrm > hp.max_grad_norm) {
                    const double scale = hp.max_grad_norm / nrm;
                    for (double& g : grad) g *= scale;
                }
            }

            // single flat Adam step over [mean params | log_std | value params]
            std::vector<double> flat(np + nls + nv);
            std::copy(policy.mean_params.begin(), policy.mean_params.end(), flat.begin());
            std::copy(policy.log_std.begin(), policy.log_std.end(), flat.begin() + static_cast<std::ptrdiff_t>(np));
            std::copy(value_net.params.begin(), value_net.params.end(),
                      flat.begin() + static_cast<std::ptrdiff_t>(np + nls));
            adam_step(adam, flat, grad, hp);
            std::copy(flat.begin(), flat.begin() + static_cast<std::ptrdiff_t>(np),
                      policy.mean_params.begin());
            std::copy(flat.begin() + static_cast<std::ptrdiff_t>(np),
                      flat.begin() + static_cast<std::ptrdiff_t>(np + nls), policy.log_std.begin());
            std::copy(flat.begin() + static_cast<std::ptrdiff_t>(np + nls), flat.end(),
                      value_net.params.begin());

            obj_acc += mb_obj;
            vloss_acc += mb_vloss;
            kl_acc += mb_kl;
            samples_seen += mb_size;
            ++mb_count;
        }
    }

    metrics.policy_objective = obj_acc / mb_count;
    metrics.value_loss = vloss_acc / mb_count;
    metrics.entropy = nn::gaussian_entropy(policy.log_std);
    metrics.kl_estimate = kl_acc / mb_count;
    metrics.clip_fraction = static_cast<double>(clipped_seen) / static_cast<double>(samples_seen);
    return metrics;
}

namespace {

nn::ParamVector fan_in_init(const nn::MlpArchitecture& arch, Rng& rng) {
    nn::ParamVector p(static_cast<std::size_t>(nn::param_count(arch)), 0.0);
    const int dims[4] = {arch.input_size, arch.hidden0, arch.hidden1, arch.output_size};
    std::size_t off = 0;
    for (int layer = 0; layer < 3; ++layer) {
        const int cols = dims[layer];
        const int rows = dims[layer + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
        for (int i = 0; i < rows * cols; ++i) {
            p[off + static_cast<std::size_t>(i)] = uniform(rng, -bound, bound);
        }
        off += static_cast<std::size_t>(rows) * cols + static_cast<std::size_t>(rows);
    }
    return p;
}

}  // namespace

TrainResult train(const env::EnvFactory& env_factory, env::ControllerMode mode,
                  const PpoHyperParams& hp, std::uint64_t seed, std::int64_t budget_frames) {
    assert(hp.batch_frames % hp.num_minibatches == 0);
    assert(hp.batch_frames % hp.num_actors == 0);
    const int frames_per_actor = hp.batch_frames / hp.num_actors;

    TrainResult result;
    auto init_rng = make_rng(derive_seed(seed, 0x1111));
    result.policy.arch = hp.arch;
    result.policy.action_scale = hp.action_scale;
    result.policy.mean_params = fan_in_init(hp.arch, init_rng);
    result.policy.log_std.assign(static_cast<std::size_t>(hp.arch.output_size), hp.init_log_std);
    result.value_net.arch = hp.arch;
    result.value_net.arch.output_size = 1;
    result.value_net.params = fan_in_init(result.value_net.arch, init_rng);

    std::vector<ActorState> actors;
    actors.reserve(static_cast<std::size_t>(hp.num_actors));
    for (int a = 0; a < hp.num_actors; ++a) {
        ActorState actor;
        actor.env = env_factory();
        actor.mode = mode;
        actor.rng = make_rng(derive_seed(seed, 0x2222, static_cast<std::uint64_t>(a)));
        actor.observation = actor.env->reset(mode);
        actors.push_back(std::move(actor));
    }
    auto update_rng = make_rng(derive_seed(seed, 0x3333));
    auto eval_env = env_factory();
    AdamState adam;
    ObsNormalizer* norm = hp.normalize_observations ? &result.obs_normalizer : nullptr;

    double last_mean_ep = 0.0;
    while (result.frames_consumed + hp.batch_frames <= budget_frames) {
        RolloutBatch batch = collect_rollouts(result.policy, result.value_net, actors,
                                              frames_per_actor, hp, norm);
        const UpdateMetrics m = ppo_update(batch, result.policy, result.value_net, hp, adam,
                                           update_rng);
        result.frames_consumed += hp.batch_frames;

        if (!batch.completed_episode_rewards.empty()) {
            double s = 0.0;
            for (double r : batch.completed_episode_rewards) s += r;
            last_mean_ep = s / static_cast<double>(batch.completed_episode_rewards.size());
        }
        const nn::GaussianPolicy& pol = result.policy;
        const env::PolicyFn mean_policy = [&](std::span<const double> obs, std::span<double> action) {
            std::vector<double> o(obs.begin(), obs.end());
            if (norm != nullptr) norm->apply(o);
            pol.mean_action(o, action);
        };
        const env::EpisodeResult eval = env::run_episode(*eval_env, mean_policy, mode);

        result.curve.push_back({result.frames_consumed, last_mean_ep, eval.fitness,
                                m.policy_objective, m.value_loss, m.entropy, m.kl_estimate,
                                m.clip_fraction});
    }
    return result;
}

// --- checkpoint io ----------------------------------------------------------

namespace {
constexpr std::uint64_t kCheckpointMagic = 0x4858504f4c495631ULL;  // "HXPOLIV1"
}

void write_checkpoint(std::ostream& os, const nn::GaussianPolicy& policy, const ValueNet& value_net,
                      const PpoHyperParams& hp, const ObsNormalizer& norm) {
    nn::write_u64_le(os, kCheckpointMagic);
    nn::write_param_blob(os, policy.arch, policy.mean_params);
    nn::write_u64_le(os, policy.log_std.size());
    for (double v : policy.log_std) nn::write_f64_le(os, v);
    nn::write_f64_le(os, policy.action_scale);
    nn::write_param_blob(os, value_net.arch, value_net.params);
    nn::write_f64_le(os, hp.learning_rate);
    nn::write_f64_le(os, hp.clip_eps);
    nn::write_f64_le(os, hp.c1);
    nn::write_f64_le(os, hp.c2);
    nn::write_i32_le(os, hp.epochs);
    nn::write_i32_le(os, hp.num_minibatches);
    nn::write_i32_le(os, hp.batch_frames);
    nn::write_f64_le(os, hp.gamma);
    nn::write_f64_le(os, hp.gae_lambda);
    nn::write_i32_le(os, hp.num_actors);
    nn::write_i32_le(os, hp.normalize_advantages ? 1 : 0);
    nn::write_i32_le(os, hp.normalize_observations ? 1 : 0);
    nn::write_f64_le(os, hp.max_grad_norm);
    nn::write_f64_le(os, hp.init_log_std);
    nn::write_u64_le(os, static_cast<std::uint64_t>(norm.count));
    nn::write_u64_le(os, norm.mean.size());
    for (double v : norm.mean) nn::write_f64_le(os, v);
    for (double v : norm.m2) nn::write_f64_le(os, v);
}

Checkpoint read_checkpoint(std::istream& is) {
    if (nn::read_u64_le(is) != kCheckpointMagic) throw std::runtime_error("bad checkpoint magic");
    Checkpoint ck;
    auto [parch, pvals] = nn::read_param_blob(is);
    ck.policy.arch = parch;
    ck.policy.mean_params = std::move(pvals);
    const std::uint64_t nls = nn::read_u64_le(is);
    ck.policy.log_std.resize(nls);
    for (auto& v : ck.policy.log_std) v = nn::read_f64_le(is);
    ck.policy.action_scale = nn::read_f64_le(is);
    auto [varch, vvals] = nn::read_param_blob(is);
    ck.value_net.arch = varch;
    ck.value_net.params = std::move(vvals);
    ck.hp.arch = parch;
    ck.hp.action_scale = ck.policy.action_scale;
    ck.hp.learning_rate = nn::read_f64_le(is);
    ck.hp.clip_eps = nn::read_f64_le(is);
    ck.hp.c1 = nn::read_f64_le(is);
    ck.hp.c2 = nn::read_f64_le(is);
    ck.hp.epochs = nn::read_i32_le(is);
    ck.hp.num_minibatches = nn::read_i32_le(is);
    ck.hp.batch_frames = nn::read_i32_le(is);
    ck.hp.gamma = nn::read_f64_le(is);
    ck.hp.gae_lambda = nn::read_f64_le(is);
    ck.hp.num_actors = nn::read_i32_le(is);
    ck.hp.normalize_advantages = nn::read_i32_le(is) != 0;
    ck.hp.normalize_observations = nn::read_i32_le(is) != 0;
    ck.hp.max_grad_norm = nn::read_f64_le(is);
    ck.hp.init_log_std = nn::read_f64_le(is);
    ck.obs_normalizer.count = static_cast<std::int64_t>(nn::read_u64_le(is));
    const std::uint64_t nd = nn::read_u64_le(is);
    ck.obs_normalizer.mean.resize(nd);
    ck.obs_normalizer.m2.resize(nd);
    for (auto& v : ck.obs_normalizer.mean) v = nn::read_f64_le(is);
    for (auto& v : ck.obs_normalizer.m2) v = nn::read_f64_le(is);
    return ck;
}

}  // namespace hexbench::rl
