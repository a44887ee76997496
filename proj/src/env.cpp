#include "hexbench/env.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

namespace hexbench::env {

namespace {
constexpr double kPi = 3.14159265358979323846;

bool all_finite(std::span<const double> v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}
}  // namespace

std::array<double, 2> HexapodConfig::hip_offset(int leg) const {
    const double a = leg_axis_angle(leg);
    return {hip_radius * std::cos(a), hip_radius * std::sin(a)};
}

double HexapodConfig::leg_axis_angle(int leg) const {
    return kPi / 3.0 * static_cast<double>(leg);
}

std::array<double, 3> forward_kinematics(const HexapodConfig& cfg,
                                         std::span<const double> leg_joint_angles, int leg) {
    assert(leg >= 0 && leg < kNumLegs);
    assert(leg_joint_angles.size() == kJointsPerLeg);
    const double yaw = leg_joint_angles[0];
    const double hip_pitch = leg_joint_angles[1];
    const double knee_pitch = leg_joint_angles[2];

    const double axis = cfg.leg_axis_angle(leg) + yaw;
    const double ux = std::cos(axis);
    const double uy = std::sin(axis);

    // radial/vertical extension in the leg's pitch plane; L1 sits before the
    // pitch joints and stays horizontal
    const double r = cfg.l1 + cfg.l2 * std::cos(hip_pitch) + cfg.l3 * std::cos(hip_pitch + knee_pitch);
    const double z = cfg.l2 * std::sin(hip_pitch) + cfg.l3 * std::sin(hip_pitch + knee_pitch);

    const auto hip = cfg.hip_offset(leg);
    return {hip[0] + r * ux, hip[1] + r * uy, cfg.body_half_height + z};
}

std::array<double, 3> stance_transform(
    const std::array<std::optional<std::array<double, 2>>, kNumLegs>& anchors,
    const std::array<std::array<double, 2>, kNumLegs>& curr_feet,
    const std::array<bool, kNumLegs>& stance_mask) {
    double ax = 0.0, ay = 0.0, bx = 0.0, by = 0.0;
    int n = 0;
    for (int i = 0; i < kNumLegs; ++i) {
        if (!stance_mask[static_cast<std::size_t>(i)] || !anchors[static_cast<std::size_t>(i)]) continue;
        const auto& a = *anchors[static_cast<std::size_t>(i)];
        const auto& b = curr_feet[static_cast<std::size_t>(i)];
        ax += a[0];
        ay += a[1];
        bx += b[0];
        by += b[1];
        ++n;
    }
    if (n == 0) return {0.0, 0.0, 0.0};
    ax /= n;
    ay /= n;
    bx /= n;
    by /= n;

    // 2-D Procrustes: rotation from the cross/dot moments of the centered sets
    double c = 0.0, s = 0.0;
    for (int i = 0; i < kNumLegs; ++i) {
        if (!stance_mask[static_cast<std::size_t>(i)] || !anchors[static_cast<std::size_t>(i)]) continue;
        const auto& a = *anchors[static_cast<std::size_t>(i)];
        const auto& b = curr_feet[static_cast<std::size_t>(i)];
        const double pax = a[0] - ax, pay = a[1] - ay;
        const double pbx = b[0] - bx, pby = b[1] - by;
        c += pbx * pax + pby * pay;
        s += pbx * pay - pby * pax;
    }
    const double dyaw = (c == 0.0 && s == 0.0) ? 0.0 : std::atan2(s, c);
    const double cy = std::cos(dyaw), sy = std::sin(dyaw);
    const double dx = ax - (cy * bx - sy * by);
    const double dy = ay - (sy * bx + cy * by);
    return {dx, dy, dyaw};
}

HexapodEnv::HexapodEnv(HexapodConfig cfg) : cfg_(cfg) {}

std::array<std::array<double, 3>, kNumLegs> HexapodEnv::all_feet() const {
    std::array<std::array<double, 3>, kNumLegs> feet;
    for (int leg = 0; leg < kNumLegs; ++leg) {
        feet[static_cast<std::size_t>(leg)] = forward_kinematics(
            cfg_, std::span<const double>(state_.joint_angles).subspan(
                      static_cast<std::size_t>(leg) * kJointsPerLeg, kJointsPerLeg),
            leg);
    }
    return feet;
}

std::vector<double> HexapodEnv::observe() const {
    if (mode_ == ControllerMode::OpenLoop) {
        const double t = static_cast<double>(state_.step_index) * cfg_.dt;
        return {std::fmod(t, 1.0)};  // period fixed at 1 s, already in [0,1)
    }
    return std::vector<double>(state_.joint_angles.begin(), state_.joint_angles.end());
}

std::vector<double> HexapodEnv::reset(ControllerMode mode) {
    mode_ = mode;
    state_ = EnvState{};
    // anchor any foot already on the ground in the neutral pose
    const auto feet = all_feet();
    for (int i = 0; i < kNumLegs; ++i) {
        const auto& f = feet[static_cast<std::size_t>(i)];
        if (f[2] <= cfg_.contact_tolerance) {
            state_.anchors[static_cast<std::size_t>(i)] = std::array<double, 2>{f[0], f[1]};
        }
    }
    return observe();
}

StepResult HexapodEnv::step(std::span<const double> action) {
    if (state_.step_index >= cfg_.episode_len) throw StepAfterDone{};
    if (action.size() != kNumJoints || !all_finite(action)) throw NonFiniteAction{};

    // track clamped targets under the joint-rate cap
    const double max_delta = cfg_.max_joint_speed * cfg_.dt;
    for (int j = 0; j < kNumJoints; ++j) {
        const auto uj = static_cast<std::size_t>(j);
        const double target = std::clamp(action[uj], -cfg_.joint_limit, cfg_.joint_limit);
        const double delta = std::clamp(target - state_.joint_angles[uj], -max_delta, max_delta);
        state_.joint_angles[uj] += delta;
    }

    const auto feet = all_feet();
    std::array<bool, kNumLegs> contact{};
    std::array<std::array<double, 2>, kNumLegs> feet_xy{};
    for (int i = 0; i < kNumLegs; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        contact[ui] = feet[ui][2] <= cfg_.contact_tolerance;
        feet_xy[ui] = {feet[ui][0], feet[ui][1]};
    }

    // anchors live in world coordinates; registration runs in the body frame
    const double cy = std::cos(state_.body_yaw), sy = std::sin(state_.body_yaw);
    std::array<std::optional<std::array<double, 2>>, kNumLegs> anchors_body{};
    for (int i = 0; i < kNumLegs; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        if (!state_.anchors[ui]) continue;
        const double wx = (*state_.anchors[ui])[0] - state_.body_x;
        const double wy = (*state_.anchors[ui])[1] - state_.body_y;
        anchors_body[ui] = std::array<double, 2>{cy * wx + sy * wy, -sy * wx + cy * wy};
    }

    const auto [dx, dy, dyaw] = stance_transform(anchors_body, feet_xy, contact);
    const double prev_x = state_.body_x;
    state_.body_x += cy * dx - sy * dy;
    state_.body_y += sy * dx + cy * dy;
    state_.body_yaw += dyaw;

    // persistent stance keeps its anchor; entering legs anchor at their new
    // world position; lifted legs drop theirs
    const double ncy = std::cos(state_.body_yaw), nsy = std::sin(state_.body_yaw);
    for (int i = 0; i < kNumLegs; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        if (!contact[ui]) {
            state_.anchors[ui].reset();
        } else if (!state_.anchors[ui]) {
            state_.anchors[ui] = std::array<double, 2>{
                state_.body_x + ncy * feet_xy[ui][0] - nsy * feet_xy[ui][1],
                state_.body_y + nsy * feet_xy[ui][0] + ncy * feet_xy[ui][1]};
        }
    }

    state_.step_index += 1;
    StepResult res;
    res.reward = state_.body_x - prev_x;
    res.done = state_.step_index >= cfg_.episode_len;
    res.contact = contact;
    res.observation = observe();
    return res;
}

int HexapodEnv::observation_size(ControllerMode mode) const {
    return mode == ControllerMode::OpenLoop ? 1 : kNumJoints;
}

QuadraticOracleEnv::QuadraticOracleEnv(int episode_len) : episode_len_(episode_len) {}

std::array<double, kNumJoints> QuadraticOracleEnv::target() {
    std::array<double, kNumJoints> t{};
    for (int i = 0; i < kNumJoints; ++i) {
        t[static_cast<std::size_t>(i)] = (static_cast<double>(i % 3) - 1.0) * 0.15;
    }
    return t;
}

std::vector<double> QuadraticOracleEnv::reset(ControllerMode) {
    step_index_ = 0;
    return {0.0};
}

StepResult QuadraticOracleEnv::step(std::span<const double> action) {
    if (step_index_ >= episode_len_) throw StepAfterDone{};
    if (action.size() != kNumJoints || !all_finite(action)) throw NonFiniteAction{};
    static const auto tgt = target();
    double err = 0.0;
    StepResult res;
    for (int i = 0; i < kNumJoints; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        const double d = action[ui] - tgt[ui];
        err += d * d;
        if (i % kJointsPerLeg == 0) res.contact[static_cast<std::size_t>(i / kJointsPerLeg)] = d > 0.0;
    }
    step_index_ += 1;
    res.reward = -err;
    res.done = step_index_ >= episode_len_;
    res.observation = {static_cast<double>(step_index_) / static_cast<double>(episode_len_)};
    return res;
}

EpisodeResult run_episode(Env& env, const PolicyFn& policy, ControllerMode mode) {
    std::vector<double> obs = env.reset(mode);
    std::vector<double> action(kNumJoints);
    EpisodeResult result;
    std::array<int, kNumLegs> contact_steps{};
    const int len = env.episode_len();
    for (int t = 0; t < len; ++t) {
        policy(obs, action);
        StepResult sr = env.step(action);
        result.fitness += sr.reward;
        for (int i = 0; i < kNumLegs; ++i) {
            if (sr.contact[static_cast<std::size_t>(i)]) ++contact_steps[static_cast<std::size_t>(i)];
        }
        obs = std::move(sr.observation);
    }
    for (int i = 0; i < kNumLegs; ++i) {
        result.contact_fraction[static_cast<std::size_t>(i)] =
            static_cast<double>(contact_steps[static_cast<std::size_t>(i)]) / static_cast<double>(len);
    }
    result.frames = len;
    return result;
}

EnvFactory make_env_factory(EnvKind kind, const HexapodConfig& cfg) {
    if (kind == EnvKind::Oracle) {
        return [len = cfg.episode_len]() -> std::unique_ptr<Env> {
            return std::make_unique<QuadraticOracleEnv>(len);
        };
    }
    return [cfg]() -> std::unique_ptr<Env> { return std::make_unique<HexapodEnv>(cfg); };
}

}  // namespace hexbench::env
