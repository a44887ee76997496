#pragma once

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace hexbench::env {

inline constexpr int kNumLegs = 6;
inline constexpr int kJointsPerLeg = 3;
inline constexpr int kNumJoints = kNumLegs * kJointsPerLeg;

struct StepAfterDone : std::runtime_error {
    StepAfterDone() : std::runtime_error("step() called after episode end") {}
};
struct NonFiniteAction : std::runtime_error {
    NonFiniteAction() : std::runtime_error("non-finite action") {}
};

enum class ControllerMode { OpenLoop, ClosedLoop };

/// Kinematic surrogate geometry. The episode is 333 steps of 5/333 s, i.e.
/// exactly 5 seconds.
struct HexapodConfig {
    double dt = 5.0 / 333.0;
    int episode_len = 333;
    double hip_radius = 0.12;        // hexagonal hip placement radius
    double l1 = 0.06;                // coxa, horizontal before the pitch joints
    double l2 = 0.085;               // femur
    double l3 = 0.14;                // tibia
    double joint_limit = 0.7853981633974483;  // pi/4, symmetric per joint
    double max_joint_speed = 6.0;    // rad/s target tracking cap
    double body_half_height = 0.12;  // fixed hip height above ground
    double contact_tolerance = 1e-6;

    bool operator==(const HexapodConfig&) const = default;

    /// Planar hip position of a leg, on the hexagon at 60 degree spacing.
    std::array<double, 2> hip_offset(int leg) const;
    /// Outward axis angle of the leg at zero hip-yaw.
    double leg_axis_angle(int leg) const;
};

struct EpisodeResult {
    double fitness = 0.0;  // meters of x displacement
    std::array<double, kNumLegs> contact_fraction{};
    int frames = 0;
};

struct StepResult {
    std::vector<double> observation;
    double reward = 0.0;
    bool done = false;
    std::array<bool, kNumLegs> contact{};
};

class Env {
  public:
    virtual ~Env() = default;
    virtual std::vector<double> reset(ControllerMode mode) = 0;
    virtual StepResult step(std::span<const double> action) = 0;
    virtual int observation_size(ControllerMode mode) const = 0;
    virtual int episode_len() const = 0;
};

/// Body-frame foot position of one leg: hip-yaw about the vertical axis at
/// the hip, then hip-pitch and knee-pitch about horizontal axes. Positive
/// pitch raises the distal link. z is height above ground with the body at
/// its fixed nominal height.
std::array<double, 3> forward_kinematics(const HexapodConfig& cfg,
                                         std::span<const double> leg_joint_angles, int leg);

/// Least-squares planar registration of current body-frame stance feet onto
/// their anchors (expressed in the same frame). Exact when the feet are a
/// rigid planar transform of the anchors; zero transform with no stance legs.
std::array<double, 3> stance_transform(
    const std::array<std::optional<std::array<double, 2>>, kNumLegs>& anchors,
    const std::array<std::array<double, 2>, kNumLegs>& curr_feet,
    const std::array<bool, kNumLegs>& stance_mask);

struct EnvState {
    std::array<double, kNumJoints> joint_angles{};
    double body_x = 0.0, body_y = 0.0, body_yaw = 0.0;
    int step_index = 0;
    // world-frame anchor per leg while it stays in stance
    std::array<std::optional<std::array<double, 2>>, kNumLegs> anchors{};
};

class HexapodEnv final : public Env {
  public:
    explicit HexapodEnv(HexapodConfig cfg = {});

    std::vector<double> reset(ControllerMode mode) override;
    StepResult step(std::span<const double> action) override;
    int observation_size(ControllerMode mode) const override;
    int episode_len() const override { return cfg_.episode_len; }

    const HexapodConfig& config() const { return cfg_; }
    const EnvState& state() const { return state_; }

  private:
    std::vector<double> observe() const;
    std::array<std::array<double, 3>, kNumLegs> all_feet() const;

    HexapodConfig cfg_;
    ControllerMode mode_ = ControllerMode::OpenLoop;
    EnvState state_;
};

/// Trivially solvable verification environment: reward = -|action - target|^2
/// per step, optimum episode reward 0 at action == target. Observation is the
/// normalized episode time. The synthetic contact mask (per-leg sign of the
/// first joint error) gives MAP-Elites a nontrivial descriptor space.
class QuadraticOracleEnv final : public Env {
  public:
    explicit QuadraticOracleEnv(int episode_len = 333);

    std::vector<double> reset(ControllerMode mode) override;
    StepResult step(std::span<const double> action) override;
    int observation_size(ControllerMode mode) const override { return 1; }
    int episode_len() const override { return episode_len_; }

    static std::array<double, kNumJoints> target();

  private:
    int episode_len_;
    int step_index_ = 0;
};

using PolicyFn = std::function<void(std::span<const double> obs, std::span<double> action)>;

/// Resets and runs exactly one full episode, accumulating x displacement and
/// per-leg contact fractions. Open-loop observations are time modulo a 1 s
/// period, normalized to [0, 1).
EpisodeResult run_episode(Env& env, const PolicyFn& policy, ControllerMode mode);

enum class EnvKind { Hexapod, Oracle };

using EnvFactory = std::function<std::unique_ptr<Env>()>;

EnvFactory make_env_factory(EnvKind kind, const HexapodConfig& cfg = {});

}  // namespace hexbench::env
