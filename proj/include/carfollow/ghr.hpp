#pragma once

#include "carfollow/episode.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace carfollow {

/// Parameters of the stimulus-response law a = c * v^m * dv(t - tau) / dx(t - tau)^l.
struct GHRParams {
  double c = 0.0;
  double m = 0.0;
  double l = 0.0;
  double tau = 0.0; // perception-reaction time, seconds

  bool valid() const;
};

enum class SimMode { OneStepPrediction, ForwardSimulation };
enum class DelayInterp { Linear, NearestFrame };

struct SimConfig {
  double dt = 0.1;
  SimMode mode = SimMode::OneStepPrediction;
  DelayInterp delay_interp = DelayInterp::Linear;
  double min_speed_floor = 0.0;
};

/// Follower acceleration in m/s^2. Throws std::domain_error when dx <= 0,
/// v_n < 0, v_n == 0 with m < 0, or the result is not finite.
double ghr_acceleration(double v_n, double dv, double dx, const GHRParams& p);

/// Value of a uniformly sampled series (first sample at t0, spacing dt) at
/// time `t`. std::nullopt outside [t0, t_last].
std::optional<double> sample_at(std::span<const double> values, double t0, double dt, double t, DelayInterp interp);

struct DelayedState {
  double dv = 0.0;
  double dx = 0.0;
};

/// Relative speed and spacing at t - tau; std::nullopt during warm-up.
std::optional<DelayedState> delayed_state(std::span<const EpisodeFrame> frames, double t, double tau,
                                          DelayInterp interp, double dt = 0.1);

struct AccelSample {
  std::size_t frame_index = 0;
  double t = 0.0;
  double accel = 0.0;
};

struct PredictionSeries {
  std::vector<AccelSample> samples;
  std::size_t warmup_frames = 0;
  /// Frames where the law is undefined (zero speed with m < 0, dx <= 0).
  std::size_t skipped_frames = 0;
};

/// One-step prediction: observed follower speed at t with observed relative
/// speed and spacing at t - tau. Empty when the episode is not longer than tau.
PredictionSeries predict_accelerations(const Episode& episode, const GHRParams& p, const SimConfig& cfg);

struct SimState {
  double t = 0.0;
  double y = 0.0;
  double v = 0.0;
  double a = 0.0;
  double dx = 0.0;
};

struct SimulatedTrajectory {
  std::vector<SimState> states;
  std::size_t warmup_frames = 0;
  bool truncated = false; // collision guard fired
};

inline constexpr double kCollisionSpacing = 0.1;

/// Forward Euler integration of the follower against the observed leader.
/// States up to the end of the warm-up window are copied from observation.
SimulatedTrajectory simulate_follower(const Episode& episode, const GHRParams& p, const SimConfig& cfg);

} // namespace carfollow
