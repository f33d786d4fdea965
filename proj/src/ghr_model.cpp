#include "carfollow/ghr.hpp"

#include <fmt/format.h>

#include <cmath>
#include <stdexcept>

namespace carfollow {

namespace {

constexpr double kIndexSnap = 1e-7; // fractional sample positions this close to an integer are exact samples
constexpr double kTimeEps = 1e-9;

template <typename Get>
std::optional<double> sample_series(std::size_t n, Get get, double t0, double dt, double t, DelayInterp interp) {
  if (n == 0) return std::nullopt;
  double s = (t - t0) / dt;
  const double nearest = std::round(s);
  if (std::abs(s - nearest) < kIndexSnap) s = nearest;
  if (s < 0.0 || s > static_cast<double>(n - 1)) return std::nullopt;
  if (interp == DelayInterp::NearestFrame) return get(static_cast<std::size_t>(std::round(s)));
  const auto i = static_cast<std::size_t>(std::floor(s));
  const double frac = s - static_cast<double>(i);
  if (frac == 0.0 || i + 1 >= n) return get(i);
  const double lo = get(i);
  return lo + frac * (get(i + 1) - lo);
}

std::size_t first_scored_index(std::span<const EpisodeFrame> frames, double tau) {
  const double t0 = frames.front().t;
  std::size_t k = 0;
  while (k < frames.size() && frames[k].t - tau < t0 - kTimeEps) ++k;
  return k;
}

} // namespace

bool GHRParams::valid() const {
  return std::isfinite(c) && std::isfinite(m) && std::isfinite(l) && std::isfinite(tau) && tau >= 0.0;
}

double ghr_acceleration(double v_n, double dv, double dx, const GHRParams& p) {
  if (!(dx > 0.0)) throw std::domain_error(fmt::format("GHR spacing must be positive, got {}", dx));
  if (!(v_n >= 0.0)) throw std::domain_error(fmt::format("GHR speed must be non-negative, got {}", v_n));
  if (v_n == 0.0 && p.m < 0.0) throw std::domain_error("GHR speed term is singular at v = 0 for m < 0");
  const double a = p.c * std::pow(v_n, p.m) * dv / std::pow(dx, p.l);
  if (!std::isfinite(a)) throw std::domain_error("GHR acceleration is not finite");
  return a;
}

std::optional<double> sample_at(std::span<const double> values, double t0, double dt, double t, DelayInterp interp) {
  return sample_series(values.size(), [&](std::size_t i) { return values[i]; }, t0, dt, t, interp);
}

std::optional<DelayedState> delayed_state(std::span<const EpisodeFrame> frames, double t, double tau,
                                          DelayInterp interp, double dt) {
  if (frames.empty()) return std::nullopt;
  const double t0 = frames.front().t;
  const double td = t - tau;
  if (td < t0 - kTimeEps) return std::nullopt;
  const auto dv = sample_series(frames.size(), [&](std::size_t i) { return frames[i].relative_speed(); }, t0, dt, td, interp);
  const auto dx = sample_series(frames.size(), [&](std::size_t i) { return frames[i].space_headway; }, t0, dt, td, interp);
  if (!dv || !dx) return std::nullopt;
  return DelayedState{*dv, *dx};
}

PredictionSeries predict_accelerations(const Episode& episode, const GHRParams& p, const SimConfig& cfg) {
  PredictionSeries out;
  const std::span<const EpisodeFrame> frames(episode.frames);
  if (frames.empty() || episode.duration() <= p.tau) {
    out.warmup_frames = frames.size();
    return out;
  }
  const std::size_t k0 = first_scored_index(frames, p.tau);
  out.warmup_frames = k0;
  out.samples.reserve(frames.size() - k0);
  for (std::size_t i = k0; i < frames.size(); ++i) {
    const auto state = delayed_state(frames, frames[i].t, p.tau, cfg.delay_interp, cfg.dt);
    if (!state) {
      ++out.skipped_frames;
      continue;
    }
    try {
      const double v = std::max(frames[i].follower_speed, cfg.min_speed_floor);
      out.samples.push_back({i, frames[i].t, ghr_acceleration(v, state->dv, state->dx, p)});
    } catch (const std::domain_error&) {
      ++out.skipped_frames;
    }
  }
  return out;
}

SimulatedTrajectory simulate_follower(const Episode& episode, const GHRParams& p, const SimConfig& cfg) {
  const auto& frames = episode.frames;
  if (frames.empty() || episode.duration() <= p.tau)
    throw std::invalid_argument("episode must last longer than the perception-reaction time");

  const std::size_t n = frames.size();
  const double t0 = frames.front().t;
  const std::size_t k0 = first_scored_index(frames, p.tau);

  std::vector<double> y(n), v(n), a(n), dx(n), dv(n);
  for (std::size_t i = 0; i <= k0 && i < n; ++i) {
    y[i] = frames[i].follower_y;
    v[i] = frames[i].follower_speed;
    a[i] = frames[i].follower_accel;
    dx[i] = frames[i].space_headway;
    dv[i] = frames[i].leader_speed - v[i];
  }

  SimulatedTrajectory out;
  out.warmup_frames = k0;
  std::size_t last = n; // one past the last valid state

  for (std::size_t i = k0; i < n; ++i) {
    const double td = frames[i].t - p.tau;
    const auto ddv = sample_at(std::span<const double>(dv.data(), i + 1), t0, cfg.dt, td, cfg.delay_interp);
    const auto ddx = sample_at(std::span<const double>(dx.data(), i + 1), t0, cfg.dt, td, cfg.delay_interp);
    try {
      if (!ddv || !ddx) throw std::domain_error("delayed state unavailable");
      a[i] = ghr_acceleration(std::max(v[i], cfg.min_speed_floor), *ddv, *ddx, p);
    } catch (const std::domain_error&) {
      out.truncated = true;
      last = i;
      break;
    }
    if (i + 1 == n) break;
    v[i + 1] = std::max(cfg.min_speed_floor, v[i] + a[i] * cfg.dt);
    y[i + 1] = y[i] + v[i] * cfg.dt;
    dx[i + 1] = frames[i + 1].space_headway - (y[i + 1] - frames[i + 1].follower_y);
    dv[i + 1] = frames[i + 1].leader_speed - v[i + 1];
    if (dx[i + 1] <= kCollisionSpacing) {
      out.truncated = true;
      last = i + 1;
      break;
    }
  }

  out.states.reserve(last);
  for (std::size_t i = 0; i < last; ++i) out.states.push_back({frames[i].t, y[i], v[i], a[i], dx[i]});
  return out;
}

} // namespace carfollow
