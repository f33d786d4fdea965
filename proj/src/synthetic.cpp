#include "carfollow/synthetic.hpp"

#include "carfollow/classifier.hpp"
#include "carfollow/units.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

namespace carfollow::synthetic {

namespace {

constexpr double kDt = units::kFrameInterval;

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

void add_group(ClusterLibrary& lib, VehicleClass cls, std::mt19937_64& rng) {
  constexpr int n = kMaxClusterId;
  std::vector<double> taus(n);
  for (int k = 0; k < n; ++k) taus[k] = 0.5 + (2.95 - 0.5) * k / (n - 1);
  std::shuffle(taus.begin(), taus.end(), rng);
  for (int k = 0; k < n; ++k) {
    const double gain = uniform(rng, 0.15, 0.5);
    const double m = uniform(rng, 0.0, 1.2);
    const double l = uniform(rng, 0.5, 1.5);
    const double c = gain * std::pow(20.0, l) / std::pow(15.0, m);
    lib.add({k + 1, cls, GHRParams{c, m, l, std::round(taus[k] * 100.0) / 100.0}});
  }
}

TrajectoryPoint point(int id, std::int64_t frame, double y, int lane, double v, double a) {
  TrajectoryPoint p;
  p.vehicle_id = id;
  p.frame = frame;
  p.t = units::frame_to_seconds(frame);
  p.y = y;
  p.lane_id = lane;
  p.speed = v;
  p.accel = a;
  return p;
}

VehicleTrack make_track(int id, double length) {
  VehicleTrack t;
  t.vehicle_id = id;
  t.length = length;
  t.width = 2.0;
  return t;
}

/// Fills preceding_id / space_headway from the geometric leader at each frame.
void attach_leader_columns(Dataset& ds) {
  struct Entry {
    std::int64_t frame;
    int lane;
    double y;
    TrajectoryPoint* p;
  };
  std::vector<Entry> entries;
  entries.reserve(ds.point_count());
  for (auto& [id, t] : ds.tracks)
    for (auto& p : t.points) entries.push_back({p.frame, p.lane_id, p.y, &p});
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return std::tie(a.frame, a.lane, a.y) < std::tie(b.frame, b.lane, b.y);
  });
  for (std::size_t k = 0; k < entries.size(); ++k) {
    auto& e = entries[k];
    if (k + 1 < entries.size() && entries[k + 1].frame == e.frame && entries[k + 1].lane == e.lane &&
        entries[k + 1].y > e.y) {
      e.p->preceding_id = entries[k + 1].p->vehicle_id;
      e.p->space_headway = entries[k + 1].y - e.y;
    } else {
      e.p->preceding_id.reset();
      e.p->space_headway.reset();
    }
  }
}

} // namespace

ClusterLibrary cluster_library(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ClusterLibrary lib;
  add_group(lib, VehicleClass::PassengerCar, rng);
  add_group(lib, VehicleClass::HeavyVehicle, rng);
  return lib;
}

Episode round_trip_episode(const GHRParams& p, const LeaderProfile& profile, const SimConfig& sim) {
  const auto n = static_cast<std::size_t>(std::llround(profile.duration_s / kDt)) + 1;
  Episode ep;
  ep.id = 0;
  ep.follower_id = 2;
  ep.leader_id = 1;
  ep.leader_length = profile.leader_length;
  ep.follower_length = 4.5;
  ep.frames.resize(n);
  double leader_y = profile.initial_spacing;
  for (std::size_t i = 0; i < n; ++i) {
    auto& f = ep.frames[i];
    f.frame = static_cast<std::int64_t>(i);
    f.t = units::frame_to_seconds(f.frame);
    const double phase = f.t - profile.quiet_s;
    f.leader_speed = profile.base_speed +
                     (phase > 0.0 ? profile.amplitude * std::sin(2.0 * std::numbers::pi * phase / profile.period_s) : 0.0);
    f.leader_y = leader_y;
    leader_y += f.leader_speed * kDt;
    f.follower_speed = profile.base_speed;
    f.follower_accel = 0.0;
    f.follower_y = profile.base_speed * f.t;
    f.space_headway = f.leader_y - f.follower_y;
  }
  SimConfig cfg = sim;
  cfg.mode = SimMode::ForwardSimulation;
  const auto traj = simulate_follower(ep, p, cfg);
  if (traj.truncated || traj.states.size() != n)
    throw std::runtime_error(fmt::format("synthetic follower collided (c={}, m={}, l={}, tau={})", p.c, p.m, p.l, p.tau));
  for (std::size_t i = 0; i < n; ++i) {
    auto& f = ep.frames[i];
    f.follower_y = traj.states[i].y;
    f.follower_speed = traj.states[i].v;
    f.follower_accel = traj.states[i].a;
    f.space_headway = traj.states[i].dx;
    f.gap = f.space_headway - ep.leader_length;
  }
  ep.refresh_averages();
  return ep;
}

Episode steady_pair(double speed, double spacing, double duration_s, double leader_length) {
  const auto n = static_cast<std::size_t>(std::llround(duration_s / kDt)) + 1;
  Episode ep;
  ep.follower_id = 2;
  ep.leader_id = 1;
  ep.leader_length = leader_length;
  ep.follower_length = 4.5;
  ep.frames.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& f = ep.frames[i];
    f.frame = static_cast<std::int64_t>(i);
    f.t = units::frame_to_seconds(f.frame);
    f.follower_y = speed * f.t;
    f.leader_y = f.follower_y + spacing;
    f.follower_speed = speed;
    f.leader_speed = speed;
    f.space_headway = spacing;
    f.gap = spacing - leader_length;
  }
  ep.refresh_averages();
  return ep;
}

Dataset six_vehicle_scenario() {
  Dataset ds;
  struct Spec {
    int id;
    int lane;
    double y0;
    std::int64_t last_frame;
    std::int64_t lane_change_frame; // -1 = none
  };
  const Spec specs[] = {
      {1, 1, 50.0, 299, -1}, {2, 1, 30.0, 299, -1}, {3, 1, 5.0, 199, -1},
      {4, 2, 133.0, 299, -1}, {5, 2, 125.0, 299, -1}, {6, 2, 100.0, 299, 260},
  };
  for (const auto& s : specs) {
    auto track = make_track(s.id, 5.0);
    for (std::int64_t f = 0; f <= s.last_frame; ++f) {
      const int lane = (s.lane_change_frame >= 0 && f >= s.lane_change_frame) ? s.lane + 1 : s.lane;
      track.points.push_back(point(s.id, f, s.y0 + 10.0 * units::frame_to_seconds(f), lane, 10.0, 0.0));
    }
    ds.tracks.emplace(s.id, std::move(track));
  }
  attach_leader_columns(ds);
  return ds;
}

Dataset performance_dataset(std::size_t vehicles, std::size_t frames, std::uint64_t seed) {
  constexpr int kLanes = 6;
  constexpr std::int64_t kStagger = 18;
  std::mt19937_64 rng(seed);
  std::vector<double> lane_offset(kLanes);
  for (auto& o : lane_offset) o = uniform(rng, 0.0, 1.0);

  const std::int64_t horizon = static_cast<std::int64_t>((vehicles / kLanes + 1) * kStagger + frames + 1);
  // Common speed profile per lane; position is its running integral.
  std::vector<std::vector<double>> speed(kLanes, std::vector<double>(horizon));
  std::vector<std::vector<double>> pos(kLanes, std::vector<double>(horizon + 1, 0.0));
  for (int lane = 0; lane < kLanes; ++lane) {
    for (std::int64_t f = 0; f < horizon; ++f) {
      speed[lane][f] = 6.0 + 0.8 * lane + 2.0 * std::sin(2.0 * std::numbers::pi * (f / 900.0 + lane_offset[lane]));
      pos[lane][f + 1] = pos[lane][f] + speed[lane][f] * kDt;
    }
  }

  Dataset ds;
  ds.segment_length = 1e6;
  for (std::size_t i = 0; i < vehicles; ++i) {
    const int lane = static_cast<int>(i % kLanes);
    const std::int64_t start = static_cast<std::int64_t>(i / kLanes) * kStagger + lane;
    const double length = uniform(rng, 0.0, 1.0) < 0.08 ? uniform(rng, 10.0, 16.0) : uniform(rng, 3.8, 5.4);
    const int id = static_cast<int>(i) + 1;
    auto track = make_track(id, length);
    track.points.reserve(frames);
    for (std::size_t k = 0; k < frames; ++k) {
      const std::int64_t f = start + static_cast<std::int64_t>(k);
      const double a = k + 1 < frames ? (speed[lane][f + 1] - speed[lane][f]) / kDt : 0.0;
      auto p = point(id, f, pos[lane][f] - pos[lane][start], lane + 1, speed[lane][f], a);
      if (i >= kLanes) {
        const auto& ahead_start = start - kStagger;
        p.preceding_id = id - kLanes;
        p.space_headway = pos[lane][f] - pos[lane][ahead_start] - p.y;
        if (f - ahead_start >= static_cast<std::int64_t>(frames)) {
          p.preceding_id.reset();
          p.space_headway.reset();
        }
      }
      track.points.push_back(p);
    }
    ds.tracks.emplace(id, std::move(track));
  }
  return ds;
}

Dataset traffic_scenario(std::uint64_t seed) {
  constexpr int kLanes = 6;
  constexpr std::int64_t kFrames = 3600;
  constexpr double kSegment = 700.0;
  constexpr double kMerge = 120.0;

  struct Vehicle {
    int id;
    int lane;
    double y;
    double v;
    double length;
    VehicleClass cls;
    double speed_factor;
    double time_headway;
    double min_gap;
    double a_max;
    double b;
    bool lane_changed = false;
    VehicleTrack track;
  };

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> phase(kLanes);
  for (auto& ph : phase) ph = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  auto lane_speed = [&](int lane, double t) {
    return 13.0 + 9.0 * std::sin(2.0 * std::numbers::pi * t / 900.0 + phase[lane - 1]);
  };

  Dataset ds;
  ds.segment_length = kSegment;
  ds.merge_boundary_y = kMerge;
  std::vector<Vehicle> active;
  std::vector<std::int64_t> next_spawn(kLanes + 1, 0);
  int next_id = 1;

  auto leader_of = [&](const Vehicle& me) -> const Vehicle* {
    const Vehicle* best = nullptr;
    for (const auto& o : active)
      if (o.lane == me.lane && o.y > me.y && (!best || o.y < best->y)) best = &o;
    return best;
  };
  auto lane_has_room = [&](int lane, const Vehicle& me) {
    for (const auto& o : active) {
      if (o.lane != lane) continue;
      if (o.y >= me.y && o.y - o.length - me.y < 7.0) return false;
      if (o.y < me.y && me.y - me.length - o.y < 7.0) return false;
    }
    return true;
  };

  for (std::int64_t f = 0; f < kFrames; ++f) {
    const double t = units::frame_to_seconds(f);

    for (int lane = 1; lane <= kLanes; ++lane) {
      if (f < next_spawn[lane]) continue;
      double tail = kSegment;
      double tail_v = lane_speed(lane, t);
      for (const auto& o : active)
        if (o.lane == lane && o.y - o.length < tail) {
          tail = o.y - o.length;
          tail_v = o.v;
        }
      if (tail < 15.0) continue;
      Vehicle v;
      v.id = next_id++;
      v.lane = lane;
      v.y = 0.0;
      const double r = uniform(rng, 0.0, 1.0);
      if (r < 0.15) {
        v.length = uniform(rng, 10.0, 17.0);
        v.a_max = 0.8;
        v.b = 1.5;
      } else if (r < 0.23) {
        v.length = uniform(rng, 5.05, 5.45);
        v.a_max = 1.2;
        v.b = 2.0;
      } else {
        v.length = uniform(rng, 3.6, 4.95);
        v.a_max = 1.4;
        v.b = 2.0;
      }
      v.cls = classify_by_length(v.length);
      v.v = std::min(tail_v, lane_speed(lane, t));
      v.speed_factor = uniform(rng, 0.9, 1.1);
      v.time_headway = uniform(rng, 1.0, 1.8);
      v.min_gap = uniform(rng, 1.5, 3.0);
      v.track = make_track(v.id, v.length);
      v.track.ngsim_class = v.cls == VehicleClass::HeavyVehicle ? 3 : 2;
      active.push_back(std::move(v));
      next_spawn[lane] = f + static_cast<std::int64_t>(uniform(rng, 12.0, 30.0));
    }

    // Lane changes: mostly cars stuck behind heavy vehicles, more often at low speed.
    for (auto& me : active) {
      if (me.lane_changed) continue;
      const Vehicle* lead = leader_of(me);
      double hazard = 0.0002;
      if (me.cls == VehicleClass::PassengerCar && lead && lead->cls == VehicleClass::HeavyVehicle)
        hazard = 0.0005 + 0.01 * std::clamp(1.0 - me.v / 20.0, 0.0, 1.0);
      if (uniform(rng, 0.0, 1.0) >= hazard) continue;
      const int target = me.lane == 1 ? 2 : (me.lane == kLanes ? kLanes - 1 : me.lane + (uniform(rng, 0.0, 1.0) < 0.5 ? -1 : 1));
      if (!lane_has_room(target, me)) continue;
      me.lane = target;
      me.lane_changed = true;
    }

    std::vector<double> accel(active.size());
    std::vector<const Vehicle*> leaders(active.size());
    for (std::size_t i = 0; i < active.size(); ++i) {
      auto& me = active[i];
      const Vehicle* lead = leader_of(me);
      leaders[i] = lead;
      const double v0 = std::max(1.0, lane_speed(me.lane, t) * me.speed_factor);
      double a = me.a_max * (1.0 - std::pow(me.v / v0, 4));
      if (lead) {
        double headway = me.time_headway;
        if (me.cls != VehicleClass::HeavyVehicle && lead->cls == VehicleClass::HeavyVehicle)
          headway *= 0.6 + 0.8 * std::clamp((me.v - 8.0) / 10.6, 0.0, 1.0);
        const double gap = std::max(0.1, lead->y - lead->length - me.y);
        const double desired =
            me.min_gap + std::max(0.0, me.v * headway + me.v * (me.v - lead->v) / (2.0 * std::sqrt(me.a_max * me.b)));
        a -= me.a_max * (desired / gap) * (desired / gap);
      }
      a += (me.y < kMerge ? 0.05 : 0.3) * noise(rng);
      accel[i] = std::clamp(a, -6.0, 3.0);
    }

    for (std::size_t i = 0; i < active.size(); ++i) {
      auto& me = active[i];
      me.track.points.push_back(point(me.id, f, me.y, me.lane, me.v, accel[i]));
    }

    std::vector<double> new_y(active.size()), new_v(active.size());
    for (std::size_t i = 0; i < active.size(); ++i) {
      new_v[i] = std::max(0.0, active[i].v + accel[i] * kDt);
      new_y[i] = active[i].y + active[i].v * kDt;
    }
    // Leaders are processed first so that the spacing guard sees their final position.
    std::vector<std::size_t> order(active.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return active[a].y > active[b].y; });
    for (const std::size_t i : order) {
      if (!leaders[i]) continue;
      const auto li = static_cast<std::size_t>(leaders[i] - active.data());
      const double limit = new_y[li] - active[li].length - 1.0;
      if (new_y[i] > limit) {
        new_y[i] = std::max(active[i].y, limit);
        new_v[i] = std::min(new_v[i], new_v[li]);
      }
    }
    for (std::size_t i = 0; i < active.size(); ++i) {
      active[i].y = new_y[i];
      active[i].v = new_v[i];
    }

    for (auto it = active.begin(); it != active.end();) {
      if (it->y > kSegment || f + 1 == kFrames) {
        if (it->track.points.size() >= 2) ds.tracks.emplace(it->id, std::move(it->track));
        it = active.erase(it);
      } else {
        ++it;
      }
    }
  }
  attach_leader_columns(ds);
  return ds;
}

std::vector<Episode> random_episodes(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const PairClass pairs[] = {PairClass::CarFollowsCar, PairClass::CarFollowsHeavy, PairClass::HeavyFollowsCar,
                             PairClass::HeavyFollowsHeavy, PairClass::OtherPair};
  std::vector<Episode> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    Episode ep;
    ep.id = k;
    ep.follower_id = static_cast<int>(k) + 1;
    ep.leader_id = static_cast<int>(k) + 100000;
    ep.pair = pairs[std::uniform_int_distribution<int>(0, 4)(rng)];
    const bool f_heavy = ep.pair == PairClass::HeavyFollowsCar || ep.pair == PairClass::HeavyFollowsHeavy;
    const bool l_heavy = ep.pair == PairClass::CarFollowsHeavy || ep.pair == PairClass::HeavyFollowsHeavy;
    ep.follower_class = f_heavy ? VehicleClass::HeavyVehicle : VehicleClass::PassengerCar;
    ep.leader_class = l_heavy ? VehicleClass::HeavyVehicle : VehicleClass::PassengerCar;
    if (ep.pair == PairClass::OtherPair) ep.leader_class = VehicleClass::SuvLightTruck;
    ep.follower_length = f_heavy ? 14.0 : 4.5;
    ep.leader_length = l_heavy ? 14.0 : 4.5;
    ep.end_reason = uniform(rng, 0.0, 1.0) < 0.3 ? EndReason::FollowerLaneChange : EndReason::DataEnd;
    const double base_speed = uniform(rng, 3.0, 25.0);
    const double base_gap = uniform(rng, 5.0, 70.0);
    const auto n = std::uniform_int_distribution<std::size_t>(2, 40)(rng);
    double y = uniform(rng, 0.0, 100.0);
    for (std::size_t i = 0; i < n; ++i) {
      EpisodeFrame f;
      f.frame = static_cast<std::int64_t>(i);
      f.t = units::frame_to_seconds(f.frame);
      f.follower_speed = std::max(0.0, base_speed + uniform(rng, -1.0, 1.0));
      f.leader_speed = std::max(0.0, f.follower_speed + uniform(rng, -0.5, 0.5));
      f.gap = base_gap + uniform(rng, -2.0, 2.0);
      f.space_headway = f.gap + ep.leader_length;
      f.follower_y = y;
      f.leader_y = y + f.space_headway;
      y += f.follower_speed * kDt;
      ep.frames.push_back(f);
    }
    ep.refresh_averages();
    out.push_back(std::move(ep));
  }
  return out;
}

std::string to_ngsim_text(const Dataset& ds) {
  constexpr std::int64_t kEpochMs = 1113433200000;
  std::string out;
  out.reserve(ds.point_count() * 120);
  auto ft = [](double m) { return m / units::kMetersPerFoot; };
  for (const auto& [id, t] : ds.tracks) {
    const int cls = t.ngsim_class.value_or(t.length > 5.5 ? 3 : 2);
    for (const auto& p : t.points) {
      const double headway = p.space_headway.value_or(0.0);
      const double time_headway = p.space_headway && p.speed > 0.0 ? headway / p.speed : 0.0;
      fmt::format_to(std::back_inserter(out),
                     "{} {} {} {} {:.3f} {:.5f} 0 0 {:.3f} {:.3f} {} {:.5f} {:.5f} {} {} 0 {:.5f} {:.2f}\n", id,
                     p.frame, t.points.size(), kEpochMs + p.frame * 100, ft(12.0 * p.lane_id - 6.0), ft(p.y),
                     ft(t.length), ft(t.width), cls, ft(p.speed), ft(p.accel), p.lane_id, p.preceding_id.value_or(0),
                     ft(headway), time_headway);
    }
  }
  return out;
}

} // namespace carfollow::synthetic
