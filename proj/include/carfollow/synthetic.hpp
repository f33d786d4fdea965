#pragma once

#include "carfollow/cluster_fitter.hpp"
#include "carfollow/episode.hpp"
#include "carfollow/ghr.hpp"
#include "carfollow/trajectory.hpp"

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

/// Deterministic generators for tests, the self-test and `run --synthetic`.
/// Nothing here is measured data.
namespace carfollow::synthetic {

/// 30 car and 30 heavy-vehicle clusters with pairwise-distinct parameters.
/// Coefficients are chosen so the linearised gain c * v^m / dx^l at 15 m/s
/// and 20 m/s spacing lies in [0.15, 0.5] 1/s, which keeps simulated
/// followers stable over the reaction times in [0.5, 2.95] s.
ClusterLibrary cluster_library(std::uint64_t seed);

struct LeaderProfile {
  double duration_s = 30.0;
  double base_speed = 15.0;     // m/s
  double amplitude = 3.0;       // m/s
  double period_s = 10.0;
  double quiet_s = 3.0;         // constant-speed lead-in, covers any warm-up
  double initial_spacing = 20.0; // front-to-front, m
  double leader_length = 4.5;
};

/// Observed leader plus a follower generated by forward simulation of `p`.
/// One-step prediction with the same parameters reproduces the follower
/// acceleration exactly. Throws std::runtime_error if the follower collides.
Episode round_trip_episode(const GHRParams& p, const LeaderProfile& profile = {}, const SimConfig& sim = {});

/// Leader and follower at the same constant speed and spacing.
Episode steady_pair(double speed, double spacing, double duration_s, double leader_length = 4.5);

/// Six vehicles over frames 0..299 at 10 m/s:
///   lane 1: 1 leads 2 (compliant, crosses y = 120 at 9 s); 3 follows 2 for only 20 s;
///   lane 2: 4 leads 5 with a 3 m gap; 6 follows 5 and moves to lane 3 at 26 s.
Dataset six_vehicle_scenario();

/// `vehicles` tracks of `frames` samples each, staggered over six lanes.
Dataset performance_dataset(std::size_t vehicles, std::size_t frames, std::uint64_t seed);

/// Small multi-lane freeway section with cars, SUVs and heavy vehicles,
/// time-varying lane speeds, discretionary lane changes behind heavy
/// vehicles and noisier driving past the merge boundary.
Dataset traffic_scenario(std::uint64_t seed);

/// Random episodes for property tests. Every episode has at least two frames
/// and averages consistent with its frames.
std::vector<Episode> random_episodes(std::size_t count, std::uint64_t seed);

/// Serialises a dataset in the 18-column NGSIM layout (feet, ms epoch time).
std::string to_ngsim_text(const Dataset& dataset);

} // namespace carfollow::synthetic
