#pragma once

#include "carfollow/classifier.hpp"
#include "carfollow/trajectory.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

namespace carfollow {

struct EpisodeFrame {
  std::int64_t frame = 0;
  double t = 0.0;
  double follower_y = 0.0;
  double follower_speed = 0.0;
  double follower_accel = 0.0;
  double leader_y = 0.0;
  double leader_speed = 0.0;
  double space_headway = 0.0; // Δx
  double gap = 0.0;

  /// Δv = leader speed - follower speed; positive when the leader pulls away.
  double relative_speed() const { return leader_speed - follower_speed; }
};

enum class EndReason { FollowerLaneChange, LeaderLaneChange, LeaderChanged, SegmentExit, DataEnd };

/// Which part of the monitored segment an episode covers.
enum class SegmentPart { Whole, BeforeMerge, AfterMerge };

struct Episode {
  std::size_t id = 0;
  int follower_id = 0;
  int leader_id = 0;
  VehicleClass follower_class = VehicleClass::PassengerCar;
  VehicleClass leader_class = VehicleClass::PassengerCar;
  PairClass pair = PairClass::CarFollowsCar;
  double follower_length = 0.0;
  double leader_length = 0.0;
  int lane_id = 1;
  std::vector<EpisodeFrame> frames;
  EndReason end_reason = EndReason::DataEnd;
  SegmentPart part = SegmentPart::Whole;
  double avg_gap = 0.0;
  double avg_speed = 0.0; // mean follower speed

  double duration() const { return frames.empty() ? 0.0 : frames.back().t - frames.front().t; }
  std::int64_t start_frame() const { return frames.empty() ? 0 : frames.front().frame; }
  /// Recomputes avg_gap and avg_speed from frames.
  void refresh_averages();
};

struct LaneChangeEvent {
  int vehicle_id = 0;
  double t = 0.0;
  int from_lane = 0;
  int to_lane = 0;
  double speed_before = 0.0;
  double speed_after = 0.0;
};

/// Convention of the space headway column. Front-to-front spacing includes
/// the leader's length; front-to-rear spacing is already the gap.
enum class HeadwayConvention { FrontToFront, FrontToRear };

struct ExtractionConfig {
  double min_duration_s = 25.0;
  double gap_min_m = 4.5;
  double gap_max_m = 76.0;
  int entry_grace_frames = 10;
  double merge_boundary_y_m = 120.0;
  double lane_change_window_s = 5.0;
  double min_segment_duration_s = 5.0;
  HeadwayConvention headway_convention = HeadwayConvention::FrontToFront;
  ClassifierThresholds classifier;
};

struct ExtractionDiagnostics {
  std::size_t leader_disagreements = 0;   // preceding column vs geometric leader
  std::size_t unresolved_leader_frames = 0;
  std::size_t negative_gap_frames = 0;
  std::size_t discarded_short = 0;
  std::size_t discarded_gap_filter = 0;
  std::size_t late_forming = 0;           // runs not present at the follower's entry
};

struct ExtractionResult {
  /// Episodes that satisfy every filter, ordered by (follower_id, start frame).
  std::vector<Episode> episodes;
  /// Pairs formed after the entry grace period; excluded from statistics.
  std::vector<Episode> late_episodes;
  ExtractionDiagnostics diagnostics;
};

ExtractionResult extract_episodes(const Dataset& dataset, const ExtractionConfig& cfg);

struct GapResult {
  double gap = 0.0;
  bool negative = false;
};

/// space_headway - leader_length; a negative result is flagged, not rejected.
GapResult compute_gap(double space_headway, double leader_length);

/// One event per lane id transition. Speeds are averaged over up to `window_s`
/// on each side; the event time is that of the first frame in the new lane.
std::vector<LaneChangeEvent> detect_lane_changes(const VehicleTrack& track, double window_s = 5.0);

struct SplitEpisode {
  std::optional<Episode> before;
  std::optional<Episode> after;
};

/// Splits at the first frame whose follower_y >= boundary_y. Parts shorter
/// than min_segment_duration_s are dropped.
SplitEpisode segment_by_position(const Episode& episode, double boundary_y, double min_segment_duration_s = 5.0);

std::string_view to_string(EndReason r);
std::string_view to_string(SegmentPart p);

} // namespace carfollow
