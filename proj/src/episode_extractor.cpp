#include "carfollow/episode.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <tuple>

namespace carfollow {

namespace {

constexpr double kTimeEps = 1e-9;

struct LeaderRef {
  int track = -1; // index into the track table, -1 when no vehicle is ahead
  std::uint32_t point = 0;
};

struct FrameEntry {
  std::int64_t frame;
  int lane;
  double y;
  int vehicle_id;
  int track;
  std::uint32_t point;
};

/// Nearest same-lane vehicle strictly downstream for every point of every track.
std::vector<std::vector<LeaderRef>> geometric_leaders(const std::vector<const VehicleTrack*>& tracks) {
  std::vector<FrameEntry> entries;
  std::size_t total = 0;
  for (const auto* t : tracks) total += t->points.size();
  entries.reserve(total);
  for (std::size_t ti = 0; ti < tracks.size(); ++ti) {
    const auto& pts = tracks[ti]->points;
    for (std::size_t pi = 0; pi < pts.size(); ++pi) {
      entries.push_back({pts[pi].frame, pts[pi].lane_id, pts[pi].y, tracks[ti]->vehicle_id, static_cast<int>(ti),
                         static_cast<std::uint32_t>(pi)});
    }
  }
  std::sort(entries.begin(), entries.end(), [](const FrameEntry& a, const FrameEntry& b) {
    return std::tie(a.frame, a.lane, a.y, a.vehicle_id) < std::tie(b.frame, b.lane, b.y, b.vehicle_id);
  });

  std::vector<std::vector<LeaderRef>> leaders(tracks.size());
  for (std::size_t ti = 0; ti < tracks.size(); ++ti) leaders[ti].resize(tracks[ti]->points.size());

  // Walk backwards; `ahead` is the first entry of the next strictly larger y
  // within the same (frame, lane) group.
  std::size_t ahead = entries.size();
  for (std::size_t k = entries.size(); k-- > 0;) {
    const auto& e = entries[k];
    const bool group_continues =
        k + 1 < entries.size() && entries[k + 1].frame == e.frame && entries[k + 1].lane == e.lane;
    if (!group_continues) {
      ahead = entries.size();
    } else if (entries[k + 1].y > e.y) {
      ahead = k + 1;
    }
    if (ahead < entries.size()) leaders[e.track][e.point] = {entries[ahead].track, entries[ahead].point};
  }
  return leaders;
}

EndReason end_reason_at(const VehicleTrack& follower, std::size_t next, const VehicleTrack& leader,
                        std::int64_t dataset_last_frame) {
  const auto& pts = follower.points;
  if (next == pts.size()) return pts.back().frame >= dataset_last_frame ? EndReason::DataEnd : EndReason::SegmentExit;
  const auto& prev = pts[next - 1];
  const auto& cur = pts[next];
  if (cur.frame != prev.frame + 1) return EndReason::DataEnd;
  if (cur.lane_id != prev.lane_id) return EndReason::FollowerLaneChange;
  const auto li = leader.index_of(cur.frame);
  if (!li) return leader.points.back().frame < cur.frame ? EndReason::SegmentExit : EndReason::DataEnd;
  if (leader.points[*li].lane_id != cur.lane_id) return EndReason::LeaderLaneChange;
  return EndReason::LeaderChanged;
}

} // namespace

void Episode::refresh_averages() {
  if (frames.empty()) {
    avg_gap = avg_speed = 0.0;
    return;
  }
  double gap = 0.0, speed = 0.0;
  for (const auto& f : frames) {
    gap += f.gap;
    speed += f.follower_speed;
  }
  avg_gap = gap / static_cast<double>(frames.size());
  avg_speed = speed / static_cast<double>(frames.size());
}

GapResult compute_gap(double space_headway, double leader_length) {
  const double gap = space_headway - leader_length;
  return {gap, gap < 0.0};
}

ExtractionResult extract_episodes(const Dataset& dataset, const ExtractionConfig& cfg) {
  ExtractionResult result;
  auto& diag = result.diagnostics;

  std::vector<const VehicleTrack*> tracks;
  tracks.reserve(dataset.tracks.size());
  for (const auto& [id, track] : dataset.tracks) tracks.push_back(&track);
  if (tracks.empty()) return result;

  const auto leaders = geometric_leaders(tracks);
  const std::int64_t last_frame = dataset.last_frame();
  std::set<std::tuple<int, int, std::int64_t>> seen;

  for (std::size_t ti = 0; ti < tracks.size(); ++ti) {
    const VehicleTrack& follower = *tracks[ti];
    const auto& pts = follower.points;
    const auto& lead = leaders[ti];
    if (pts.empty()) continue;

    for (std::size_t i = 0; i < pts.size(); ++i) {
      const auto& p = pts[i];
      if (!p.preceding_id) continue;
      if (dataset.unresolved_leaders.contains(*p.preceding_id)) ++diag.unresolved_leader_frames;
      if (lead[i].track >= 0 && tracks[lead[i].track]->vehicle_id != *p.preceding_id) ++diag.leader_disagreements;
    }

    std::size_t i = 0;
    while (i < pts.size()) {
      if (lead[i].track < 0) {
        ++i;
        continue;
      }
      const int leader_track = lead[i].track;
      std::size_t j = i + 1;
      while (j < pts.size() && lead[j].track == leader_track && pts[j].frame == pts[j - 1].frame + 1 &&
             pts[j].lane_id == pts[j - 1].lane_id)
        ++j;

      const VehicleTrack& leader = *tracks[leader_track];
      Episode ep;
      ep.follower_id = follower.vehicle_id;
      ep.leader_id = leader.vehicle_id;
      ep.follower_length = follower.length;
      ep.leader_length = leader.length;
      ep.follower_class = classify_by_length(follower.length, cfg.classifier);
      ep.leader_class = classify_by_length(leader.length, cfg.classifier);
      ep.pair = pair_class(ep.follower_class, ep.leader_class);
      ep.lane_id = pts[i].lane_id;
      ep.end_reason = end_reason_at(follower, j, leader, last_frame);
      ep.frames.reserve(j - i);
      for (std::size_t k = i; k < j; ++k) {
        const auto& fp = pts[k];
        const auto& lp = leader.points[lead[k].point];
        EpisodeFrame f;
        f.frame = fp.frame;
        f.t = fp.t;
        f.follower_y = fp.y;
        f.follower_speed = fp.speed;
        f.follower_accel = fp.accel;
        f.leader_y = lp.y;
        f.leader_speed = lp.speed;
        const bool column_matches =
            fp.preceding_id == leader.vehicle_id && fp.space_headway && *fp.space_headway > 0.0;
        if (cfg.headway_convention == HeadwayConvention::FrontToFront) {
          f.space_headway = column_matches ? *fp.space_headway : lp.y - fp.y;
          const auto g = compute_gap(f.space_headway, leader.length);
          f.gap = g.gap;
          if (g.negative) ++diag.negative_gap_frames;
        } else {
          f.space_headway = column_matches ? *fp.space_headway : lp.y - leader.length - fp.y;
          f.gap = f.space_headway;
          if (f.gap < 0.0) ++diag.negative_gap_frames;
        }
        ep.frames.push_back(f);
      }
      ep.refresh_averages();

      const bool at_entry = pts[i].frame - pts.front().frame <= cfg.entry_grace_frames;
      i = j;

      if (ep.duration() + kTimeEps < cfg.min_duration_s) {
        ++diag.discarded_short;
        continue;
      }
      if (ep.avg_gap < cfg.gap_min_m || ep.avg_gap > cfg.gap_max_m) {
        ++diag.discarded_gap_filter;
        continue;
      }
      if (!seen.emplace(ep.follower_id, ep.leader_id, ep.start_frame()).second)
        throw std::logic_error("duplicate episode for the same follower, leader and start frame");
      if (at_entry) {
        result.episodes.push_back(std::move(ep));
      } else {
        ++diag.late_forming;
        result.late_episodes.push_back(std::move(ep));
      }
    }
  }

  std::size_t next_id = 0;
  for (auto& ep : result.episodes) ep.id = next_id++;
  for (auto& ep : result.late_episodes) ep.id = next_id++;
  return result;
}

std::vector<LaneChangeEvent> detect_lane_changes(const VehicleTrack& track, double window_s) {
  std::vector<LaneChangeEvent> events;
  const auto& pts = track.points;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    if (pts[i].lane_id == pts[i - 1].lane_id) continue;
    LaneChangeEvent ev;
    ev.vehicle_id = track.vehicle_id;
    ev.t = pts[i].t;
    ev.from_lane = pts[i - 1].lane_id;
    ev.to_lane = pts[i].lane_id;

    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t k = i; k-- > 0 && pts[k].t >= ev.t - window_s - kTimeEps;) {
      sum += pts[k].speed;
      ++n;
    }
    ev.speed_before = n ? sum / static_cast<double>(n) : pts[i - 1].speed;

    sum = 0.0;
    n = 0;
    for (std::size_t k = i; k < pts.size() && pts[k].t < ev.t + window_s - kTimeEps; ++k) {
      sum += pts[k].speed;
      ++n;
    }
    ev.speed_after = n ? sum / static_cast<double>(n) : pts[i].speed;
    events.push_back(ev);
  }
  return events;
}

SplitEpisode segment_by_position(const Episode& episode, double boundary_y, double min_segment_duration_s) {
  const auto split = std::find_if(episode.frames.begin(), episode.frames.end(),
                                  [&](const EpisodeFrame& f) { return f.follower_y >= boundary_y; });

  auto make_part = [&](auto first, auto last, SegmentPart part) -> std::optional<Episode> {
    if (first == last) return std::nullopt;
    Episode sub = episode;
    sub.frames.assign(first, last);
    sub.part = part;
    // The before part always ends by crossing into the merge area.
    if (part == SegmentPart::BeforeMerge) sub.end_reason = EndReason::SegmentExit;
    if (sub.duration() + kTimeEps < min_segment_duration_s) return std::nullopt;
    sub.refresh_averages();
    return sub;
  };

  SplitEpisode out;
  out.before = make_part(episode.frames.begin(), split, SegmentPart::BeforeMerge);
  out.after = make_part(split, episode.frames.end(), SegmentPart::AfterMerge);
  return out;
}

std::string_view to_string(EndReason r) {
  switch (r) {
  case EndReason::FollowerLaneChange: return "follower_lane_change";
  case EndReason::LeaderLaneChange: return "leader_lane_change";
  case EndReason::LeaderChanged: return "leader_changed";
  case EndReason::SegmentExit: return "segment_exit";
  case EndReason::DataEnd: return "data_end";
  }
  return "unknown";
}

std::string_view to_string(SegmentPart p) {
  switch (p) {
  case SegmentPart::Whole: return "whole";
  case SegmentPart::BeforeMerge: return "before_merge";
  case SegmentPart::AfterMerge: return "after_merge";
  }
  return "unknown";
}

} // namespace carfollow
