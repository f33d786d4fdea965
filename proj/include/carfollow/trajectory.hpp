#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace carfollow {

/// One kinematic sample of one vehicle. Canonical SI units.
struct TrajectoryPoint {
  int vehicle_id = 0;
  std::int64_t frame = 0; // 0.1 s ticks
  double t = 0.0;         // frame * 0.1
  double y = 0.0;         // longitudinal position along travel direction
  int lane_id = 1;
  double speed = 0.0;
  double accel = 0.0;
  std::optional<int> preceding_id;
  std::optional<double> space_headway;
};

struct VehicleTrack {
  int vehicle_id = 0;
  double length = 0.0;
  double width = 0.0;
  std::optional<int> ngsim_class; // parsed, never used for classification
  std::vector<TrajectoryPoint> points;

  // Filled by validate_and_derive.
  std::size_t missing_frames = 0;

  double duration() const { return points.empty() ? 0.0 : points.back().t - points.front().t; }
  /// Index of the point carrying `frame`, if the track has one.
  std::optional<std::size_t> index_of(std::int64_t frame) const;
};

struct Dataset {
  std::map<int, VehicleTrack> tracks;
  double segment_length = 400.0;
  double merge_boundary_y = 120.0;
  bool has_speed = true;
  bool has_accel = true;
  /// preceding_id values that reference no track in the dataset.
  std::set<int> unresolved_leaders;

  std::size_t point_count() const;
  std::int64_t first_frame() const;
  std::int64_t last_frame() const;
};

/// Zero-based column index for each field; std::nullopt when the file lacks it.
struct ColumnSchema {
  std::size_t vehicle_id = 0;
  std::size_t frame = 1;
  std::optional<std::size_t> global_time = 3; // epoch milliseconds
  std::size_t y = 5;
  std::size_t length = 6;
  std::optional<std::size_t> width = 7;
  std::optional<std::size_t> vehicle_class = 8;
  std::optional<std::size_t> speed = 9;
  std::optional<std::size_t> accel = 10;
  std::size_t lane_id = 11;
  std::optional<std::size_t> preceding = 12;
  std::optional<std::size_t> space_headway = 14;

  /// The sixteen-column NGSIM order (Vehicle_ID .. Time_Headway).
  static ColumnSchema ngsim();
  /// Published I-80 release with Global_X/Global_Y after Local_Y (18 columns).
  static ColumnSchema ngsim_with_global_xy();
  /// JSON object mapping field name to column index, e.g. {"vehicle_id": 0, ...}.
  /// Fields omitted from the document become absent; required fields must be present.
  static ColumnSchema from_json_file(const std::string& path);
  /// Maps NGSIM header names (Vehicle_ID, Local_Y, v_Vel, ...) to indices.
  static std::optional<ColumnSchema> from_header(const std::vector<std::string_view>& names);

  std::size_t max_index() const;
};

enum class LengthUnit { Feet, Meters };

struct RejectedRow {
  std::size_t line = 0;
  std::string reason;
};

struct ParseReport {
  std::size_t total_rows = 0;
  std::size_t accepted_rows = 0;
  std::vector<RejectedRow> rejected;
};

struct ParseResult {
  Dataset dataset;
  ParseReport report;
};

struct ParseOptions {
  /// Explicit column layout. When absent, a recognised header row decides the
  /// layout, otherwise the NGSIM order matching the row width is used.
  std::optional<ColumnSchema> schema;
  LengthUnit units = LengthUnit::Feet;
};

/// Parses delimited (whitespace or comma) trajectory text. Rejected rows are
/// reported and skipped. Throws FormatError on empty input, duplicate
/// (vehicle, frame), schema wider than a row, a frame interval other than
/// 0.1 s, or when no row at all is usable.
ParseResult parse_trajectory_text(std::string_view text, const ParseOptions& options);
ParseResult parse_trajectory_file(std::istream& source, const ParseOptions& options);

struct DerivePolicy {
  bool recompute = false;
  double max_backward_jump_m = 3.0;
};

struct DeriveReport {
  std::size_t dropped_short = 0;
  std::vector<int> corrupt_tracks;
  std::size_t tracks_with_missing_frames = 0;
  std::size_t recomputed_tracks = 0;
};

struct DeriveResult {
  Dataset dataset;
  DeriveReport report;
};

/// Flags missing frames, drops degenerate or corrupt tracks and fills speed
/// and acceleration by finite differences when requested or absent.
DeriveResult validate_and_derive(Dataset dataset, const DerivePolicy& policy);

/// Central differences of `values` over `times`, one-sided at the ends.
std::vector<double> finite_difference(const std::vector<double>& times, const std::vector<double>& values);

} // namespace carfollow
