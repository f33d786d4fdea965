#include "carfollow/trajectory.hpp"

#include "carfollow/errors.hpp"
#include "carfollow/units.hpp"
#include "text_util.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <iterator>
#include <limits>
#include <unordered_map>

namespace carfollow {

namespace {

using detail::parse_number;
using detail::trim;

bool is_space(char c) { return detail::is_blank(c); }

void split_fields(std::string_view line, bool comma, std::vector<std::string_view>& out) {
  if (comma) {
    detail::split(line, ',', out);
    return;
  }
  out.clear();
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) ++i;
    if (i >= line.size()) break;
    const std::size_t start = i;
    while (i < line.size() && !is_space(line[i])) ++i;
    out.push_back(line.substr(start, i - start));
  }
}

// Integer columns in NGSIM exports are occasionally written as "12.0".
template <typename Int>
bool parse_integral(std::string_view s, Int& value) {
  if (parse_number(s, value)) return true;
  double d = 0.0;
  if (!parse_number(s, d) || d != std::floor(d) || std::abs(d) > 9.0e15) return false;
  value = static_cast<Int>(d);
  return true;
}

struct RawRow {
  TrajectoryPoint point;
  double length = 0.0;
  double width = 0.0;
  std::optional<int> vehicle_class;
  std::optional<double> global_time_ms;
  std::size_t line = 0;
};

const std::unordered_map<std::string, std::string>& header_aliases() {
  static const std::unordered_map<std::string, std::string> aliases = {
      {"vehicle_id", "vehicle_id"},       {"frame_id", "frame"},        {"global_time", "global_time"},
      {"local_y", "y"},                   {"v_length", "length"},       {"v_width", "width"},
      {"v_class", "vehicle_class"},       {"v_vel", "speed"},           {"v_acc", "accel"},
      {"lane_id", "lane_id"},             {"preceding", "preceding"},   {"preceeding", "preceding"},
      {"preceding_vehicle", "preceding"}, {"space_headway", "space_headway"},
      {"space_hdwy", "space_headway"},
  };
  return aliases;
}

void assign_field(ColumnSchema& schema, const std::string& field, std::size_t index, std::vector<std::string>& seen) {
  seen.push_back(field);
  if (field == "vehicle_id") schema.vehicle_id = index;
  else if (field == "frame") schema.frame = index;
  else if (field == "global_time") schema.global_time = index;
  else if (field == "y") schema.y = index;
  else if (field == "length") schema.length = index;
  else if (field == "width") schema.width = index;
  else if (field == "vehicle_class") schema.vehicle_class = index;
  else if (field == "speed") schema.speed = index;
  else if (field == "accel") schema.accel = index;
  else if (field == "lane_id") schema.lane_id = index;
  else if (field == "preceding") schema.preceding = index;
  else if (field == "space_headway") schema.space_headway = index;
  else throw FormatError(fmt::format("unknown schema field '{}'", field));
}

ColumnSchema schema_with_only_required() {
  ColumnSchema s;
  s.global_time.reset();
  s.width.reset();
  s.vehicle_class.reset();
  s.speed.reset();
  s.accel.reset();
  s.preceding.reset();
  s.space_headway.reset();
  return s;
}

void require_fields(const std::vector<std::string>& seen, const std::string& origin) {
  for (const char* required : {"vehicle_id", "frame", "y", "length", "lane_id"}) {
    if (std::find(seen.begin(), seen.end(), required) == seen.end())
      throw FormatError(fmt::format("{}: required field '{}' missing", origin, required));
  }
}

} // namespace

std::optional<std::size_t> VehicleTrack::index_of(std::int64_t frame) const {
  const auto it = std::lower_bound(points.begin(), points.end(), frame,
                                   [](const TrajectoryPoint& p, std::int64_t f) { return p.frame < f; });
  if (it == points.end() || it->frame != frame) return std::nullopt;
  return static_cast<std::size_t>(it - points.begin());
}

std::size_t Dataset::point_count() const {
  std::size_t n = 0;
  for (const auto& [id, track] : tracks) n += track.points.size();
  return n;
}

std::int64_t Dataset::first_frame() const {
  std::int64_t f = std::numeric_limits<std::int64_t>::max();
  for (const auto& [id, track] : tracks)
    if (!track.points.empty()) f = std::min(f, track.points.front().frame);
  return f;
}

std::int64_t Dataset::last_frame() const {
  std::int64_t f = std::numeric_limits<std::int64_t>::min();
  for (const auto& [id, track] : tracks)
    if (!track.points.empty()) f = std::max(f, track.points.back().frame);
  return f;
}

ColumnSchema ColumnSchema::ngsim() { return ColumnSchema{}; }

ColumnSchema ColumnSchema::ngsim_with_global_xy() {
  ColumnSchema s;
  s.length = 8;
  s.width = 9;
  s.vehicle_class = 10;
  s.speed = 11;
  s.accel = 12;
  s.lane_id = 13;
  s.preceding = 14;
  s.space_headway = 16;
  return s;
}

ColumnSchema ColumnSchema::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open schema file '{}'", path));
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("schema file '{}': {}", path, e.what()));
  }
  if (!doc.is_object()) throw FormatError(fmt::format("schema file '{}' must hold a JSON object", path));
  ColumnSchema schema = schema_with_only_required();
  std::vector<std::string> seen;
  for (const auto& [key, value] : doc.items()) {
    if (!value.is_number_unsigned())
      throw FormatError(fmt::format("schema file '{}': field '{}' needs a non-negative column index", path, key));
    assign_field(schema, key, value.get<std::size_t>(), seen);
  }
  require_fields(seen, fmt::format("schema file '{}'", path));
  return schema;
}

std::optional<ColumnSchema> ColumnSchema::from_header(const std::vector<std::string_view>& names) {
  ColumnSchema schema = schema_with_only_required();
  std::vector<std::string> seen;
  const auto& aliases = header_aliases();
  for (std::size_t i = 0; i < names.size(); ++i) {
    std::string key(names[i]);
    std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
    if (const auto it = aliases.find(key); it != aliases.end()) assign_field(schema, it->second, i, seen);
  }
  try {
    require_fields(seen, "header");
  } catch (const FormatError&) {
    return std::nullopt;
  }
  return schema;
}

std::size_t ColumnSchema::max_index() const {
  std::size_t m = std::max({vehicle_id, frame, y, length, lane_id});
  for (const auto& opt : {global_time, width, vehicle_class, speed, accel, preceding, space_headway})
    if (opt) m = std::max(m, *opt);
  return m;
}

ParseResult parse_trajectory_text(std::string_view text, const ParseOptions& options) {
  const double scale = options.units == LengthUnit::Feet ? units::kMetersPerFoot : 1.0;

  ParseResult result;
  std::optional<ColumnSchema> schema = options.schema;
  std::optional<bool> comma;
  bool header_checked = false;

  std::vector<RawRow> rows;
  std::vector<std::string_view> fields;
  std::size_t line_no = 0;
  std::size_t pos = 0;

  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;

    if (!comma) comma = line.find(',') != std::string_view::npos;
    split_fields(line, *comma, fields);

    if (!header_checked) {
      header_checked = true;
      long long probe = 0;
      if (!parse_integral(fields.front(), probe)) {
        if (!schema) schema = ColumnSchema::from_header(fields);
        continue;
      }
    }
    if (!schema) schema = fields.size() >= 18 ? ColumnSchema::ngsim_with_global_xy() : ColumnSchema::ngsim();

    ++result.report.total_rows;
    if (schema->max_index() >= fields.size()) {
      throw FormatError(fmt::format("line {}: schema expects at least {} columns, row has {}", line_no,
                                    schema->max_index() + 1, fields.size()));
    }

    auto reject = [&](std::string reason) { result.report.rejected.push_back({line_no, std::move(reason)}); };

    RawRow row;
    row.line = line_no;
    TrajectoryPoint& p = row.point;
    long long frame = 0;
    if (!parse_integral(fields[schema->vehicle_id], p.vehicle_id)) { reject("non-numeric vehicle id"); continue; }
    if (!parse_integral(fields[schema->frame], frame)) { reject("non-numeric frame"); continue; }
    p.frame = frame;
    if (!parse_number(fields[schema->y], p.y)) { reject("non-numeric y position"); continue; }
    if (!parse_number(fields[schema->length], row.length)) { reject("non-numeric vehicle length"); continue; }
    if (!parse_integral(fields[schema->lane_id], p.lane_id)) { reject("non-numeric lane id"); continue; }

    bool ok = true;
    auto optional_double = [&](const std::optional<std::size_t>& col, const char* what) -> std::optional<double> {
      if (!col || !ok) return std::nullopt;
      double v = 0.0;
      if (!parse_number(fields[*col], v)) {
        reject(fmt::format("non-numeric {}", what));
        ok = false;
        return std::nullopt;
      }
      return v;
    };
    auto optional_int = [&](const std::optional<std::size_t>& col, const char* what) -> std::optional<int> {
      if (!col || !ok) return std::nullopt;
      int v = 0;
      if (!parse_integral(fields[*col], v)) {
        reject(fmt::format("non-numeric {}", what));
        ok = false;
        return std::nullopt;
      }
      return v;
    };

    const auto speed = optional_double(schema->speed, "speed");
    const auto accel = optional_double(schema->accel, "acceleration");
    const auto width = optional_double(schema->width, "width");
    const auto headway = optional_double(schema->space_headway, "space headway");
    row.global_time_ms = optional_double(schema->global_time, "global time");
    row.vehicle_class = optional_int(schema->vehicle_class, "vehicle class");
    const auto preceding = optional_int(schema->preceding, "preceding id");
    if (!ok) continue;

    if (p.lane_id < 1) { reject(fmt::format("lane id {} < 1", p.lane_id)); continue; }
    if (row.length <= 0.0) { reject("vehicle length must be positive"); continue; }
    if (speed && *speed < 0.0) { reject("negative speed"); continue; }
    if (headway && *headway < 0.0) { reject("negative space headway"); continue; }

    p.t = units::frame_to_seconds(p.frame);
    p.y *= scale;
    row.length *= scale;
    row.width = width.value_or(0.0) * scale;
    p.speed = speed.value_or(0.0) * scale;
    p.accel = accel.value_or(0.0) * scale;
    if (preceding && *preceding > 0) {
      p.preceding_id = *preceding;
      if (headway && *headway > 0.0) p.space_headway = *headway * scale;
    }
    rows.push_back(std::move(row));
  }

  if (result.report.total_rows == 0) throw FormatError("trajectory input contains no data rows");
  if (rows.empty()) {
    const auto& first = result.report.rejected.front();
    throw FormatError(fmt::format("no usable rows; first offending line {}: {}", first.line, first.reason));
  }

  std::unordered_map<int, std::vector<RawRow>> by_vehicle;
  for (auto& row : rows) by_vehicle[row.point.vehicle_id].push_back(std::move(row));
  rows.clear();

  Dataset& ds = result.dataset;
  ds.has_speed = schema->speed.has_value();
  ds.has_accel = schema->accel.has_value();
  for (auto& [id, vrows] : by_vehicle) {
    std::sort(vrows.begin(), vrows.end(), [](const RawRow& a, const RawRow& b) {
      return a.point.frame != b.point.frame ? a.point.frame < b.point.frame : a.line < b.line;
    });
    VehicleTrack track;
    track.vehicle_id = id;
    track.length = vrows.front().length;
    track.width = vrows.front().width;
    track.ngsim_class = vrows.front().vehicle_class;
    track.points.reserve(vrows.size());
    for (std::size_t i = 0; i < vrows.size(); ++i) {
      if (i > 0) {
        const auto& prev = vrows[i - 1];
        const auto& cur = vrows[i];
        if (prev.point.frame == cur.point.frame) {
          throw FormatError(fmt::format("duplicate (vehicle {}, frame {}) at lines {} and {}", id, cur.point.frame,
                                        prev.line, cur.line));
        }
        if (prev.global_time_ms && cur.global_time_ms) {
          const double per_frame = (*cur.global_time_ms - *prev.global_time_ms) /
                                   static_cast<double>(cur.point.frame - prev.point.frame);
          if (std::abs(per_frame - 1000.0 * units::kFrameInterval) > 1.0) {
            throw FormatError(fmt::format("line {}: frame interval {:.1f} ms, only 100 ms (10 Hz) data is supported",
                                          cur.line, per_frame));
          }
        }
      }
      track.points.push_back(vrows[i].point);
    }
    result.report.accepted_rows += track.points.size();
    ds.tracks.emplace(id, std::move(track));
  }

  for (const auto& [id, track] : ds.tracks)
    for (const auto& p : track.points)
      if (p.preceding_id && !ds.tracks.contains(*p.preceding_id)) ds.unresolved_leaders.insert(*p.preceding_id);
  return result;
}

ParseResult parse_trajectory_file(std::istream& source, const ParseOptions& options) {
  std::string text;
  char buffer[1 << 16];
  while (source.read(buffer, sizeof buffer) || source.gcount() > 0) text.append(buffer, static_cast<std::size_t>(source.gcount()));
  if (source.bad()) throw IoError("failed reading trajectory input");
  return parse_trajectory_text(text, options);
}

std::vector<double> finite_difference(const std::vector<double>& times, const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<double> out(n, 0.0);
  if (n < 2) return out;
  out.front() = (values[1] - values[0]) / (times[1] - times[0]);
  out.back() = (values[n - 1] - values[n - 2]) / (times[n - 1] - times[n - 2]);
  for (std::size_t i = 1; i + 1 < n; ++i) out[i] = (values[i + 1] - values[i - 1]) / (times[i + 1] - times[i - 1]);
  return out;
}

DeriveResult validate_and_derive(Dataset dataset, const DerivePolicy& policy) {
  DeriveResult result;
  const bool recompute = policy.recompute || !dataset.has_speed || !dataset.has_accel;

  for (auto it = dataset.tracks.begin(); it != dataset.tracks.end();) {
    VehicleTrack& track = it->second;
    if (track.points.size() < 2) {
      ++result.report.dropped_short;
      it = dataset.tracks.erase(it);
      continue;
    }
    bool corrupt = false;
    track.missing_frames = 0;
    for (std::size_t i = 1; i < track.points.size(); ++i) {
      const auto& prev = track.points[i - 1];
      const auto& cur = track.points[i];
      if (prev.y - cur.y > policy.max_backward_jump_m) corrupt = true;
      track.missing_frames += static_cast<std::size_t>(cur.frame - prev.frame - 1);
    }
    if (corrupt) {
      result.report.corrupt_tracks.push_back(track.vehicle_id);
      it = dataset.tracks.erase(it);
      continue;
    }
    if (track.missing_frames > 0) ++result.report.tracks_with_missing_frames;

    if (recompute) {
      std::vector<double> t, y;
      t.reserve(track.points.size());
      y.reserve(track.points.size());
      for (const auto& p : track.points) {
        t.push_back(p.t);
        y.push_back(p.y);
      }
      const auto speed = finite_difference(t, y);
      const auto accel = finite_difference(t, speed);
      for (std::size_t i = 0; i < track.points.size(); ++i) {
        track.points[i].speed = std::max(0.0, speed[i]);
        track.points[i].accel = accel[i];
      }
      ++result.report.recomputed_tracks;
    }
    ++it;
  }
  if (recompute) {
    dataset.has_speed = true;
    dataset.has_accel = true;
  }

  dataset.unresolved_leaders.clear();
  for (const auto& [id, track] : dataset.tracks)
    for (const auto& p : track.points)
      if (p.preceding_id && !dataset.tracks.contains(*p.preceding_id)) dataset.unresolved_leaders.insert(*p.preceding_id);

  result.dataset = std::move(dataset);
  return result;
}

} // namespace carfollow
