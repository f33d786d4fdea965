#pragma once

#include "carfollow/cluster_fitter.hpp"
#include "carfollow/episode.hpp"
#include "carfollow/ghr.hpp"
#include "carfollow/stats_report.hpp"
#include "carfollow/trajectory.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace carfollow {

/// Every setting that affects computed numbers. Paths are kept separately so
/// that the hash only covers what changes results.
struct PipelineConfig {
  LengthUnit units = LengthUnit::Feet;
  DerivePolicy derive;
  double segment_length_m = 400.0;
  ExtractionConfig extraction;
  FitOptions fit;
  Weighting weighting = Weighting::Episode;
  SpeedBins gap_bins = SpeedBins::gap_bins();
  SpeedBins lane_change_bins = SpeedBins::lane_change_bins();
  double lane_change_speed_threshold_kmh = 20.0;
  /// Pair class compared before and after the merge boundary; nullopt = all.
  std::optional<PairClass> merge_pair = PairClass::CarFollowsHeavy;
  ReportFormat report_format = ReportFormat::Csv;
  std::uint64_t seed = 1;

  /// Flat JSON object with dotted keys (e.g. "extract.min_duration_s").
  /// Unknown keys, wrong types and out-of-range values throw ConfigError.
  static PipelineConfig from_json_text(const std::string& text);
  static PipelineConfig from_file(const std::string& path);

  /// Canonical document holding every key with its effective value.
  std::string to_json() const;
  /// Hex SHA-256 of to_json().
  std::string hash() const;
};

struct ConfigKey {
  std::string key;
  std::string type;
  std::string default_value;
  std::string description;
};

/// The published schema: every accepted key with its type and default.
const std::vector<ConfigKey>& config_schema();

} // namespace carfollow
