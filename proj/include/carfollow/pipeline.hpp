#pragma once

#include "carfollow/cluster_fitter.hpp"
#include "carfollow/config.hpp"
#include "carfollow/episode.hpp"
#include "carfollow/stats_report.hpp"
#include "carfollow/trajectory.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace carfollow {

struct StageTiming {
  std::string stage;
  double seconds = 0.0;
};

struct LoadedDataset {
  Dataset dataset;
  std::optional<ParseReport> parse; // absent when read from a cache
  DeriveReport derive;
  bool from_cache = false;
};

/// Reads a dataset cache or raw trajectory text (detected by content) and
/// validates it. Throws IoError / FormatError.
LoadedDataset load_dataset(const std::filesystem::path& path, const PipelineConfig& config,
                           const std::optional<ColumnSchema>& schema = std::nullopt);

struct MergeSplit {
  std::vector<Episode> before;
  std::vector<Episode> after;
  std::vector<FitResult> fits_before;
  std::vector<FitResult> fits_after;
  std::optional<MergeComparison> comparison; // absent when a side has no fitted part
};

struct PipelineResult {
  ExtractionResult extraction;
  std::vector<FitResult> fits;
  std::vector<std::size_t> fit_failures;
  std::vector<LaneChangeEvent> ending_lane_changes;
  std::optional<MergeSplit> merge;
  std::vector<std::string> warnings;
  std::vector<StageTiming> timings;
  std::string config_hash;
};

/// extract -> fit -> (optional merge split) -> lane-change statistics.
PipelineResult run_pipeline(const Dataset& dataset, const ClusterLibrary& library, const PipelineConfig& config,
                            bool merge_split);

/// Report tables referencing `result`; `result` must outlive the tables.
ReportTables make_report_tables(const PipelineResult& result, const PipelineConfig& config);

} // namespace carfollow
