#pragma once

#include "carfollow/classifier.hpp"
#include "carfollow/cluster_fitter.hpp"
#include "carfollow/episode.hpp"
#include "carfollow/exact_sum.hpp"

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace carfollow {

/// Ordered interior boundaries in km/h. n boundaries make n + 1 bins tiling
/// [0, inf); a speed equal to a boundary falls in the upper bin.
class SpeedBins {
public:
  SpeedBins() = default;
  /// Throws std::invalid_argument unless boundaries are positive and strictly increasing.
  explicit SpeedBins(std::vector<double> boundaries_kmh);

  static SpeedBins gap_bins() { return SpeedBins({32.2, 40.25, 48.3, 64.4}); }
  static SpeedBins lane_change_bins() { return SpeedBins({20.0, 55.0}); }

  std::size_t bin_count() const { return boundaries_.size() + 1; }
  std::size_t bin_of(double speed_kmh) const;
  std::string label(std::size_t bin) const;
  double lower(std::size_t bin) const;
  std::optional<double> upper(std::size_t bin) const;
  const std::vector<double>& boundaries() const { return boundaries_; }

private:
  std::vector<double> boundaries_;
};

/// Averages are taken over episodes (each episode counts once) or over all
/// frames of all episodes.
enum class Weighting { Episode, Frame };

struct PairSummaryRow {
  PairClass pair = PairClass::CarFollowsCar;
  std::size_t n = 0;
  std::optional<double> avg_gap;         // m
  std::optional<double> avg_speed;       // m/s, per the selected weighting
  std::optional<double> frame_mean_speed; // m/s over all frames, always reported
};

std::vector<PairSummaryRow> pair_summary(std::span<const Episode> episodes, Weighting weighting = Weighting::Episode);

struct GapBinRow {
  std::size_t bin = 0;
  std::string label;
  std::size_t n_car_follows_heavy = 0;
  std::optional<double> gap_car_follows_heavy;
  std::size_t n_car_follows_car = 0;
  std::optional<double> gap_car_follows_car;
  /// 100 * (gap_CC - gap_CH) / gap_CC; positive when cars follow heavies closer.
  std::optional<double> gap_decrease_pct;
  /// Exact gap totals, so that bins can be recombined without rounding drift.
  ExactSum gap_sum_car_follows_heavy;
  ExactSum gap_sum_car_follows_car;
};

/// Episodes are binned by their mean follower speed; gaps are episode means.
std::vector<GapBinRow> gap_by_speed_bins(std::span<const Episode> episodes, const SpeedBins& bins);

/// Recombination of the per-bin gaps: {n_CH, gap_CH, n_CC, gap_CC}. Equal to
/// the pair summary's CH and CC rows bit for bit.
struct CollapsedGaps {
  std::size_t n_car_follows_heavy = 0;
  std::optional<double> gap_car_follows_heavy;
  std::size_t n_car_follows_car = 0;
  std::optional<double> gap_car_follows_car;
};
CollapsedGaps collapse_bins(std::span<const GapBinRow> rows);

struct LaneChangeRow {
  std::string label; // "overall" for the summary row
  std::size_t n = 0;
  std::size_t lane_changes = 0;
  double lane_change_pct = 0.0;
  double mean_speed_kmh = 0.0;
};

/// Percent of car-follows-heavy episodes ending with a follower lane change,
/// per speed bin, followed by an overall row. Other pairs are ignored and
/// empty bins omitted.
std::vector<LaneChangeRow> lane_change_rates(std::span<const Episode> episodes, const SpeedBins& bins);

struct LaneChangeSpeedStats {
  std::size_t n = 0;
  std::optional<double> fraction_increased;
  std::size_t n_below_threshold = 0;
  std::optional<double> fraction_increased_below_threshold;
};

LaneChangeSpeedStats post_lane_change_speed_stats(std::span<const LaneChangeEvent> events,
                                                  double initial_speed_threshold_kmh = 20.0);

/// Lane-change events of the followers of car-follows-heavy episodes that
/// ended with a follower lane change, matched within `tolerance_s` of the
/// episode's last frame.
std::vector<LaneChangeEvent> lane_changes_ending_episodes(std::span<const Episode> episodes, const Dataset& dataset,
                                                          double window_s, double tolerance_s = 0.2);

struct MergeComparison {
  std::size_t distinct_before = 0;
  std::size_t distinct_after = 0;
  std::size_t n_before = 0;
  std::size_t n_after = 0;
  double mean_rmse_before = 0.0;
  double mean_rmse_after = 0.0;
  double rmse_ratio = 0.0; // before / after
};

/// Throws std::invalid_argument when either side has no scored results.
MergeComparison merge_comparison(std::span<const FitResult> before, std::span<const FitResult> after);

struct ClusterCountRow {
  std::string group;
  int cluster_id = 0;
  std::size_t count = 0;
};

/// Everything one report run emits. Optional tables are skipped when absent.
struct ReportTables {
  std::vector<PairSummaryRow> pair_summary;
  std::vector<GapBinRow> gap_by_speed;
  std::vector<LaneChangeRow> lane_change;
  std::optional<LaneChangeSpeedStats> lane_change_speed;
  std::optional<std::vector<ClusterCountRow>> cluster_frequencies;
  std::optional<std::vector<GroupMean>> rmse_by_pair;
  std::optional<MergeComparison> merge;
  std::optional<std::vector<ClusterCountRow>> merge_cluster_frequencies;
  /// Per-record outputs; not owned, emitted when non-empty.
  std::span<const Episode> episodes;
  std::span<const FitResult> fits;
  std::string config_hash;
};

enum class ReportFormat { Csv, Json };

/// Writes one file per table plus manifest.json listing each file with its
/// row count and the config hash. Throws IoError before writing anything when
/// out_dir cannot be created or written. Returns the written paths.
std::vector<std::filesystem::path> emit_report(const ReportTables& tables, ReportFormat format,
                                               const std::filesystem::path& out_dir);

void write_episodes_csv(std::ostream& out, std::span<const Episode> episodes);
/// episode_id, follower_class, pair, best_cluster_id, rmse, n_frames_scored.
void write_fit_results_csv(std::ostream& out, std::span<const FitResult> fits, std::span<const Episode> episodes);
/// One column per cluster id with that cluster's RMSE; empty when unscoreable.
void write_fit_results_wide_csv(std::ostream& out, std::span<const FitResult> fits);

/// Flattens histograms into long-format rows, groups named by pair class.
std::vector<ClusterCountRow> cluster_count_rows(std::span<const ClusterHistogram> histograms);

} // namespace carfollow
