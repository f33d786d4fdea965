#include "carfollow/pipeline.hpp"

#include "carfollow/dataset_cache.hpp"
#include "carfollow/errors.hpp"

#include <fmt/format.h>

#include <chrono>
#include <fstream>

namespace carfollow {

namespace {

class StageClock {
public:
  explicit StageClock(std::vector<StageTiming>& sink) : sink_(sink) {}

  template <typename F>
  auto run(const char* stage, F&& body) {
    const auto start = std::chrono::steady_clock::now();
    struct Record {
      std::vector<StageTiming>& sink;
      const char* stage;
      std::chrono::steady_clock::time_point start;
      ~Record() {
        sink.push_back({stage, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()});
      }
    } record{sink_, stage, start};
    return body();
  }

private:
  std::vector<StageTiming>& sink_;
};

std::vector<ClusterCountRow> side_rows(const char* group, std::span<const FitResult> fits) {
  std::vector<ClusterCountRow> rows;
  for (const auto& [id, n] : histogram_of(fits).counts) rows.push_back({group, id, n});
  return rows;
}

} // namespace

LoadedDataset load_dataset(const std::filesystem::path& path, const PipelineConfig& config,
                           const std::optional<ColumnSchema>& schema) {
  LoadedDataset out;
  if (!std::filesystem::exists(path)) throw IoError(fmt::format("input file '{}' does not exist", path.string()));
  if (is_dataset_cache(path)) {
    out.dataset = load_dataset_cache(path);
    out.from_cache = true;
    return out;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open input file '{}'", path.string()));
  ParseOptions options;
  options.schema = schema;
  options.units = config.units;
  auto parsed = parse_trajectory_file(in, options);
  parsed.dataset.segment_length = config.segment_length_m;
  parsed.dataset.merge_boundary_y = config.extraction.merge_boundary_y_m;
  auto derived = validate_and_derive(std::move(parsed.dataset), config.derive);
  out.dataset = std::move(derived.dataset);
  out.parse = std::move(parsed.report);
  out.derive = std::move(derived.report);
  return out;
}

PipelineResult run_pipeline(const Dataset& dataset, const ClusterLibrary& library, const PipelineConfig& config,
                            bool merge_split) {
  PipelineResult r;
  r.config_hash = config.hash();
  StageClock clock(r.timings);

  r.extraction = clock.run("extract", [&] { return extract_episodes(dataset, config.extraction); });

  r.fits = clock.run("fit", [&] { return fit_all(r.extraction.episodes, library, config.fit, &r.fit_failures); });
  if (!r.fit_failures.empty())
    r.warnings.push_back(fmt::format("{} episode(s) could not be scored by any cluster", r.fit_failures.size()));

  r.ending_lane_changes = clock.run("lane_changes", [&] {
    return lane_changes_ending_episodes(r.extraction.episodes, dataset, config.extraction.lane_change_window_s);
  });

  if (merge_split) {
    r.merge = clock.run("merge_split", [&] {
      MergeSplit m;
      for (const auto& ep : r.extraction.episodes) {
        if (config.merge_pair && ep.pair != *config.merge_pair) continue;
        auto parts = segment_by_position(ep, config.extraction.merge_boundary_y_m,
                                         config.extraction.min_segment_duration_s);
        if (parts.before) m.before.push_back(std::move(*parts.before));
        if (parts.after) m.after.push_back(std::move(*parts.after));
      }
      m.fits_before = fit_all(m.before, library, config.fit);
      m.fits_after = fit_all(m.after, library, config.fit);
      if (mean_rmse(m.fits_before) && mean_rmse(m.fits_after)) {
        m.comparison = merge_comparison(m.fits_before, m.fits_after);
      } else {
        r.warnings.push_back(fmt::format("merge comparison skipped: {} part(s) before and {} after the boundary",
                                         m.fits_before.size(), m.fits_after.size()));
      }
      return m;
    });
  }
  return r;
}

ReportTables make_report_tables(const PipelineResult& r, const PipelineConfig& config) {
  const auto& episodes = r.extraction.episodes;
  ReportTables t;
  t.pair_summary = pair_summary(episodes, config.weighting);
  t.gap_by_speed = gap_by_speed_bins(episodes, config.gap_bins);
  t.lane_change = lane_change_rates(episodes, config.lane_change_bins);
  t.lane_change_speed = post_lane_change_speed_stats(r.ending_lane_changes, config.lane_change_speed_threshold_kmh);
  t.cluster_frequencies = cluster_count_rows(cluster_frequencies(r.fits, episodes));
  t.rmse_by_pair = mean_rmse_by_pair(r.fits, episodes);
  if (r.merge) {
    t.merge = r.merge->comparison;
    auto rows = side_rows("before_merge", r.merge->fits_before);
    auto after = side_rows("after_merge", r.merge->fits_after);
    rows.insert(rows.end(), after.begin(), after.end());
    t.merge_cluster_frequencies = std::move(rows);
  }
  t.episodes = episodes;
  t.fits = r.fits;
  t.config_hash = r.config_hash;
  return t;
}

} // namespace carfollow
