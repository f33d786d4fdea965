#include "carfollow/stats_report.hpp"

#include "carfollow/errors.hpp"
#include "carfollow/units.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace carfollow {

namespace {

using ordered_json = nlohmann::ordered_json;

double round_to(double x, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::round(x * scale) / scale;
}

// A table cell: absent, integer, text or a number with fixed decimals.
struct Cell {
  enum class Kind { Empty, Int, Text, Real } kind = Kind::Empty;
  long long i = 0;
  std::string text;
  double real = 0.0;
  int decimals = 3;

  static Cell none() { return {}; }
  static Cell integer(long long v) { Cell c; c.kind = Kind::Int; c.i = v; return c; }
  static Cell str(std::string_view v) { Cell c; c.kind = Kind::Text; c.text = std::string(v); return c; }
  static Cell number(double v, int decimals) {
    Cell c;
    c.kind = Kind::Real;
    c.real = v;
    c.decimals = decimals;
    return c;
  }
  static Cell number(const std::optional<double>& v, int decimals) { return v ? number(*v, decimals) : none(); }

  std::string csv() const {
    switch (kind) {
    case Kind::Empty: return "";
    case Kind::Int: return std::to_string(i);
    case Kind::Text: return text;
    case Kind::Real: return std::isfinite(real) ? fmt::format("{:.{}f}", round_to(real, decimals) + 0.0, decimals) : "inf";
    }
    return "";
  }
  ordered_json json() const {
    switch (kind) {
    case Kind::Empty: return nullptr;
    case Kind::Int: return i;
    case Kind::Text: return text;
    case Kind::Real: return std::isfinite(real) ? ordered_json(round_to(real, decimals) + 0.0) : ordered_json(nullptr);
    }
    return nullptr;
  }
};

struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  std::string render(ReportFormat format) const {
    if (format == ReportFormat::Csv) {
      std::string out;
      for (std::size_t c = 0; c < columns.size(); ++c) out += (c ? "," : "") + columns[c];
      out += '\n';
      for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) out += (c ? "," : "") + row[c].csv();
        out += '\n';
      }
      return out;
    }
    ordered_json arr = ordered_json::array();
    for (const auto& row : rows) {
      ordered_json obj = ordered_json::object();
      for (std::size_t c = 0; c < row.size(); ++c) obj[columns[c]] = row[c].json();
      arr.push_back(std::move(obj));
    }
    return arr.dump(2) + "\n";
  }
};

constexpr int kDistance = 3;
constexpr int kSpeed = 3;
constexpr int kPercent = 2;
constexpr int kError = 6;

Cell kmh(const std::optional<double>& mps) {
  return mps ? Cell::number(units::mps_to_kmh(*mps), kSpeed) : Cell::none();
}

std::vector<Table> build_tables(const ReportTables& t) {
  std::vector<Table> tables;

  Table ps{"pair_summary", {"pair", "n", "avg_gap_m", "avg_speed_kmh", "frame_mean_speed_kmh"}, {}};
  for (const auto& r : t.pair_summary)
    ps.rows.push_back({Cell::str(to_string(r.pair)), Cell::integer(static_cast<long long>(r.n)),
                       Cell::number(r.avg_gap, kDistance), kmh(r.avg_speed), kmh(r.frame_mean_speed)});
  tables.push_back(std::move(ps));

  Table gb{"gap_by_speed",
           {"speed_bin_kmh", "n_car_follows_heavy", "avg_gap_car_follows_heavy_m", "n_car_follows_car",
            "avg_gap_car_follows_car_m", "gap_decrease_pct"},
           {}};
  for (const auto& r : t.gap_by_speed)
    gb.rows.push_back({Cell::str(r.label), Cell::integer(static_cast<long long>(r.n_car_follows_heavy)),
                       Cell::number(r.gap_car_follows_heavy, kDistance),
                       Cell::integer(static_cast<long long>(r.n_car_follows_car)),
                       Cell::number(r.gap_car_follows_car, kDistance), Cell::number(r.gap_decrease_pct, kPercent)});
  tables.push_back(std::move(gb));

  Table lc{"lane_change", {"speed_bin_kmh", "n_episodes", "lane_changes", "lane_change_pct", "mean_speed_kmh"}, {}};
  for (const auto& r : t.lane_change)
    lc.rows.push_back({Cell::str(r.label), Cell::integer(static_cast<long long>(r.n)),
                       Cell::integer(static_cast<long long>(r.lane_changes)), Cell::number(r.lane_change_pct, kPercent),
                       Cell::number(r.mean_speed_kmh, kSpeed)});
  tables.push_back(std::move(lc));

  if (t.lane_change_speed) {
    const auto& s = *t.lane_change_speed;
    auto pct = [](const std::optional<double>& f) { return f ? std::optional<double>(100.0 * *f) : std::nullopt; };
    Table ls{"lane_change_speed",
             {"n_events", "increased_speed_pct", "n_below_threshold", "increased_speed_below_threshold_pct"},
             {{Cell::integer(static_cast<long long>(s.n)), Cell::number(pct(s.fraction_increased), kPercent),
               Cell::integer(static_cast<long long>(s.n_below_threshold)),
               Cell::number(pct(s.fraction_increased_below_threshold), kPercent)}}};
    tables.push_back(std::move(ls));
  }

  auto count_table = [](std::string name, const std::vector<ClusterCountRow>& rows) {
    Table cf{std::move(name), {"group", "cluster_id", "count"}, {}};
    for (const auto& r : rows)
      cf.rows.push_back({Cell::str(r.group), Cell::integer(r.cluster_id), Cell::integer(static_cast<long long>(r.count))});
    return cf;
  };
  if (t.cluster_frequencies) tables.push_back(count_table("cluster_frequencies", *t.cluster_frequencies));

  if (t.rmse_by_pair) {
    Table rp{"rmse_by_pair", {"group", "n", "mean_rmse"}, {}};
    for (const auto& g : *t.rmse_by_pair)
      rp.rows.push_back({Cell::str(g.group), Cell::integer(static_cast<long long>(g.n)), Cell::number(g.mean_rmse, kError)});
    tables.push_back(std::move(rp));
  }

  if (t.merge) {
    const auto& m = *t.merge;
    Table mc{"merge_comparison",
             {"n_before", "n_after", "distinct_clusters_before", "distinct_clusters_after", "mean_rmse_before",
              "mean_rmse_after", "rmse_ratio"},
             {{Cell::integer(static_cast<long long>(m.n_before)), Cell::integer(static_cast<long long>(m.n_after)),
               Cell::integer(static_cast<long long>(m.distinct_before)),
               Cell::integer(static_cast<long long>(m.distinct_after)), Cell::number(m.mean_rmse_before, kError),
               Cell::number(m.mean_rmse_after, kError), Cell::number(m.rmse_ratio, 4)}}};
    tables.push_back(std::move(mc));
  }
  if (t.merge_cluster_frequencies)
    tables.push_back(count_table("merge_cluster_frequencies", *t.merge_cluster_frequencies));
  return tables;
}

void ensure_writable(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir))
    throw IoError(fmt::format("cannot create output directory '{}'", dir.string()));
  const auto probe = dir / ".write_probe";
  {
    std::ofstream out(probe);
    if (!out || !(out << "probe") || (out.close(), out.fail()))
      throw IoError(fmt::format("output directory '{}' is not writable", dir.string()));
  }
  std::filesystem::remove(probe, ec);
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
  out << content;
  out.close();
  if (out.fail()) throw IoError(fmt::format("failed writing '{}'", path.string()));
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

} // namespace

SpeedBins::SpeedBins(std::vector<double> boundaries_kmh) : boundaries_(std::move(boundaries_kmh)) {
  for (std::size_t i = 0; i < boundaries_.size(); ++i) {
    if (!std::isfinite(boundaries_[i]) || boundaries_[i] <= 0.0)
      throw std::invalid_argument("speed bin boundaries must be positive");
    if (i > 0 && boundaries_[i] <= boundaries_[i - 1])
      throw std::invalid_argument("speed bin boundaries must be strictly increasing");
  }
}

std::size_t SpeedBins::bin_of(double speed_kmh) const {
  return static_cast<std::size_t>(std::upper_bound(boundaries_.begin(), boundaries_.end(), speed_kmh) -
                                  boundaries_.begin());
}

double SpeedBins::lower(std::size_t bin) const { return bin == 0 ? 0.0 : boundaries_[bin - 1]; }

std::optional<double> SpeedBins::upper(std::size_t bin) const {
  if (bin < boundaries_.size()) return boundaries_[bin];
  return std::nullopt;
}

std::string SpeedBins::label(std::size_t bin) const {
  if (boundaries_.empty()) return "all";
  if (bin == 0) return fmt::format("<{}", boundaries_.front());
  if (bin >= boundaries_.size()) return fmt::format(">={}", boundaries_.back());
  return fmt::format("{}-{}", boundaries_[bin - 1], boundaries_[bin]);
}

std::vector<PairSummaryRow> pair_summary(std::span<const Episode> episodes, Weighting weighting) {
  std::vector<PairSummaryRow> rows;
  for (const auto pair : kReportedPairs) {
    PairSummaryRow row;
    row.pair = pair;
    ExactSum gap_sum, speed_sum, frame_gap, frame_speed;
    std::size_t frames = 0;
    for (const auto& ep : episodes) {
      if (ep.pair != pair) continue;
      ++row.n;
      gap_sum.add(ep.avg_gap);
      speed_sum.add(ep.avg_speed);
      for (const auto& f : ep.frames) {
        frame_gap.add(f.gap);
        frame_speed.add(f.follower_speed);
      }
      frames += ep.frames.size();
    }
    if (row.n > 0) {
      const double n = static_cast<double>(row.n);
      if (frames > 0) row.frame_mean_speed = frame_speed.value() / static_cast<double>(frames);
      if (weighting == Weighting::Episode || frames == 0) {
        row.avg_gap = gap_sum.value() / n;
        row.avg_speed = speed_sum.value() / n;
      } else {
        row.avg_gap = frame_gap.value() / static_cast<double>(frames);
        row.avg_speed = row.frame_mean_speed;
      }
    }
    rows.push_back(row);
  }
  return rows;
}

std::vector<GapBinRow> gap_by_speed_bins(std::span<const Episode> episodes, const SpeedBins& bins) {
  std::vector<GapBinRow> rows(bins.bin_count());
  for (std::size_t b = 0; b < rows.size(); ++b) {
    rows[b].bin = b;
    rows[b].label = bins.label(b);
  }
  for (const auto& ep : episodes) {
    auto& r = rows[bins.bin_of(units::mps_to_kmh(ep.avg_speed))];
    if (ep.pair == PairClass::CarFollowsHeavy) {
      ++r.n_car_follows_heavy;
      r.gap_sum_car_follows_heavy.add(ep.avg_gap);
    } else if (ep.pair == PairClass::CarFollowsCar) {
      ++r.n_car_follows_car;
      r.gap_sum_car_follows_car.add(ep.avg_gap);
    }
  }
  for (auto& r : rows) {
    if (r.n_car_follows_heavy)
      r.gap_car_follows_heavy = r.gap_sum_car_follows_heavy.value() / static_cast<double>(r.n_car_follows_heavy);
    if (r.n_car_follows_car)
      r.gap_car_follows_car = r.gap_sum_car_follows_car.value() / static_cast<double>(r.n_car_follows_car);
    if (r.gap_car_follows_car && r.gap_car_follows_heavy && *r.gap_car_follows_car != 0.0)
      r.gap_decrease_pct = 100.0 * (*r.gap_car_follows_car - *r.gap_car_follows_heavy) / *r.gap_car_follows_car;
  }
  return rows;
}

CollapsedGaps collapse_bins(std::span<const GapBinRow> rows) {
  CollapsedGaps out;
  ExactSum ch, cc;
  for (const auto& r : rows) {
    out.n_car_follows_heavy += r.n_car_follows_heavy;
    out.n_car_follows_car += r.n_car_follows_car;
    ch.merge(r.gap_sum_car_follows_heavy);
    cc.merge(r.gap_sum_car_follows_car);
  }
  if (out.n_car_follows_heavy) out.gap_car_follows_heavy = ch.value() / static_cast<double>(out.n_car_follows_heavy);
  if (out.n_car_follows_car) out.gap_car_follows_car = cc.value() / static_cast<double>(out.n_car_follows_car);
  return out;
}

std::vector<LaneChangeRow> lane_change_rates(std::span<const Episode> episodes, const SpeedBins& bins) {
  std::vector<LaneChangeRow> per_bin(bins.bin_count());
  std::vector<double> speed_sum(bins.bin_count(), 0.0);
  LaneChangeRow overall{"overall", 0, 0, 0.0, 0.0};
  double overall_speed = 0.0;
  for (const auto& ep : episodes) {
    if (ep.pair != PairClass::CarFollowsHeavy) continue;
    const double v = units::mps_to_kmh(ep.avg_speed);
    const std::size_t b = bins.bin_of(v);
    const bool changed = ep.end_reason == EndReason::FollowerLaneChange;
    ++per_bin[b].n;
    per_bin[b].lane_changes += changed;
    speed_sum[b] += v;
    ++overall.n;
    overall.lane_changes += changed;
    overall_speed += v;
  }
  std::vector<LaneChangeRow> rows;
  for (std::size_t b = 0; b < per_bin.size(); ++b) {
    auto& r = per_bin[b];
    if (r.n == 0) continue; // empty bins are omitted
    r.label = bins.label(b);
    r.lane_change_pct = 100.0 * static_cast<double>(r.lane_changes) / static_cast<double>(r.n);
    r.mean_speed_kmh = speed_sum[b] / static_cast<double>(r.n);
    rows.push_back(r);
  }
  if (overall.n) {
    overall.lane_change_pct = 100.0 * static_cast<double>(overall.lane_changes) / static_cast<double>(overall.n);
    overall.mean_speed_kmh = overall_speed / static_cast<double>(overall.n);
  }
  rows.push_back(overall);
  return rows;
}

LaneChangeSpeedStats post_lane_change_speed_stats(std::span<const LaneChangeEvent> events,
                                                  double initial_speed_threshold_kmh) {
  LaneChangeSpeedStats s;
  std::size_t increased = 0, increased_below = 0;
  for (const auto& ev : events) {
    const bool up = ev.speed_after > ev.speed_before;
    ++s.n;
    increased += up;
    if (units::mps_to_kmh(ev.speed_before) < initial_speed_threshold_kmh) {
      ++s.n_below_threshold;
      increased_below += up;
    }
  }
  if (s.n) s.fraction_increased = static_cast<double>(increased) / static_cast<double>(s.n);
  if (s.n_below_threshold)
    s.fraction_increased_below_threshold = static_cast<double>(increased_below) / static_cast<double>(s.n_below_threshold);
  return s;
}

std::vector<LaneChangeEvent> lane_changes_ending_episodes(std::span<const Episode> episodes, const Dataset& dataset,
                                                          double window_s, double tolerance_s) {
  std::vector<LaneChangeEvent> out;
  for (const auto& ep : episodes) {
    if (ep.pair != PairClass::CarFollowsHeavy || ep.end_reason != EndReason::FollowerLaneChange || ep.frames.empty())
      continue;
    const auto it = dataset.tracks.find(ep.follower_id);
    if (it == dataset.tracks.end()) continue;
    const double end_t = ep.frames.back().t;
    std::optional<LaneChangeEvent> match;
    for (const auto& ev : detect_lane_changes(it->second, window_s)) {
      const double d = std::abs(ev.t - end_t);
      if (d <= tolerance_s + 1e-9 && (!match || d < std::abs(match->t - end_t))) match = ev;
    }
    if (match) out.push_back(*match);
  }
  return out;
}

MergeComparison merge_comparison(std::span<const FitResult> before, std::span<const FitResult> after) {
  const auto mb = mean_rmse(before);
  const auto ma = mean_rmse(after);
  if (!mb || !ma) throw std::invalid_argument("merge comparison needs scored results on both sides");
  MergeComparison m;
  m.n_before = before.size();
  m.n_after = after.size();
  m.distinct_before = histogram_of(before).distinct();
  m.distinct_after = histogram_of(after).distinct();
  m.mean_rmse_before = *mb;
  m.mean_rmse_after = *ma;
  m.rmse_ratio = *ma > 0.0 ? *mb / *ma : (*mb == 0.0 ? 1.0 : std::numeric_limits<double>::infinity());
  return m;
}

std::vector<ClusterCountRow> cluster_count_rows(std::span<const ClusterHistogram> histograms) {
  std::vector<ClusterCountRow> rows;
  for (const auto& h : histograms)
    for (const auto& [id, count] : h.counts) rows.push_back({std::string(to_string(h.pair)), id, count});
  return rows;
}

void write_episodes_csv(std::ostream& out, std::span<const Episode> episodes) {
  out << "episode_id,follower_id,leader_id,follower_class,leader_class,pair,lane_id,part,start_frame,end_frame,"
         "duration_s,n_frames,avg_gap_m,avg_speed_kmh,end_reason\n";
  for (const auto& ep : episodes) {
    out << fmt::format("{},{},{},{},{},{},{},{},{},{},{:.1f},{},{:.3f},{:.3f},{}\n", ep.id, ep.follower_id, ep.leader_id,
                       to_string(ep.follower_class), to_string(ep.leader_class), to_string(ep.pair), ep.lane_id,
                       to_string(ep.part), ep.start_frame(), ep.frames.empty() ? 0 : ep.frames.back().frame,
                       ep.duration(), ep.frames.size(), ep.avg_gap, units::mps_to_kmh(ep.avg_speed),
                       to_string(ep.end_reason));
  }
}

void write_fit_results_csv(std::ostream& out, std::span<const FitResult> fits, std::span<const Episode> episodes) {
  out << "episode_id,follower_class,pair,best_cluster_id,rmse,n_frames_scored\n";
  for (const auto& r : fits) {
    const auto it = std::find_if(episodes.begin(), episodes.end(), [&](const Episode& e) { return e.id == r.episode_id; });
    const std::string_view fc = it != episodes.end() ? to_string(it->follower_class) : "";
    const std::string_view pc = it != episodes.end() ? to_string(it->pair) : "";
    out << fmt::format("{},{},{},{},{:.6f},{}\n", r.episode_id, fc, pc, r.best_cluster_id, r.rmse, r.n_frames_scored);
  }
}

void write_fit_results_wide_csv(std::ostream& out, std::span<const FitResult> fits) {
  std::set<int> ids;
  for (const auto& r : fits)
    for (const auto& s : r.per_cluster) ids.insert(s.cluster_id);
  out << "episode_id";
  for (const int id : ids) out << ",cluster_" << id;
  out << '\n';
  for (const auto& r : fits) {
    out << r.episode_id;
    for (const int id : ids) {
      out << ',';
      const auto s = std::find_if(r.per_cluster.begin(), r.per_cluster.end(),
                                  [&](const ClusterScore& c) { return c.cluster_id == id; });
      if (s != r.per_cluster.end() && std::isfinite(s->rmse)) out << fmt::format("{:.6f}", s->rmse);
    }
    out << '\n';
  }
}

std::vector<std::filesystem::path> emit_report(const ReportTables& tables, ReportFormat format,
                                               const std::filesystem::path& out_dir) {
  ensure_writable(out_dir);
  const std::string ext = format == ReportFormat::Csv ? ".csv" : ".json";

  std::vector<std::pair<std::string, std::string>> files; // file name, content
  ordered_json manifest;
  manifest["config_hash"] = tables.config_hash;
  manifest["format"] = format == ReportFormat::Csv ? "csv" : "json";
  manifest["tables"] = ordered_json::array();

  for (const auto& t : build_tables(tables)) {
    files.emplace_back(t.name + ext, t.render(format));
    manifest["tables"].push_back({{"name", t.name}, {"file", t.name + ext}, {"rows", t.rows.size()}});
  }
  if (!tables.episodes.empty()) {
    std::ostringstream os;
    write_episodes_csv(os, tables.episodes);
    files.emplace_back("episodes.csv", os.str());
    manifest["tables"].push_back({{"name", "episodes"}, {"file", "episodes.csv"}, {"rows", count_lines(os.str()) - 1}});
  }
  if (!tables.fits.empty()) {
    std::ostringstream os;
    write_fit_results_csv(os, tables.fits, tables.episodes);
    files.emplace_back("fit_results.csv", os.str());
    manifest["tables"].push_back({{"name", "fit_results"}, {"file", "fit_results.csv"}, {"rows", count_lines(os.str()) - 1}});
    std::ostringstream wide;
    write_fit_results_wide_csv(wide, tables.fits);
    files.emplace_back("fit_results_wide.csv", wide.str());
    manifest["tables"].push_back(
        {{"name", "fit_results_wide"}, {"file", "fit_results_wide.csv"}, {"rows", count_lines(wide.str()) - 1}});
  }
  files.emplace_back("manifest.json", manifest.dump(2) + "\n");

  std::vector<std::filesystem::path> written;
  for (const auto& [name, content] : files) {
    const auto path = out_dir / name;
    write_file(path, content);
    written.push_back(path);
  }
  return written;
}

} // namespace carfollow
