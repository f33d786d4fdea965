#include "carfollow/cli.hpp"

#include "carfollow/cluster_fitter.hpp"
#include "carfollow/config.hpp"
#include "carfollow/dataset_cache.hpp"
#include "carfollow/errors.hpp"
#include "carfollow/pipeline.hpp"
#include "carfollow/selftest.hpp"
#include "carfollow/stats_report.hpp"
#include "carfollow/synthetic.hpp"
#include "carfollow/units.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>

namespace carfollow {

namespace {

namespace fs = std::filesystem;

struct CommonArgs {
  std::string config_path;
  std::string units;
  std::string schema_path;
  bool recompute = false;
  std::string input;
  std::string out;
  std::optional<std::uint64_t> seed;
};

struct RunArgs {
  std::string clusters;
  bool merge_split = false;
  bool synthetic = false;
};

class Stopwatch {
public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

PipelineConfig load_config(const CommonArgs& a) {
  PipelineConfig cfg = a.config_path.empty() ? PipelineConfig{} : PipelineConfig::from_file(a.config_path);
  if (!a.units.empty()) cfg.units = a.units == "meters" ? LengthUnit::Meters : LengthUnit::Feet;
  if (a.recompute) cfg.derive.recompute = true;
  if (a.seed) cfg.seed = *a.seed;
  return cfg;
}

std::optional<ColumnSchema> load_schema(const CommonArgs& a) {
  if (a.schema_path.empty()) return std::nullopt;
  return ColumnSchema::from_json_file(a.schema_path);
}

void print_load_summary(std::ostream& out, const LoadedDataset& d) {
  if (d.parse) {
    fmt::print(out, "rows: {} read, {} accepted, {} rejected\n", d.parse->total_rows, d.parse->accepted_rows,
               d.parse->rejected.size());
    const std::size_t shown = std::min<std::size_t>(d.parse->rejected.size(), 10);
    for (std::size_t i = 0; i < shown; ++i)
      fmt::print(out, "  rejected line {}: {}\n", d.parse->rejected[i].line, d.parse->rejected[i].reason);
    if (d.parse->rejected.size() > shown) fmt::print(out, "  ... {} more\n", d.parse->rejected.size() - shown);
    fmt::print(out, "tracks: {} dropped (< 2 frames), {} corrupt, {} with missing frames\n", d.derive.dropped_short,
               d.derive.corrupt_tracks.size(), d.derive.tracks_with_missing_frames);
  } else {
    fmt::print(out, "loaded dataset cache\n");
  }
  fmt::print(out, "{} vehicles, {} samples, frames {}..{}\n", d.dataset.tracks.size(), d.dataset.point_count(),
             d.dataset.first_frame(), d.dataset.last_frame());
  if (!d.dataset.unresolved_leaders.empty())
    fmt::print(out, "{} preceding ids reference no vehicle in the dataset\n", d.dataset.unresolved_leaders.size());
}

void print_timings(std::ostream& out, const std::vector<StageTiming>& timings) {
  fmt::print(out, "timing:\n");
  for (const auto& t : timings) fmt::print(out, "  {:<14} {:8.3f} s\n", t.stage, t.seconds);
}

void print_episode_summary(std::ostream& out, const ExtractionResult& x) {
  fmt::print(out, "{} car-following episodes", x.episodes.size());
  std::size_t counts[5] = {};
  for (const auto& e : x.episodes) ++counts[static_cast<int>(e.pair)];
  fmt::print(out, " (car/car {}, car/heavy {}, heavy/car {}, heavy/heavy {}, other {})\n", counts[0], counts[1],
             counts[2], counts[3], counts[4]);
  const auto& d = x.diagnostics;
  fmt::print(out, "discarded: {} too short, {} outside gap limits; {} late-forming pairs excluded\n", d.discarded_short,
             d.discarded_gap_filter, d.late_forming);
  if (d.leader_disagreements)
    fmt::print(out, "{} frames where the preceding column disagreed with the geometric leader\n", d.leader_disagreements);
}

/// Writes into a sibling staging directory and moves the files into place
/// only when every stage succeeded; nothing is left behind on failure.
class StagedOutput {
public:
  explicit StagedOutput(const fs::path& out) : out_(out), staging_(out.string() + ".partial") {
    std::error_code ec;
    fs::remove_all(staging_, ec);
  }
  ~StagedOutput() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(staging_, ec);
    }
  }
  const fs::path& dir() const { return staging_; }

  void commit() {
    std::error_code ec;
    fs::create_directories(out_, ec);
    if (ec) throw IoError(fmt::format("cannot create output directory '{}'", out_.string()));
    for (const auto& entry : fs::directory_iterator(staging_)) {
      fs::rename(entry.path(), out_ / entry.path().filename(), ec);
      if (ec) throw IoError(fmt::format("cannot move '{}' into '{}'", entry.path().string(), out_.string()));
    }
    fs::remove_all(staging_, ec);
    committed_ = true;
  }

private:
  fs::path out_;
  fs::path staging_;
  bool committed_ = false;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f || !(f << text)) throw IoError(fmt::format("cannot write '{}'", path.string()));
}

int cmd_ingest(const CommonArgs& a, std::ostream& out) {
  Stopwatch sw;
  const auto cfg = load_config(a);
  const auto loaded = load_dataset(a.input, cfg, load_schema(a));
  const double t_parse = sw.lap();
  print_load_summary(out, loaded);
  const fs::path target(a.out);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".partial";
  try {
    save_dataset_cache(tmp, loaded.dataset);
    fs::rename(tmp, target);
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
  fmt::print(out, "wrote {}\n", target.string());
  print_timings(out, {{"parse", t_parse}, {"write_cache", sw.lap()}});
  return kExitOk;
}

struct PreparedInputs {
  PipelineConfig config;
  Dataset dataset;
  std::optional<ClusterLibrary> library;
  std::vector<StageTiming> timings;
};

PreparedInputs prepare(const CommonArgs& a, const RunArgs& r, std::ostream& out, bool need_library) {
  PreparedInputs p;
  Stopwatch sw;
  p.config = load_config(a);
  if (r.synthetic) {
    p.dataset = synthetic::traffic_scenario(p.config.seed);
    fmt::print(out, "synthetic scenario (seed {}): {} vehicles, {} samples\n", p.config.seed, p.dataset.tracks.size(),
               p.dataset.point_count());
  } else {
    if (a.input.empty()) throw ConfigError("--input is required unless --synthetic is given");
    auto loaded = load_dataset(a.input, p.config, load_schema(a));
    print_load_summary(out, loaded);
    p.dataset = std::move(loaded.dataset);
  }
  p.timings.push_back({"load", sw.lap()});
  if (!r.clusters.empty()) {
    p.library = load_cluster_library_file(r.clusters);
  } else if (r.synthetic) {
    p.library = synthetic::cluster_library(p.config.seed);
  } else if (need_library) {
    throw ConfigError("--clusters is required unless --synthetic is given");
  }
  if (p.library) {
    fmt::print(out, "cluster library: {} car, {} heavy-vehicle clusters\n", p.library->cars().size(),
               p.library->heavies().size());
    p.timings.push_back({"load_clusters", sw.lap()});
  }
  return p;
}

int cmd_run(const CommonArgs& a, const RunArgs& r, std::ostream& out, std::ostream& err) {
  StagedOutput staged(a.out);
  auto p = prepare(a, r, out, true);
  auto result = run_pipeline(p.dataset, *p.library, p.config, r.merge_split);
  print_episode_summary(out, result.extraction);
  fmt::print(out, "{} episodes fitted\n", result.fits.size());
  if (result.merge)
    fmt::print(out, "merge split: {} parts before, {} after the boundary\n", result.merge->before.size(),
               result.merge->after.size());
  for (const auto& w : result.warnings) fmt::print(err, "warning: {}\n", w);

  Stopwatch sw;
  emit_report(make_report_tables(result, p.config), p.config.report_format, staged.dir());
  write_text(staged.dir() / "config.json", p.config.to_json());
  staged.commit();
  auto timings = p.timings;
  timings.insert(timings.end(), result.timings.begin(), result.timings.end());
  timings.push_back({"report", sw.lap()});
  fmt::print(out, "report written to {} (config hash {})\n", a.out, result.config_hash);
  print_timings(out, timings);
  return kExitOk;
}

int cmd_fit(const CommonArgs& a, const RunArgs& r, std::ostream& out, std::ostream& err) {
  StagedOutput staged(a.out);
  auto p = prepare(a, r, out, true);
  Stopwatch sw;
  const auto x = extract_episodes(p.dataset, p.config.extraction);
  p.timings.push_back({"extract", sw.lap()});
  print_episode_summary(out, x);
  std::vector<std::size_t> failures;
  const auto fits = fit_all(x.episodes, *p.library, p.config.fit, &failures);
  p.timings.push_back({"fit", sw.lap()});
  if (!failures.empty()) fmt::print(err, "warning: {} episode(s) could not be scored\n", failures.size());
  fs::create_directories(staged.dir());
  std::ofstream eo(staged.dir() / "episodes.csv", std::ios::binary);
  write_episodes_csv(eo, x.episodes);
  std::ofstream fo(staged.dir() / "fit_results.csv", std::ios::binary);
  write_fit_results_csv(fo, fits, x.episodes);
  std::ofstream wo(staged.dir() / "fit_results_wide.csv", std::ios::binary);
  write_fit_results_wide_csv(wo, fits);
  for (auto* s : {&eo, &fo, &wo}) {
    s->close();
    if (s->fail()) throw IoError("failed writing fit outputs");
  }
  staged.commit();
  p.timings.push_back({"write", sw.lap()});
  fmt::print(out, "{} episodes fitted; results in {}\n", fits.size(), a.out);
  print_timings(out, p.timings);
  return kExitOk;
}

int cmd_report(const CommonArgs& a, const RunArgs& r, std::ostream& out) {
  StagedOutput staged(a.out);
  auto p = prepare(a, r, out, false);
  Stopwatch sw;
  PipelineResult result;
  result.config_hash = p.config.hash();
  result.extraction = extract_episodes(p.dataset, p.config.extraction);
  p.timings.push_back({"extract", sw.lap()});
  result.ending_lane_changes = lane_changes_ending_episodes(result.extraction.episodes, p.dataset,
                                                            p.config.extraction.lane_change_window_s);
  print_episode_summary(out, result.extraction);
  auto tables = make_report_tables(result, p.config);
  tables.cluster_frequencies.reset();
  tables.rmse_by_pair.reset();
  emit_report(tables, p.config.report_format, staged.dir());
  write_text(staged.dir() / "config.json", p.config.to_json());
  staged.commit();
  p.timings.push_back({"report", sw.lap()});
  fmt::print(out, "report written to {} (config hash {})\n", a.out, result.config_hash);
  print_timings(out, p.timings);
  return kExitOk;
}

int cmd_selftest(const CommonArgs& a, bool corrupt, std::ostream& out, std::ostream& err) {
  SelfTestOptions opts;
  opts.seed = a.seed.value_or(1);
  opts.corrupt_library = corrupt;
  fmt::print(out, "selftest seed {}\n", opts.seed);
  int failed = 0;
  for (const auto& c : run_selftest(opts)) {
    fmt::print(out, "{} {}: {}\n", c.passed ? "PASS" : "FAIL", c.name, c.detail);
    if (!c.passed) {
      fmt::print(err, "self-test property failed: {}\n", c.name);
      ++failed;
    }
  }
  fmt::print(out, "{}\n", failed == 0 ? "all checks passed" : fmt::format("{} check(s) failed", failed));
  return failed == 0 ? kExitOk : kExitSelfTestFailed;
}

void add_data_options(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--config", a.config_path, "Configuration file (JSON, dotted keys)")->check(CLI::ExistingFile);
  cmd->add_option("--units", a.units, "Units of the trajectory file")->check(CLI::IsMember({"feet", "meters"}));
  cmd->add_option("--schema", a.schema_path, "Column schema (JSON field -> index)")->check(CLI::ExistingFile);
  cmd->add_flag("--recompute-kinematics", a.recompute, "Differentiate positions instead of using speed columns");
  cmd->add_option("--seed", a.seed, "Seed of the synthetic generators (overrides the config)");
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Car-following episode extraction, GHR cluster fitting and traffic statistics"};
  app.name("carfollow");
  app.require_subcommand(1);

  CommonArgs common;
  RunArgs run;
  bool corrupt = false;

  auto* ingest = app.add_subcommand("ingest", "Parse and validate a trajectory file into a dataset cache");
  add_data_options(ingest, common);
  ingest->add_option("--input", common.input, "Trajectory file")->required();
  ingest->add_option("--out", common.out, "Dataset cache to write")->required();

  auto add_pipeline = [&](const char* name, const char* help) {
    auto* cmd = app.add_subcommand(name, help);
    add_data_options(cmd, common);
    cmd->add_option("--input", common.input, "Trajectory file or dataset cache");
    cmd->add_option("--clusters", run.clusters, "Cluster library CSV");
    cmd->add_option("--out", common.out, "Output directory")->required();
    cmd->add_flag("--synthetic", run.synthetic, "Use the built-in synthetic traffic scenario and library");
    return cmd;
  };
  auto* run_cmd = add_pipeline("run", "Extract, fit, aggregate and write the full report");
  run_cmd->add_flag("--merge-split", run.merge_split, "Also compare fits before and after the merge boundary");
  auto* fit_cmd = add_pipeline("fit", "Extract episodes and fit each one to the cluster library");
  auto* report_cmd = add_pipeline("report", "Extract episodes and write the gap and lane-change tables");

  auto* selftest = app.add_subcommand("selftest", "Run the synthetic self-test suite");
  selftest->add_option("--seed", common.seed, "Seed of the synthetic scenarios");
  selftest->add_flag("--corrupt-library", corrupt, "Negative control")->group("");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (ingest->parsed()) return cmd_ingest(common, out);
    if (run_cmd->parsed()) return cmd_run(common, run, out, err);
    if (fit_cmd->parsed()) return cmd_fit(common, run, out, err);
    if (report_cmd->parsed()) return cmd_report(common, run, out);
    if (selftest->parsed()) return cmd_selftest(common, corrupt, out, err);
  } catch (const IoError& e) {
    fmt::print(err, "I/O error: {}\n", e.what());
    return kExitIo;
  } catch (const FormatError& e) {
    fmt::print(err, "format error: {}\n", e.what());
    return kExitFormat;
  } catch (const ConfigError& e) {
    fmt::print(err, "config error: {}\n", e.what());
    return kExitConfig;
  } catch (const fs::filesystem_error& e) {
    fmt::print(err, "I/O error: {}\n", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    fmt::print(err, "error: {}\n", e.what());
    return kExitInternal;
  }
  return kExitInternal;
}

} // namespace carfollow
