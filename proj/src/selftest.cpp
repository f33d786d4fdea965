#include "carfollow/selftest.hpp"

#include "carfollow/cluster_fitter.hpp"
#include "carfollow/config.hpp"
#include "carfollow/dataset_cache.hpp"
#include "carfollow/episode.hpp"
#include "carfollow/ghr.hpp"
#include "carfollow/pipeline.hpp"
#include "carfollow/stats_report.hpp"
#include "carfollow/synthetic.hpp"

#include <fmt/format.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <unistd.h>

namespace carfollow {

namespace {

namespace fs = std::filesystem;

SelfTestCheck fixed_point(const ClusterLibrary& lib) {
  const auto ep = synthetic::steady_pair(12.0, 25.0, 25.0);
  double worst_accel = 0.0, worst_drift = 0.0;
  SimConfig sim;
  for (const auto group : {lib.cars(), lib.heavies()}) {
    for (const auto& def : group) {
      for (const auto& s : predict_accelerations(ep, def.params, sim).samples)
        worst_accel = std::max(worst_accel, std::abs(s.accel));
      sim.mode = SimMode::ForwardSimulation;
      for (const auto& st : simulate_follower(ep, def.params, sim).states)
        worst_drift = std::max(worst_drift, std::abs(st.dx - 25.0));
      sim.mode = SimMode::OneStepPrediction;
    }
  }
  return {"ghr_fixed_point", worst_accel == 0.0 && worst_drift < 1e-9,
          fmt::format("max |a| {:.3g}, max gap drift {:.3g} m", worst_accel, worst_drift)};
}

SelfTestCheck scaling_laws(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const GHRParams p{0.2 + 2.0 * u(rng), 1.5 * u(rng), 0.3 + 1.5 * u(rng), 0.0};
    const double v = 1.0 + 30.0 * u(rng), dv = -5.0 + 10.0 * u(rng), dx = 2.0 + 80.0 * u(rng), k = 0.2 + 4.0 * u(rng);
    const double a = ghr_acceleration(v, dv, dx, p);
    if (a == 0.0) continue;
    worst = std::max(worst, std::abs(ghr_acceleration(v, dv, k * dx, p) - a / std::pow(k, p.l)) / std::abs(a));
    worst = std::max(worst, std::abs(ghr_acceleration(k * v, dv, dx, p) - std::pow(k, p.m) * a) / std::abs(a));
  }
  return {"ghr_scaling_laws", worst < 1e-12, fmt::format("max relative error {:.3g}", worst)};
}

ClusterLibrary shifted(const ClusterLibrary& lib) {
  ClusterLibrary out;
  for (const auto group : {lib.cars(), lib.heavies()}) {
    for (std::size_t i = 0; i < group.size(); ++i) {
      auto def = group[i];
      def.params = group[(i + 1) % group.size()].params;
      out.add(def);
    }
  }
  return out;
}

SelfTestCheck round_trip(const ClusterLibrary& truth, const ClusterLibrary& fit_lib) {
  std::size_t recovered = 0, total = 0;
  double worst = 0.0;
  for (const auto& def : truth.cars()) {
    auto ep = synthetic::round_trip_episode(def.params);
    ep.follower_class = VehicleClass::PassengerCar;
    const auto fit = fit_episode(ep, fit_lib);
    ++total;
    if (fit.best_cluster_id == def.cluster_id && fit.rmse < 1e-9) ++recovered;
    worst = std::max(worst, fit.rmse);
  }
  return {"round_trip_recovery", recovered == total,
          fmt::format("{}/{} recovered, max best rmse {:.3g}", recovered, total, worst)};
}

SelfTestCheck extraction_oracle() {
  const auto result = extract_episodes(synthetic::six_vehicle_scenario(), ExtractionConfig{});
  const auto& eps = result.episodes;
  bool ok = eps.size() == 2 && result.late_episodes.empty();
  if (ok) {
    const auto& a = eps[0];
    const auto& b = eps[1];
    ok = a.follower_id == 2 && a.leader_id == 1 && a.frames.size() == 300 && a.end_reason == EndReason::DataEnd &&
         std::abs(a.avg_gap - 15.0) < 1e-9 && b.follower_id == 6 && b.leader_id == 5 && b.frames.size() == 260 &&
         b.end_reason == EndReason::FollowerLaneChange && std::abs(b.avg_gap - 20.0) < 1e-9;
    if (ok) {
      const auto sa = segment_by_position(a, 120.0, 5.0);
      const auto sb = segment_by_position(b, 120.0, 5.0);
      ok = sa.before && sa.after && sa.before->frames.size() == 90 && sa.after->frames.size() == 210 && !sb.before &&
           sb.after && sb.after->frames.size() == 240;
    }
  }
  return {"extraction_oracle", ok,
          fmt::format("{} episode(s), {} short, {} outside gap limits", eps.size(), result.diagnostics.discarded_short,
                      result.diagnostics.discarded_gap_filter)};
}

SelfTestCheck table_consistency(std::uint64_t seed) {
  const auto eps = synthetic::random_episodes(500, seed);
  const auto summary = pair_summary(eps);
  const auto bins = gap_by_speed_bins(eps, SpeedBins::gap_bins());
  const auto c = collapse_bins(bins);
  const auto& cc = summary[0];
  const auto& ch = summary[1];
  const bool ok = c.n_car_follows_car == cc.n && c.n_car_follows_heavy == ch.n &&
                  c.gap_car_follows_car == cc.avg_gap && c.gap_car_follows_heavy == ch.avg_gap;
  return {"table_consistency", ok, fmt::format("CC n={}, CH n={}", cc.n, ch.n)};
}

SelfTestCheck cache_round_trip() {
  const auto ds = synthetic::six_vehicle_scenario();
  std::stringstream a, b;
  write_dataset_cache(a, ds);
  const auto back = read_dataset_cache(a);
  write_dataset_cache(b, back);
  std::stringstream again;
  write_dataset_cache(again, ds);
  const bool ok = again.str() == b.str() && back.point_count() == ds.point_count();
  return {"dataset_cache_round_trip", ok, fmt::format("{} points", back.point_count())};
}

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

SelfTestCheck report_determinism(const ClusterLibrary& lib, std::uint64_t seed) {
  const auto ds = synthetic::six_vehicle_scenario();
  PipelineConfig cfg;
  cfg.seed = seed;
  const auto base = fs::temp_directory_path() / fmt::format("carfollow-selftest-{}-{}", seed, ::getpid());
  std::vector<std::string> contents[2];
  for (int run = 0; run < 2; ++run) {
    const auto r = run_pipeline(ds, lib, cfg, true);
    const auto dir = base / std::to_string(run);
    for (const auto& p : emit_report(make_report_tables(r, cfg), cfg.report_format, dir))
      contents[run].push_back(p.filename().string() + "\n" + read_all(p));
  }
  std::error_code ec;
  fs::remove_all(base, ec);
  return {"report_determinism", !contents[0].empty() && contents[0] == contents[1],
          fmt::format("{} files compared", contents[0].size())};
}

} // namespace

std::vector<SelfTestCheck> run_selftest(const SelfTestOptions& options) {
  const auto truth = synthetic::cluster_library(options.seed);
  const auto fit_lib = options.corrupt_library ? shifted(truth) : truth;
  std::vector<SelfTestCheck> out;
  auto guarded = [&](const char* name, auto&& check) {
    try {
      out.push_back(check());
    } catch (const std::exception& e) {
      out.push_back({name, false, fmt::format("threw: {}", e.what())});
    }
  };
  guarded("ghr_fixed_point", [&] { return fixed_point(fit_lib); });
  guarded("ghr_scaling_laws", [&] { return scaling_laws(options.seed); });
  guarded("round_trip_recovery", [&] { return round_trip(truth, fit_lib); });
  guarded("extraction_oracle", [&] { return extraction_oracle(); });
  guarded("table_consistency", [&] { return table_consistency(options.seed); });
  guarded("dataset_cache_round_trip", [&] { return cache_round_trip(); });
  guarded("report_determinism", [&] { return report_determinism(fit_lib, options.seed); });
  return out;
}

} // namespace carfollow
