#include "carfollow/errors.hpp"
#include "carfollow/stats_report.hpp"
#include "carfollow/synthetic.hpp"
#include "carfollow/units.hpp"

#include <doctest.h>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>

using namespace carfollow;
namespace fs = std::filesystem;

namespace {

Episode make(PairClass pair, double gap, double speed_kmh, EndReason end = EndReason::DataEnd, std::size_t frames = 3) {
  Episode ep;
  ep.pair = pair;
  ep.end_reason = end;
  const double v = units::kmh_to_mps(speed_kmh);
  for (std::size_t k = 0; k < frames; ++k) {
    EpisodeFrame f;
    f.frame = static_cast<std::int64_t>(k);
    f.t = 0.1 * static_cast<double>(k);
    f.gap = gap;
    f.follower_speed = v;
    ep.frames.push_back(f);
  }
  ep.refresh_averages();
  return ep;
}

LaneChangeEvent event(double before_kmh, double after_kmh) {
  LaneChangeEvent e;
  e.from_lane = 1;
  e.to_lane = 2;
  e.speed_before = units::kmh_to_mps(before_kmh);
  e.speed_after = units::kmh_to_mps(after_kmh);
  return e;
}

FitResult fit(std::size_t id, int best, double rmse) {
  FitResult r;
  r.episode_id = id;
  r.best_cluster_id = best;
  r.rmse = rmse;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("carfollow_stats_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

ReportTables sample_tables(const std::vector<Episode>& eps) {
  ReportTables t;
  t.pair_summary = pair_summary(eps);
  t.gap_by_speed = gap_by_speed_bins(eps, SpeedBins::gap_bins());
  t.lane_change = lane_change_rates(eps, SpeedBins::lane_change_bins());
  t.config_hash = "abc123";
  return t;
}

} // namespace

TEST_CASE("speed bins") {
  const auto g = SpeedBins::gap_bins();
  CHECK(g.bin_count() == 5);
  CHECK(g.bin_of(0.0) == 0);
  CHECK(g.bin_of(32.1) == 0);
  CHECK(g.bin_of(32.2) == 1);
  CHECK(g.bin_of(48.3) == 3);
  CHECK(g.bin_of(100.0) == 4);
  CHECK(g.label(0) == "<32.2");
  CHECK(g.label(2) == "40.25-48.3");
  CHECK(g.label(4) == ">=64.4");
  CHECK(g.lower(0) == 0.0);
  CHECK_FALSE(g.upper(4));
  const auto l = SpeedBins::lane_change_bins();
  CHECK(l.bin_count() == 3);
  CHECK(l.label(1) == "20-55");
  CHECK(SpeedBins(std::vector<double>{}).label(0) == "all");
  CHECK_THROWS_AS(SpeedBins({10.0, 10.0}), std::invalid_argument);
  CHECK_THROWS_AS(SpeedBins({20.0, 10.0}), std::invalid_argument);
  CHECK_THROWS_AS(SpeedBins({-1.0}), std::invalid_argument);
}

TEST_CASE("bins tile the speed axis") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> v(0.0, 150.0);
  const auto g = SpeedBins::gap_bins();
  for (int i = 0; i < 10000; ++i) {
    const double s = v(rng);
    const std::size_t b = g.bin_of(s);
    REQUIRE(b < g.bin_count());
    CHECK(s >= g.lower(b));
    if (const auto u = g.upper(b)) CHECK(s < *u);
  }
}

TEST_CASE("pair summary") {
  SUBCASE("empty input gives four empty rows") {
    const auto rows = pair_summary({});
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].pair == PairClass::CarFollowsCar);
    CHECK(rows[1].pair == PairClass::CarFollowsHeavy);
    CHECK(rows[2].pair == PairClass::HeavyFollowsCar);
    CHECK(rows[3].pair == PairClass::HeavyFollowsHeavy);
    for (const auto& r : rows) {
      CHECK(r.n == 0);
      CHECK_FALSE(r.avg_gap);
      CHECK_FALSE(r.avg_speed);
    }
  }
  SUBCASE("episode means") {
    std::vector<Episode> eps{make(PairClass::CarFollowsCar, 10.0, 30.0, EndReason::DataEnd, 2),
                             make(PairClass::CarFollowsCar, 20.0, 50.0, EndReason::DataEnd, 8),
                             make(PairClass::HeavyFollowsHeavy, 37.7, 29.8), make(PairClass::OtherPair, 5.0, 10.0)};
    auto rows = pair_summary(eps);
    CHECK(rows[0].n == 2);
    CHECK(*rows[0].avg_gap == doctest::Approx(15.0));
    CHECK(units::mps_to_kmh(*rows[0].avg_speed) == doctest::Approx(40.0));
    CHECK(units::mps_to_kmh(*rows[0].frame_mean_speed) == doctest::Approx(46.0));
    CHECK(rows[3].n == 1);
    CHECK(*rows[3].avg_gap == doctest::Approx(37.7));

    rows = pair_summary(eps, Weighting::Frame);
    CHECK(*rows[0].avg_gap == doctest::Approx(18.0));
    CHECK(units::mps_to_kmh(*rows[0].avg_speed) == doctest::Approx(46.0));
  }
}

TEST_CASE("gap decrease examples") {
  std::vector<Episode> eps;
  for (int k = 0; k < 76; ++k) eps.push_back(make(PairClass::CarFollowsHeavy, 12.0, 25.0));
  for (int k = 0; k < 648; ++k) eps.push_back(make(PairClass::CarFollowsCar, 13.8, 25.0));
  for (int k = 0; k < 6; ++k) eps.push_back(make(PairClass::CarFollowsHeavy, 30.3, 70.0));
  for (int k = 0; k < 30; ++k) eps.push_back(make(PairClass::CarFollowsCar, 28.3, 70.0));
  const auto rows = gap_by_speed_bins(eps, SpeedBins::gap_bins());
  REQUIRE(rows.size() == 5);
  CHECK(rows[0].n_car_follows_heavy == 76);
  CHECK(rows[0].n_car_follows_car == 648);
  REQUIRE(rows[0].gap_decrease_pct);
  CHECK(*rows[0].gap_decrease_pct == doctest::Approx(100.0 * 1.8 / 13.8).epsilon(1e-12));
  CHECK(std::round(*rows[0].gap_decrease_pct * 100.0) / 100.0 == 13.04);
  REQUIRE(rows[4].gap_decrease_pct);
  CHECK(std::round(*rows[4].gap_decrease_pct * 100.0) / 100.0 == -7.07);
  // Bins without car-follows-car episodes carry no percentage.
  CHECK_FALSE(rows[1].gap_decrease_pct);
  CHECK_FALSE(rows[1].gap_car_follows_car);
}

TEST_CASE("a single bin reproduces the pair summary") {
  const auto eps = synthetic::random_episodes(300, 4);
  const auto rows = gap_by_speed_bins(eps, SpeedBins(std::vector<double>{}));
  REQUIRE(rows.size() == 1);
  const auto ps = pair_summary(eps);
  CHECK(rows[0].n_car_follows_car == ps[0].n);
  CHECK(rows[0].n_car_follows_heavy == ps[1].n);
  CHECK(*rows[0].gap_car_follows_car == *ps[0].avg_gap);
  CHECK(*rows[0].gap_car_follows_heavy == *ps[1].avg_gap);
}

TEST_CASE("collapsing the bins reproduces the pair summary exactly") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto eps = synthetic::random_episodes(500, seed);
    const auto rows = gap_by_speed_bins(eps, SpeedBins::gap_bins());
    const auto ps = pair_summary(eps);
    const auto c = collapse_bins(rows);
    std::size_t total = 0;
    for (const auto& r : rows) total += r.n_car_follows_car + r.n_car_follows_heavy;
    CHECK(total == ps[0].n + ps[1].n);
    CHECK(c.n_car_follows_car == ps[0].n);
    CHECK(c.n_car_follows_heavy == ps[1].n);
    REQUIRE(c.gap_car_follows_car);
    REQUIRE(c.gap_car_follows_heavy);
    CHECK(*c.gap_car_follows_car == *ps[0].avg_gap);
    CHECK(*c.gap_car_follows_heavy == *ps[1].avg_gap);
  }
}

TEST_CASE("gap decrease sign flips at a planted crossover") {
  // Car-follows-car gaps grow slowly with speed, car-follows-heavy gaps grow
  // faster and cross them at 48 km/h.
  std::vector<Episode> eps;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> speed(5.0, 100.0);
  auto gap_cc = [](double v) { return 10.0 + 0.2 * v; };
  auto gap_ch = [](double v) { return 10.0 + 0.2 * 48.0 + 0.5 * (v - 48.0); };
  for (int k = 0; k < 4000; ++k) {
    const double v = speed(rng);
    eps.push_back(make(PairClass::CarFollowsCar, gap_cc(v), v));
    eps.push_back(make(PairClass::CarFollowsHeavy, gap_ch(v), v));
  }
  const SpeedBins bins({20.0, 30.0, 40.0, 46.0, 50.0, 60.0, 70.0, 85.0});
  const auto rows = gap_by_speed_bins(eps, bins);
  for (const auto& r : rows) {
    REQUIRE(r.gap_decrease_pct);
    const bool ch_closer = *r.gap_car_follows_heavy < *r.gap_car_follows_car;
    CHECK((*r.gap_decrease_pct > 0.0) == ch_closer);
    const double upper = bins.upper(r.bin).value_or(1e9);
    if (upper <= 46.0) CHECK(*r.gap_decrease_pct > 0.0);
    if (bins.lower(r.bin) >= 50.0) CHECK(*r.gap_decrease_pct < 0.0);
  }
}

TEST_CASE("lane change rates") {
  SUBCASE("every episode changes lane") {
    std::vector<Episode> eps{make(PairClass::CarFollowsHeavy, 10, 15, EndReason::FollowerLaneChange),
                             make(PairClass::CarFollowsHeavy, 10, 40, EndReason::FollowerLaneChange),
                             make(PairClass::CarFollowsCar, 10, 40, EndReason::DataEnd)};
    const auto rows = lane_change_rates(eps, SpeedBins::lane_change_bins());
    REQUIRE(rows.size() == 3); // two non-empty bins plus overall
    for (const auto& r : rows) CHECK(r.lane_change_pct == 100.0);
    CHECK(rows.back().label == "overall");
    CHECK(rows.back().n == 2);
  }
  SUBCASE("mixed") {
    std::vector<Episode> eps;
    for (int k = 0; k < 5; ++k)
      eps.push_back(make(PairClass::CarFollowsHeavy, 10, 15, k < 3 ? EndReason::FollowerLaneChange : EndReason::DataEnd));
    for (int k = 0; k < 10; ++k)
      eps.push_back(make(PairClass::CarFollowsHeavy, 10, 70, k < 1 ? EndReason::FollowerLaneChange : EndReason::SegmentExit));
    const auto rows = lane_change_rates(eps, SpeedBins::lane_change_bins());
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].label == "<20");
    CHECK(rows[0].lane_change_pct == doctest::Approx(60.0));
    CHECK(rows[1].label == ">=55");
    CHECK(rows[1].lane_change_pct == doctest::Approx(10.0));
    CHECK(rows[2].lane_change_pct == doctest::Approx(400.0 / 15.0));
    CHECK(rows[2].mean_speed_kmh == doctest::Approx((5 * 15.0 + 10 * 70.0) / 15.0));
  }
  SUBCASE("no episodes") {
    const auto rows = lane_change_rates({}, SpeedBins::lane_change_bins());
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].n == 0);
  }
}

TEST_CASE("post lane change speed") {
  SUBCASE("equal speeds never count as increases") {
    std::vector<LaneChangeEvent> ev{event(30, 30), event(10, 10), event(60, 60)};
    const auto s = post_lane_change_speed_stats(ev);
    CHECK(*s.fraction_increased == 0.0);
    CHECK(s.n_below_threshold == 1);
    CHECK(*s.fraction_increased_below_threshold == 0.0);
  }
  SUBCASE("two of five") {
    std::vector<LaneChangeEvent> ev{event(10, 15), event(30, 40), event(30, 20), event(50, 45), event(60, 59)};
    const auto s = post_lane_change_speed_stats(ev);
    CHECK(s.n == 5);
    CHECK(*s.fraction_increased == doctest::Approx(0.4));
    CHECK(*s.fraction_increased_below_threshold == 1.0);
  }
  SUBCASE("empty") {
    const auto s = post_lane_change_speed_stats({});
    CHECK_FALSE(s.fraction_increased);
    CHECK_FALSE(s.fraction_increased_below_threshold);
  }
}

TEST_CASE("lane changes ending car-follows-heavy episodes") {
  const Dataset ds = synthetic::traffic_scenario(5);
  const auto r = extract_episodes(ds, {});
  const auto events = lane_changes_ending_episodes(r.episodes, ds, 5.0);
  std::size_t expected = 0;
  for (const auto& ep : r.episodes)
    expected += ep.pair == PairClass::CarFollowsHeavy && ep.end_reason == EndReason::FollowerLaneChange;
  CHECK(expected > 0);
  CHECK(events.size() == expected);
}

TEST_CASE("merge comparison") {
  SUBCASE("identical sides") {
    std::vector<FitResult> rs{fit(0, 3, 0.5), fit(1, 4, 0.7), fit(2, 3, 0.2)};
    const auto m = merge_comparison(rs, rs);
    CHECK(m.distinct_before == m.distinct_after);
    CHECK(m.distinct_before == 2);
    CHECK(m.rmse_ratio == 1.0);
  }
  SUBCASE("two clusters before, five after") {
    std::vector<FitResult> before, after;
    for (std::size_t k = 0; k < 10; ++k) before.push_back(fit(k, 1 + static_cast<int>(k % 2), 0.3));
    for (std::size_t k = 0; k < 10; ++k) after.push_back(fit(k, 10 + static_cast<int>(k % 5), 0.6));
    const auto m = merge_comparison(before, after);
    CHECK(m.distinct_before == 2);
    CHECK(m.distinct_after == 5);
    CHECK(m.rmse_ratio == doctest::Approx(0.5));
  }
  SUBCASE("empty side") {
    std::vector<FitResult> rs{fit(0, 3, 0.5)};
    CHECK_THROWS_AS(merge_comparison({}, rs), std::invalid_argument);
    CHECK_THROWS_AS(merge_comparison(rs, {}), std::invalid_argument);
  }
}

TEST_CASE("emit_report") {
  const auto eps = synthetic::random_episodes(200, 9);
  ReportTables tables = sample_tables(eps);

  SUBCASE("csv files and manifest") {
    TempDir dir("csv");
    const auto written = emit_report(tables, ReportFormat::Csv, dir.path);
    CHECK(written.size() == 4);
    const std::string ps = slurp(dir.path / "pair_summary.csv");
    CHECK(std::count(ps.begin(), ps.end(), '\n') == 5);
    CHECK(ps.rfind("pair,n,avg_gap_m,avg_speed_kmh,frame_mean_speed_kmh\n", 0) == 0);
    const auto manifest = nlohmann::json::parse(slurp(dir.path / "manifest.json"));
    CHECK(manifest["config_hash"] == "abc123");
    REQUIRE(manifest["tables"].size() == 3);
    CHECK(manifest["tables"][0]["file"] == "pair_summary.csv");
    CHECK(manifest["tables"][0]["rows"] == 4);
    CHECK(manifest["tables"][1]["rows"] == 5);
  }
  SUBCASE("json carries the same values") {
    TempDir dir("json");
    emit_report(tables, ReportFormat::Json, dir.path);
    const auto ps = nlohmann::ordered_json::parse(slurp(dir.path / "pair_summary.json"));
    REQUIRE(ps.is_array());
    REQUIRE(ps.size() == 4);
    CHECK(ps[0]["pair"] == "car_follows_car");
    CHECK(ps[0]["n"] == tables.pair_summary[0].n);
    CHECK(ps[0]["avg_gap_m"].get<double>() == doctest::Approx(*tables.pair_summary[0].avg_gap).epsilon(1e-3));
    const auto keys = std::vector<std::string>{"pair", "n", "avg_gap_m", "avg_speed_kmh", "frame_mean_speed_kmh"};
    std::size_t i = 0;
    for (const auto& [k, v] : ps[0].items()) CHECK(k == keys[i++]);
  }
  SUBCASE("reruns are byte-identical") {
    TempDir a("rerun_a"), b("rerun_b");
    FitResult f = fit(eps[0].id, 7, 0.123456789);
    f.per_cluster = {{7, 0.123456789, 100}, {8, INFINITY, 0}};
    std::vector<FitResult> fits{f};
    tables.episodes = eps;
    tables.fits = fits;
    tables.merge = merge_comparison(fits, fits);
    emit_report(tables, ReportFormat::Csv, a.path);
    emit_report(tables, ReportFormat::Csv, b.path);
    std::size_t n = 0;
    for (const auto& e : fs::directory_iterator(a.path)) {
      ++n;
      CHECK(slurp(e.path()) == slurp(b.path / e.path().filename()));
    }
    CHECK(n == 8);
    const std::string wide = slurp(a.path / "fit_results_wide.csv");
    CHECK(wide == fmt::format("episode_id,cluster_7,cluster_8\n{},0.123457,\n", eps[0].id));
  }
  SUBCASE("unwritable directory fails before writing") {
    TempDir dir("blocked");
    const auto blocker = dir.path / "file";
    std::ofstream(blocker) << "x";
    CHECK_THROWS_AS(emit_report(tables, ReportFormat::Csv, blocker / "out"), IoError);
    CHECK_THROWS_AS(emit_report(tables, ReportFormat::Csv, blocker), IoError);
    CHECK(slurp(blocker) == "x");
  }
}

TEST_CASE("cluster count rows") {
  std::vector<ClusterHistogram> h(2);
  h[0].pair = PairClass::CarFollowsCar;
  h[0].counts = {{3, 2}, {9, 1}};
  h[1].pair = PairClass::CarFollowsHeavy;
  h[1].counts = {{24, 5}};
  const auto rows = cluster_count_rows(h);
  REQUIRE(rows.size() == 3);
  CHECK(rows[2].group == "car_follows_heavy");
  CHECK(rows[2].cluster_id == 24);
  CHECK(rows[2].count == 5);
}
