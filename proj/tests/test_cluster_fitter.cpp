#include "carfollow/cluster_fitter.hpp"
#include "carfollow/errors.hpp"
#include "carfollow/synthetic.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>
#include <string>

using namespace carfollow;

namespace {

ClusterLibrary load(const std::string& text) {
  std::istringstream in(text);
  return load_cluster_library(in);
}

std::string error_text(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

Episode with_noise(Episode ep, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  for (auto& f : ep.frames) f.follower_accel += noise(rng);
  return ep;
}

FitResult result(std::size_t episode, int best, double rmse) {
  FitResult r;
  r.episode_id = episode;
  r.best_cluster_id = best;
  r.rmse = rmse;
  return r;
}

Episode labelled(std::size_t id, PairClass pair) {
  Episode ep;
  ep.id = id;
  ep.pair = pair;
  return ep;
}

} // namespace

TEST_CASE("loader rows") {
  const auto lib = load("cluster_id,class,c,m,l,tau,units\n"
                        "24,car,1.2,0.8,1.1,1.31,si\n"
                        "1,car,0.9,0.5,1.0,2.95,si\n"
                        "3,truck,1.0,0.2,0.9,1.0,si\n");
  CHECK(lib.size() == 3);
  const auto c24 = lib.find(24, VehicleClass::PassengerCar);
  REQUIRE(c24);
  CHECK(c24->params.tau == 1.31);
  CHECK(c24->params.c == 1.2);
  const auto c1 = lib.find(1, VehicleClass::PassengerCar);
  REQUIRE(c1);
  CHECK(c1->params.tau == 2.95);
  CHECK(lib.cars().front().cluster_id == 1);
  CHECK(lib.find(3, VehicleClass::HeavyVehicle));
  CHECK_FALSE(lib.find(3, VehicleClass::PassengerCar));
  CHECK(lib.group_for(VehicleClass::SuvLightTruck).size() == 2);
}

TEST_CASE("loader errors") {
  CHECK_THROWS_AS(load("7,car,1,0,1,1,si\n7,car,2,0,1,1,si\n"), FormatError);
  CHECK(load("7,car,1,0,1,1,si\n7,truck,2,0,1,1,si\n").size() == 2);

  const auto missing = error_text([] { load("cluster_id,class,c,m,l,tau,units\n1,car,1,0,1,1,si\n2,car,1,,1,1,si\n"); });
  CHECK(missing.find("row 3") != std::string::npos);
  CHECK_THROWS_AS(load("1,car,1,0,1,si\n"), FormatError);
  CHECK(error_text([] { load("1,car,1,0,1,1,furlongs\n"); }).find("units") != std::string::npos);
  CHECK_THROWS_AS(load("1,bus,1,0,1,1,si\n"), FormatError);
  CHECK_THROWS_AS(load("31,car,1,0,1,1,si\n"), FormatError);
  CHECK_THROWS_AS(load("1,car,1,0,1,-0.5,si\n"), FormatError);
  CHECK_THROWS_AS(load("1,car,x,0,1,1,si\n"), FormatError);
  CHECK_THROWS_AS(load_cluster_library_file("/nonexistent/clusters.csv"), IoError);
}

TEST_CASE("feet-calibrated coefficients are converted") {
  const auto lib = load("5,car,2.0,0.7,1.3,1.0,ft\n");
  const double c = lib.find(5, VehicleClass::PassengerCar)->params.c;
  CHECK(c == doctest::Approx(2.0 * std::pow(0.3048, 0.6)).epsilon(1e-14));
  // The converted law gives the same acceleration as the feet law, expressed in m/s^2.
  const double v = 12.0, dv = -1.5, dx = 30.0;
  const double a_ft = 2.0 * std::pow(v / 0.3048, 0.7) * (dv / 0.3048) / std::pow(dx / 0.3048, 1.3);
  const double a_si = ghr_acceleration(v, dv, dx, {c, 0.7, 1.3, 1.0});
  CHECK(a_si == doctest::Approx(a_ft * 0.3048).epsilon(1e-12));
}

TEST_CASE("shipped placeholder library") {
  const auto lib = load_cluster_library_file(std::string(CARFOLLOW_SOURCE_DIR) + "/data/placeholder_clusters.csv");
  const auto ref = synthetic::cluster_library(1);
  REQUIRE(lib.cars().size() == 30);
  REQUIRE(lib.heavies().size() == 30);
  for (std::size_t k = 0; k < 30; ++k) {
    CHECK(lib.cars()[k].cluster_id == ref.cars()[k].cluster_id);
    CHECK(lib.cars()[k].params.c == ref.cars()[k].params.c);
    CHECK(lib.cars()[k].params.tau == ref.cars()[k].params.tau);
    CHECK(lib.heavies()[k].params.l == ref.heavies()[k].params.l);
    CHECK(lib.heavies()[k].params.m == ref.heavies()[k].params.m);
  }
}

TEST_CASE("library write and reload") {
  const auto lib = synthetic::cluster_library(17);
  std::stringstream buf;
  write_cluster_library(buf, lib);
  const auto again = load_cluster_library(buf);
  REQUIRE(again.size() == 60);
  for (std::size_t k = 0; k < 30; ++k) {
    CHECK(again.cars()[k].params.c == lib.cars()[k].params.c);
    CHECK(again.heavies()[k].params.tau == lib.heavies()[k].params.tau);
  }
}

TEST_CASE("rmse examples") {
  CHECK(rmse(std::vector<double>{0, 0}, std::vector<double>{3, 4}) == doctest::Approx(std::sqrt(12.5)).epsilon(1e-15));
  CHECK(rmse(std::vector<double>{0, 0}, std::vector<double>{3, 4}) == doctest::Approx(3.5355).epsilon(1e-4));
  CHECK(rmse(std::vector<double>{1.5, -2, 7}, std::vector<double>{1.5, -2, 7}) == 0.0);
  CHECK(rmse(std::vector<double>{1}, std::vector<double>{-1}) == 2.0);
  CHECK_THROWS_AS(rmse(std::vector<double>{}, std::vector<double>{}), std::invalid_argument);
  CHECK_THROWS_AS(rmse(std::vector<double>{1}, std::vector<double>{1, 2}), std::invalid_argument);
}

TEST_CASE("rmse ignores pair order") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> d(0.0, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::pair<double, double>> pairs(1 + trial % 50);
    for (auto& p : pairs) p = {d(rng), d(rng)};
    auto value = [&] {
      std::vector<double> a, b;
      for (const auto& p : pairs) {
        a.push_back(p.first);
        b.push_back(p.second);
      }
      return rmse(a, b);
    };
    const double r0 = value();
    std::shuffle(pairs.begin(), pairs.end(), rng);
    CHECK(value() == doctest::Approx(r0).epsilon(1e-13));
  }
}

TEST_CASE("round trip recovers every cluster") {
  const auto lib = synthetic::cluster_library(1);
  for (const auto cls : {VehicleClass::PassengerCar, VehicleClass::HeavyVehicle}) {
    int recovered = 0;
    for (const auto& def : lib.group_for(cls)) {
      Episode ep = synthetic::round_trip_episode(def.params);
      ep.follower_class = cls;
      const auto r = fit_episode(ep, lib);
      CHECK(r.per_cluster.size() == 30);
      if (r.best_cluster_id == def.cluster_id && r.rmse < 1e-9) ++recovered;
    }
    CHECK(recovered == 30);
  }
}

TEST_CASE("steady pair ties go to the lowest id") {
  const auto lib = synthetic::cluster_library(3);
  const Episode ep = synthetic::steady_pair(14.0, 25.0, 30.0);
  const auto r = fit_episode(ep, lib);
  CHECK(r.best_cluster_id == 1);
  for (const auto& s : r.per_cluster) CHECK(s.rmse == 0.0);
}

TEST_CASE("argmin with random ties") {
  std::mt19937_64 rng(8);
  const auto base = synthetic::cluster_library(4);
  const Episode ep = with_noise(synthetic::round_trip_episode(base.cars()[5].params), 0.1, 2);
  std::uniform_int_distribution<int> pick(0, 29);
  for (int trial = 0; trial < 15; ++trial) {
    // Several ids share a parameter tuple and therefore an identical score.
    ClusterLibrary lib;
    std::vector<int> source(30);
    for (int id = 1; id <= 30; ++id) {
      source[id - 1] = pick(rng) % 6;
      lib.add({id, VehicleClass::PassengerCar, base.cars()[source[id - 1]].params});
    }
    const auto r = fit_episode(ep, lib);
    double min_rmse = INFINITY;
    for (const auto& s : r.per_cluster) min_rmse = std::min(min_rmse, s.rmse);
    CHECK(r.rmse == min_rmse);
    int first = 0;
    for (const auto& s : r.per_cluster)
      if (s.rmse == min_rmse) {
        first = s.cluster_id;
        break;
      }
    CHECK(r.best_cluster_id == first);
  }
}

TEST_CASE("adding a cluster never increases the best rmse") {
  const auto full = synthetic::cluster_library(6);
  std::mt19937_64 rng(10);
  std::vector<Episode> episodes;
  for (int k = 0; k < 6; ++k)
    episodes.push_back(with_noise(synthetic::round_trip_episode(full.cars()[5 * k].params), 0.2, 100 + k));
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<int> order(30);
    for (int i = 0; i < 30; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    ClusterLibrary lib;
    lib.add(full.cars()[order[0]]);
    std::vector<double> best(episodes.size());
    for (std::size_t e = 0; e < episodes.size(); ++e) best[e] = fit_episode(episodes[e], lib).rmse;
    for (int i = 1; i < 30; ++i) {
      lib.add(full.cars()[order[i]]);
      for (std::size_t e = 0; e < episodes.size(); ++e) {
        const double r = fit_episode(episodes[e], lib).rmse;
        CHECK(r <= best[e]);
        best[e] = r;
      }
    }
  }
}

TEST_CASE("unscoreable clusters") {
  ClusterLibrary lib;
  lib.add({1, VehicleClass::PassengerCar, {1.0, 0.5, 1.0, 24.0}});
  lib.add({2, VehicleClass::PassengerCar, {1.0, 0.5, 1.0, 25.0}});
  lib.add({3, VehicleClass::PassengerCar, {1.0, 0.5, 1.0, 1.0}});
  const Episode ep = synthetic::steady_pair(10.0, 20.0, 25.0);
  auto r = fit_episode(ep, lib);
  CHECK(r.unscoreable_clusters == 1);
  CHECK(std::isinf(r.per_cluster[1].rmse));
  CHECK(r.best_cluster_id == 1);

  ClusterLibrary none;
  none.add({1, VehicleClass::PassengerCar, {1.0, 0.5, 1.0, 40.0}});
  CHECK_THROWS_AS(fit_episode(ep, none), FitError);
}

TEST_CASE("missing heavy group") {
  ClusterLibrary lib;
  lib.add({1, VehicleClass::PassengerCar, {1.0, 0.5, 1.0, 1.0}});
  Episode ep = synthetic::steady_pair(10.0, 20.0, 30.0);
  ep.follower_class = VehicleClass::HeavyVehicle;
  CHECK_THROWS_AS(fit_episode(ep, lib), FitError);

  std::vector<Episode> eps{ep};
  eps[0].id = 42;
  std::vector<std::size_t> failures;
  CHECK(fit_all(eps, lib, {}, &failures).empty());
  CHECK(failures == std::vector<std::size_t>{42});
}

TEST_CASE("SUV followers use the car group and are flagged") {
  const auto lib = synthetic::cluster_library(1);
  Episode ep = synthetic::round_trip_episode(lib.cars()[9].params);
  ep.follower_class = VehicleClass::SuvLightTruck;
  const auto r = fit_episode(ep, lib);
  CHECK(r.used_car_library_fallback);
  CHECK(r.best_cluster_id == lib.cars()[9].cluster_id);
}

TEST_CASE("speed target and forward simulation") {
  const auto lib = synthetic::cluster_library(1);
  const auto& def = lib.cars()[12];
  const Episode ep = synthetic::round_trip_episode(def.params);
  FitOptions opt;
  opt.target = FitTarget::Speed;
  auto r = fit_episode(ep, lib, opt);
  CHECK(r.best_cluster_id == def.cluster_id);
  CHECK(r.rmse < 1e-9);
  opt.target = FitTarget::Acceleration;
  opt.sim.mode = SimMode::ForwardSimulation;
  r = fit_episode(ep, lib, opt);
  CHECK(r.best_cluster_id == def.cluster_id);
  CHECK(r.rmse < 1e-9);
}

TEST_CASE("fit_all is deterministic across thread counts") {
  const auto lib = synthetic::cluster_library(2);
  std::vector<Episode> eps;
  for (std::size_t k = 0; k < 24; ++k) {
    Episode ep = with_noise(synthetic::round_trip_episode(lib.group_for(k % 2 ? VehicleClass::HeavyVehicle
                                                                               : VehicleClass::PassengerCar)[k].params),
                            0.05, k);
    ep.id = 100 + k;
    ep.follower_class = k % 2 ? VehicleClass::HeavyVehicle : VehicleClass::PassengerCar;
    eps.push_back(ep);
  }
  FitOptions one, four;
  one.threads = 1;
  four.threads = 4;
  const auto a = fit_all(eps, lib, one);
  const auto b = fit_all(eps, lib, four);
  REQUIRE(a.size() == eps.size());
  REQUIRE(b.size() == eps.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a[k].episode_id == eps[k].id);
    CHECK(b[k].episode_id == eps[k].id);
    CHECK(a[k].best_cluster_id == b[k].best_cluster_id);
    CHECK(a[k].rmse == b[k].rmse);
    for (std::size_t c = 0; c < a[k].per_cluster.size(); ++c) CHECK(a[k].per_cluster[c].rmse == b[k].per_cluster[c].rmse);
  }
}

TEST_CASE("cluster frequencies") {
  SUBCASE("three episodes on one cluster") {
    std::vector<Episode> eps{labelled(0, PairClass::CarFollowsHeavy), labelled(1, PairClass::CarFollowsHeavy),
                             labelled(2, PairClass::CarFollowsHeavy)};
    std::vector<FitResult> rs{result(0, 24, 0.1), result(1, 24, 0.2), result(2, 24, 0.3)};
    const auto h = cluster_frequencies(rs, eps);
    REQUIRE(h.size() == 4);
    for (const auto& x : h) {
      if (x.pair == PairClass::CarFollowsHeavy) {
        CHECK(x.counts == std::map<int, std::size_t>{{24, 3}});
        CHECK(x.distinct() == 1);
        CHECK(x.total() == 3);
      } else {
        CHECK(x.counts.empty());
      }
    }
    CHECK(histogram_of(rs).distinct() == 1);
  }
  SUBCASE("empty") {
    const auto h = cluster_frequencies({}, {});
    for (const auto& x : h) CHECK(x.counts.empty());
    CHECK(histogram_of({}).counts.empty());
  }
  SUBCASE("round trip assignments") {
    const auto lib = synthetic::cluster_library(1);
    std::vector<Episode> eps;
    std::map<int, std::size_t> expected;
    for (std::size_t k = 0; k < 12; ++k) {
      const auto& def = lib.cars()[(k * 7) % 5];
      Episode ep = synthetic::round_trip_episode(def.params);
      ep.id = k;
      ep.pair = PairClass::CarFollowsCar;
      eps.push_back(ep);
      ++expected[def.cluster_id];
    }
    const auto rs = fit_all(eps, lib, {});
    const auto h = cluster_frequencies(rs, eps);
    CHECK(h[0].pair == PairClass::CarFollowsCar);
    CHECK(h[0].counts == expected);
  }
  SUBCASE("OtherPair results are not counted") {
    std::vector<Episode> eps{labelled(0, PairClass::OtherPair)};
    std::vector<FitResult> rs{result(0, 5, 0.1)};
    for (const auto& x : cluster_frequencies(rs, eps)) CHECK(x.counts.empty());
  }
}

TEST_CASE("mean rmse by group") {
  std::vector<Episode> eps{labelled(0, PairClass::CarFollowsCar), labelled(1, PairClass::CarFollowsCar),
                           labelled(2, PairClass::HeavyFollowsCar)};
  std::vector<FitResult> rs{result(0, 1, 1.0), result(1, 2, 3.0), result(2, 3, 0.7)};
  const auto m = mean_rmse_by_pair(rs, eps);
  REQUIRE(m.size() == 2);
  CHECK(m[0].group == "car_follows_car");
  CHECK(m[0].mean_rmse == 2.0);
  CHECK(m[0].n == 2);
  CHECK(m[1].group == "heavy_follows_car");
  CHECK(m[1].mean_rmse == 0.7);
  CHECK_FALSE(mean_rmse(std::vector<FitResult>{}));
}

TEST_CASE("noisier after-merge episodes have larger mean rmse") {
  const auto lib = synthetic::cluster_library(1);
  std::vector<Episode> before, after;
  for (std::size_t k = 0; k < 10; ++k) {
    const Episode clean = synthetic::round_trip_episode(lib.cars()[k].params);
    before.push_back(with_noise(clean, 0.05, k));
    after.push_back(with_noise(clean, 0.3, 50 + k));
  }
  const auto rb = fit_all(before, lib, {});
  const auto ra = fit_all(after, lib, {});
  const auto m = mean_rmse_by_merge_side(rb, ra);
  REQUIRE(m.size() == 2);
  CHECK(m[0].group == "before_merge");
  CHECK(m[1].group == "after_merge");
  CHECK(m[0].mean_rmse < m[1].mean_rmse);
  CHECK(mean_rmse_by_merge_side({}, ra).size() == 1);
}
