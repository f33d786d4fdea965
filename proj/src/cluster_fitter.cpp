#include "carfollow/cluster_fitter.hpp"

#include "carfollow/errors.hpp"
#include "carfollow/units.hpp"
#include "text_util.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <istream>
#include <limits>
#include <mutex>
#include <ostream>
#include <stdexcept>
#include <thread>
#include <unordered_map>

namespace carfollow {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

VehicleClass parse_cluster_class(std::string_view s, std::size_t row) {
  if (s == "car" || s == "passenger_car") return VehicleClass::PassengerCar;
  if (s == "truck" || s == "heavy" || s == "heavy_vehicle") return VehicleClass::HeavyVehicle;
  throw FormatError(fmt::format("cluster library row {}: unknown class '{}'", row, s));
}

std::string_view class_tag(VehicleClass c) { return c == VehicleClass::HeavyVehicle ? "truck" : "car"; }

ClusterScore score_cluster(const Episode& episode, const ClusterDefinition& def, const FitOptions& options) {
  ClusterScore score{def.cluster_id, kInf, 0};
  const auto& frames = episode.frames;
  if (def.params.tau >= episode.duration()) return score;

  std::vector<double> predicted, observed;
  if (options.sim.mode == SimMode::OneStepPrediction) {
    const auto series = predict_accelerations(episode, def.params, options.sim);
    for (const auto& s : series.samples) {
      if (options.target == FitTarget::Acceleration) {
        predicted.push_back(s.accel);
        observed.push_back(frames[s.frame_index].follower_accel);
      } else if (s.frame_index + 1 < frames.size()) {
        predicted.push_back(frames[s.frame_index].follower_speed + s.accel * options.sim.dt);
        observed.push_back(frames[s.frame_index + 1].follower_speed);
      }
    }
  } else {
    const auto sim = simulate_follower(episode, def.params, options.sim);
    const std::size_t first = options.target == FitTarget::Acceleration ? sim.warmup_frames : sim.warmup_frames + 1;
    for (std::size_t i = first; i < sim.states.size(); ++i) {
      predicted.push_back(options.target == FitTarget::Acceleration ? sim.states[i].a : sim.states[i].v);
      observed.push_back(options.target == FitTarget::Acceleration ? frames[i].follower_accel : frames[i].follower_speed);
    }
  }
  if (predicted.empty()) return score;
  score.rmse = rmse(predicted, observed);
  score.n_frames = predicted.size();
  return score;
}

} // namespace

void ClusterLibrary::add(const ClusterDefinition& def) {
  if (def.cluster_id < 1 || def.cluster_id > kMaxClusterId)
    throw FormatError(fmt::format("cluster id {} outside 1..{}", def.cluster_id, kMaxClusterId));
  if (!def.params.valid()) throw FormatError(fmt::format("cluster {} has invalid parameters", def.cluster_id));
  if (def.follower_class == VehicleClass::SuvLightTruck)
    throw FormatError("cluster groups exist only for passenger cars and heavy vehicles");
  auto& group = def.follower_class == VehicleClass::HeavyVehicle ? heavies_ : cars_;
  const auto it = std::lower_bound(group.begin(), group.end(), def.cluster_id,
                                   [](const ClusterDefinition& d, int id) { return d.cluster_id < id; });
  if (it != group.end() && it->cluster_id == def.cluster_id)
    throw FormatError(fmt::format("duplicate cluster {} for class {}", def.cluster_id, class_tag(def.follower_class)));
  group.insert(it, def);
}

std::span<const ClusterDefinition> ClusterLibrary::group_for(VehicleClass follower) const {
  return follower == VehicleClass::HeavyVehicle ? std::span<const ClusterDefinition>(heavies_)
                                                : std::span<const ClusterDefinition>(cars_);
}

std::optional<ClusterDefinition> ClusterLibrary::find(int cluster_id, VehicleClass follower_class) const {
  for (const auto& d : group_for(follower_class))
    if (d.cluster_id == cluster_id) return d;
  return std::nullopt;
}

double coefficient_from_feet(double c_ft, double m, double l) {
  return c_ft * std::pow(units::kMetersPerFoot, l - m);
}

ClusterLibrary load_cluster_library(std::istream& source) {
  ClusterLibrary library;
  std::string line;
  std::size_t row = 0;
  bool header_seen = false;
  std::vector<std::string_view> fields;
  while (std::getline(source, line)) {
    ++row;
    const auto text = detail::trim(line);
    if (text.empty() || text.front() == '#') continue;
    if (!header_seen && text.starts_with("cluster_id")) {
      header_seen = true;
      continue;
    }
    detail::split(text, ',', fields);
    if (fields.size() != 7)
      throw FormatError(fmt::format("cluster library row {}: expected 7 fields, found {}", row, fields.size()));
    for (std::size_t i = 0; i < fields.size(); ++i)
      if (fields[i].empty()) throw FormatError(fmt::format("cluster library row {}: field {} is empty", row, i + 1));

    ClusterDefinition def;
    if (!detail::parse_number(fields[0], def.cluster_id))
      throw FormatError(fmt::format("cluster library row {}: bad cluster id '{}'", row, fields[0]));
    def.follower_class = parse_cluster_class(fields[1], row);
    double* targets[] = {&def.params.c, &def.params.m, &def.params.l, &def.params.tau};
    for (std::size_t k = 0; k < 4; ++k)
      if (!detail::parse_number(fields[2 + k], *targets[k]))
        throw FormatError(fmt::format("cluster library row {}: non-numeric value '{}'", row, fields[2 + k]));
    if (def.params.tau < 0.0) throw FormatError(fmt::format("cluster library row {}: negative tau", row));

    const auto units = fields[6];
    if (units == "ft" || units == "feet") {
      def.params.c = coefficient_from_feet(def.params.c, def.params.m, def.params.l);
    } else if (units != "si") {
      throw FormatError(fmt::format("cluster library row {}: unknown units tag '{}'", row, units));
    }
    try {
      library.add(def);
    } catch (const FormatError& e) {
      throw FormatError(fmt::format("cluster library row {}: {}", row, e.what()));
    }
  }
  if (source.bad()) throw IoError("failed reading cluster library");
  return library;
}

ClusterLibrary load_cluster_library_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open cluster library '{}'", path));
  return load_cluster_library(in);
}

void write_cluster_library(std::ostream& out, const ClusterLibrary& library) {
  out << "cluster_id,class,c,m,l,tau,units\n";
  for (const auto group : {library.cars(), library.heavies()})
    for (const auto& d : group)
      out << fmt::format("{},{},{},{},{},{},si\n", d.cluster_id, class_tag(d.follower_class), d.params.c, d.params.m,
                         d.params.l, d.params.tau);
}

double rmse(std::span<const double> predicted, std::span<const double> observed) {
  if (predicted.empty()) throw std::invalid_argument("rmse of an empty series");
  if (predicted.size() != observed.size()) throw std::invalid_argument("rmse series differ in length");
  double sum = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double d = predicted[i] - observed[i];
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(predicted.size()));
}

FitResult fit_episode(const Episode& episode, const ClusterLibrary& library, const FitOptions& options) {
  const auto group = library.group_for(episode.follower_class);
  if (group.empty()) {
    throw FitError(fmt::format("episode {}: library has no clusters for {} followers", episode.id,
                               to_string(episode.follower_class)));
  }
  FitResult result;
  result.episode_id = episode.id;
  result.used_car_library_fallback = episode.follower_class == VehicleClass::SuvLightTruck;
  result.per_cluster.reserve(group.size());

  const ClusterScore* best = nullptr;
  for (const auto& def : group) {
    result.per_cluster.push_back(score_cluster(episode, def, options));
    if (!std::isfinite(result.per_cluster.back().rmse)) ++result.unscoreable_clusters;
  }
  for (const auto& s : result.per_cluster)
    if (std::isfinite(s.rmse) && (!best || s.rmse < best->rmse)) best = &s;
  if (!best) throw FitError(fmt::format("episode {}: no cluster could be scored", episode.id));

  result.best_cluster_id = best->cluster_id;
  result.rmse = best->rmse;
  result.n_frames_scored = best->n_frames;
  return result;
}

std::vector<FitResult> fit_all(std::span<const Episode> episodes, const ClusterLibrary& library,
                               const FitOptions& options, std::vector<std::size_t>* failures) {
  std::vector<std::optional<FitResult>> slots(episodes.size());
  std::vector<char> failed(episodes.size(), 0);
  std::atomic<std::size_t> next{0};
  std::exception_ptr fatal;
  std::mutex fatal_mutex;

  auto worker = [&] {
    for (std::size_t i = next++; i < episodes.size(); i = next++) {
      try {
        slots[i] = fit_episode(episodes[i], library, options);
      } catch (const FitError&) {
        failed[i] = 1;
      } catch (...) {
        std::lock_guard lock(fatal_mutex);
        if (!fatal) fatal = std::current_exception();
      }
    }
  };

  unsigned threads = options.threads ? options.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(1, episodes.size())));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (fatal) std::rethrow_exception(fatal);

  std::vector<FitResult> results;
  results.reserve(episodes.size());
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    if (slots[i]) results.push_back(std::move(*slots[i]));
    else if (failed[i] && failures) failures->push_back(episodes[i].id);
  }
  return results;
}

std::size_t ClusterHistogram::total() const {
  std::size_t n = 0;
  for (const auto& [id, c] : counts) n += c;
  return n;
}

std::vector<ClusterHistogram> cluster_frequencies(std::span<const FitResult> results, std::span<const Episode> episodes) {
  std::unordered_map<std::size_t, PairClass> pair_of;
  for (const auto& ep : episodes) pair_of.emplace(ep.id, ep.pair);

  std::vector<ClusterHistogram> out;
  for (const auto pair : kReportedPairs) out.push_back({pair, {}});
  for (const auto& r : results) {
    const auto it = pair_of.find(r.episode_id);
    if (it == pair_of.end()) continue;
    for (auto& h : out)
      if (h.pair == it->second) ++h.counts[r.best_cluster_id];
  }
  return out;
}

ClusterHistogram histogram_of(std::span<const FitResult> results) {
  ClusterHistogram h;
  for (const auto& r : results) ++h.counts[r.best_cluster_id];
  return h;
}

std::optional<double> mean_rmse(std::span<const FitResult> results) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : results) {
    if (!std::isfinite(r.rmse)) continue;
    sum += r.rmse;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

std::vector<GroupMean> mean_rmse_by_pair(std::span<const FitResult> results, std::span<const Episode> episodes) {
  std::unordered_map<std::size_t, PairClass> pair_of;
  for (const auto& ep : episodes) pair_of.emplace(ep.id, ep.pair);
  std::vector<GroupMean> out;
  for (const auto pair : kReportedPairs) {
    std::vector<FitResult> members;
    for (const auto& r : results)
      if (const auto it = pair_of.find(r.episode_id); it != pair_of.end() && it->second == pair) members.push_back(r);
    if (const auto m = mean_rmse(members)) out.push_back({std::string(to_string(pair)), members.size(), *m});
  }
  return out;
}

std::vector<GroupMean> mean_rmse_by_merge_side(std::span<const FitResult> before, std::span<const FitResult> after) {
  std::vector<GroupMean> out;
  if (const auto m = mean_rmse(before)) out.push_back({std::string(to_string(SegmentPart::BeforeMerge)), before.size(), *m});
  if (const auto m = mean_rmse(after)) out.push_back({std::string(to_string(SegmentPart::AfterMerge)), after.size(), *m});
  return out;
}

} // namespace carfollow
