#pragma once

#include "carfollow/classifier.hpp"
#include "carfollow/episode.hpp"
#include "carfollow/ghr.hpp"

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace carfollow {

struct ClusterDefinition {
  int cluster_id = 0;
  VehicleClass follower_class = VehicleClass::PassengerCar;
  GHRParams params;
};

inline constexpr int kMaxClusterId = 30;

/// Car and heavy-vehicle driver clusters, each sorted by cluster id.
class ClusterLibrary {
public:
  /// Throws FormatError on duplicate (id, class) or an out of range id.
  void add(const ClusterDefinition& def);

  /// Clusters used for a follower class. SuvLightTruck followers use the car group.
  std::span<const ClusterDefinition> group_for(VehicleClass follower) const;
  std::span<const ClusterDefinition> cars() const { return cars_; }
  std::span<const ClusterDefinition> heavies() const { return heavies_; }
  std::optional<ClusterDefinition> find(int cluster_id, VehicleClass follower_class) const;
  std::size_t size() const { return cars_.size() + heavies_.size(); }

private:
  std::vector<ClusterDefinition> cars_;
  std::vector<ClusterDefinition> heavies_;
};

/// CSV with header `cluster_id,class,c,m,l,tau,units`. class is car or
/// truck/heavy; units is si or ft. Feet-based coefficients are converted to SI.
ClusterLibrary load_cluster_library(std::istream& source);
ClusterLibrary load_cluster_library_file(const std::string& path);
void write_cluster_library(std::ostream& out, const ClusterLibrary& library);

/// SI value of a coefficient calibrated against feet-based speeds and spacings.
double coefficient_from_feet(double c_ft, double m, double l);

/// Root mean squared difference. Throws std::invalid_argument when the series
/// are empty or differ in length.
double rmse(std::span<const double> predicted, std::span<const double> observed);

enum class FitTarget { Acceleration, Speed };

struct FitOptions {
  SimConfig sim;
  FitTarget target = FitTarget::Acceleration;
  unsigned threads = 0; // 0 = hardware concurrency
};

struct ClusterScore {
  int cluster_id = 0;
  double rmse = 0.0; // +inf when unscoreable
  std::size_t n_frames = 0;
};

struct FitResult {
  std::size_t episode_id = 0;
  int best_cluster_id = 0;
  double rmse = 0.0;
  std::vector<ClusterScore> per_cluster;
  std::size_t n_frames_scored = 0;
  bool used_car_library_fallback = false; // SuvLightTruck follower
  std::size_t unscoreable_clusters = 0;
};

/// Scores every cluster of the follower's group and keeps the minimum RMSE,
/// ties to the lowest id. Throws FitError when the group is empty or no
/// cluster can be scored.
FitResult fit_episode(const Episode& episode, const ClusterLibrary& library, const FitOptions& options = {});

/// Fits all episodes, in parallel when allowed. Output order follows input.
/// Episodes that fail to fit are reported through `failures` (episode ids).
std::vector<FitResult> fit_all(std::span<const Episode> episodes, const ClusterLibrary& library,
                               const FitOptions& options, std::vector<std::size_t>* failures = nullptr);

struct ClusterHistogram {
  PairClass pair = PairClass::CarFollowsCar;
  std::map<int, std::size_t> counts;
  std::size_t distinct() const { return counts.size(); }
  std::size_t total() const;
};

/// Best-cluster counts for each of the four reported pair classes, joined on
/// episode id.
std::vector<ClusterHistogram> cluster_frequencies(std::span<const FitResult> results, std::span<const Episode> episodes);

/// Distinct best clusters and counts for one set of results.
ClusterHistogram histogram_of(std::span<const FitResult> results);

struct GroupMean {
  std::string group;
  std::size_t n = 0;
  double mean_rmse = 0.0;
};

/// Mean best-cluster RMSE per reported pair class; empty groups are omitted.
std::vector<GroupMean> mean_rmse_by_pair(std::span<const FitResult> results, std::span<const Episode> episodes);
/// Mean best-cluster RMSE before and after the merge boundary.
std::vector<GroupMean> mean_rmse_by_merge_side(std::span<const FitResult> before, std::span<const FitResult> after);

/// Arithmetic mean of the finite best RMSE values; std::nullopt when none.
std::optional<double> mean_rmse(std::span<const FitResult> results);

} // namespace carfollow
