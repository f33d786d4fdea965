#pragma once

#include <string_view>

namespace carfollow {

enum class VehicleClass { PassengerCar, SuvLightTruck, HeavyVehicle };

enum class PairClass { CarFollowsCar, CarFollowsHeavy, HeavyFollowsCar, HeavyFollowsHeavy, OtherPair };

/// Length boundaries in meters. car_max is inclusive to PassengerCar,
/// suv_max inclusive to SuvLightTruck.
struct ClassifierThresholds {
  double car_max_m = 5.0;
  double suv_max_m = 5.5;
};

/// Throws std::invalid_argument for non-positive or non-finite lengths.
VehicleClass classify_by_length(double length_m, const ClassifierThresholds& thresholds = {});

PairClass pair_class(VehicleClass follower, VehicleClass leader);

/// The four pairs reported in the summary tables, in report order.
inline constexpr PairClass kReportedPairs[] = {PairClass::CarFollowsCar, PairClass::CarFollowsHeavy,
                                               PairClass::HeavyFollowsCar, PairClass::HeavyFollowsHeavy};

std::string_view to_string(VehicleClass c);
std::string_view to_string(PairClass p);

} // namespace carfollow
