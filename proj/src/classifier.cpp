#include "carfollow/classifier.hpp"

#include <fmt/format.h>

#include <cmath>
#include <stdexcept>

namespace carfollow {

VehicleClass classify_by_length(double length_m, const ClassifierThresholds& thresholds) {
  if (!std::isfinite(length_m) || length_m <= 0.0)
    throw std::invalid_argument(fmt::format("invalid vehicle length {} m", length_m));
  if (length_m <= thresholds.car_max_m) return VehicleClass::PassengerCar;
  if (length_m <= thresholds.suv_max_m) return VehicleClass::SuvLightTruck;
  return VehicleClass::HeavyVehicle;
}

PairClass pair_class(VehicleClass follower, VehicleClass leader) {
  using enum VehicleClass;
  if (follower == SuvLightTruck || leader == SuvLightTruck) return PairClass::OtherPair;
  if (follower == PassengerCar) return leader == PassengerCar ? PairClass::CarFollowsCar : PairClass::CarFollowsHeavy;
  return leader == PassengerCar ? PairClass::HeavyFollowsCar : PairClass::HeavyFollowsHeavy;
}

std::string_view to_string(VehicleClass c) {
  switch (c) {
  case VehicleClass::PassengerCar: return "passenger_car";
  case VehicleClass::SuvLightTruck: return "suv_light_truck";
  case VehicleClass::HeavyVehicle: return "heavy_vehicle";
  }
  return "unknown";
}

std::string_view to_string(PairClass p) {
  switch (p) {
  case PairClass::CarFollowsCar: return "car_follows_car";
  case PairClass::CarFollowsHeavy: return "car_follows_heavy";
  case PairClass::HeavyFollowsCar: return "heavy_follows_car";
  case PairClass::HeavyFollowsHeavy: return "heavy_follows_heavy";
  case PairClass::OtherPair: return "other_pair";
  }
  return "unknown";
}

} // namespace carfollow
