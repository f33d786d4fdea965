#pragma once

namespace carfollow::units {

inline constexpr double kMetersPerFoot = 0.3048;
inline constexpr double kMpsPerKmh = 1000.0 / 3600.0;
inline constexpr double kFrameInterval = 0.1; // seconds, 10 Hz

constexpr double feet_to_meters(double ft) { return ft * kMetersPerFoot; }
constexpr double mps_to_kmh(double v) { return v / kMpsPerKmh; }
constexpr double kmh_to_mps(double v) { return v * kMpsPerKmh; }
constexpr double frame_to_seconds(long long frame) { return static_cast<double>(frame) * kFrameInterval; }

} // namespace carfollow::units
