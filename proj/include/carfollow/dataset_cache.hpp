#pragma once

#include "carfollow/trajectory.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>

namespace carfollow {

/// Columnar binary snapshot of a validated Dataset.
///
/// Layout (little-endian host order):
///   magic "CFDSCACH", u32 version, f64 segment_length, f64 merge_boundary_y,
///   u8 has_speed, u8 has_accel, u64 track_count, u64 point_count,
///   per track: i32 id, f64 length, f64 width, i32 ngsim_class (-1 = none),
///              u64 missing_frames, u64 point_count,
///   then one contiguous column per point field over all tracks in id order:
///   i64 frame, f64 y, i32 lane, f64 speed, f64 accel, i32 preceding (0 = none),
///   f64 space_headway (NaN = none),
///   and finally u64 unresolved count followed by the i32 ids.
inline constexpr std::uint32_t kDatasetCacheVersion = 1;

void write_dataset_cache(std::ostream& out, const Dataset& dataset);
/// Throws FormatError on a bad magic, version mismatch or truncated stream.
Dataset read_dataset_cache(std::istream& in);

void save_dataset_cache(const std::filesystem::path& path, const Dataset& dataset);
Dataset load_dataset_cache(const std::filesystem::path& path);
/// True when the file starts with the cache magic.
bool is_dataset_cache(const std::filesystem::path& path);

} // namespace carfollow
