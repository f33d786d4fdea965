#include "carfollow/dataset_cache.hpp"

#include "carfollow/errors.hpp"
#include "carfollow/units.hpp"

#include <fmt/format.h>

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <type_traits>

namespace carfollow {

namespace {

constexpr std::array<char, 8> kMagic = {'C', 'F', 'D', 'S', 'C', 'A', 'C', 'H'};

template <typename T>
void put(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw FormatError("dataset cache is truncated");
  return value;
}

struct TrackHeader {
  std::int32_t id;
  double length;
  double width;
  std::int32_t ngsim_class;
  std::uint64_t missing_frames;
  std::uint64_t point_count;
};

} // namespace

void write_dataset_cache(std::ostream& out, const Dataset& ds) {
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kDatasetCacheVersion);
  put<double>(out, ds.segment_length);
  put<double>(out, ds.merge_boundary_y);
  put<std::uint8_t>(out, ds.has_speed);
  put<std::uint8_t>(out, ds.has_accel);
  put<std::uint64_t>(out, ds.tracks.size());
  put<std::uint64_t>(out, ds.point_count());
  for (const auto& [id, t] : ds.tracks) {
    put<std::int32_t>(out, t.vehicle_id);
    put<double>(out, t.length);
    put<double>(out, t.width);
    put<std::int32_t>(out, t.ngsim_class.value_or(-1));
    put<std::uint64_t>(out, t.missing_frames);
    put<std::uint64_t>(out, t.points.size());
  }
  auto column = [&](auto field) {
    for (const auto& [id, t] : ds.tracks)
      for (const auto& p : t.points) put(out, field(p));
  };
  column([](const TrajectoryPoint& p) { return static_cast<std::int64_t>(p.frame); });
  column([](const TrajectoryPoint& p) { return p.y; });
  column([](const TrajectoryPoint& p) { return static_cast<std::int32_t>(p.lane_id); });
  column([](const TrajectoryPoint& p) { return p.speed; });
  column([](const TrajectoryPoint& p) { return p.accel; });
  column([](const TrajectoryPoint& p) { return static_cast<std::int32_t>(p.preceding_id.value_or(0)); });
  column([](const TrajectoryPoint& p) { return p.space_headway.value_or(std::numeric_limits<double>::quiet_NaN()); });
  put<std::uint64_t>(out, ds.unresolved_leaders.size());
  for (const int id : ds.unresolved_leaders) put<std::int32_t>(out, id);
  if (!out) throw IoError("failed writing dataset cache");
}

Dataset read_dataset_cache(std::istream& in) {
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw FormatError("not a dataset cache file");
  const auto version = get<std::uint32_t>(in);
  if (version != kDatasetCacheVersion)
    throw FormatError(fmt::format("dataset cache version {} unsupported (expected {})", version, kDatasetCacheVersion));

  Dataset ds;
  ds.segment_length = get<double>(in);
  ds.merge_boundary_y = get<double>(in);
  ds.has_speed = get<std::uint8_t>(in) != 0;
  ds.has_accel = get<std::uint8_t>(in) != 0;
  const auto n_tracks = get<std::uint64_t>(in);
  const auto n_points = get<std::uint64_t>(in);

  std::vector<TrackHeader> headers;
  headers.reserve(n_tracks);
  std::uint64_t total = 0;
  for (std::uint64_t i = 0; i < n_tracks; ++i) {
    TrackHeader h{get<std::int32_t>(in), get<double>(in), get<double>(in), get<std::int32_t>(in),
                  get<std::uint64_t>(in), get<std::uint64_t>(in)};
    total += h.point_count;
    headers.push_back(h);
  }
  if (total != n_points) throw FormatError("dataset cache point counts are inconsistent");

  std::vector<VehicleTrack*> order;
  for (const auto& h : headers) {
    VehicleTrack t;
    t.vehicle_id = h.id;
    t.length = h.length;
    t.width = h.width;
    if (h.ngsim_class >= 0) t.ngsim_class = h.ngsim_class;
    t.missing_frames = h.missing_frames;
    t.points.resize(h.point_count);
    for (auto& p : t.points) p.vehicle_id = h.id;
    auto [it, inserted] = ds.tracks.emplace(h.id, std::move(t));
    if (!inserted) throw FormatError(fmt::format("dataset cache repeats vehicle {}", h.id));
    order.push_back(&it->second);
  }
  auto column = [&](auto assign) {
    for (auto* t : order)
      for (auto& p : t->points) assign(p);
  };
  column([&](TrajectoryPoint& p) {
    p.frame = get<std::int64_t>(in);
    p.t = units::frame_to_seconds(p.frame);
  });
  column([&](TrajectoryPoint& p) { p.y = get<double>(in); });
  column([&](TrajectoryPoint& p) { p.lane_id = get<std::int32_t>(in); });
  column([&](TrajectoryPoint& p) { p.speed = get<double>(in); });
  column([&](TrajectoryPoint& p) { p.accel = get<double>(in); });
  column([&](TrajectoryPoint& p) {
    const auto id = get<std::int32_t>(in);
    if (id > 0) p.preceding_id = id;
  });
  column([&](TrajectoryPoint& p) {
    const auto h = get<double>(in);
    if (!std::isnan(h)) p.space_headway = h;
  });
  const auto n_unresolved = get<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < n_unresolved; ++i) ds.unresolved_leaders.insert(get<std::int32_t>(in));
  return ds;
}

void save_dataset_cache(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write dataset cache '{}'", path.string()));
  write_dataset_cache(out, dataset);
}

Dataset load_dataset_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open dataset cache '{}'", path.string()));
  return read_dataset_cache(in);
}

bool is_dataset_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::array<char, 8> magic{};
  return in.read(magic.data(), magic.size()) && magic == kMagic;
}

} // namespace carfollow
