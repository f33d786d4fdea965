#include "carfollow/config.hpp"

#include "carfollow/errors.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>

namespace carfollow {

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

struct KeyBinding {
  ConfigKey doc;
  std::function<void(PipelineConfig&, const json&)> set;
  std::function<ordered_json(const PipelineConfig&)> get;
  bool hashed = true;
};

double as_number(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError(fmt::format("config key '{}' must be a number", key));
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ConfigError(fmt::format("config key '{}' must be finite", key));
  return d;
}

double positive(const json& v, const std::string& key) {
  const double d = as_number(v, key);
  if (d <= 0.0) throw ConfigError(fmt::format("config key '{}' must be > 0", key));
  return d;
}

double non_negative(const json& v, const std::string& key) {
  const double d = as_number(v, key);
  if (d < 0.0) throw ConfigError(fmt::format("config key '{}' must be >= 0", key));
  return d;
}

long long integer(const json& v, const std::string& key) {
  if (!v.is_number_integer()) throw ConfigError(fmt::format("config key '{}' must be an integer", key));
  return v.get<long long>();
}

bool boolean(const json& v, const std::string& key) {
  if (!v.is_boolean()) throw ConfigError(fmt::format("config key '{}' must be true or false", key));
  return v.get<bool>();
}

std::string choice(const json& v, const std::string& key, std::initializer_list<const char*> allowed) {
  if (!v.is_string()) throw ConfigError(fmt::format("config key '{}' must be a string", key));
  const auto s = v.get<std::string>();
  for (const char* a : allowed)
    if (s == a) return s;
  throw ConfigError(fmt::format("config key '{}' has unsupported value '{}'", key, s));
}

SpeedBins bins(const json& v, const std::string& key) {
  if (!v.is_array()) throw ConfigError(fmt::format("config key '{}' must be an array of km/h boundaries", key));
  std::vector<double> b;
  for (const auto& e : v) b.push_back(as_number(e, key));
  try {
    return SpeedBins(std::move(b));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(fmt::format("config key '{}': {}", key, e.what()));
  }
}

const std::vector<KeyBinding>& bindings() {
  static const std::vector<KeyBinding> table = [] {
    std::vector<KeyBinding> t;
    auto add = [&](std::string key, std::string type, std::string def, std::string desc, auto set, auto get,
                   bool hashed = true) {
      t.push_back({{std::move(key), std::move(type), std::move(def), std::move(desc)}, set, get, hashed});
    };

    add("ingest.units", "feet|meters", "\"feet\"", "Unit of positions, lengths, speeds and accelerations in the input.",
        [](PipelineConfig& c, const json& v) {
          c.units = choice(v, "ingest.units", {"feet", "meters"}) == "feet" ? LengthUnit::Feet : LengthUnit::Meters;
        },
        [](const PipelineConfig& c) { return ordered_json(c.units == LengthUnit::Feet ? "feet" : "meters"); });
    add("ingest.recompute_kinematics", "bool", "false", "Differentiate positions instead of using speed/accel columns.",
        [](PipelineConfig& c, const json& v) { c.derive.recompute = boolean(v, "ingest.recompute_kinematics"); },
        [](const PipelineConfig& c) { return ordered_json(c.derive.recompute); });
    add("ingest.max_backward_jump_m", "number > 0", "3.0", "Backward y jump that marks a track corrupt.",
        [](PipelineConfig& c, const json& v) { c.derive.max_backward_jump_m = positive(v, "ingest.max_backward_jump_m"); },
        [](const PipelineConfig& c) { return ordered_json(c.derive.max_backward_jump_m); });
    add("ingest.segment_length_m", "number > 0", "400.0", "Length of the monitored segment.",
        [](PipelineConfig& c, const json& v) { c.segment_length_m = positive(v, "ingest.segment_length_m"); },
        [](const PipelineConfig& c) { return ordered_json(c.segment_length_m); });

    add("classifier.car_max_m", "number > 0", "5.0", "Longest passenger car (inclusive).",
        [](PipelineConfig& c, const json& v) { c.extraction.classifier.car_max_m = positive(v, "classifier.car_max_m"); },
        [](const PipelineConfig& c) { return ordered_json(c.extraction.classifier.car_max_m); });
    add("classifier.suv_max_m", "number > 0", "5.5", "Longest SUV / light truck (inclusive); longer is heavy.",
        [](PipelineConfig& c, const json& v) { c.extraction.classifier.suv_max_m = positive(v, "classifier.suv_max_m"); },
        [](const PipelineConfig& c) { return ordered_json(c.extraction.classifier.suv_max_m); });

    add("extract.min_duration_s", "number >= 0", "25.0", "Shortest accepted episode.",
        [](PipelineConfig& c, const json& v) { c.extraction.min_duration_s = non_negative(v, "extract.min_duration_s"); },
        [](const PipelineConfig& c) { return ordered_json(c.extraction.min_duration_s); });
    add("extract.gap_min_m", "number", "4.5", "Lower bound on the episode mean gap.",
        [](PipelineConfig& c, const json& v) { c.extraction.gap_min_m = as_number(v, "extract.gap_min_m"); },
        [](const PipelineConfig& c) { return ordered_json(c.extraction.gap_min_m); });
    add("extract.gap_max_m", "number", "76.0", "Upper bound on the episode mean gap.",
        [](PipelineConfig& c, const json& v) { c.extraction.gap_max_m = as_number(v, "extract.gap_max_m"); },
        [](const PipelineConfig& c) { return ordered_json(c.extraction.gap_max_m); });
    add("extract.entry_grace_frames", "integer >= 0", "10", "Frames after entry within which the pair must exist.",
        [](PipelineConfig& c, const json& v) {
          const auto n = integer(v, "extract.entry_grace_frames");
          if (n < 0) throw ConfigError("config key 'extract.entry_grace_frames' must be >= 0");
          c.extraction.entry_grace_frames = static_cast<int>(n);
        },
        [](const PipelineConfig& c) { return ordered_json(c.extraction.entry_grace_frames); });
    add("extract.merge_boundary_y_m", "number >= 0", "120.0", "Start of the merge area along the segment.",
        [](PipelineConfig& c, const json& v) {
          c.extraction.merge_boundary_y_m = non_negative(v, "extract.merge_boundary_y_m");
        },
        [](const PipelineConfig& c) { return ordered_json(c.extraction.merge_boundary_y_m); });
    add("extract.lane_change_window_s", "number > 0", "5.0", "Averaging window on each side of a lane change.",
        [](PipelineConfig& c, const json& v) {
          c.extraction.lane_change_window_s = positive(v, "extract.lane_change_window_s");
        },
        [](const PipelineConfig& c) { return ordered_json(c.extraction.lane_change_window_s); });
    add("extract.min_segment_duration_s", "number >= 0", "5.0", "Shortest kept part after the merge split.",
        [](PipelineConfig& c, const json& v) {
          c.extraction.min_segment_duration_s = non_negative(v, "extract.min_segment_duration_s");
        },
        [](const PipelineConfig& c) { return ordered_json(c.extraction.min_segment_duration_s); });
    add("extract.headway_convention", "front_to_front|front_to_rear", "\"front_to_front\"",
        "Reference points of the space headway column.",
        [](PipelineConfig& c, const json& v) {
          c.extraction.headway_convention =
              choice(v, "extract.headway_convention", {"front_to_front", "front_to_rear"}) == "front_to_front"
                  ? HeadwayConvention::FrontToFront
                  : HeadwayConvention::FrontToRear;
        },
        [](const PipelineConfig& c) {
          return ordered_json(c.extraction.headway_convention == HeadwayConvention::FrontToFront ? "front_to_front"
                                                                                                  : "front_to_rear");
        });

    add("ghr.dt", "number > 0", "0.1", "Integration and sampling step.",
        [](PipelineConfig& c, const json& v) { c.fit.sim.dt = positive(v, "ghr.dt"); },
        [](const PipelineConfig& c) { return ordered_json(c.fit.sim.dt); });
    add("ghr.mode", "one_step|forward_simulation", "\"one_step\"", "How predictions are produced for fitting.",
        [](PipelineConfig& c, const json& v) {
          c.fit.sim.mode = choice(v, "ghr.mode", {"one_step", "forward_simulation"}) == "one_step"
                               ? SimMode::OneStepPrediction
                               : SimMode::ForwardSimulation;
        },
        [](const PipelineConfig& c) {
          return ordered_json(c.fit.sim.mode == SimMode::OneStepPrediction ? "one_step" : "forward_simulation");
        });
    add("ghr.delay_interp", "linear|nearest", "\"linear\"", "Evaluation of delayed states between samples.",
        [](PipelineConfig& c, const json& v) {
          c.fit.sim.delay_interp =
              choice(v, "ghr.delay_interp", {"linear", "nearest"}) == "linear" ? DelayInterp::Linear : DelayInterp::NearestFrame;
        },
        [](const PipelineConfig& c) { return ordered_json(c.fit.sim.delay_interp == DelayInterp::Linear ? "linear" : "nearest"); });
    add("ghr.min_speed_floor", "number >= 0", "0.0", "Lower clamp on follower speed.",
        [](PipelineConfig& c, const json& v) { c.fit.sim.min_speed_floor = non_negative(v, "ghr.min_speed_floor"); },
        [](const PipelineConfig& c) { return ordered_json(c.fit.sim.min_speed_floor); });

    add("fit.target", "accel|speed", "\"accel\"", "Variable whose RMSE selects the cluster.",
        [](PipelineConfig& c, const json& v) {
          c.fit.target = choice(v, "fit.target", {"accel", "speed"}) == "accel" ? FitTarget::Acceleration : FitTarget::Speed;
        },
        [](const PipelineConfig& c) { return ordered_json(c.fit.target == FitTarget::Acceleration ? "accel" : "speed"); });
    add("fit.threads", "integer >= 0", "0", "Worker threads for fitting; 0 uses all cores. Does not change results.",
        [](PipelineConfig& c, const json& v) {
          const auto n = integer(v, "fit.threads");
          if (n < 0) throw ConfigError("config key 'fit.threads' must be >= 0");
          c.fit.threads = static_cast<unsigned>(n);
        },
        [](const PipelineConfig& c) { return ordered_json(c.fit.threads); }, false);

    add("stats.weighting", "episode|frame", "\"episode\"", "Averaging of gaps and speeds in the pair summary.",
        [](PipelineConfig& c, const json& v) {
          c.weighting = choice(v, "stats.weighting", {"episode", "frame"}) == "episode" ? Weighting::Episode : Weighting::Frame;
        },
        [](const PipelineConfig& c) { return ordered_json(c.weighting == Weighting::Episode ? "episode" : "frame"); });
    add("stats.gap_bins_kmh", "array of increasing numbers", "[32.2, 40.25, 48.3, 64.4]", "Speed bins of the gap table.",
        [](PipelineConfig& c, const json& v) { c.gap_bins = bins(v, "stats.gap_bins_kmh"); },
        [](const PipelineConfig& c) { return ordered_json(c.gap_bins.boundaries()); });
    add("stats.lane_change_bins_kmh", "array of increasing numbers", "[20, 55]", "Speed bins of the lane-change table.",
        [](PipelineConfig& c, const json& v) { c.lane_change_bins = bins(v, "stats.lane_change_bins_kmh"); },
        [](const PipelineConfig& c) { return ordered_json(c.lane_change_bins.boundaries()); });
    add("stats.lane_change_speed_threshold_kmh", "number > 0", "20.0",
        "Initial-speed threshold of the post lane change speed statistic.",
        [](PipelineConfig& c, const json& v) {
          c.lane_change_speed_threshold_kmh = positive(v, "stats.lane_change_speed_threshold_kmh");
        },
        [](const PipelineConfig& c) { return ordered_json(c.lane_change_speed_threshold_kmh); });

    add("stats.merge_pair", "car_follows_heavy|car_follows_car|heavy_follows_car|heavy_follows_heavy|all",
        "\"car_follows_heavy\"", "Episodes entering the before/after merge comparison.",
        [](PipelineConfig& c, const json& v) {
          const auto s = choice(v, "stats.merge_pair",
                                {"car_follows_heavy", "car_follows_car", "heavy_follows_car", "heavy_follows_heavy", "all"});
          c.merge_pair.reset();
          for (const PairClass pc : kReportedPairs)
            if (to_string(pc) == s) c.merge_pair = pc;
        },
        [](const PipelineConfig& c) {
          return ordered_json(c.merge_pair ? std::string(to_string(*c.merge_pair)) : std::string("all"));
        });

    add("report.format", "csv|json", "\"csv\"", "Format of emitted tables.",
        [](PipelineConfig& c, const json& v) {
          c.report_format = choice(v, "report.format", {"csv", "json"}) == "csv" ? ReportFormat::Csv : ReportFormat::Json;
        },
        [](const PipelineConfig& c) { return ordered_json(c.report_format == ReportFormat::Csv ? "csv" : "json"); });
    add("seed", "integer >= 0", "1", "Seed of the synthetic scenario generators.",
        [](PipelineConfig& c, const json& v) {
          const auto n = integer(v, "seed");
          if (n < 0) throw ConfigError("config key 'seed' must be >= 0");
          c.seed = static_cast<std::uint64_t>(n);
        },
        [](const PipelineConfig& c) { return ordered_json(c.seed); });
    return t;
  }();
  return table;
}

ordered_json canonical(const PipelineConfig& c, bool hashed_only) {
  ordered_json doc = ordered_json::object();
  for (const auto& b : bindings())
    if (!hashed_only || b.hashed) doc[b.doc.key] = b.get(c);
  return doc;
}

} // namespace

PipelineConfig PipelineConfig::from_json_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("config is not valid JSON: {}", e.what()));
  }
  if (!doc.is_object()) throw ConfigError("config document must be a JSON object");

  // Validate every key before applying any of them.
  for (const auto& [key, value] : doc.items()) {
    const auto& table = bindings();
    if (std::none_of(table.begin(), table.end(), [&](const KeyBinding& b) { return b.doc.key == key; }))
      throw ConfigError(fmt::format("unknown config key '{}'", key));
  }
  PipelineConfig cfg;
  for (const auto& b : bindings())
    if (doc.contains(b.doc.key)) b.set(cfg, doc.at(b.doc.key));

  const auto& cl = cfg.extraction.classifier;
  if (cl.suv_max_m < cl.car_max_m) throw ConfigError("classifier.suv_max_m must be >= classifier.car_max_m");
  if (cfg.extraction.gap_max_m < cfg.extraction.gap_min_m) throw ConfigError("extract.gap_max_m must be >= extract.gap_min_m");
  return cfg;
}

PipelineConfig PipelineConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open config file '{}'", path));
  const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return from_json_text(text);
}

std::string PipelineConfig::to_json() const { return canonical(*this, false).dump(2) + "\n"; }

std::string PipelineConfig::hash() const {
  const std::string text = canonical(*this, true).dump();
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(text.data(), text.size(), digest, &len, EVP_sha256(), nullptr);
  std::string hex;
  hex.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> schema = [] {
    std::vector<ConfigKey> s;
    for (const auto& b : bindings()) s.push_back(b.doc);
    return s;
  }();
  return schema;
}

} // namespace carfollow
