#pragma once

// JSON (de)serialization for every configuration struct, plus RunConfig: the
// single document that drives the command-line tools. Parsing is strict --
// unknown keys are rejected with the offending name -- while missing keys keep
// their defaults, so a config file only needs to state what it changes.

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <initializer_list>
#include <string>

#include <nlohmann/json.hpp>

#include "titan/common.hpp"
#include "titan/metrics.hpp"
#include "titan/network.hpp"
#include "titan/projection.hpp"
#include "titan/synthdata.hpp"
#include "titan/training.hpp"

namespace titan::cfg_detail {

inline const nlohmann::json& expect_object(const nlohmann::json& j, const char* ctx) {
  if (!j.is_object())
    throw InvalidInput(std::string(ctx) + ": expected a JSON object, got " + j.type_name());
  return j;
}

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                       const char* ctx) {
  expect_object(j, ctx);
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) {
        ok = true;
        break;
      }
    if (!ok) throw InvalidInput(std::string(ctx) + ": unknown key '" + key + "'");
  }
}

template <typename T>
void opt(const nlohmann::json& j, const char* key, T& field, const char* ctx) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(field);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string(ctx) + ": bad value for '" + key + "': " + e.what());
  }
}

}  // namespace titan::cfg_detail

namespace titan {

inline void to_json(nlohmann::json& j, const ProjectionConfig& c) {
  j = {{"width", c.width},
       {"height", c.height},
       {"fov_up", c.fov_up},
       {"fov_down", c.fov_down}};
}

inline void from_json(const nlohmann::json& j, ProjectionConfig& c) {
  c = ProjectionConfig{};
  cfg_detail::check_keys(j, {"width", "height", "fov_up", "fov_down"}, "projection");
  cfg_detail::opt(j, "width", c.width, "projection");
  cfg_detail::opt(j, "height", c.height, "projection");
  cfg_detail::opt(j, "fov_up", c.fov_up, "projection");
  cfg_detail::opt(j, "fov_down", c.fov_down, "projection");
}

inline void to_json(nlohmann::json& j, const SwdConfig& c) {
  j = {{"full_res", c.full_res},
       {"min_res", c.min_res},
       {"patch", c.patch},
       {"patches_per_level", c.patches_per_level},
       {"num_projections", c.num_projections},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, SwdConfig& c) {
  c = SwdConfig{};
  cfg_detail::check_keys(
      j, {"full_res", "min_res", "patch", "patches_per_level", "num_projections", "seed"}, "swd");
  cfg_detail::opt(j, "full_res", c.full_res, "swd");
  cfg_detail::opt(j, "min_res", c.min_res, "swd");
  cfg_detail::opt(j, "patch", c.patch, "swd");
  cfg_detail::opt(j, "patches_per_level", c.patches_per_level, "swd");
  cfg_detail::opt(j, "num_projections", c.num_projections, "swd");
  cfg_detail::opt(j, "seed", c.seed, "swd");
}

}  // namespace titan

namespace titan::nn {

inline void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  j = {{"in_channels", c.in_channels},
       {"num_classes", c.num_classes},
       {"encoder_depth", c.encoder_depth},
       {"base_width", c.base_width},
       {"head_width", c.head_width},
       {"input_width", c.input_width},
       {"input_height", c.input_height},
       {"output_width", c.output_width},
       {"output_height", c.output_height},
       {"dropout_p", c.dropout_p},
       {"pyramid", c.pyramid},
       {"depth_head", c.depth_head}};
}

inline void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  c = GeneratorConfig{};
  cfg_detail::check_keys(j,
                         {"in_channels", "num_classes", "encoder_depth", "base_width",
                          "head_width", "input_width", "input_height", "output_width",
                          "output_height", "dropout_p", "pyramid", "depth_head"},
                         "generator");
  cfg_detail::opt(j, "in_channels", c.in_channels, "generator");
  cfg_detail::opt(j, "num_classes", c.num_classes, "generator");
  cfg_detail::opt(j, "encoder_depth", c.encoder_depth, "generator");
  cfg_detail::opt(j, "base_width", c.base_width, "generator");
  cfg_detail::opt(j, "head_width", c.head_width, "generator");
  cfg_detail::opt(j, "input_width", c.input_width, "generator");
  cfg_detail::opt(j, "input_height", c.input_height, "generator");
  cfg_detail::opt(j, "output_width", c.output_width, "generator");
  cfg_detail::opt(j, "output_height", c.output_height, "generator");
  cfg_detail::opt(j, "dropout_p", c.dropout_p, "generator");
  cfg_detail::opt(j, "pyramid", c.pyramid, "generator");
  cfg_detail::opt(j, "depth_head", c.depth_head, "generator");
}

inline void to_json(nlohmann::json& j, const CriticConfig& c) {
  j = {{"num_classes", c.num_classes},
       {"base_width", c.base_width},
       {"levels", c.levels},
       {"input_width", c.input_width},
       {"input_height", c.input_height}};
}

inline void from_json(const nlohmann::json& j, CriticConfig& c) {
  c = CriticConfig{};
  cfg_detail::check_keys(j, {"num_classes", "base_width", "levels", "input_width", "input_height"},
                         "critic");
  cfg_detail::opt(j, "num_classes", c.num_classes, "critic");
  cfg_detail::opt(j, "base_width", c.base_width, "critic");
  cfg_detail::opt(j, "levels", c.levels, "critic");
  cfg_detail::opt(j, "input_width", c.input_width, "critic");
  cfg_detail::opt(j, "input_height", c.input_height, "critic");
}

}  // namespace titan::nn

namespace titan::synth {

inline void to_json(nlohmann::json& j, const SensorRig& c) {
  j = {{"sensor_height", c.sensor_height},
       {"lidar_width", c.lidar_width},
       {"lidar_height", c.lidar_height},
       {"fov_up_deg", c.fov_up_deg},
       {"fov_down_deg", c.fov_down_deg},
       {"max_range", c.max_range},
       {"cam_width", c.cam_width},
       {"cam_height", c.cam_height},
       {"cam_hfov_deg", c.cam_hfov_deg}};
}

inline void from_json(const nlohmann::json& j, SensorRig& c) {
  c = SensorRig{};
  cfg_detail::check_keys(j,
                         {"sensor_height", "lidar_width", "lidar_height", "fov_up_deg",
                          "fov_down_deg", "max_range", "cam_width", "cam_height", "cam_hfov_deg"},
                         "rig");
  cfg_detail::opt(j, "sensor_height", c.sensor_height, "rig");
  cfg_detail::opt(j, "lidar_width", c.lidar_width, "rig");
  cfg_detail::opt(j, "lidar_height", c.lidar_height, "rig");
  cfg_detail::opt(j, "fov_up_deg", c.fov_up_deg, "rig");
  cfg_detail::opt(j, "fov_down_deg", c.fov_down_deg, "rig");
  cfg_detail::opt(j, "max_range", c.max_range, "rig");
  cfg_detail::opt(j, "cam_width", c.cam_width, "rig");
  cfg_detail::opt(j, "cam_height", c.cam_height, "rig");
  cfg_detail::opt(j, "cam_hfov_deg", c.cam_hfov_deg, "rig");
}

}  // namespace titan::synth

namespace titan::train {

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.learning_rate},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"adam_eps", c.adam_eps},
       {"batch_size", c.batch_size},
       {"dropout_p", c.dropout_p},
       {"gp_lambda", c.gp_lambda},
       {"flip_prob", c.flip_prob},
       {"drop_prob", c.drop_prob},
       {"drop_fraction", c.drop_fraction},
       {"critic_steps_per_gen", c.critic_steps_per_gen},
       {"max_epochs", c.max_epochs},
       {"seed", c.seed},
       {"val_interval", c.val_interval}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  cfg_detail::check_keys(j,
                         {"learning_rate", "beta1", "beta2", "adam_eps", "batch_size", "dropout_p",
                          "gp_lambda", "flip_prob", "drop_prob", "drop_fraction",
                          "critic_steps_per_gen", "max_epochs", "seed", "val_interval"},
                         "train");
  cfg_detail::opt(j, "learning_rate", c.learning_rate, "train");
  cfg_detail::opt(j, "beta1", c.beta1, "train");
  cfg_detail::opt(j, "beta2", c.beta2, "train");
  cfg_detail::opt(j, "adam_eps", c.adam_eps, "train");
  cfg_detail::opt(j, "batch_size", c.batch_size, "train");
  cfg_detail::opt(j, "dropout_p", c.dropout_p, "train");
  cfg_detail::opt(j, "gp_lambda", c.gp_lambda, "train");
  cfg_detail::opt(j, "flip_prob", c.flip_prob, "train");
  cfg_detail::opt(j, "drop_prob", c.drop_prob, "train");
  cfg_detail::opt(j, "drop_fraction", c.drop_fraction, "train");
  cfg_detail::opt(j, "critic_steps_per_gen", c.critic_steps_per_gen, "train");
  cfg_detail::opt(j, "max_epochs", c.max_epochs, "train");
  cfg_detail::opt(j, "seed", c.seed, "train");
  cfg_detail::opt(j, "val_interval", c.val_interval, "train");
}

inline void to_json(nlohmann::json& j, const PipelineConfig& c) {
  j = {{"projection", c.proj},
       {"cam_hfov_deg", c.cam_hfov_deg},
       {"num_classes", c.num_classes},
       {"cam_width", c.cam_width},
       {"cam_height", c.cam_height},
       {"range_scale", c.range_scale},
       {"swd", c.swd}};
}

inline void from_json(const nlohmann::json& j, PipelineConfig& c) {
  c = PipelineConfig{};
  cfg_detail::check_keys(
      j, {"projection", "cam_hfov_deg", "num_classes", "cam_width", "cam_height", "range_scale",
          "swd"},
      "pipeline");
  cfg_detail::opt(j, "projection", c.proj, "pipeline");
  cfg_detail::opt(j, "cam_hfov_deg", c.cam_hfov_deg, "pipeline");
  cfg_detail::opt(j, "num_classes", c.num_classes, "pipeline");
  cfg_detail::opt(j, "cam_width", c.cam_width, "pipeline");
  cfg_detail::opt(j, "cam_height", c.cam_height, "pipeline");
  cfg_detail::opt(j, "range_scale", c.range_scale, "pipeline");
  cfg_detail::opt(j, "swd", c.swd, "pipeline");
}

}  // namespace titan::train

namespace titan {

/// Where datasets live and where run directories are created. The dataset
/// root defaults to $TITAN_DATA_DIR when that is set.
struct DataConfig {
  std::string root = default_root();
  std::string run_root = "runs";
  std::string train_split = "train";
  std::string val_split = "val";

  static std::string default_root() {
    const char* env = std::getenv("TITAN_DATA_DIR");
    return (env && *env) ? env : "data";
  }

  friend bool operator==(const DataConfig&, const DataConfig&) = default;

  void validate() const {
    if (root.empty() || run_root.empty())
      throw InvalidInput("data: root and run_root must be non-empty");
    if (train_split.empty() || val_split.empty())
      throw InvalidInput("data: split names must be non-empty");
  }
};

inline void to_json(nlohmann::json& j, const DataConfig& c) {
  j = {{"root", c.root},
       {"run_root", c.run_root},
       {"train_split", c.train_split},
       {"val_split", c.val_split}};
}

inline void from_json(const nlohmann::json& j, DataConfig& c) {
  c = DataConfig{};
  cfg_detail::check_keys(j, {"root", "run_root", "train_split", "val_split"}, "data");
  cfg_detail::opt(j, "root", c.root, "data");
  cfg_detail::opt(j, "run_root", c.run_root, "data");
  cfg_detail::opt(j, "train_split", c.train_split, "data");
  cfg_detail::opt(j, "val_split", c.val_split, "data");
}

/// Synthetic dataset generation: how many scenes, how they are split, and the
/// sensor rig they are rendered with. Class count comes from the pipeline.
struct SynthConfig {
  int count = 120;
  double val_fraction = 0.2;
  std::uint64_t seed = 0;
  synth::SensorRig rig{};

  friend bool operator==(const SynthConfig&, const SynthConfig&) = default;

  void validate() const {
    if (count < 0) throw InvalidInput("synth: count must be >= 0");
    if (!(val_fraction >= 0.0 && val_fraction <= 1.0))
      throw InvalidInput("synth: val_fraction must lie in [0,1]");
  }
};

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = {{"count", c.count}, {"val_fraction", c.val_fraction}, {"seed", c.seed}, {"rig", c.rig}};
}

inline void from_json(const nlohmann::json& j, SynthConfig& c) {
  c = SynthConfig{};
  cfg_detail::check_keys(j, {"count", "val_fraction", "seed", "rig"}, "synth");
  cfg_detail::opt(j, "count", c.count, "synth");
  cfg_detail::opt(j, "val_fraction", c.val_fraction, "synth");
  cfg_detail::opt(j, "seed", c.seed, "synth");
  cfg_detail::opt(j, "rig", c.rig, "synth");
}

/// Offline evaluation knobs. The Frechet embedding resizes each depth map to
/// embed x embed pixels and uses the flattened result as the feature vector.
struct EvalConfig {
  int frechet_embed = 8;

  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;

  void validate() const {
    if (frechet_embed < 1) throw InvalidInput("eval: frechet_embed must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const EvalConfig& c) {
  j = {{"frechet_embed", c.frechet_embed}};
}

inline void from_json(const nlohmann::json& j, EvalConfig& c) {
  c = EvalConfig{};
  cfg_detail::check_keys(j, {"frechet_embed"}, "eval");
  cfg_detail::opt(j, "frechet_embed", c.frechet_embed, "eval");
}

/// Everything a command needs, in one document.
struct RunConfig {
  DataConfig data{};
  train::PipelineConfig pipeline{};
  nn::GeneratorConfig generator{};
  nn::CriticConfig critic{};
  train::TrainConfig train{};
  SynthConfig synth{};
  EvalConfig eval{};

  friend bool operator==(const RunConfig&, const RunConfig&) = default;

  void validate() const {
    data.validate();
    pipeline.validate();
    generator.validate();
    critic.validate();
    train.validate();
    synth.validate();
    eval.validate();
    if (generator.num_classes != pipeline.num_classes ||
        critic.num_classes != pipeline.num_classes)
      throw InvalidInput("run config: generator, critic, and pipeline class counts must agree");
    if (generator.input_width != pipeline.crop_width() ||
        generator.input_height != pipeline.proj.height)
      throw InvalidInput("run config: generator input must match the cropped projection (" +
                         std::to_string(pipeline.crop_width()) + "x" +
                         std::to_string(pipeline.proj.height) + ")");
    if (generator.output_width != pipeline.cam_width ||
        generator.output_height != pipeline.cam_height)
      throw InvalidInput("run config: generator output must match the camera size");
    if (critic.input_width != pipeline.cam_width || critic.input_height != pipeline.cam_height)
      throw InvalidInput("run config: critic input must match the camera size");
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"data", c.data},       {"pipeline", c.pipeline}, {"generator", c.generator},
       {"critic", c.critic},   {"train", c.train},       {"synth", c.synth},
       {"eval", c.eval}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  c = RunConfig{};
  cfg_detail::check_keys(j, {"data", "pipeline", "generator", "critic", "train", "synth", "eval"},
                         "run config");
  cfg_detail::opt(j, "data", c.data, "run config");
  cfg_detail::opt(j, "pipeline", c.pipeline, "run config");
  cfg_detail::opt(j, "generator", c.generator, "run config");
  cfg_detail::opt(j, "critic", c.critic, "run config");
  cfg_detail::opt(j, "train", c.train, "run config");
  cfg_detail::opt(j, "synth", c.synth, "run config");
  cfg_detail::opt(j, "eval", c.eval, "run config");
}

/// FNV-1a over the canonical serialized form; names run directories.
inline std::string config_hash(const RunConfig& c) {
  const std::string s = nlohmann::json(c).dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  static const char* hex = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[i] = hex[h & 0xf];
  return out;
}

/// Reads and parses a config file. IO problems raise IoError; malformed JSON
/// raises IoError with the byte offset; unknown or ill-typed keys raise
/// InvalidInput naming the key. Semantic validation is the caller's job.
inline nlohmann::json load_config_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError(path + ": cannot open for reading");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(path + ": " + e.what(), static_cast<std::int64_t>(e.byte));
  }
  return j;
}

}  // namespace titan
