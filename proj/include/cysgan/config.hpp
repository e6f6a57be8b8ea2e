#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cysgan/augment.hpp"
#include "cysgan/bcd.hpp"
#include "cysgan/experiment.hpp"
#include "cysgan/infer.hpp"
#include "cysgan/phantom.hpp"
#include "cysgan/trainer.hpp"

namespace cysgan {

/// Optional on-disk inputs. Anything left unset falls back to the phantom
/// volumes written by `synth` under the output directory.
struct DataConfig {
  std::optional<VolumeSpec> x_image;
  std::optional<VolumeSpec> x_labels;
  std::optional<VolumeSpec> y_image;
  std::optional<VolumeSpec> y_labels;  ///< scoring only, never used for training
};

struct ExperimentConfig {
  std::filesystem::path output_dir = "runs/default";
  DataConfig data;
  PhantomConfig phantom;
  CodecParams codec;
  AugmentConfig augment;
  ModelConfig model;
  TrainConfig train;
  InferConfig infer;
  std::vector<BenchMethod> bench_methods = BenchConfig{}.methods;

  /// All per-section and cross-field checks; throws ValidationError.
  void validate() const;
  BenchConfig bench() const;
};

nlohmann::json to_json(const ExperimentConfig& config);
/// Strict: unknown keys and wrongly typed values raise ValidationError with the
/// dotted key path. Missing keys keep their defaults.
ExperimentConfig experiment_from_json(const nlohmann::json& doc);

/// Parses a YAML (or JSON, which is a YAML subset) file into a JSON document.
nlohmann::json load_config_document(const std::filesystem::path& path);
nlohmann::json parse_yaml(const std::string& text);

/// Applies `a.b.c=value`; the value is read as a YAML scalar or flow sequence.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Defaults, then the file (if any), then overrides, then validation.
ExperimentConfig resolve_config(const std::optional<std::filesystem::path>& file,
                                const std::vector<std::string>& overrides);

/// 16 hex digits identifying a resolved configuration and the code version.
std::string config_hash(const ExperimentConfig& config);

extern const char* const kVersion;

}  // namespace cysgan
