#pragma once

#include <string>

#include <json.hpp>

#include "grpg/adapter.hpp"
#include "grpg/metrics.hpp"
#include "grpg/surrogate.hpp"
#include "grpg/synthetic.hpp"
#include "grpg/train.hpp"

namespace grpg {

// Evaluation-side knobs that sit outside the core structs.
struct EvalSettings {
  EvalConfig eval;
  double provider_noise = 0.05;
  double scene_noise = 0.05;
  int seeds = 5;
};

// One document covering every tunable named in the defaults; unknown keys
// are rejected, partial documents override the defaults.
struct RunConfig {
  CorpusSpec corpus;
  SurrogateConfig surrogate;
  AdapterConfig adapter;
  TrainConfig train;
  EvalSettings eval;

  static RunConfig defaults();
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig from_file(const std::string& path);
  nlohmann::json to_json() const;
  uint64_t hash() const;  // FNV-1a over the canonical serialization
  void validate() const;  // cross-section consistency
};

nlohmann::json surrogate_cfg_to_json(const SurrogateConfig& c);
SurrogateConfig surrogate_cfg_from_json(const nlohmann::json& j);
nlohmann::json adapter_cfg_to_json(const AdapterConfig& c);
AdapterConfig adapter_cfg_from_json(const nlohmann::json& j);

}  // namespace grpg
