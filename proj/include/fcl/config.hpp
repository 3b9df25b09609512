#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "fcl/baselines.hpp"
#include "fcl/continual.hpp"
#include "fcl/model.hpp"
#include "fcl/taskgen.hpp"
#include "fcl/training.hpp"

namespace fcl {

using Json = nlohmann::ordered_json;

// Everything a run depends on. The master seed fans out to every component
// seed through derive_seed, so a RunConfig plus the code version pins a run.
struct RunConfig {
    SuiteConfig suite;
    ModelConfig model;
    TrainOptions pretrain = default_pretraining();
    StreamSchedule schedule;
    SwadtConfig swadt;
    std::string method = "centralized";
    std::string output_dir = "runs";
    std::uint64_t seed = 1;

    static TrainOptions default_pretraining();
    // Overwrites every component seed from the master seed.
    void apply_master_seed();
    void validate() const;
};

Json to_json(const ModelConfig& c);
Json to_json(const LoraConfig& c);
Json to_json(const SgdConfig& c);
Json to_json(const TrainOptions& c);
Json to_json(const SuiteConfig& c);
Json to_json(const StreamSchedule& c);
Json to_json(const SwadtConfig& c);
Json to_json(const RunConfig& c);

// Missing keys keep their defaults; unknown keys and wrong types are
// ConfigErrors.
ModelConfig model_config_from_json(const Json& j);
LoraConfig lora_config_from_json(const Json& j);
SgdConfig sgd_config_from_json(const Json& j);
TrainOptions train_options_from_json(const Json& j, TrainOptions defaults);
SuiteConfig suite_config_from_json(const Json& j);
StreamSchedule schedule_from_json(const Json& j);
SwadtConfig swadt_config_from_json(const Json& j);
RunConfig run_config_from_json(const Json& j);

// Parses and validates; the master seed is applied unless the file pins
// component seeds explicitly under "seeds": "explicit".
RunConfig load_run_config(const std::filesystem::path& path);

std::string schedule_json(const StreamSchedule& schedule);

}  // namespace fcl
