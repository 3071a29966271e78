#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "mspl/corpus.hpp"
#include "mspl/model.hpp"
#include "mspl/schedule.hpp"

namespace mspl::cli {

// Single JSON config covering every subcommand. Defaults are merged with the
// user file, then with --set overrides; unknown keys are rejected.
nlohmann::ordered_json default_config();

nlohmann::ordered_json load_config(const std::string& config_path,
                                   const std::vector<std::string>& overrides,
                                   uint64_t seed_override, int threads_override);

ModelConfig model_config(const nlohmann::ordered_json& cfg);
data::CorpusSpec corpus_spec(const nlohmann::ordered_json& cfg);

// Cosine schedule for one stage; total defaults to the stage step count.
CosineScheduleParams stage_schedule(const nlohmann::ordered_json& cfg, const std::string& stage,
                                    int64_t total_steps);
LayerwiseScheduleParams layerwise_params(const nlohmann::ordered_json& cfg);

}  // namespace mspl::cli
