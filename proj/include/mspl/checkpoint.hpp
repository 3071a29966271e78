#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mspl/model.hpp"

namespace mspl {

// Checkpoint container: magic "MSPL", format version, length-prefixed config
// JSON, then tensors in lexicographic name order as
//   name_len u32 | name | ndims u32 | dims u32[] | row-major f32 payload
// all little-endian. Round trips are bit-exact.

constexpr uint32_t kCheckpointVersion = 1;

void save_text_checkpoint(const std::string& path, const TextLm<float>& m);
void save_split_checkpoint(const std::string& path, const SplitLm<float>& m);

// Peeks at the config without loading tensors ("text" or "split").
std::string checkpoint_kind(const std::string& path);

TextLm<float> load_text_checkpoint(const std::string& path);
SplitLm<float> load_split_checkpoint(const std::string& path);

std::string model_config_json(const ModelConfig& cfg);
std::string text_config_json(const TextLmConfig& cfg);

}  // namespace mspl
