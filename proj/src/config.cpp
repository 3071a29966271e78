#include "mspl/config.hpp"

#include <fstream>

namespace mspl::cli {

nlohmann::ordered_json default_config() {
  return nlohmann::ordered_json{
      {"seed", 1},
      {"threads", 1},
      {"model",
       {{"d_model", 128},
        {"n_heads", 4},
        {"d_ff", 512},
        {"n_shared", 8},
        {"n_branch", 2},
        {"text_vocab", 256},
        {"speech_vocab", 512},
        {"max_seq", 512}}},
      {"corpus",
       {{"transition_temperature", 0.3},
        {"noise_prob", 0.0},
        {"expand_min", 2},
        {"expand_max", 4},
        {"n_interleaved", 2000},
        {"n_unsup", 500},
        {"n_text", 1000},
        {"n_sft", 500},
        {"sample_len", 48},
        {"min_chunk", 6},
        {"max_chunk", 12},
        {"sft_question_len", 8},
        {"sft_answer_len", 10},
        {"sft_mix", {0.25, 0.25, 0.25, 0.25}},
        {"wer_threshold", 0.2}}},
      {"schedule",
       {{"base", {{"eta_start", 1e-3}, {"eta_end", 1e-4}, {"warmup_frac", 0.01}}},
        {"stage1", {{"eta_start", 4e-4}, {"eta_end", 4e-5}, {"warmup_frac", 0.01}}},
        {"stage2", {{"eta_start", 6e-5}, {"eta_end", 6e-6}, {"warmup_frac", 0.01}}},
        {"sft", {{"eta_start", 1e-5}, {"eta_end", 1e-6}, {"warmup_frac", 0.01}}},
        {"layerwise",
         {{"N", 8}, {"k", 400}, {"w", 200}, {"T", 4000}, {"eta_max", 6e-5}}}}},
      {"train",
       {{"batch", 32},
        {"max_tokens", 256},
        {"stage0_steps", 3000},
        {"stage1_steps", 2000},
        {"stage2_steps", 4000},
        {"sft_steps", 1000},
        {"text_mix", 0.1},
        {"eval_cadence", 0}}},
      {"eval",
       {{"n_items", 1000}, {"prefix_len", 6}, {"cont_len", 4}, {"n_probes", 100},
        {"probe_len", 32}}},
      {"ablate", {{"steps1", 150}, {"steps2", 250}, {"n_eval", 200}}},
      {"analysis", {{"n_samples", 5}, {"sample_len", 24}}},
  };
}

namespace {

// Every user key must exist in the defaults with a compatible shape.
void check_known(const nlohmann::ordered_json& defaults, const nlohmann::ordered_json& user,
                 const std::string& prefix) {
  for (const auto& [key, value] : user.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    MSPL_CHECK(defaults.contains(key), "config: unknown key '", path, "'");
    const auto& dv = defaults.at(key);
    if (dv.is_object()) {
      MSPL_CHECK(value.is_object(), "config: key '", path, "' must be an object");
      check_known(dv, value, path);
    } else if (dv.is_array()) {
      MSPL_CHECK(value.is_array(), "config: key '", path, "' must be an array");
    } else if (dv.is_number() || dv.is_boolean()) {
      MSPL_CHECK(value.is_number() || value.is_boolean(), "config: key '", path,
                 "' must be numeric");
    } else {
      MSPL_CHECK(value.is_string(), "config: key '", path, "' must be a string");
    }
  }
}

void merge_into(nlohmann::ordered_json& dst, const nlohmann::ordered_json& src) {
  for (const auto& [key, value] : src.items()) {
    if (value.is_object() && dst.contains(key) && dst.at(key).is_object()) {
      merge_into(dst.at(key), value);
    } else {
      dst[key] = value;
    }
  }
}

void apply_override(nlohmann::ordered_json& cfg, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  MSPL_CHECK(eq != std::string::npos && eq > 0, "config: --set expects key=value, got '",
             assignment, "'");
  const std::string key_path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);

  // Walk the dotted path, validating against the defaults tree.
  nlohmann::ordered_json* node = &cfg;
  const nlohmann::ordered_json defaults = default_config();
  const nlohmann::ordered_json* def_node = &defaults;
  size_t pos = 0;
  while (true) {
    const size_t dot = key_path.find('.', pos);
    const std::string key = key_path.substr(pos, dot == std::string::npos ? dot : dot - pos);
    MSPL_CHECK(def_node->contains(key), "config: unknown key '", key_path, "'");
    def_node = &def_node->at(key);
    node = &(*node)[key];
    if (dot == std::string::npos) {
      break;
    }
    MSPL_CHECK(def_node->is_object(), "config: '", key_path, "' descends into a scalar");
    pos = dot + 1;
  }
  MSPL_CHECK(!def_node->is_object(), "config: cannot --set object key '", key_path, "'");

  auto parsed = nlohmann::ordered_json::parse(raw, nullptr, false);
  *node = parsed.is_discarded() ? nlohmann::ordered_json(raw) : parsed;
}

}  // namespace

nlohmann::ordered_json load_config(const std::string& config_path,
                                   const std::vector<std::string>& overrides,
                                   uint64_t seed_override, int threads_override) {
  nlohmann::ordered_json cfg = default_config();
  if (!config_path.empty()) {
    std::ifstream is(config_path);
    MSPL_CHECK_IO(is.is_open(), "config: cannot open ", config_path);
    auto user = nlohmann::ordered_json::parse(is, nullptr, false);
    MSPL_CHECK_IO(!user.is_discarded() && user.is_object(), "config: malformed JSON in ",
                  config_path);
    check_known(cfg, user, "");
    merge_into(cfg, user);
  }
  for (const std::string& assignment : overrides) {
    apply_override(cfg, assignment);
  }
  if (seed_override != 0) {
    cfg["seed"] = seed_override;
  }
  if (threads_override > 0) {
    cfg["threads"] = threads_override;
  }
  return cfg;
}

ModelConfig model_config(const nlohmann::ordered_json& cfg) {
  const auto& m = cfg.at("model");
  ModelConfig out;
  out.d_model = m.at("d_model").get<int>();
  out.n_heads = m.at("n_heads").get<int>();
  out.d_ff = m.at("d_ff").get<int>();
  out.n_shared = m.at("n_shared").get<int>();
  out.n_branch = m.at("n_branch").get<int>();
  out.text_vocab = m.at("text_vocab").get<int>();
  out.speech_vocab = m.at("speech_vocab").get<int>();
  out.max_seq = m.at("max_seq").get<int>();
  out.validate();
  return out;
}

data::CorpusSpec corpus_spec(const nlohmann::ordered_json& cfg) {
  const auto& c = cfg.at("corpus");
  data::CorpusSpec spec;
  spec.text_vocab = cfg.at("model").at("text_vocab").get<int>();
  spec.speech_vocab = cfg.at("model").at("speech_vocab").get<int>();
  spec.transition_temperature = c.at("transition_temperature").get<double>();
  spec.noise_prob = c.at("noise_prob").get<double>();
  spec.seed = cfg.at("seed").get<uint64_t>();
  spec.expand_min = c.at("expand_min").get<int>();
  spec.expand_max = c.at("expand_max").get<int>();
  spec.validate();
  return spec;
}

CosineScheduleParams stage_schedule(const nlohmann::ordered_json& cfg, const std::string& stage,
                                    int64_t total_steps) {
  const auto& s = cfg.at("schedule").at(stage);
  CosineScheduleParams out;
  out.eta_start = s.at("eta_start").get<double>();
  out.eta_end = s.at("eta_end").get<double>();
  out.total = total_steps;
  out.warmup = int64_t(s.at("warmup_frac").get<double>() * double(total_steps));
  if (out.warmup >= out.total) {
    out.warmup = out.total - 1;
  }
  out.validate();
  return out;
}

LayerwiseScheduleParams layerwise_params(const nlohmann::ordered_json& cfg) {
  const auto& s = cfg.at("schedule").at("layerwise");
  LayerwiseScheduleParams out;
  out.layers = s.at("N").get<int>();
  out.delay = s.at("k").get<int64_t>();
  out.warmup = s.at("w").get<int64_t>();
  out.total = s.at("T").get<int64_t>();
  out.eta_max = s.at("eta_max").get<double>();
  out.validate();
  return out;
}

}  // namespace mspl::cli
