#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mspl/common.hpp"
#include "mspl/param.hpp"

namespace mspl {

// Per-layer delayed warmup-cosine family. Layer i stays at zero until its
// start delay d_i = (N-1-i)*k, warms up linearly for w steps, then cosine-
// decays so that every layer reaches eta_min = 0.1*eta_max at global step T.
struct LayerwiseScheduleParams {
  int layers = 0;            // N
  int64_t delay = 0;         // k, per-layer delay in steps
  int64_t warmup = 0;        // w
  int64_t total = 0;         // T
  double eta_max = 0.0;
  double final_ratio = 0.1;  // r

  void validate() const {
    MSPL_CHECK(layers > 0, "layerwise schedule: layers must be positive");
    MSPL_CHECK(delay > 0 && warmup > 0 && total > 0,
               "layerwise schedule: counts must be positive");
    MSPL_CHECK(eta_max > 0.0, "layerwise schedule: eta_max must be positive");
    MSPL_CHECK(total > int64_t(layers - 1) * delay + warmup,
               "layerwise schedule: total step T=", total,
               " must exceed (N-1)*k+w=", int64_t(layers - 1) * delay + warmup);
  }

  int64_t start_delay(int layer) const { return int64_t(layers - 1 - layer) * delay; }
  int64_t decay_span(int layer) const { return total - start_delay(layer) - warmup; }
  double eta_min() const { return final_ratio * eta_max; }
};

inline double layerwise_lr(const LayerwiseScheduleParams& p, int layer, int64_t step) {
  p.validate();
  MSPL_CHECK(layer >= 0 && layer < p.layers, "layerwise_lr: layer ", layer,
             " out of range [0,", p.layers, ")");
  MSPL_CHECK(step >= 0, "layerwise_lr: negative step");
  const int64_t u = step - p.start_delay(layer);
  if (u < 0) {
    return 0.0;
  }
  if (u < p.warmup) {
    return p.eta_max * (double(u) / double(p.warmup));
  }
  const int64_t span = p.decay_span(layer);
  if (u > p.warmup + span) {
    return p.eta_min();
  }
  // Convex combination keeps both branch boundaries exact.
  const double c = 0.5 * (1.0 + std::cos(M_PI * double(u - p.warmup) / double(span)));
  return p.eta_min() * (1.0 - c) + p.eta_max * c;
}

// Global schedule: linear warmup 0 -> eta_start, cosine decay to eta_end,
// constant afterwards.
struct CosineScheduleParams {
  double eta_start = 0.0;
  double eta_end = 0.0;
  int64_t warmup = 0;
  int64_t total = 0;

  void validate() const {
    MSPL_CHECK(total > warmup && warmup >= 0, "cosine schedule: need total > warmup >= 0");
    MSPL_CHECK(eta_end <= eta_start, "cosine schedule: eta_end must not exceed eta_start");
    MSPL_CHECK(eta_start > 0.0, "cosine schedule: eta_start must be positive");
  }
};

inline double cosine_lr(const CosineScheduleParams& p, int64_t step) {
  p.validate();
  MSPL_CHECK(step >= 0, "cosine_lr: negative step");
  if (step < p.warmup) {
    return p.eta_start * (double(step) / double(p.warmup));
  }
  if (step >= p.total) {
    return p.eta_end;
  }
  const double c =
      0.5 * (1.0 + std::cos(M_PI * double(step - p.warmup) / double(p.total - p.warmup)));
  return p.eta_end * (1.0 - c) + p.eta_start * c;
}

enum class Stage : uint8_t {
  Stage1,           // speech components only, text backbone frozen
  Stage2Full,       // everything unfrozen
  Stage2Shared,     // shared trunk + speech components
  Stage2Layerwise,  // shared trunk on the per-layer delayed schedule
  NoFreeze,         // joint training from the start
  Sft,
};

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::Stage1: return "stage1";
    case Stage::Stage2Full: return "stage2-full";
    case Stage::Stage2Shared: return "stage2-shared";
    case Stage::Stage2Layerwise: return "stage2-layerwise";
    case Stage::NoFreeze: return "nf";
    case Stage::Sft: return "sft";
  }
  return "?";
}

inline std::optional<Stage> stage_from_name(const std::string& s) {
  for (Stage st : {Stage::Stage1, Stage::Stage2Full, Stage::Stage2Shared,
                   Stage::Stage2Layerwise, Stage::NoFreeze, Stage::Sft}) {
    if (s == stage_name(st)) {
      return st;
    }
  }
  return std::nullopt;
}

namespace detail {

enum class TensorRole { TextSpecific, Shared, Speech };

// Resolves a split-model tensor name; aborts on anything unrecognized.
inline TensorRole tensor_role(const std::string& name, int* shared_index) {
  auto starts = [&](const char* prefix) { return name.rfind(prefix, 0) == 0; };
  if (name == "text_embed" || name == "pos_embed" || name == "text_head" ||
      starts("text_branch.")) {
    return TensorRole::TextSpecific;
  }
  if (name == "speech_embed" || name == "speech_head" || starts("speech_branch.")) {
    return TensorRole::Speech;
  }
  if (starts("shared.")) {
    const size_t dot = name.find('.', 7);
    MSPL_CHECK(dot != std::string::npos, "malformed shared tensor name: ", name);
    *shared_index = std::stoi(name.substr(7, dot - 7));
    return TensorRole::Shared;
  }
  contract_fail("unknown tensor name: ", name);
}

}  // namespace detail

struct FreezePlan {
  Stage stage = Stage::Stage1;

  bool trainable_for(const std::string& name) const {
    int idx = 0;
    const auto role = detail::tensor_role(name, &idx);
    switch (stage) {
      case Stage::Stage2Full:
      case Stage::NoFreeze:
      case Stage::Sft:
        return true;
      case Stage::Stage1:
        return role == detail::TensorRole::Speech;
      case Stage::Stage2Shared:
      case Stage::Stage2Layerwise:
        return role != detail::TensorRole::TextSpecific;
    }
    return false;
  }
};

// Sets trainable flags for the plan and returns this step's per-tensor
// learning rate (0 for frozen tensors). Stage2Layerwise puts shared block b
// on layerwise_lr(i=b); everything else trainable follows the global
// schedule.
template <class T>
std::vector<double> apply_plan(ParamStore<T>& store, const FreezePlan& plan, int64_t step,
                               const CosineScheduleParams& global,
                               const LayerwiseScheduleParams* layerwise = nullptr) {
  if (plan.stage == Stage::Stage2Layerwise) {
    MSPL_CHECK(layerwise != nullptr, "layerwise stage requires schedule params");
  }
  std::vector<double> lrs(store.size(), 0.0);
  for (size_t i = 0; i < store.size(); ++i) {
    ParamTensor<T>& t = store[i];
    const bool on = plan.trainable_for(t.name);
    t.set_trainable(on);
    if (!on) {
      continue;
    }
    int block = 0;
    const auto role = detail::tensor_role(t.name, &block);
    if (plan.stage == Stage::Stage2Layerwise && role == detail::TensorRole::Shared) {
      lrs[i] = layerwise_lr(*layerwise, block, step);
    } else {
      lrs[i] = cosine_lr(global, step);
    }
  }
  return lrs;
}

}  // namespace mspl
