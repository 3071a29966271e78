#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mspl/adamw.hpp"
#include "mspl/model.hpp"
#include "mspl/rng.hpp"
#include "mspl/schedule.hpp"

using namespace mspl;

namespace {

// Independent transcription of the per-layer delayed warmup-cosine curve,
// deliberately coded in a different style (long double, literal formula).
long double schedule_oracle(int n_layers, long long k, long long w, long long total,
                            long double eta_max, int layer, long long step) {
  const long double d = (long double)(n_layers - 1 - layer) * (long double)k;
  const long double span = (long double)total - d - (long double)w;
  const long double eta_min = 0.1L * eta_max;
  const long double u = (long double)step - d;
  if (u < 0.0L) {
    return 0.0L;
  }
  if (u < (long double)w) {
    return eta_max * u / (long double)w;
  }
  if (u <= (long double)w + span) {
    return eta_min +
           (eta_max - eta_min) / 2.0L *
               (1.0L + cosl((long double)M_PI * (u - (long double)w) / span));
  }
  return eta_min;
}

LayerwiseScheduleParams toy_params() {
  LayerwiseScheduleParams p;
  p.layers = 4;
  p.delay = 10;
  p.warmup = 4;
  p.total = 50;
  p.eta_max = 1.0;
  return p;
}

}  // namespace

TEST_CASE("layerwise: paper-scale delays keep early layers at zero") {
  LayerwiseScheduleParams p;
  p.layers = 32;
  p.delay = 5000;
  p.warmup = 2000;
  p.total = 200000;
  p.eta_max = 6e-5;
  CHECK(p.start_delay(0) == 155000);
  CHECK(layerwise_lr(p, 0, 154999) == 0.0);
  CHECK(layerwise_lr(p, 0, 0) == 0.0);
}

TEST_CASE("layerwise: boundary identities hold exactly") {
  auto p = toy_params();
  for (int i = 0; i < p.layers; ++i) {
    const int64_t d = p.start_delay(i);
    CHECK(layerwise_lr(p, i, d) == 0.0);
    CHECK(layerwise_lr(p, i, d + p.warmup) == p.eta_max);
    CHECK(layerwise_lr(p, i, d + p.warmup + p.decay_span(i)) == 0.1 * p.eta_max);
    CHECK(layerwise_lr(p, i, d + p.warmup + p.decay_span(i) + 1000) == 0.1 * p.eta_max);
  }
}

TEST_CASE("layerwise: full table matches the independent transcription") {
  auto p = toy_params();
  for (int i = 0; i < p.layers; ++i) {
    for (long long s = 0; s <= 60; ++s) {
      const double got = layerwise_lr(p, i, s);
      const double want = double(schedule_oracle(p.layers, p.delay, p.warmup, p.total,
                                                 (long double)p.eta_max, i, s));
      CHECK(std::abs(got - want) <= 1e-12);
    }
  }
}

TEST_CASE("layerwise: random probes match the transcription within 1e-12") {
  LayerwiseScheduleParams p;
  p.layers = 8;
  p.delay = 37;
  p.warmup = 11;
  p.total = 420;
  p.eta_max = 4e-4;
  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const int i = rng.range(0, p.layers - 1);
    const long long s = rng.range(0, 600);
    const double got = layerwise_lr(p, i, s);
    const double want = double(
        schedule_oracle(p.layers, p.delay, p.warmup, p.total, (long double)p.eta_max, i, s));
    CHECK(std::abs(got - want) <= 1e-12);
  }
}

TEST_CASE("layerwise: start delays strictly decrease with layer index") {
  auto p = toy_params();
  for (int i = 0; i + 1 < p.layers; ++i) {
    CHECK(p.start_delay(i) > p.start_delay(i + 1));
  }
}

TEST_CASE("layerwise: continuous at branch boundaries, bounded, nonincreasing after warmup") {
  auto p = toy_params();
  for (int i = 0; i < p.layers; ++i) {
    const int64_t d = p.start_delay(i);
    const int64_t span = p.decay_span(i);
    // One-step continuity around the two analytic joints.
    CHECK(std::abs(layerwise_lr(p, i, d + p.warmup) - layerwise_lr(p, i, d + p.warmup - 1)) <=
          p.eta_max / double(p.warmup) + 1e-12);
    double prev = layerwise_lr(p, i, d + p.warmup);
    for (int64_t s = d + p.warmup; s <= d + p.warmup + span + 5; ++s) {
      const double lr = layerwise_lr(p, i, s);
      CHECK(lr >= 0.0);
      CHECK(lr <= p.eta_max);
      CHECK(lr <= prev + 1e-15);
      prev = lr;
    }
  }
}

TEST_CASE("layerwise: invariant-violating params are rejected") {
  auto p = toy_params();
  p.total = 34;  // == (N-1)*k + w, must be strictly greater
  CHECK_THROWS_AS(layerwise_lr(p, 0, 0), ContractError);
  p = toy_params();
  p.delay = 0;
  CHECK_THROWS_AS(layerwise_lr(p, 0, 0), ContractError);
}

TEST_CASE("cosine: endpoint and midpoint identities") {
  CosineScheduleParams p;
  p.eta_start = 6e-5;
  p.eta_end = 6e-6;
  p.warmup = 10;
  p.total = 1010;
  CHECK(cosine_lr(p, p.warmup) == p.eta_start);
  CHECK(cosine_lr(p, p.total) == p.eta_end);
  CHECK(cosine_lr(p, p.total + 500) == p.eta_end);
  CHECK(cosine_lr(p, 0) == 0.0);
  const int64_t mid = p.warmup + (p.total - p.warmup) / 2;
  CHECK(std::abs(cosine_lr(p, mid) - (p.eta_start + p.eta_end) / 2.0) <= 1e-12);
  CHECK_THROWS_AS(cosine_lr(p, -1), ContractError);
}

// ---------------------------------------------------------------------------
// Freeze plans on a real split model.

namespace {

SplitLm<float> tiny_split() {
  TextLmConfig base_cfg;
  base_cfg.d_model = 8;
  base_cfg.n_heads = 2;
  base_cfg.d_ff = 16;
  base_cfg.n_blocks = 4;
  base_cfg.vocab = 16;
  base_cfg.max_seq = 16;
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.n_shared = 3;
  cfg.n_branch = 1;
  cfg.text_vocab = 16;
  cfg.speech_vocab = 20;
  cfg.max_seq = 16;
  return build_split_model(TextLm<float>::init(base_cfg, 1), cfg, 2);
}

bool is_speech_component(const std::string& name) {
  return name == "speech_embed" || name == "speech_head" ||
         name.rfind("speech_branch.", 0) == 0;
}

}  // namespace

TEST_CASE("apply_plan: stage 1 trains exactly the speech components") {
  auto m = tiny_split();
  CosineScheduleParams global{4e-4, 4e-5, 2, 100};
  auto lrs = apply_plan(m.params, FreezePlan{Stage::Stage1}, 50, global);
  for (size_t i = 0; i < m.params.size(); ++i) {
    const auto& t = m.params[i];
    CHECK(t.trainable == is_speech_component(t.name));
    if (t.trainable) {
      CHECK(lrs[i] == cosine_lr(global, 50));
      CHECK(t.moment1.size() == t.value.size());
    } else {
      CHECK(lrs[i] == 0.0);
      CHECK(t.moment1.size() == 0);  // state only while trainable
    }
  }
}

TEST_CASE("apply_plan: stage 2 shared keeps text-specific tensors frozen") {
  auto m = tiny_split();
  CosineScheduleParams global{6e-5, 6e-6, 2, 100};
  apply_plan(m.params, FreezePlan{Stage::Stage2Shared}, 10, global);
  CHECK_FALSE(m.params.at("text_embed").trainable);
  CHECK_FALSE(m.params.at("text_head").trainable);
  CHECK_FALSE(m.params.at("text_branch.0.attn.wq").trainable);
  CHECK_FALSE(m.params.at("text_branch.final_ln.gain").trainable);
  CHECK_FALSE(m.params.at("pos_embed").trainable);
  CHECK(m.params.at("shared.0.attn.wq").trainable);
  CHECK(m.params.at("shared.2.ffn.w2").trainable);
  CHECK(m.params.at("speech_head").trainable);
}

TEST_CASE("apply_plan: stage 2 full and nf unfreeze everything") {
  auto m = tiny_split();
  CosineScheduleParams global{6e-5, 6e-6, 2, 100};
  for (Stage s : {Stage::Stage2Full, Stage::NoFreeze, Stage::Sft}) {
    auto lrs = apply_plan(m.params, FreezePlan{s}, 10, global);
    for (size_t i = 0; i < m.params.size(); ++i) {
      CHECK(m.params[i].trainable);
      CHECK(lrs[i] == cosine_lr(global, 10));
    }
  }
}

TEST_CASE("apply_plan: layerwise stage schedules shared blocks individually") {
  auto m = tiny_split();
  CosineScheduleParams global{6e-5, 6e-6, 1, 1000};
  LayerwiseScheduleParams lw;
  lw.layers = 3;  // matches n_shared
  lw.delay = 10;
  lw.warmup = 5;
  lw.total = 60;
  lw.eta_max = 1e-4;

  // Warmup has begun for the last shared block only.
  auto lrs = apply_plan(m.params, FreezePlan{Stage::Stage2Layerwise}, 1, global, &lw);
  for (size_t i = 0; i < m.params.size(); ++i) {
    const auto& t = m.params[i];
    if (t.name.rfind("shared.", 0) == 0) {
      if (t.name.rfind("shared.2.", 0) == 0) {
        CHECK(lrs[i] == doctest::Approx(lw.eta_max / 5.0).epsilon(1e-12));
      } else {
        CHECK(lrs[i] == 0.0);
      }
      CHECK(t.trainable);
    } else if (is_speech_component(t.name)) {
      CHECK(lrs[i] == cosine_lr(global, 1));
    } else {
      CHECK_FALSE(t.trainable);
      CHECK(lrs[i] == 0.0);
    }
  }

  // Block 0 starts last: zero until its delay (N-1)*k has elapsed.
  for (int64_t s : {0, 5, 19}) {
    auto lr2 = apply_plan(m.params, FreezePlan{Stage::Stage2Layerwise}, s, global, &lw);
    for (size_t i = 0; i < m.params.size(); ++i) {
      if (m.params[i].name.rfind("shared.0.", 0) == 0) {
        CHECK(lr2[i] == 0.0);
      }
    }
  }
}

TEST_CASE("apply_plan: unknown tensor names abort") {
  ParamStore<float> store;
  store.add("mystery.weight", 2, 2, Group::TextBackbone);
  CosineScheduleParams global{1e-4, 1e-5, 2, 100};
  CHECK_THROWS_AS(apply_plan(store, FreezePlan{Stage::Stage2Full}, 0, global), ContractError);
}

TEST_CASE("freezing via trainable=false matches lr=0 byte for byte") {
  auto run = [](bool use_flag) {
    auto m = tiny_split();
    ParamTensor<float>& w = m.params.at("shared.1.attn.wq");
    Rng rng(5);
    const Mat<float> fixed_grad = Mat<float>::randn(w.value.rows, w.value.cols, 1.0f, rng);
    // Phase 1: frozen (either mechanism), phase 2: training.
    if (use_flag) {
      w.set_trainable(false);
    }
    for (int s = 0; s < 3; ++s) {
      w.grad = fixed_grad;
      adamw_step(w, use_flag ? 1e-3 : 0.0);
    }
    w.set_trainable(true);
    for (int s = 0; s < 3; ++s) {
      w.grad = fixed_grad;
      adamw_step(w, 1e-3);
    }
    return w.value;
  };
  CHECK(run(true).bytes_equal(run(false)));
}
