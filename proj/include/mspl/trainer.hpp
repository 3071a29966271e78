#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mspl/adamw.hpp"
#include "mspl/corpus.hpp"
#include "mspl/model.hpp"
#include "mspl/schedule.hpp"

namespace mspl::train {

struct TrainSchedules {
  CosineScheduleParams global;
  std::optional<LayerwiseScheduleParams> layerwise;
};

struct StageCorpora {
  std::vector<data::Record> main;
  std::vector<data::Record> text;  // text-only mix-in
  double text_mix = 0.0;           // fraction of batches drawn from `text`
};

struct TrainOptions {
  int batch = 8;
  int max_tokens = 160;
  uint64_t seed = 1;
  AdamwParams adamw;
};

// Append-only per-step metrics: step,group,lr,loss_text,loss_speech.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path);
  ~MetricsWriter();
  void row(int64_t step, const std::string& group, double lr, double loss_text,
           double loss_speech);

 private:
  struct Impl;
  Impl* impl_;
};

// Token stream for one record: BOS + chunks + EOS for pretraining kinds,
// the rendered sides as-is for SFT (which supervises the answer only).
// Returns nothing when truncation leaves no supervised position.
std::optional<SequenceBatch> record_to_batch(const data::Record& record, int max_tokens);

// Merged-vocabulary id stream for the no-split baseline; same layout.
struct MergedSequence {
  std::vector<int> ids;
  size_t supervise_from = 0;
};
std::optional<MergedSequence> record_to_merged(const data::Record& record, int text_vocab,
                                               int max_tokens);

struct StageResult {
  int64_t steps = 0;
  double first_loss = 0.0;
  double final_loss = 0.0;
};

// One freezing stage over a split model. The schedule is indexed by
// first_step + i so stages can be resumed or chained.
StageResult run_stage(SplitLm<float>& model, const FreezePlan& plan, int64_t steps,
                      const StageCorpora& corpora, const TrainSchedules& schedules,
                      const TrainOptions& opts, MetricsWriter* metrics = nullptr,
                      std::ostream* log = nullptr, int64_t first_step = 0);

// Plain LM loop shared by base pretraining and the merged no-split baseline.
// merge_text_vocab < 0 trains on raw text ids, otherwise tokens are mapped
// into the merged vocabulary.
StageResult run_lm_stage(TextLm<float>& model, int64_t steps, const StageCorpora& corpora,
                         const CosineScheduleParams& schedule, const TrainOptions& opts,
                         int merge_text_vocab = -1, MetricsWriter* metrics = nullptr,
                         std::ostream* log = nullptr, int64_t first_step = 0);

// ---------------------------------------------------------------------------
// Evaluation.

struct EvalItem {
  std::vector<Token> prefix;  // BOS-prefixed
  std::vector<Token> truth;
  std::vector<Token> distractor;
  Modality modality = Modality::Text;
};

// Ranked-continuation items: the distractor resamples the continuation from a
// different chain state; speech items are rendered noise-free and length-
// matched to their truth.
std::vector<EvalItem> make_eval_set(const data::Language& lang, int n_items, Modality modality,
                                    int prefix_len, int cont_len, Rng& rng);

// Length-normalized log-probability of each row's target (rows are logits).
double masked_mean_logprob(const Matd& logit_rows, const std::vector<int>& targets);

struct RankedResult {
  double accuracy = 0.0;  // ties count 0.5
  int used = 0;
  int skipped = 0;
};

RankedResult ranked_accuracy(SplitLm<float>& model, const std::vector<EvalItem>& items);
RankedResult ranked_accuracy(TextLm<float>& model, int text_vocab,
                             const std::vector<EvalItem>& items);

// BOS-prefixed text probe sequences.
std::vector<std::vector<int>> make_text_probes(const data::Language& lang, int n, int len,
                                               Rng& rng);

double text_perplexity(TextLm<float>& model, const std::vector<std::vector<int>>& probes);
double text_perplexity(SplitLm<float>& model, const std::vector<std::vector<int>>& probes);

struct PreservationReport {
  double max_abs_logit_diff = 0.0;
  double split_ppl = 0.0;
  double base_ppl = 0.0;
};

PreservationReport eval_preservation(SplitLm<float>& split, TextLm<float>& base,
                                     const std::vector<std::vector<int>>& probes);

// ---------------------------------------------------------------------------
// Pretraining-strategy ablation matrix.

enum class AblationConfig { FpFull, FpLayerwise, FpShared, Nf, NfNoSplit };

const char* ablation_name(AblationConfig c);
std::optional<AblationConfig> ablation_from_name(const std::string& name);

struct AblationRow {
  std::string name;
  bool ok = false;
  std::string note;
  double phase1_text_ppl_delta = 0.0;  // vs the base model, after the first phase
  double final_text_ppl_delta = 0.0;
  double speech_acc = 0.0;
  double text_acc = 0.0;
};

struct AblationSetup {
  const TextLm<float>* base = nullptr;
  ModelConfig split_cfg;
  uint64_t split_seed = 2;
  StageCorpora stage1_corpora;
  StageCorpora stage2_corpora;
  TrainSchedules stage1;
  TrainSchedules stage2;
  int64_t steps1 = 0;
  int64_t steps2 = 0;
  TrainOptions opts;
  std::vector<EvalItem> speech_eval;
  std::vector<EvalItem> text_eval;
  std::vector<std::vector<int>> probes;
};

std::vector<AblationRow> run_ablation(const AblationSetup& setup,
                                      const std::vector<AblationConfig>& configs,
                                      std::ostream* log = nullptr);

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path);
std::string format_ablation_table(const std::vector<AblationRow>& rows);

}  // namespace mspl::train
