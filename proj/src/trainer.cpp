#include "mspl/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include "mspl/graph.hpp"

namespace mspl::train {

namespace {

std::string fmt9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

}  // namespace

struct MetricsWriter::Impl {
  std::ofstream os;
};

MetricsWriter::MetricsWriter(const std::string& path) : impl_(new Impl) {
  impl_->os.open(path, std::ios::binary | std::ios::trunc);
  MSPL_CHECK_IO(impl_->os.is_open(), "metrics: cannot open for write: ", path);
  impl_->os << "step,group,lr,loss_text,loss_speech\n";
}

MetricsWriter::~MetricsWriter() { delete impl_; }

void MetricsWriter::row(int64_t step, const std::string& group, double lr, double loss_text,
                        double loss_speech) {
  impl_->os << step << "," << group << "," << fmt9(lr) << "," << fmt9(loss_text) << ","
            << fmt9(loss_speech) << "\n";
  MSPL_CHECK_IO(impl_->os.good(), "metrics: write failed");
}

std::optional<SequenceBatch> record_to_batch(const data::Record& record, int max_tokens) {
  MSPL_CHECK(max_tokens >= 2, "record_to_batch: max_tokens too small");
  std::vector<Token> tokens;
  size_t supervise_from = 0;
  if (record.kind == data::RecordKind::Sft) {
    MSPL_CHECK(record.chunks.size() == 2, "record_to_batch: sft record needs two chunks");
    for (const data::Chunk& c : record.chunks) {
      for (int id : c.ids) {
        tokens.push_back(Token{c.modality, id});
      }
    }
    supervise_from = record.chunks[0].ids.size() - 1;
  } else {
    MSPL_CHECK(!record.chunks.empty(), "record_to_batch: empty record");
    tokens.push_back(Token{record.chunks.front().modality, kBos});
    for (const data::Chunk& c : record.chunks) {
      for (int id : c.ids) {
        tokens.push_back(Token{c.modality, id});
      }
    }
    tokens.push_back(Token{record.chunks.back().modality, kEos});
  }
  if (int(tokens.size()) > max_tokens) {
    tokens.resize(size_t(max_tokens));
  }
  if (supervise_from + 1 >= tokens.size()) {
    return std::nullopt;
  }
  return make_lm_batch(std::move(tokens), supervise_from);
}

std::optional<MergedSequence> record_to_merged(const data::Record& record, int text_vocab,
                                               int max_tokens) {
  auto batch = record_to_batch(record, max_tokens);
  if (!batch) {
    return std::nullopt;
  }
  MergedSequence out;
  out.ids = merged_ids(text_vocab, batch->tokens);
  for (size_t p = 0; p < batch->loss_mask.size(); ++p) {
    if (batch->loss_mask[p]) {
      out.supervise_from = p;
      break;
    }
  }
  return out;
}

namespace {

// Deterministic epoch-shuffled iteration over record indices.
class Shuffler {
 public:
  Shuffler(size_t n, uint64_t seed, const char* name)
      : order_(n), seed_(seed), name_(name) {
    MSPL_CHECK(n > 0, "trainer: empty corpus '", name, "'");
    std::iota(order_.begin(), order_.end(), size_t(0));
    reshuffle();
  }

  size_t next(std::ostream* log) {
    if (pos_ == order_.size()) {
      ++epoch_;
      pos_ = 0;
      reshuffle();
      if (log != nullptr) {
        *log << "[epoch] corpus=" << name_ << " epoch=" << epoch_ << "\n";
      }
    }
    return order_[pos_++];
  }

 private:
  void reshuffle() {
    Rng rng = derived_rng(seed_, epoch_);
    rng.shuffle(order_);
  }

  std::vector<size_t> order_;
  uint64_t seed_;
  const char* name_;
  size_t pos_ = 0;
  uint64_t epoch_ = 0;
};

double lr_of(const ParamStore<float>& store, const std::vector<double>& lrs,
             const std::string& name) {
  return lrs[store.index_of(name)];
}

struct StepStats {
  double text_sum = 0.0;
  double speech_sum = 0.0;
  int64_t text_count = 0;
  int64_t speech_count = 0;

  double loss_text() const { return text_count > 0 ? text_sum / double(text_count) : kNan; }
  double loss_speech() const {
    return speech_count > 0 ? speech_sum / double(speech_count) : kNan;
  }
  double loss() const {
    return (text_count + speech_count) > 0
               ? (text_sum + speech_sum) / double(text_count + speech_count)
               : kNan;
  }
};

}  // namespace

StageResult run_stage(SplitLm<float>& model, const FreezePlan& plan, int64_t steps,
                      const StageCorpora& corpora, const TrainSchedules& schedules,
                      const TrainOptions& opts, MetricsWriter* metrics, std::ostream* log,
                      int64_t first_step) {
  MSPL_CHECK(steps >= 1, "run_stage: steps must be positive");
  MSPL_CHECK(opts.batch >= 1, "run_stage: batch must be positive");
  if (plan.stage == Stage::Stage2Layerwise) {
    MSPL_CHECK(schedules.layerwise.has_value(), "run_stage: layerwise schedule missing");
    MSPL_CHECK(schedules.layerwise->layers == model.cfg.n_shared,
               "run_stage: layerwise schedule covers ", schedules.layerwise->layers,
               " layers, model has ", model.cfg.n_shared, " shared blocks");
  }
  MSPL_CHECK(corpora.text_mix == 0.0 || !corpora.text.empty(),
             "run_stage: text mix requested without a text corpus");

  Shuffler main_order(corpora.main.size(), opts.seed ^ 0x6d61696eULL, "main");
  std::optional<Shuffler> text_order;
  if (!corpora.text.empty()) {
    text_order.emplace(corpora.text.size(), opts.seed ^ 0x74657874ULL, "text");
  }
  Rng rng(opts.seed);
  const LayerwiseScheduleParams* lw =
      schedules.layerwise.has_value() ? &*schedules.layerwise : nullptr;

  StageResult result;
  result.steps = steps;
  for (int64_t i = 0; i < steps; ++i) {
    const int64_t step = first_step + i;
    const auto lrs = apply_plan(model.params, plan, step, schedules.global, lw);
    const bool use_text =
        corpora.text_mix > 0.0 && text_order.has_value() && rng.uniform() < corpora.text_mix;
    const auto& source = use_text ? corpora.text : corpora.main;
    Shuffler& order = use_text ? *text_order : main_order;

    model.params.zero_grads();
    StepStats stats;
    int used = 0;
    for (int b = 0; b < opts.batch; ++b) {
      std::optional<SequenceBatch> batch;
      for (int attempt = 0; attempt < 100 && !batch; ++attempt) {
        batch = record_to_batch(source[order.next(log)], opts.max_tokens);
      }
      MSPL_CHECK(batch.has_value(), "run_stage: no trainable record found in 100 draws");
      Graph<float> g;
      auto out = split_loss(g, model, *batch);
      MSPL_CHECK(std::isfinite(out.loss_value), "run_stage: loss diverged (non-finite) at step ",
                 step);
      g.backward(out.loss);
      stats.text_sum += out.text_ce_sum;
      stats.speech_sum += out.speech_ce_sum;
      stats.text_count += out.text_positions;
      stats.speech_count += out.speech_positions;
      ++used;
    }
    model.params.scale_grads(1.0f / float(used));
    adamw_step(model.params, lrs, opts.adamw);

    if (i == 0) {
      result.first_loss = stats.loss();
    }
    result.final_loss = stats.loss();
    if (metrics != nullptr) {
      if (plan.stage == Stage::Stage2Layerwise) {
        for (int bdx = 0; bdx < model.cfg.n_shared; ++bdx) {
          const std::string name = "shared." + std::to_string(bdx);
          metrics->row(step, name, lr_of(model.params, lrs, name + ".attn.wq"),
                       stats.loss_text(), stats.loss_speech());
        }
      } else {
        metrics->row(step, "shared", lr_of(model.params, lrs, "shared.0.attn.wq"),
                     stats.loss_text(), stats.loss_speech());
      }
      metrics->row(step, "speech_new", lr_of(model.params, lrs, "speech_head"),
                   stats.loss_text(), stats.loss_speech());
      metrics->row(step, "text_backbone", lr_of(model.params, lrs, "text_embed"),
                   stats.loss_text(), stats.loss_speech());
    }
  }
  return result;
}

StageResult run_lm_stage(TextLm<float>& model, int64_t steps, const StageCorpora& corpora,
                         const CosineScheduleParams& schedule, const TrainOptions& opts,
                         int merge_text_vocab, MetricsWriter* metrics, std::ostream* log,
                         int64_t first_step) {
  MSPL_CHECK(steps >= 1, "run_lm_stage: steps must be positive");
  MSPL_CHECK(corpora.text_mix == 0.0 || !corpora.text.empty(),
             "run_lm_stage: text mix requested without a text corpus");
  Shuffler main_order(corpora.main.size(), opts.seed ^ 0x6d61696eULL, "main");
  std::optional<Shuffler> text_order;
  if (!corpora.text.empty()) {
    text_order.emplace(corpora.text.size(), opts.seed ^ 0x74657874ULL, "text");
  }
  Rng rng(opts.seed);

  StageResult result;
  result.steps = steps;
  std::vector<double> lrs(model.params.size(), 0.0);
  for (int64_t i = 0; i < steps; ++i) {
    const int64_t step = first_step + i;
    const double lr = cosine_lr(schedule, step);
    lrs.assign(model.params.size(), lr);
    const bool use_text =
        corpora.text_mix > 0.0 && text_order.has_value() && rng.uniform() < corpora.text_mix;
    const auto& source = use_text ? corpora.text : corpora.main;
    Shuffler& order = use_text ? *text_order : main_order;

    model.params.zero_grads();
    double ce_sum = 0.0;
    int64_t positions = 0;
    int used = 0;
    for (int b = 0; b < opts.batch; ++b) {
      std::vector<int> ids;
      size_t supervise_from = 0;
      for (int attempt = 0; attempt < 100 && ids.empty(); ++attempt) {
        const data::Record& rec = source[order.next(log)];
        if (merge_text_vocab >= 0) {
          auto seq = record_to_merged(rec, merge_text_vocab, opts.max_tokens);
          if (seq) {
            ids = std::move(seq->ids);
            supervise_from = seq->supervise_from;
          }
        } else {
          auto batch = record_to_batch(rec, opts.max_tokens);
          if (batch) {
            for (const Token& t : batch->tokens) {
              MSPL_CHECK(t.modality == Modality::Text,
                         "run_lm_stage: speech token in a plain text corpus");
              ids.push_back(t.id);
            }
            for (size_t p = 0; p < batch->loss_mask.size(); ++p) {
              if (batch->loss_mask[p]) {
                supervise_from = p;
                break;
              }
            }
          }
        }
      }
      MSPL_CHECK(!ids.empty(), "run_lm_stage: no trainable record found in 100 draws");
      Graph<float> g;
      auto out = text_lm_loss(g, model, ids, supervise_from);
      MSPL_CHECK(std::isfinite(out.loss_value),
                 "run_lm_stage: loss diverged (non-finite) at step ", step);
      g.backward(out.loss);
      ce_sum += out.ce_sum;
      positions += out.positions;
      ++used;
    }
    model.params.scale_grads(1.0f / float(used));
    adamw_step(model.params, lrs, opts.adamw);

    const double loss = positions > 0 ? ce_sum / double(positions) : kNan;
    if (i == 0) {
      result.first_loss = loss;
    }
    result.final_loss = loss;
    if (metrics != nullptr) {
      metrics->row(step, "all", lr, loss, kNan);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation.

namespace {

int walk_state(const data::Language& lang, int state, Rng& rng) {
  const double r = rng.uniform();
  double cum = 0.0;
  const int states = lang.spec.content_states();
  for (int c = 0; c < states; ++c) {
    cum += lang.transitions(state, c);
    if (r < cum) {
      return c;
    }
  }
  return states - 1;
}

std::vector<int> walk_chain(const data::Language& lang, int start_state, int len, Rng& rng) {
  std::vector<int> out;
  int state = start_state;
  for (int i = 0; i < len; ++i) {
    state = walk_state(lang, state, rng);
    out.push_back(kNumReserved + state);
  }
  return out;
}

std::vector<Token> render(const data::Language& lang, const std::vector<int>& text_ids,
                          Modality m) {
  std::vector<Token> out;
  if (m == Modality::Text) {
    for (int id : text_ids) {
      out.push_back(text_tok(id));
    }
    return out;
  }
  for (int id : text_ids) {
    for (int tok : lang.codebook[size_t(id)]) {
      out.push_back(speech_tok(tok));
    }
  }
  return out;
}

}  // namespace

std::vector<EvalItem> make_eval_set(const data::Language& lang, int n_items, Modality modality,
                                    int prefix_len, int cont_len, Rng& rng) {
  MSPL_CHECK(n_items >= 1 && prefix_len >= 1 && cont_len >= 1, "make_eval_set: bad sizes");
  const int states = lang.spec.content_states();
  std::vector<EvalItem> items;
  while (int(items.size()) < n_items) {
    const int start = int(rng.below(uint64_t(states)));
    std::vector<int> prefix_ids = {kNumReserved + start};
    auto rest = walk_chain(lang, start, prefix_len - 1, rng);
    prefix_ids.insert(prefix_ids.end(), rest.begin(), rest.end());
    const int last_state = prefix_ids.back() - kNumReserved;
    const auto truth_ids = walk_chain(lang, last_state, cont_len, rng);

    EvalItem item;
    item.modality = modality;
    item.truth = render(lang, truth_ids, modality);

    bool have_distractor = false;
    for (int attempt = 0; attempt < 200 && !have_distractor; ++attempt) {
      int other = last_state;
      while (other == last_state) {
        other = int(rng.below(uint64_t(states)));
      }
      const auto distractor_ids = walk_chain(lang, other, cont_len, rng);
      if (distractor_ids == truth_ids) {
        continue;
      }
      auto rendered = render(lang, distractor_ids, modality);
      if (rendered.size() != item.truth.size() || rendered == item.truth) {
        continue;
      }
      item.distractor = std::move(rendered);
      have_distractor = true;
    }
    if (!have_distractor) {
      continue;
    }
    item.prefix.push_back(Token{modality, kBos});
    auto prefix_rendered = render(lang, prefix_ids, modality);
    item.prefix.insert(item.prefix.end(), prefix_rendered.begin(), prefix_rendered.end());
    items.push_back(std::move(item));
  }
  return items;
}

double masked_mean_logprob(const Matd& logit_rows, const std::vector<int>& targets) {
  MSPL_CHECK(logit_rows.rows == int(targets.size()) && logit_rows.rows >= 1,
             "mean_logprob: rows/targets mismatch");
  double total = 0.0;
  for (int r = 0; r < logit_rows.rows; ++r) {
    MSPL_CHECK(targets[size_t(r)] >= 0 && targets[size_t(r)] < logit_rows.cols,
               "mean_logprob: target out of range");
    double mx = logit_rows(r, 0);
    for (int c = 1; c < logit_rows.cols; ++c) {
      mx = std::max(mx, logit_rows(r, c));
    }
    double sum = 0.0;
    for (int c = 0; c < logit_rows.cols; ++c) {
      sum += std::exp(logit_rows(r, c) - mx);
    }
    total += logit_rows(r, targets[size_t(r)]) - (mx + std::log(sum));
  }
  return total / double(logit_rows.rows);
}

namespace {

// Mean per-token log-probability of `cont` after `prefix` under one model.
template <class ScoreFn>
RankedResult ranked_accuracy_impl(const std::vector<EvalItem>& items, ScoreFn&& score) {
  RankedResult result;
  double total = 0.0;
  for (const EvalItem& item : items) {
    if (item.truth.size() != item.distractor.size() || item.truth.empty()) {
      ++result.skipped;
      continue;
    }
    const double lp_true = score(item, item.truth);
    const double lp_dist = score(item, item.distractor);
    total += lp_true > lp_dist ? 1.0 : (lp_true == lp_dist ? 0.5 : 0.0);
    ++result.used;
  }
  MSPL_CHECK(result.used > 0, "ranked_accuracy: no usable items");
  result.accuracy = total / double(result.used);
  return result;
}

}  // namespace

RankedResult ranked_accuracy(SplitLm<float>& model, const std::vector<EvalItem>& items) {
  auto score = [&](const EvalItem& item, const std::vector<Token>& cont) {
    std::vector<Token> tokens = item.prefix;
    tokens.insert(tokens.end(), cont.begin(), cont.end());
    Graph<float> g;
    SplitForwardOpts opts;
    opts.heads = item.modality == Modality::Text ? HeadSelect::TextOnly : HeadSelect::SpeechOnly;
    auto fwd = split_forward(g, model, tokens, opts);
    const Matf& logits =
        g.value(item.modality == Modality::Text ? fwd.text_logits : fwd.speech_logits);
    const int plen = int(item.prefix.size());
    Matd rows(int(cont.size()), logits.cols);
    std::vector<int> targets(cont.size(), 0);
    for (size_t t = 0; t < cont.size(); ++t) {
      for (int c = 0; c < logits.cols; ++c) {
        rows(int(t), c) = double(logits(plen - 1 + int(t), c));
      }
      targets[t] = cont[t].id;
    }
    return masked_mean_logprob(rows, targets);
  };
  return ranked_accuracy_impl(items, score);
}

RankedResult ranked_accuracy(TextLm<float>& model, int text_vocab,
                             const std::vector<EvalItem>& items) {
  auto score = [&](const EvalItem& item, const std::vector<Token>& cont) {
    std::vector<Token> tokens = item.prefix;
    tokens.insert(tokens.end(), cont.begin(), cont.end());
    Graph<float> g;
    const Matf& logits = g.value(text_lm_forward(g, model, merged_ids(text_vocab, tokens)));
    const int plen = int(item.prefix.size());
    Matd rows(int(cont.size()), logits.cols);
    std::vector<int> targets(cont.size(), 0);
    for (size_t t = 0; t < cont.size(); ++t) {
      for (int c = 0; c < logits.cols; ++c) {
        rows(int(t), c) = double(logits(plen - 1 + int(t), c));
      }
      targets[t] = merged_id(text_vocab, cont[t]);
    }
    return masked_mean_logprob(rows, targets);
  };
  return ranked_accuracy_impl(items, score);
}

std::vector<std::vector<int>> make_text_probes(const data::Language& lang, int n, int len,
                                               Rng& rng) {
  std::vector<std::vector<int>> probes;
  for (int i = 0; i < n; ++i) {
    auto sample = data::sample_paired(lang, len, rng);
    std::vector<int> ids = {kBos};
    ids.insert(ids.end(), sample.text.begin(), sample.text.end());
    probes.push_back(std::move(ids));
  }
  return probes;
}

namespace {

// exp(mean next-token cross-entropy) from a logits matrix, in double.
double probe_ce_sum(const Matf& logits, const std::vector<int>& ids, double* positions) {
  double total = 0.0;
  for (size_t p = 0; p + 1 < ids.size(); ++p) {
    double mx = logits(int(p), 0);
    for (int c = 1; c < logits.cols; ++c) {
      mx = std::max(mx, double(logits(int(p), c)));
    }
    double sum = 0.0;
    for (int c = 0; c < logits.cols; ++c) {
      sum += std::exp(double(logits(int(p), c)) - mx);
    }
    total += mx + std::log(sum) - double(logits(int(p), ids[p + 1]));
    *positions += 1.0;
  }
  return total;
}

}  // namespace

double text_perplexity(TextLm<float>& model, const std::vector<std::vector<int>>& probes) {
  MSPL_CHECK(!probes.empty(), "perplexity: no probes");
  double ce = 0.0, positions = 0.0;
  for (const auto& ids : probes) {
    Graph<float> g;
    ce += probe_ce_sum(g.value(text_lm_forward(g, model, ids)), ids, &positions);
  }
  return std::exp(ce / positions);
}

double text_perplexity(SplitLm<float>& model, const std::vector<std::vector<int>>& probes) {
  MSPL_CHECK(!probes.empty(), "perplexity: no probes");
  double ce = 0.0, positions = 0.0;
  for (const auto& ids : probes) {
    std::vector<Token> tokens;
    for (int id : ids) {
      tokens.push_back(text_tok(id));
    }
    Graph<float> g;
    SplitForwardOpts opts;
    opts.heads = HeadSelect::TextOnly;
    auto fwd = split_forward(g, model, tokens, opts);
    ce += probe_ce_sum(g.value(fwd.text_logits), ids, &positions);
  }
  return std::exp(ce / positions);
}

PreservationReport eval_preservation(SplitLm<float>& split, TextLm<float>& base,
                                     const std::vector<std::vector<int>>& probes) {
  MSPL_CHECK(split.cfg.text_vocab == base.cfg.vocab &&
                 split.cfg.d_model == base.cfg.d_model &&
                 split.cfg.n_shared + split.cfg.n_branch == base.cfg.n_blocks,
             "eval_preservation: checkpoint configurations do not match");
  PreservationReport report;
  for (const auto& ids : probes) {
    std::vector<Token> tokens;
    for (int id : ids) {
      tokens.push_back(text_tok(id));
    }
    Graph<float> gs, gb;
    SplitForwardOpts opts;
    opts.heads = HeadSelect::TextOnly;
    const Matf& split_logits = gs.value(split_forward(gs, split, tokens, opts).text_logits);
    const Matf& base_logits = gb.value(text_lm_forward(gb, base, ids));
    for (size_t i = 0; i < split_logits.size(); ++i) {
      report.max_abs_logit_diff =
          std::max(report.max_abs_logit_diff,
                   std::abs(double(split_logits.data[i]) - double(base_logits.data[i])));
    }
  }
  report.split_ppl = text_perplexity(split, probes);
  report.base_ppl = text_perplexity(base, probes);
  return report;
}

// ---------------------------------------------------------------------------
// Ablation matrix.

const char* ablation_name(AblationConfig c) {
  switch (c) {
    case AblationConfig::FpFull: return "fp-full";
    case AblationConfig::FpLayerwise: return "fp-layerwise";
    case AblationConfig::FpShared: return "fp-shared";
    case AblationConfig::Nf: return "nf";
    case AblationConfig::NfNoSplit: return "nf-nosplit";
  }
  return "?";
}

std::optional<AblationConfig> ablation_from_name(const std::string& name) {
  for (AblationConfig c : {AblationConfig::FpFull, AblationConfig::FpLayerwise,
                           AblationConfig::FpShared, AblationConfig::Nf,
                           AblationConfig::NfNoSplit}) {
    if (name == ablation_name(c)) {
      return c;
    }
  }
  return std::nullopt;
}

namespace {

TextLm<float> clone_text(const TextLm<float>& src) {
  TextLm<float> copy = TextLm<float>::init(src.cfg, 0);
  for (size_t i = 0; i < copy.params.size(); ++i) {
    copy.params[i].value = src.params.at(copy.params[i].name).value;
  }
  return copy;
}

}  // namespace

std::vector<AblationRow> run_ablation(const AblationSetup& setup,
                                      const std::vector<AblationConfig>& configs,
                                      std::ostream* log) {
  MSPL_CHECK(setup.base != nullptr, "run_ablation: base model required");
  MSPL_CHECK(!configs.empty(), "run_ablation: no configurations selected");
  TextLm<float> base = clone_text(*setup.base);
  const double base_ppl = text_perplexity(base, setup.probes);

  std::vector<AblationRow> rows;
  for (AblationConfig config : configs) {
    AblationRow row;
    row.name = ablation_name(config);
    if (log != nullptr) {
      *log << "[ablate] config=" << row.name << "\n";
    }
    try {
      if (config == AblationConfig::NfNoSplit) {
        TextLm<float> merged = expand_vocab(base, setup.split_cfg.speech_vocab,
                                            setup.split_seed);
        run_lm_stage(merged, setup.steps1, setup.stage2_corpora, setup.stage2.global,
                     setup.opts, base.cfg.vocab, nullptr, log, 0);
        row.phase1_text_ppl_delta = text_perplexity(merged, setup.probes) - base_ppl;
        run_lm_stage(merged, setup.steps2, setup.stage2_corpora, setup.stage2.global,
                     setup.opts, base.cfg.vocab, nullptr, log, setup.steps1);
        row.final_text_ppl_delta = text_perplexity(merged, setup.probes) - base_ppl;
        row.speech_acc = ranked_accuracy(merged, base.cfg.vocab, setup.speech_eval).accuracy;
        row.text_acc = ranked_accuracy(merged, base.cfg.vocab, setup.text_eval).accuracy;
      } else {
        SplitLm<float> split = build_split_model(base, setup.split_cfg, setup.split_seed);
        if (config == AblationConfig::Nf) {
          run_stage(split, FreezePlan{Stage::NoFreeze}, setup.steps1, setup.stage2_corpora,
                    setup.stage2, setup.opts, nullptr, log, 0);
          row.phase1_text_ppl_delta = text_perplexity(split, setup.probes) - base_ppl;
          run_stage(split, FreezePlan{Stage::NoFreeze}, setup.steps2, setup.stage2_corpora,
                    setup.stage2, setup.opts, nullptr, log, setup.steps1);
        } else {
          run_stage(split, FreezePlan{Stage::Stage1}, setup.steps1, setup.stage1_corpora,
                    setup.stage1, setup.opts, nullptr, log, 0);
          row.phase1_text_ppl_delta = text_perplexity(split, setup.probes) - base_ppl;
          Stage stage2 = Stage::Stage2Full;
          if (config == AblationConfig::FpShared) {
            stage2 = Stage::Stage2Shared;
          } else if (config == AblationConfig::FpLayerwise) {
            stage2 = Stage::Stage2Layerwise;
          }
          run_stage(split, FreezePlan{stage2}, setup.steps2, setup.stage2_corpora,
                    setup.stage2, setup.opts, nullptr, log, 0);
        }
        row.final_text_ppl_delta = text_perplexity(split, setup.probes) - base_ppl;
        row.speech_acc = ranked_accuracy(split, setup.speech_eval).accuracy;
        row.text_acc = ranked_accuracy(split, setup.text_eval).accuracy;
      }
      row.ok = true;
    } catch (const std::exception& e) {
      row.ok = false;
      row.note = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  MSPL_CHECK_IO(os.is_open(), "ablation: cannot write ", path);
  os << "config,ok,phase1_text_ppl_delta,final_text_ppl_delta,speech_acc,text_acc,note\n";
  for (const AblationRow& r : rows) {
    os << r.name << "," << (r.ok ? 1 : 0) << "," << fmt9(r.phase1_text_ppl_delta) << ","
       << fmt9(r.final_text_ppl_delta) << "," << fmt9(r.speech_acc) << "," << fmt9(r.text_acc)
       << ",\"" << r.note << "\"\n";
  }
  MSPL_CHECK_IO(os.good(), "ablation: write failed: ", path);
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(14) << "config" << std::right << std::setw(14) << "ppl_d(p1)"
     << std::setw(14) << "ppl_d(final)" << std::setw(12) << "speech_acc" << std::setw(12)
     << "text_acc" << "  note\n";
  for (const AblationRow& r : rows) {
    os << std::left << std::setw(14) << r.name << std::right << std::fixed
       << std::setprecision(4) << std::setw(14) << r.phase1_text_ppl_delta << std::setw(14)
       << r.final_text_ppl_delta << std::setw(12) << r.speech_acc << std::setw(12) << r.text_acc
       << "  " << (r.ok ? r.note : "FAILED: " + r.note) << "\n";
  }
  return os.str();
}

}  // namespace mspl::train
