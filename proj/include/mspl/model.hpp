#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "mspl/graph.hpp"
#include "mspl/param.hpp"
#include "mspl/rng.hpp"

namespace mspl {

enum class Modality : uint8_t { Text = 0, Speech = 1 };

// Reserved ids, present in both vocabularies.
constexpr int kBos = 0;
constexpr int kModeSwitch = 1;
constexpr int kEos = 2;
constexpr int kNumReserved = 3;

struct Token {
  Modality modality = Modality::Text;
  int id = 0;

  bool operator==(const Token&) const = default;
};

inline Token text_tok(int id) { return Token{Modality::Text, id}; }
inline Token speech_tok(int id) { return Token{Modality::Speech, id}; }

struct ModelConfig {
  int d_model = 128;
  int n_heads = 4;
  int d_ff = 512;
  int n_shared = 8;   // shared trunk depth
  int n_branch = 2;   // per-branch depth
  int text_vocab = 256;
  int speech_vocab = 512;
  int max_seq = 512;

  void validate() const {
    MSPL_CHECK(d_model > 0 && n_heads > 0 && d_model % n_heads == 0,
               "model config: n_heads must divide d_model");
    MSPL_CHECK(d_ff > 0, "model config: d_ff must be positive");
    MSPL_CHECK(n_shared >= 1, "model config: n_shared must be >= 1");
    MSPL_CHECK(n_branch >= 1, "model config: n_branch must be >= 1");
    MSPL_CHECK(text_vocab >= 4 && speech_vocab >= 4,
               "model config: vocabularies must hold the reserved ids");
    MSPL_CHECK(max_seq >= 1, "model config: max_seq must be positive");
  }

  bool operator==(const ModelConfig&) const = default;
};

struct TextLmConfig {
  int d_model = 128;
  int n_heads = 4;
  int d_ff = 512;
  int n_blocks = 10;
  int vocab = 256;
  int max_seq = 512;

  void validate() const {
    MSPL_CHECK(d_model > 0 && n_heads > 0 && d_model % n_heads == 0,
               "model config: n_heads must divide d_model");
    MSPL_CHECK(d_ff > 0 && n_blocks >= 1, "model config: bad dims");
    MSPL_CHECK(vocab >= 4, "model config: vocab must hold the reserved ids");
    MSPL_CHECK(max_seq >= 1, "model config: max_seq must be positive");
  }

  bool operator==(const TextLmConfig&) const = default;
};

// Supervision layout for one sequence: target_modality[p] is the modality of
// token p+1 (kNoTarget at the final position), loss_mask selects the
// positions that contribute to the loss.
constexpr int8_t kNoTarget = -1;

struct SequenceBatch {
  std::vector<Token> tokens;
  std::vector<int8_t> target_modality;
  std::vector<uint8_t> loss_mask;

  void validate() const {
    MSPL_CHECK(!tokens.empty(), "batch: empty token sequence");
    MSPL_CHECK(target_modality.size() == tokens.size() && loss_mask.size() == tokens.size(),
               "batch: mask lengths must match tokens");
    for (size_t p = 0; p < tokens.size(); ++p) {
      if (loss_mask[p]) {
        MSPL_CHECK(target_modality[p] != kNoTarget,
                   "batch: loss mask set at position ", p, " without a target modality");
        MSPL_CHECK(p + 1 < tokens.size(), "batch: loss mask at final position");
      }
    }
  }
};

// Next-token supervision over a raw stream; positions [supervise_from, n-1).
inline SequenceBatch make_lm_batch(std::vector<Token> tokens, size_t supervise_from = 0) {
  SequenceBatch b;
  const size_t n = tokens.size();
  b.tokens = std::move(tokens);
  b.target_modality.assign(n, kNoTarget);
  b.loss_mask.assign(n, 0);
  for (size_t p = 0; p + 1 < n; ++p) {
    b.target_modality[p] = int8_t(b.tokens[p + 1].modality);
    b.loss_mask[p] = p >= supervise_from ? 1 : 0;
  }
  b.validate();
  return b;
}

// ---------------------------------------------------------------------------
// Parameter layout shared by the base text model and the split model.

namespace detail {

template <class T>
void add_block_params(ParamStore<T>& ps, const std::string& prefix, int d_model, int d_ff,
                      Group group) {
  ps.add(prefix + ".ln1.gain", 1, d_model, group);
  ps.add(prefix + ".ln1.bias", 1, d_model, group);
  ps.add(prefix + ".attn.wq", d_model, d_model, group);
  ps.add(prefix + ".attn.wk", d_model, d_model, group);
  ps.add(prefix + ".attn.wv", d_model, d_model, group);
  ps.add(prefix + ".attn.wo", d_model, d_model, group);
  ps.add(prefix + ".ln2.gain", 1, d_model, group);
  ps.add(prefix + ".ln2.bias", 1, d_model, group);
  ps.add(prefix + ".ffn.w1", d_model, d_ff, group);
  ps.add(prefix + ".ffn.w2", d_ff, d_model, group);
}

template <class T>
void init_params(ParamStore<T>& ps, uint64_t seed, double std = 0.02) {
  Rng rng(seed);
  for (size_t i = 0; i < ps.size(); ++i) {
    ParamTensor<T>& t = ps[i];
    if (t.name.size() > 5 && t.name.rfind(".gain") == t.name.size() - 5) {
      t.value.fill(T(1));
    } else if (t.name.size() > 5 && t.name.rfind(".bias") == t.name.size() - 5) {
      t.value.fill(T(0));
    } else {
      t.value = Mat<T>::randn(t.value.rows, t.value.cols, T(std), rng);
    }
  }
}

template <class T>
typename Graph<T>::Val block_forward(Graph<T>& g, ParamStore<T>& ps,
                                     const std::string& prefix, typename Graph<T>::Val h,
                                     int n_heads) {
  auto p = [&](const char* suffix) { return g.param(ps.at(prefix + suffix)); };
  auto a = g.layer_norm(h, p(".ln1.gain"), p(".ln1.bias"));
  auto q = g.matmul(a, p(".attn.wq"));
  auto k = g.matmul(a, p(".attn.wk"));
  auto v = g.matmul(a, p(".attn.wv"));
  auto att = g.causal_attention(q, k, v, n_heads);
  h = g.add(h, g.matmul(att, p(".attn.wo")));
  auto b = g.layer_norm(h, p(".ln2.gain"), p(".ln2.bias"));
  auto f = g.matmul(g.gelu(g.matmul(b, p(".ffn.w1"))), p(".ffn.w2"));
  return g.add(h, f);
}

inline std::vector<int> iota_rows(size_t n) {
  std::vector<int> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Plain single-vocabulary transformer LM. Serves as the pretrained base that
// the split model is built from, and (with a merged vocabulary) as the
// no-split ablation baseline.

template <class T>
struct TextLm {
  TextLmConfig cfg;
  ParamStore<T> params;

  static TextLm init(const TextLmConfig& cfg, uint64_t seed) {
    cfg.validate();
    TextLm m;
    m.cfg = cfg;
    auto& ps = m.params;
    ps.add("embed", cfg.vocab, cfg.d_model, Group::TextBackbone);
    ps.add("pos_embed", cfg.max_seq, cfg.d_model, Group::TextBackbone);
    for (int i = 0; i < cfg.n_blocks; ++i) {
      detail::add_block_params(ps, "blocks." + std::to_string(i), cfg.d_model, cfg.d_ff,
                               Group::TextBackbone);
    }
    ps.add("final_ln.gain", 1, cfg.d_model, Group::TextBackbone);
    ps.add("final_ln.bias", 1, cfg.d_model, Group::TextBackbone);
    ps.add("head", cfg.d_model, cfg.vocab, Group::TextBackbone);
    detail::init_params(ps, seed);
    return m;
  }
};

template <class T>
typename Graph<T>::Val text_lm_forward(Graph<T>& g, TextLm<T>& m, const std::vector<int>& ids) {
  MSPL_CHECK(!ids.empty(), "forward: empty input");
  MSPL_CHECK(int(ids.size()) <= m.cfg.max_seq, "forward: sequence length ", ids.size(),
             " exceeds max_seq ", m.cfg.max_seq);
  for (int id : ids) {
    MSPL_CHECK(id >= 0 && id < m.cfg.vocab, "forward: token id ", id, " out of range");
  }
  auto& ps = m.params;
  auto h = g.add(g.embed_rows(g.param(ps.at("embed")), ids),
                 g.embed_rows(g.param(ps.at("pos_embed")), detail::iota_rows(ids.size())));
  for (int i = 0; i < m.cfg.n_blocks; ++i) {
    h = detail::block_forward(g, ps, "blocks." + std::to_string(i), h, m.cfg.n_heads);
  }
  h = g.layer_norm(h, g.param(ps.at("final_ln.gain")), g.param(ps.at("final_ln.bias")));
  return g.matmul(h, g.param(ps.at("head")));
}

// ---------------------------------------------------------------------------
// Modality-split transformer: shared trunk, then a text branch and a parallel
// speech branch (each trailing blocks + final norm + head) fed by the same
// trunk output.

template <class T>
struct SplitLm {
  ModelConfig cfg;
  ParamStore<T> params;
};

enum class HeadSelect : uint8_t { Both, TextOnly, SpeechOnly };

template <class T>
struct SplitForwardOut {
  static constexpr uint32_t kNone = std::numeric_limits<uint32_t>::max();
  typename Graph<T>::Val text_logits = kNone;
  typename Graph<T>::Val speech_logits = kNone;
  typename Graph<T>::Val trunk_out = kNone;
  std::vector<Mat<T>> states;  // embedding output + each shared block output
};

struct SplitForwardOpts {
  HeadSelect heads = HeadSelect::Both;
  bool record_states = false;
};

template <class T>
void check_tokens(const ModelConfig& cfg, const std::vector<Token>& tokens) {
  MSPL_CHECK(!tokens.empty(), "forward: empty input");
  MSPL_CHECK(int(tokens.size()) <= cfg.max_seq, "forward: sequence length ", tokens.size(),
             " exceeds max_seq ", cfg.max_seq);
  for (const Token& t : tokens) {
    const int vocab = t.modality == Modality::Text ? cfg.text_vocab : cfg.speech_vocab;
    MSPL_CHECK(t.id >= 0 && t.id < vocab, "forward: token id ", t.id, " out of range for ",
               t.modality == Modality::Text ? "text" : "speech", " vocab ", vocab);
  }
}

template <class T>
SplitForwardOut<T> split_forward(Graph<T>& g, SplitLm<T>& m, const std::vector<Token>& tokens,
                                 const SplitForwardOpts& opts = {}) {
  check_tokens<T>(m.cfg, tokens);
  auto& ps = m.params;
  SplitForwardOut<T> out;

  bool any_speech = false;
  for (const Token& t : tokens) {
    any_speech = any_speech || t.modality == Modality::Speech;
  }
  typename Graph<T>::Val emb;
  if (any_speech) {
    std::vector<typename Graph<T>::RowPick> picks(tokens.size());
    for (size_t p = 0; p < tokens.size(); ++p) {
      picks[p] = {uint8_t(tokens[p].modality), tokens[p].id};
    }
    emb = g.gather2(g.param(ps.at("text_embed")), g.param(ps.at("speech_embed")),
                    std::move(picks));
  } else {
    std::vector<int> ids(tokens.size());
    for (size_t p = 0; p < tokens.size(); ++p) {
      ids[p] = tokens[p].id;
    }
    emb = g.embed_rows(g.param(ps.at("text_embed")), ids);
  }
  auto h = g.add(emb, g.embed_rows(g.param(ps.at("pos_embed")),
                                   detail::iota_rows(tokens.size())));
  if (opts.record_states) {
    out.states.push_back(g.value(h));
  }
  for (int i = 0; i < m.cfg.n_shared; ++i) {
    h = detail::block_forward(g, ps, "shared." + std::to_string(i), h, m.cfg.n_heads);
    if (opts.record_states) {
      out.states.push_back(g.value(h));
    }
  }
  out.trunk_out = h;

  auto run_branch = [&](const std::string& branch, const std::string& head) {
    auto b = h;
    for (int j = 0; j < m.cfg.n_branch; ++j) {
      b = detail::block_forward(g, ps, branch + "." + std::to_string(j), b, m.cfg.n_heads);
    }
    b = g.layer_norm(b, g.param(ps.at(branch + ".final_ln.gain")),
                     g.param(ps.at(branch + ".final_ln.bias")));
    return g.matmul(b, g.param(ps.at(head)));
  };
  if (opts.heads != HeadSelect::SpeechOnly) {
    out.text_logits = run_branch("text_branch", "text_head");
  }
  if (opts.heads != HeadSelect::TextOnly) {
    out.speech_logits = run_branch("speech_branch", "speech_head");
  }
  return out;
}

// Per-position cross-entropy against the next token, routed to the head named
// by the target modality; mean over loss-mask positions. Positions of the
// other head contribute exactly zero.
template <class T>
struct SplitLossOut {
  typename Graph<T>::Val loss;
  double loss_value = 0.0;
  double text_ce_sum = 0.0;
  double speech_ce_sum = 0.0;
  int text_positions = 0;
  int speech_positions = 0;
};

template <class T>
SplitLossOut<T> split_loss(Graph<T>& g, SplitLm<T>& m, const SequenceBatch& batch) {
  batch.validate();
  const size_t n = batch.tokens.size();
  std::vector<int> text_targets(n, 0), speech_targets(n, 0);
  std::vector<uint8_t> text_mask(n, 0), speech_mask(n, 0);
  int n_text = 0, n_speech = 0;
  for (size_t p = 0; p < n; ++p) {
    if (!batch.loss_mask[p]) {
      continue;
    }
    const Token& target = batch.tokens[p + 1];
    if (batch.target_modality[p] == int8_t(Modality::Text)) {
      text_targets[p] = target.id;
      text_mask[p] = 1;
      ++n_text;
    } else {
      speech_targets[p] = target.id;
      speech_mask[p] = 1;
      ++n_speech;
    }
  }
  MSPL_CHECK(n_text + n_speech > 0, "no supervised positions");

  auto fwd = split_forward(g, m, batch.tokens);
  SplitLossOut<T> out;
  typename Graph<T>::Val total;
  bool have = false;
  if (n_text > 0) {
    auto ce = g.cross_entropy_sum(fwd.text_logits, std::move(text_targets), std::move(text_mask));
    out.text_ce_sum = double(g.value(ce)(0, 0));
    total = ce;
    have = true;
  }
  if (n_speech > 0) {
    auto ce = g.cross_entropy_sum(fwd.speech_logits, std::move(speech_targets),
                                  std::move(speech_mask));
    out.speech_ce_sum = double(g.value(ce)(0, 0));
    total = have ? g.add(total, ce) : ce;
  }
  out.loss = g.scale(total, T(1) / T(n_text + n_speech));
  out.loss_value = double(g.value(out.loss)(0, 0));
  out.text_positions = n_text;
  out.speech_positions = n_speech;
  return out;
}

// Single-head analog for the base / merged-vocabulary model.
template <class T>
struct LmLossOut {
  typename Graph<T>::Val loss;
  double loss_value = 0.0;
  double ce_sum = 0.0;
  int positions = 0;
};

template <class T>
LmLossOut<T> text_lm_loss(Graph<T>& g, TextLm<T>& m, const std::vector<int>& ids,
                          size_t supervise_from = 0) {
  MSPL_CHECK(ids.size() >= 2, "lm loss: need at least two tokens");
  auto logits = text_lm_forward(g, m, ids);
  const size_t n = ids.size();
  std::vector<int> targets(n, 0);
  std::vector<uint8_t> mask(n, 0);
  int count = 0;
  for (size_t p = supervise_from; p + 1 < n; ++p) {
    targets[p] = ids[p + 1];
    mask[p] = 1;
    ++count;
  }
  MSPL_CHECK(count > 0, "no supervised positions");
  LmLossOut<T> out;
  auto ce = g.cross_entropy_sum(logits, std::move(targets), std::move(mask));
  out.ce_sum = double(g.value(ce)(0, 0));
  out.loss = g.scale(ce, T(1) / T(count));
  out.loss_value = double(g.value(out.loss)(0, 0));
  out.positions = count;
  return out;
}

// ---------------------------------------------------------------------------
// Split-model construction from a pretrained base.

template <class T>
SplitLm<T> build_split_model(const TextLm<T>& base, const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  MSPL_CHECK(base.cfg.n_blocks == cfg.n_shared + cfg.n_branch,
             "build split: base has ", base.cfg.n_blocks, " blocks, config wants ",
             cfg.n_shared + cfg.n_branch);
  MSPL_CHECK(base.cfg.d_model == cfg.d_model && base.cfg.n_heads == cfg.n_heads &&
                 base.cfg.d_ff == cfg.d_ff && base.cfg.max_seq == cfg.max_seq,
             "build split: base/config dimension mismatch");
  MSPL_CHECK(base.cfg.vocab == cfg.text_vocab, "build split: base vocab ", base.cfg.vocab,
             " != text_vocab ", cfg.text_vocab);

  SplitLm<T> m;
  m.cfg = cfg;
  auto& ps = m.params;
  ps.add("text_embed", cfg.text_vocab, cfg.d_model, Group::TextBackbone);
  ps.add("speech_embed", cfg.speech_vocab, cfg.d_model, Group::SpeechNew);
  ps.add("pos_embed", cfg.max_seq, cfg.d_model, Group::TextBackbone);
  for (int i = 0; i < cfg.n_shared; ++i) {
    detail::add_block_params(ps, "shared." + std::to_string(i), cfg.d_model, cfg.d_ff,
                             Group::TextBackbone);
  }
  for (int j = 0; j < cfg.n_branch; ++j) {
    detail::add_block_params(ps, "text_branch." + std::to_string(j), cfg.d_model, cfg.d_ff,
                             Group::TextBackbone);
    detail::add_block_params(ps, "speech_branch." + std::to_string(j), cfg.d_model, cfg.d_ff,
                             Group::SpeechNew);
  }
  ps.add("text_branch.final_ln.gain", 1, cfg.d_model, Group::TextBackbone);
  ps.add("text_branch.final_ln.bias", 1, cfg.d_model, Group::TextBackbone);
  ps.add("speech_branch.final_ln.gain", 1, cfg.d_model, Group::SpeechNew);
  ps.add("speech_branch.final_ln.bias", 1, cfg.d_model, Group::SpeechNew);
  ps.add("text_head", cfg.d_model, cfg.text_vocab, Group::TextBackbone);
  ps.add("speech_head", cfg.d_model, cfg.speech_vocab, Group::SpeechNew);

  auto copy_from_base = [&](const std::string& dst, const std::string& src) {
    ps.at(dst).value = base.params.at(src).value;
  };
  static const char* kBlockSuffixes[] = {".ln1.gain", ".ln1.bias", ".attn.wq", ".attn.wk",
                                         ".attn.wv", ".attn.wo", ".ln2.gain", ".ln2.bias",
                                         ".ffn.w1",  ".ffn.w2"};
  copy_from_base("text_embed", "embed");
  copy_from_base("pos_embed", "pos_embed");
  copy_from_base("text_head", "head");
  for (int i = 0; i < cfg.n_shared; ++i) {
    for (const char* suffix : kBlockSuffixes) {
      copy_from_base("shared." + std::to_string(i) + suffix,
                     "blocks." + std::to_string(i) + suffix);
    }
  }
  for (int j = 0; j < cfg.n_branch; ++j) {
    const std::string src = "blocks." + std::to_string(cfg.n_shared + j);
    for (const char* suffix : kBlockSuffixes) {
      copy_from_base("text_branch." + std::to_string(j) + suffix, src + suffix);
      copy_from_base("speech_branch." + std::to_string(j) + suffix, src + suffix);
    }
  }
  copy_from_base("text_branch.final_ln.gain", "final_ln.gain");
  copy_from_base("text_branch.final_ln.bias", "final_ln.bias");
  copy_from_base("speech_branch.final_ln.gain", "final_ln.gain");
  copy_from_base("speech_branch.final_ln.bias", "final_ln.bias");

  Rng rng(seed);
  ps.at("speech_embed").value = Mat<T>::randn(cfg.speech_vocab, cfg.d_model, T(0.02), rng);
  ps.at("speech_head").value = Mat<T>::randn(cfg.d_model, cfg.speech_vocab, T(0.02), rng);
  return m;
}

// Merged-vocabulary baseline: speech ids appended to the text vocabulary,
// fresh embedding rows and head columns, no modality-specific layers.
template <class T>
TextLm<T> expand_vocab(const TextLm<T>& base, int extra, uint64_t seed) {
  MSPL_CHECK(extra >= 4, "expand_vocab: need room for reserved speech ids");
  TextLmConfig cfg = base.cfg;
  cfg.vocab = base.cfg.vocab + extra;
  TextLm<T> m = TextLm<T>::init(cfg, seed);
  for (size_t i = 0; i < m.params.size(); ++i) {
    ParamTensor<T>& dst = m.params[i];
    const ParamTensor<T>& src = base.params.at(dst.name);
    if (dst.name == "embed") {
      for (int r = 0; r < src.value.rows; ++r) {
        std::copy(src.value.row(r), src.value.row(r) + src.value.cols, dst.value.row(r));
      }
    } else if (dst.name == "head") {
      for (int r = 0; r < src.value.rows; ++r) {
        std::copy(src.value.row(r), src.value.row(r) + src.value.cols, dst.value.row(r));
      }
    } else {
      dst.value = src.value;
    }
  }
  return m;
}

inline int merged_id(int text_vocab, const Token& t) {
  return t.modality == Modality::Text ? t.id : text_vocab + t.id;
}

inline std::vector<int> merged_ids(int text_vocab, const std::vector<Token>& tokens) {
  std::vector<int> ids(tokens.size());
  for (size_t i = 0; i < tokens.size(); ++i) {
    ids[i] = merged_id(text_vocab, tokens[i]);
  }
  return ids;
}

// ---------------------------------------------------------------------------
// Sampling.

enum class GenMode : uint8_t { TextOnly, SpeechOnly, Interleaved };

// temperature == 0 selects argmax; top_k == 0 means the full vocabulary.
inline int sample_logits(const std::vector<double>& logits, double temperature, int top_k,
                         Rng& rng) {
  MSPL_CHECK(temperature >= 0.0, "sample: temperature must be non-negative");
  const int v = int(logits.size());
  if (temperature == 0.0) {
    int best = 0;
    for (int i = 1; i < v; ++i) {
      if (logits[size_t(i)] > logits[size_t(best)]) {
        best = i;
      }
    }
    return best;
  }
  std::vector<int> order(logits.size());
  std::iota(order.begin(), order.end(), 0);
  const int keep = (top_k > 0 && top_k < v) ? top_k : v;
  std::partial_sort(order.begin(), order.begin() + keep, order.end(), [&](int a, int b) {
    if (logits[size_t(a)] != logits[size_t(b)]) {
      return logits[size_t(a)] > logits[size_t(b)];
    }
    return a < b;
  });
  double mx = logits[size_t(order[0])];
  std::vector<double> probs(size_t(keep), 0.0);
  for (int i = 0; i < keep; ++i) {
    probs[size_t(i)] = std::exp((logits[size_t(order[size_t(i)])] - mx) / temperature);
  }
  return order[rng.weighted(probs)];
}

template <class T>
std::vector<Token> generate(SplitLm<T>& m, const std::vector<Token>& prompt, GenMode mode,
                            int max_new, double temperature, int top_k, Rng& rng) {
  MSPL_CHECK(!prompt.empty() && prompt[0].id == kBos, "generate: prompt must begin with BOS");
  MSPL_CHECK(temperature >= 0.0, "generate: temperature must be non-negative");
  check_tokens<T>(m.cfg, prompt);

  Modality active;
  switch (mode) {
    case GenMode::TextOnly: active = Modality::Text; break;
    case GenMode::SpeechOnly: active = Modality::Speech; break;
    case GenMode::Interleaved: active = prompt.back().modality; break;
  }

  std::vector<Token> tokens = prompt;
  std::vector<Token> emitted;
  Graph<T> g;
  for (int step = 0; step < max_new && int(tokens.size()) < m.cfg.max_seq; ++step) {
    g.reset();
    SplitForwardOpts opts;
    opts.heads = active == Modality::Text ? HeadSelect::TextOnly : HeadSelect::SpeechOnly;
    auto fwd = split_forward(g, m, tokens, opts);
    const auto head =
        active == Modality::Text ? fwd.text_logits : fwd.speech_logits;
    const Mat<T>& logits = g.value(head);
    std::vector<double> row(size_t(logits.cols));
    for (int j = 0; j < logits.cols; ++j) {
      row[size_t(j)] = double(logits(logits.rows - 1, j));
    }
    const int id = sample_logits(row, temperature, top_k, rng);
    const Token tok{active, id};
    tokens.push_back(tok);
    emitted.push_back(tok);
    if (id == kEos) {
      break;
    }
    if (mode == GenMode::Interleaved && id == kModeSwitch) {
      active = active == Modality::Text ? Modality::Speech : Modality::Text;
    }
  }
  return emitted;
}

using TextLmF = TextLm<float>;
using SplitLmF = SplitLm<float>;

}  // namespace mspl
