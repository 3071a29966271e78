#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mspl/mat.hpp"
#include "mspl/model.hpp"
#include "mspl/rng.hpp"

namespace mspl::data {

// Synthetic paired token language: an order-1 Markov chain over text ids plus
// a codebook expanding each text id into a short unique speech-id sequence.
struct CorpusSpec {
  int text_vocab = 256;
  int speech_vocab = 512;
  double transition_temperature = 0.3;
  double noise_prob = 0.0;  // per-speech-token substitution
  uint64_t seed = 1;
  int expand_min = 2;
  int expand_max = 4;

  void validate() const;
  int content_states() const { return text_vocab - kNumReserved; }
};

struct Language {
  CorpusSpec spec;
  Matd transitions;                        // content x content, row-stochastic
  std::vector<std::vector<int>> codebook;  // by text id; empty for reserved ids
  std::map<std::vector<int>, int> inverse; // exact expansion -> text id

  // -1 when the span is not a codebook entry.
  int decode_exact(const std::vector<int>& expansion) const;
};

Language gen_language(const CorpusSpec& spec, Rng& rng);

// Span pair grounding text/speech alignment: text indices refer to the
// underlying content stream, speech indices to the materialized speech
// stream of whatever object carries the pair.
struct AlignmentPair {
  int text_begin = 0;
  int text_end = 0;
  int speech_begin = 0;
  int speech_end = 0;

  bool operator==(const AlignmentPair&) const = default;
};

struct PairedSample {
  std::vector<int> text;
  std::vector<int> speech;
  std::vector<AlignmentPair> pairs;  // one per text token
};

PairedSample sample_paired(const Language& lang, int length, Rng& rng);

enum class RecordKind : uint8_t { Interleaved, Unsupervised, Sft };

struct Chunk {
  Modality modality = Modality::Text;
  std::vector<int> ids;

  bool operator==(const Chunk&) const = default;
};

struct Record {
  uint64_t id = 0;
  RecordKind kind = RecordKind::Interleaved;
  std::vector<Chunk> chunks;
  std::vector<AlignmentPair> pairs;

  bool operator==(const Record&) const = default;

  std::vector<int> speech_stream() const;  // concatenated speech chunks
  std::vector<int> text_stream() const;    // concatenated text chunks
  bool has_modality(Modality m) const;
};

// Cuts the text stream at uniform-random lengths in [min_chunk, max_chunk]
// and renders each chunk as text or as its aligned speech by fair coin. A
// multi-chunk record always contains both modalities. Pairs are kept for the
// speech-rendered tokens, re-indexed to the record's speech stream.
Record chunk_interleave(const PairedSample& sample, int min_chunk, int max_chunk, Rng& rng);

Record unsupervised_record(const PairedSample& sample);

// Single text chunk; used for the text-only corpora.
Record text_record(const PairedSample& sample);

// Word error rate: unit-cost Levenshtein distance over reference length.
double wer(const std::vector<int>& reference, const std::vector<int>& hypothesis);

struct WerItem {
  uint64_t id = 0;
  std::vector<int> reference;
  std::vector<int> hypothesis;
};

struct FilterOutcome {
  struct Rejection {
    uint64_t id;
    double wer;
  };
  struct ItemError {
    uint64_t id;
    std::string message;
  };
  std::vector<uint64_t> kept;
  std::vector<Rejection> rejected;
  std::vector<ItemError> errors;
};

// Keeps items with wer < threshold (discard at >= threshold). Per-item wer
// failures are collected, never abort the batch.
FilterOutcome filter_corpus(const std::vector<WerItem>& items, double threshold = 0.2);

// Four input-output modality configurations over shared content.
enum class SftConfig : uint8_t {
  SpeechToSpeech = 0,
  SpeechToText = 1,
  TextToSpeech = 2,
  TextToText = 3,
};

inline const char* sft_config_name(SftConfig c) {
  switch (c) {
    case SftConfig::SpeechToSpeech: return "s2s";
    case SftConfig::SpeechToText: return "s2t";
    case SftConfig::TextToSpeech: return "t2s";
    case SftConfig::TextToText: return "t2t";
  }
  return "?";
}

struct SftContent {
  uint64_t content_id = 0;
  std::vector<int> question;
  std::vector<int> answer;
};

struct SftPair {
  uint64_t content_id = 0;
  SftConfig config = SftConfig::TextToText;
  std::vector<Token> question;  // BOS-prefixed; ends with MODE_SWITCH on a modality change
  std::vector<Token> answer;    // EOS-terminated
  std::vector<AlignmentPair> pairs;
};

SftContent sample_sft_content(const Language& lang, int question_len, int answer_len,
                              uint64_t content_id, Rng& rng);

SftPair render_sft(const Language& lang, const SftContent& content, SftConfig config, Rng& rng);

// One pair per content item, configs drawn from the mix
// (s2s, s2t, t2s, t2t); weights must sum to 1.
std::vector<SftPair> build_sft(const Language& lang, const std::vector<SftContent>& pool,
                               const std::array<double, 4>& mix, Rng& rng);

Record sft_record(uint64_t id, const SftPair& pair);

// JSON Lines persistence; round trips are value-identical.
void save_corpus(const std::vector<Record>& records, const std::string& path);
std::vector<Record> load_corpus(const std::string& path);

// Simulated recognition of a record's speech stream: each aligned expansion
// decodes to its text id on an exact codebook match and to MODE_SWITCH (a
// never-in-content marker) otherwise.
std::vector<int> simulate_asr(const Language& lang, const Record& record);

// Underlying text of a record; speech chunks are decoded through the
// alignment pairs and the inverse codebook (exact decode required).
std::vector<int> reconstruct_text(const Language& lang, const Record& record);

}  // namespace mspl::data
