#include "mspl/corpus.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

namespace mspl::data {

void CorpusSpec::validate() const {
  MSPL_CHECK(text_vocab >= kNumReserved + 2, "corpus spec: text vocab too small");
  MSPL_CHECK(speech_vocab >= kNumReserved + 2, "corpus spec: speech vocab too small");
  MSPL_CHECK(transition_temperature > 0.0, "corpus spec: temperature must be positive");
  MSPL_CHECK(noise_prob >= 0.0 && noise_prob < 1.0, "corpus spec: noise_prob must be in [0,1)");
  MSPL_CHECK(expand_min >= 2 && expand_min <= expand_max && expand_max <= 4,
             "corpus spec: expansion lengths must lie in [2,4]");
}

int Language::decode_exact(const std::vector<int>& expansion) const {
  auto it = inverse.find(expansion);
  return it == inverse.end() ? -1 : it->second;
}

Language gen_language(const CorpusSpec& spec, Rng& rng) {
  spec.validate();
  Language lang;
  lang.spec = spec;
  const int states = spec.content_states();

  lang.transitions = Matd(states, states);
  for (int r = 0; r < states; ++r) {
    double mx = -1e300;
    for (int c = 0; c < states; ++c) {
      lang.transitions(r, c) = rng.normal() / spec.transition_temperature;
      mx = std::max(mx, lang.transitions(r, c));
    }
    double sum = 0.0;
    for (int c = 0; c < states; ++c) {
      lang.transitions(r, c) = std::exp(lang.transitions(r, c) - mx);
      sum += lang.transitions(r, c);
    }
    for (int c = 0; c < states; ++c) {
      lang.transitions(r, c) /= sum;
    }
  }

  lang.codebook.assign(size_t(spec.text_vocab), {});
  const int speech_content = spec.speech_vocab - kNumReserved;
  for (int id = kNumReserved; id < spec.text_vocab; ++id) {
    std::vector<int> expansion;
    for (int attempt = 0;; ++attempt) {
      MSPL_CHECK(attempt < 1000, "gen_language: cannot build a unique codebook; "
                                 "speech vocabulary too small");
      const int len = rng.range(spec.expand_min, spec.expand_max);
      expansion.assign(size_t(len), 0);
      for (int& tok : expansion) {
        tok = kNumReserved + int(rng.below(uint64_t(speech_content)));
      }
      if (lang.inverse.find(expansion) == lang.inverse.end()) {
        break;
      }
    }
    lang.codebook[size_t(id)] = expansion;
    lang.inverse[expansion] = id;
  }
  return lang;
}

PairedSample sample_paired(const Language& lang, int length, Rng& rng) {
  MSPL_CHECK(length >= 1, "sample_paired: length must be >= 1");
  const auto& spec = lang.spec;
  const int states = spec.content_states();
  const int speech_content = spec.speech_vocab - kNumReserved;

  PairedSample out;
  out.text.reserve(size_t(length));
  int state = -1;
  for (int i = 0; i < length; ++i) {
    if (state < 0) {
      state = int(rng.below(uint64_t(states)));
    } else {
      const double r = rng.uniform();
      double cum = 0.0;
      int next = states - 1;
      for (int c = 0; c < states; ++c) {
        cum += lang.transitions(state, c);
        if (r < cum) {
          next = c;
          break;
        }
      }
      state = next;
    }
    const int text_id = kNumReserved + state;
    out.text.push_back(text_id);

    const auto& expansion = lang.codebook[size_t(text_id)];
    AlignmentPair pair;
    pair.text_begin = i;
    pair.text_end = i + 1;
    pair.speech_begin = int(out.speech.size());
    for (int tok : expansion) {
      if (rng.uniform() < spec.noise_prob) {
        int sub = tok;
        while (sub == tok) {
          sub = kNumReserved + int(rng.below(uint64_t(speech_content)));
        }
        tok = sub;
      }
      out.speech.push_back(tok);
    }
    pair.speech_end = int(out.speech.size());
    out.pairs.push_back(pair);
  }
  return out;
}

std::vector<int> Record::speech_stream() const {
  std::vector<int> out;
  for (const Chunk& c : chunks) {
    if (c.modality == Modality::Speech) {
      out.insert(out.end(), c.ids.begin(), c.ids.end());
    }
  }
  return out;
}

std::vector<int> Record::text_stream() const {
  std::vector<int> out;
  for (const Chunk& c : chunks) {
    if (c.modality == Modality::Text) {
      out.insert(out.end(), c.ids.begin(), c.ids.end());
    }
  }
  return out;
}

bool Record::has_modality(Modality m) const {
  for (const Chunk& c : chunks) {
    if (c.modality == m) {
      return true;
    }
  }
  return false;
}

Record chunk_interleave(const PairedSample& sample, int min_chunk, int max_chunk, Rng& rng) {
  MSPL_CHECK(!sample.text.empty(), "chunk_interleave: empty sample");
  MSPL_CHECK(min_chunk >= 1 && min_chunk <= max_chunk, "chunk_interleave: bad chunk range");

  const int n = int(sample.text.size());
  struct Cut {
    int begin;
    int end;
    bool speech;
  };
  std::vector<Cut> cuts;
  int t = 0;
  while (t < n) {
    const int len = rng.range(min_chunk, max_chunk);
    const int end = std::min(t + len, n);
    cuts.push_back({t, end, rng.uniform() < 0.5});
    t = end;
  }
  if (cuts.size() >= 2) {
    bool all_same = true;
    for (const Cut& c : cuts) {
      all_same = all_same && c.speech == cuts[0].speech;
    }
    if (all_same) {
      cuts.back().speech = !cuts.back().speech;
    }
  }

  Record rec;
  rec.kind = RecordKind::Interleaved;
  int speech_cursor = 0;
  for (const Cut& cut : cuts) {
    Chunk chunk;
    if (!cut.speech) {
      chunk.modality = Modality::Text;
      chunk.ids.assign(sample.text.begin() + cut.begin, sample.text.begin() + cut.end);
    } else {
      chunk.modality = Modality::Speech;
      const int s0 = sample.pairs[size_t(cut.begin)].speech_begin;
      const int s1 = sample.pairs[size_t(cut.end - 1)].speech_end;
      chunk.ids.assign(sample.speech.begin() + s0, sample.speech.begin() + s1);
      for (int j = cut.begin; j < cut.end; ++j) {
        const AlignmentPair& src = sample.pairs[size_t(j)];
        AlignmentPair pair;
        pair.text_begin = j;
        pair.text_end = j + 1;
        pair.speech_begin = speech_cursor + (src.speech_begin - s0);
        pair.speech_end = speech_cursor + (src.speech_end - s0);
        rec.pairs.push_back(pair);
      }
      speech_cursor += s1 - s0;
    }
    rec.chunks.push_back(std::move(chunk));
  }
  return rec;
}

Record unsupervised_record(const PairedSample& sample) {
  MSPL_CHECK(!sample.speech.empty(), "unsupervised_record: empty sample");
  Record rec;
  rec.kind = RecordKind::Unsupervised;
  rec.chunks.push_back(Chunk{Modality::Speech, sample.speech});
  return rec;
}

Record text_record(const PairedSample& sample) {
  MSPL_CHECK(!sample.text.empty(), "text_record: empty sample");
  Record rec;
  rec.kind = RecordKind::Interleaved;
  rec.chunks.push_back(Chunk{Modality::Text, sample.text});
  return rec;
}

double wer(const std::vector<int>& reference, const std::vector<int>& hypothesis) {
  MSPL_CHECK(!reference.empty(), "wer: empty reference");
  const size_t n = reference.size(), m = hypothesis.size();
  std::vector<int> prev(m + 1), curr(m + 1);
  for (size_t j = 0; j <= m; ++j) {
    prev[j] = int(j);
  }
  for (size_t i = 1; i <= n; ++i) {
    curr[0] = int(i);
    for (size_t j = 1; j <= m; ++j) {
      const int sub = prev[j - 1] + (reference[i - 1] == hypothesis[j - 1] ? 0 : 1);
      curr[j] = std::min({sub, prev[j] + 1, curr[j - 1] + 1});
    }
    std::swap(prev, curr);
  }
  return double(prev[m]) / double(n);
}

FilterOutcome filter_corpus(const std::vector<WerItem>& items, double threshold) {
  MSPL_CHECK(threshold > 0.0 && threshold <= 1.0, "filter: threshold must be in (0,1]");
  FilterOutcome out;
  for (const WerItem& item : items) {
    try {
      const double score = wer(item.reference, item.hypothesis);
      if (score < threshold) {
        out.kept.push_back(item.id);
      } else {
        out.rejected.push_back({item.id, score});
      }
    } catch (const ContractError& e) {
      out.errors.push_back({item.id, e.what()});
    }
  }
  return out;
}

SftContent sample_sft_content(const Language& lang, int question_len, int answer_len,
                              uint64_t content_id, Rng& rng) {
  MSPL_CHECK(question_len >= 1 && answer_len >= 1, "sft content: lengths must be positive");
  auto sample = sample_paired(lang, question_len + answer_len, rng);
  SftContent content;
  content.content_id = content_id;
  content.question.assign(sample.text.begin(), sample.text.begin() + question_len);
  content.answer.assign(sample.text.begin() + question_len, sample.text.end());
  return content;
}

namespace {

// Renders content ids in one modality, appending alignment pairs for speech.
void render_side(const Language& lang, const std::vector<int>& content, Modality m,
                 int content_offset, int* speech_cursor, Rng& rng, std::vector<Token>* out,
                 std::vector<AlignmentPair>* pairs) {
  if (m == Modality::Text) {
    for (int id : content) {
      out->push_back(text_tok(id));
    }
    return;
  }
  const auto& spec = lang.spec;
  const int speech_content = spec.speech_vocab - kNumReserved;
  for (size_t j = 0; j < content.size(); ++j) {
    AlignmentPair pair;
    pair.text_begin = content_offset + int(j);
    pair.text_end = pair.text_begin + 1;
    pair.speech_begin = *speech_cursor;
    for (int tok : lang.codebook[size_t(content[j])]) {
      if (rng.uniform() < spec.noise_prob) {
        int sub = tok;
        while (sub == tok) {
          sub = kNumReserved + int(rng.below(uint64_t(speech_content)));
        }
        tok = sub;
      }
      out->push_back(speech_tok(tok));
      *speech_cursor += 1;
    }
    pair.speech_end = *speech_cursor;
    pairs->push_back(pair);
  }
}

}  // namespace

SftPair render_sft(const Language& lang, const SftContent& content, SftConfig config, Rng& rng) {
  const Modality q_mod = (config == SftConfig::SpeechToSpeech || config == SftConfig::SpeechToText)
                             ? Modality::Speech
                             : Modality::Text;
  const Modality a_mod = (config == SftConfig::SpeechToSpeech || config == SftConfig::TextToSpeech)
                             ? Modality::Speech
                             : Modality::Text;
  SftPair pair;
  pair.content_id = content.content_id;
  pair.config = config;
  int speech_cursor = 0;
  pair.question.push_back(Token{q_mod, kBos});
  render_side(lang, content.question, q_mod, 0, &speech_cursor, rng, &pair.question, &pair.pairs);
  if (q_mod != a_mod) {
    pair.question.push_back(Token{q_mod, kModeSwitch});
  }
  render_side(lang, content.answer, a_mod, int(content.question.size()), &speech_cursor, rng,
              &pair.answer, &pair.pairs);
  pair.answer.push_back(Token{a_mod, kEos});
  return pair;
}

std::vector<SftPair> build_sft(const Language& lang, const std::vector<SftContent>& pool,
                               const std::array<double, 4>& mix, Rng& rng) {
  double total = 0.0;
  for (double w : mix) {
    total += w;
  }
  MSPL_CHECK(std::abs(total - 1.0) <= 1e-9, "build_sft: mix weights must sum to 1");
  const std::vector<double> weights(mix.begin(), mix.end());
  std::vector<SftPair> out;
  out.reserve(pool.size());
  for (const SftContent& content : pool) {
    const auto config = SftConfig(rng.weighted(weights));
    out.push_back(render_sft(lang, content, config, rng));
  }
  return out;
}

Record sft_record(uint64_t id, const SftPair& pair) {
  Record rec;
  rec.id = id;
  rec.kind = RecordKind::Sft;
  Chunk q, a;
  q.modality = pair.question.front().modality;
  for (const Token& t : pair.question) {
    MSPL_CHECK(t.modality == q.modality, "sft record: mixed-modality question side");
    q.ids.push_back(t.id);
  }
  a.modality = pair.answer.front().modality;
  for (const Token& t : pair.answer) {
    MSPL_CHECK(t.modality == a.modality, "sft record: mixed-modality answer side");
    a.ids.push_back(t.id);
  }
  rec.chunks.push_back(std::move(q));
  rec.chunks.push_back(std::move(a));
  rec.pairs = pair.pairs;
  return rec;
}

// ---------------------------------------------------------------------------
// Persistence.

namespace {

const char* kind_tag(RecordKind k) {
  switch (k) {
    case RecordKind::Interleaved: return "interleaved";
    case RecordKind::Unsupervised: return "unsup";
    case RecordKind::Sft: return "sft";
  }
  return "?";
}

RecordKind kind_from_tag(const std::string& tag, size_t line) {
  if (tag == "interleaved") {
    return RecordKind::Interleaved;
  }
  if (tag == "unsup") {
    return RecordKind::Unsupervised;
  }
  if (tag == "sft") {
    return RecordKind::Sft;
  }
  io_fail("corpus line ", line, ": unknown record kind '", tag, "'");
}

void validate_record(const Record& rec, size_t line) {
  int speech_len = 0;
  for (const Chunk& c : rec.chunks) {
    MSPL_CHECK_IO(!c.ids.empty(), "corpus line ", line, ": empty chunk");
    for (int id : c.ids) {
      MSPL_CHECK_IO(id >= 0, "corpus line ", line, ": negative token id");
    }
    if (c.modality == Modality::Speech) {
      speech_len += int(c.ids.size());
    }
  }
  if (rec.kind == RecordKind::Unsupervised) {
    MSPL_CHECK_IO(!rec.has_modality(Modality::Text) && rec.pairs.empty(), "corpus line ", line,
                  ": unsupervised records hold speech chunks only, no pairs");
  }
  int prev_text_end = 0, prev_speech_end = 0;
  for (const AlignmentPair& p : rec.pairs) {
    MSPL_CHECK_IO(p.text_begin < p.text_end && p.speech_begin < p.speech_end, "corpus line ",
                  line, ": empty alignment span");
    MSPL_CHECK_IO(p.text_begin >= prev_text_end && p.speech_begin >= prev_speech_end,
                  "corpus line ", line, ": alignment pairs overlap or are out of order");
    MSPL_CHECK_IO(p.speech_end <= speech_len, "corpus line ", line,
                  ": speech span outside the record");
    prev_text_end = p.text_end;
    prev_speech_end = p.speech_end;
  }
}

}  // namespace

void save_corpus(const std::vector<Record>& records, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  MSPL_CHECK_IO(os.is_open(), "corpus: cannot open for write: ", path);
  for (const Record& rec : records) {
    validate_record(rec, rec.id);
    nlohmann::ordered_json j;
    j["id"] = rec.id;
    j["kind"] = kind_tag(rec.kind);
    auto chunks = nlohmann::ordered_json::array();
    for (const Chunk& c : rec.chunks) {
      nlohmann::ordered_json jc;
      jc["m"] = c.modality == Modality::Text ? "t" : "s";
      jc["ids"] = c.ids;
      chunks.push_back(std::move(jc));
    }
    j["chunks"] = std::move(chunks);
    auto pairs = nlohmann::ordered_json::array();
    for (const AlignmentPair& p : rec.pairs) {
      pairs.push_back(nlohmann::ordered_json::array(
          {nlohmann::ordered_json::array({p.text_begin, p.text_end}),
           nlohmann::ordered_json::array({p.speech_begin, p.speech_end})}));
    }
    j["pairs"] = std::move(pairs);
    os << j.dump() << "\n";
  }
  MSPL_CHECK_IO(os.good(), "corpus: write failed: ", path);
}

std::vector<Record> load_corpus(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  MSPL_CHECK_IO(is.is_open(), "corpus: cannot open: ", path);
  std::vector<Record> out;
  std::string text;
  size_t line = 0;
  while (std::getline(is, text)) {
    ++line;
    const auto j = nlohmann::json::parse(text, nullptr, false);
    MSPL_CHECK_IO(!j.is_discarded() && j.is_object(), "corpus line ", line, ": malformed JSON");
    try {
      Record rec;
      rec.id = j.at("id").get<uint64_t>();
      rec.kind = kind_from_tag(j.at("kind").get<std::string>(), line);
      for (const auto& jc : j.at("chunks")) {
        Chunk c;
        const auto m = jc.at("m").get<std::string>();
        MSPL_CHECK_IO(m == "t" || m == "s", "corpus line ", line, ": bad modality tag '", m, "'");
        c.modality = m == "t" ? Modality::Text : Modality::Speech;
        c.ids = jc.at("ids").get<std::vector<int>>();
        rec.chunks.push_back(std::move(c));
      }
      for (const auto& jp : j.at("pairs")) {
        MSPL_CHECK_IO(jp.is_array() && jp.size() == 2 && jp[0].size() == 2 && jp[1].size() == 2,
                      "corpus line ", line, ": malformed alignment pair");
        AlignmentPair p;
        p.text_begin = jp[0][0].get<int>();
        p.text_end = jp[0][1].get<int>();
        p.speech_begin = jp[1][0].get<int>();
        p.speech_end = jp[1][1].get<int>();
        rec.pairs.push_back(p);
      }
      validate_record(rec, line);
      out.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      io_fail("corpus line ", line, ": ", e.what());
    }
  }
  return out;
}

std::vector<int> simulate_asr(const Language& lang, const Record& record) {
  const std::vector<int> speech = record.speech_stream();
  std::vector<int> transcript;
  transcript.reserve(record.pairs.size());
  for (const AlignmentPair& p : record.pairs) {
    MSPL_CHECK(p.speech_end <= int(speech.size()), "simulate_asr: span outside speech stream");
    const std::vector<int> expansion(speech.begin() + p.speech_begin,
                                     speech.begin() + p.speech_end);
    const int id = lang.decode_exact(expansion);
    transcript.push_back(id >= 0 ? id : kModeSwitch);
  }
  return transcript;
}

std::vector<int> reconstruct_text(const Language& lang, const Record& record) {
  std::vector<int> out;
  int speech_cursor = 0;
  size_t pair_idx = 0;
  for (const Chunk& c : record.chunks) {
    if (c.modality == Modality::Text) {
      out.insert(out.end(), c.ids.begin(), c.ids.end());
      continue;
    }
    const int chunk_end = speech_cursor + int(c.ids.size());
    while (pair_idx < record.pairs.size() &&
           record.pairs[pair_idx].speech_begin < chunk_end) {
      const AlignmentPair& p = record.pairs[pair_idx];
      MSPL_CHECK(p.speech_begin >= speech_cursor && p.speech_end <= chunk_end,
                 "reconstruct_text: pair crosses a chunk boundary");
      const std::vector<int> expansion(
          c.ids.begin() + (p.speech_begin - speech_cursor),
          c.ids.begin() + (p.speech_end - speech_cursor));
      const int id = lang.decode_exact(expansion);
      MSPL_CHECK(id >= 0, "reconstruct_text: expansion does not decode");
      out.push_back(id);
      ++pair_idx;
    }
    speech_cursor = chunk_end;
  }
  return out;
}

}  // namespace mspl::data
