#include "mspl/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace mspl {

namespace {

constexpr char kMagic[4] = {'M', 'S', 'P', 'L'};

void write_u32(std::ostream& os, uint32_t v) {
  unsigned char buf[4] = {
      (unsigned char)(v & 0xFF),
      (unsigned char)((v >> 8) & 0xFF),
      (unsigned char)((v >> 16) & 0xFF),
      (unsigned char)((v >> 24) & 0xFF),
  };
  os.write(reinterpret_cast<const char*>(buf), 4);
}

uint32_t read_u32(std::istream& is) {
  unsigned char buf[4];
  is.read(reinterpret_cast<char*>(buf), 4);
  MSPL_CHECK_IO(is.good(), "checkpoint: truncated file");
  return uint32_t(buf[0]) | (uint32_t(buf[1]) << 8) | (uint32_t(buf[2]) << 16) |
         (uint32_t(buf[3]) << 24);
}

void write_payload(std::ostream& os, const Matf& m) {
  static_assert(sizeof(float) == 4);
  os.write(reinterpret_cast<const char*>(m.data.data()),
           std::streamsize(m.size() * sizeof(float)));
}

void save_store(const std::string& path, const std::string& config_json,
                const ParamStore<float>& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  MSPL_CHECK_IO(os.is_open(), "checkpoint: cannot open for write: ", path);
  os.write(kMagic, 4);
  write_u32(os, kCheckpointVersion);
  write_u32(os, uint32_t(config_json.size()));
  os.write(config_json.data(), std::streamsize(config_json.size()));
  for (const std::string& name : params.sorted_names()) {
    const Matf& m = params.at(name).value;
    write_u32(os, uint32_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    write_u32(os, 2);
    write_u32(os, uint32_t(m.rows));
    write_u32(os, uint32_t(m.cols));
    write_payload(os, m);
  }
  MSPL_CHECK_IO(os.good(), "checkpoint: write failed: ", path);
}

struct RawCheckpoint {
  std::string config_json;
  std::vector<std::pair<std::string, Matf>> tensors;
};

RawCheckpoint load_raw(const std::string& path, bool config_only = false) {
  std::ifstream is(path, std::ios::binary);
  MSPL_CHECK_IO(is.is_open(), "checkpoint: cannot open: ", path);
  char magic[4];
  is.read(magic, 4);
  MSPL_CHECK_IO(is.good() && std::memcmp(magic, kMagic, 4) == 0,
                "checkpoint: bad magic in ", path);
  const uint32_t version = read_u32(is);
  MSPL_CHECK_IO(version == kCheckpointVersion, "checkpoint: unsupported version ", version);
  const uint32_t config_len = read_u32(is);
  RawCheckpoint out;
  out.config_json.resize(config_len);
  is.read(out.config_json.data(), config_len);
  MSPL_CHECK_IO(is.good(), "checkpoint: truncated config in ", path);
  if (config_only) {
    return out;
  }
  while (is.peek() != std::char_traits<char>::eof()) {
    const uint32_t name_len = read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const uint32_t ndims = read_u32(is);
    MSPL_CHECK_IO(ndims == 2, "checkpoint: tensor ", name, " has ", ndims, " dims, want 2");
    const uint32_t rows = read_u32(is);
    const uint32_t cols = read_u32(is);
    Matf m{int(rows), int(cols)};
    is.read(reinterpret_cast<char*>(m.data.data()), std::streamsize(m.size() * sizeof(float)));
    MSPL_CHECK_IO(is.good(), "checkpoint: truncated payload for ", name);
    out.tensors.emplace_back(std::move(name), std::move(m));
  }
  return out;
}

void fill_store(ParamStore<float>& params, RawCheckpoint&& raw, const std::string& path) {
  MSPL_CHECK_IO(raw.tensors.size() == params.size(), "checkpoint ", path, " holds ",
                raw.tensors.size(), " tensors, model wants ", params.size());
  for (auto& [name, mat] : raw.tensors) {
    MSPL_CHECK_IO(params.has(name), "checkpoint ", path, ": unexpected tensor ", name);
    ParamTensor<float>& t = params.at(name);
    MSPL_CHECK_IO(t.value.same_shape(mat), "checkpoint ", path, ": tensor ", name,
                  " shape mismatch");
    t.value = std::move(mat);
  }
}

nlohmann::json parse_config(const std::string& config_json, const std::string& path) {
  auto j = nlohmann::json::parse(config_json, nullptr, false);
  MSPL_CHECK_IO(!j.is_discarded(), "checkpoint: malformed config JSON in ", path);
  return j;
}

}  // namespace

std::string model_config_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["kind"] = "split";
  j["d_model"] = cfg.d_model;
  j["n_heads"] = cfg.n_heads;
  j["d_ff"] = cfg.d_ff;
  j["n_shared"] = cfg.n_shared;
  j["n_branch"] = cfg.n_branch;
  j["text_vocab"] = cfg.text_vocab;
  j["speech_vocab"] = cfg.speech_vocab;
  j["max_seq"] = cfg.max_seq;
  return j.dump();
}

std::string text_config_json(const TextLmConfig& cfg) {
  nlohmann::json j;
  j["kind"] = "text";
  j["d_model"] = cfg.d_model;
  j["n_heads"] = cfg.n_heads;
  j["d_ff"] = cfg.d_ff;
  j["n_blocks"] = cfg.n_blocks;
  j["vocab"] = cfg.vocab;
  j["max_seq"] = cfg.max_seq;
  return j.dump();
}

void save_text_checkpoint(const std::string& path, const TextLm<float>& m) {
  save_store(path, text_config_json(m.cfg), m.params);
}

void save_split_checkpoint(const std::string& path, const SplitLm<float>& m) {
  save_store(path, model_config_json(m.cfg), m.params);
}

std::string checkpoint_kind(const std::string& path) {
  auto raw = load_raw(path, /*config_only=*/true);
  auto j = parse_config(raw.config_json, path);
  MSPL_CHECK_IO(j.contains("kind") && j["kind"].is_string(),
                "checkpoint: config missing kind in ", path);
  return j["kind"].get<std::string>();
}

TextLm<float> load_text_checkpoint(const std::string& path) {
  auto raw = load_raw(path);
  auto j = parse_config(raw.config_json, path);
  MSPL_CHECK_IO(j.value("kind", "") == "text", "checkpoint ", path, " is not a text model");
  TextLmConfig cfg;
  cfg.d_model = j.at("d_model").get<int>();
  cfg.n_heads = j.at("n_heads").get<int>();
  cfg.d_ff = j.at("d_ff").get<int>();
  cfg.n_blocks = j.at("n_blocks").get<int>();
  cfg.vocab = j.at("vocab").get<int>();
  cfg.max_seq = j.at("max_seq").get<int>();
  TextLm<float> m = TextLm<float>::init(cfg, 0);
  fill_store(m.params, std::move(raw), path);
  return m;
}

SplitLm<float> load_split_checkpoint(const std::string& path) {
  auto raw = load_raw(path);
  auto j = parse_config(raw.config_json, path);
  MSPL_CHECK_IO(j.value("kind", "") == "split", "checkpoint ", path, " is not a split model");
  ModelConfig cfg;
  cfg.d_model = j.at("d_model").get<int>();
  cfg.n_heads = j.at("n_heads").get<int>();
  cfg.d_ff = j.at("d_ff").get<int>();
  cfg.n_shared = j.at("n_shared").get<int>();
  cfg.n_branch = j.at("n_branch").get<int>();
  cfg.text_vocab = j.at("text_vocab").get<int>();
  cfg.speech_vocab = j.at("speech_vocab").get<int>();
  cfg.max_seq = j.at("max_seq").get<int>();
  cfg.validate();
  // Build an identically-shaped skeleton, then overwrite every tensor.
  TextLmConfig base_cfg{cfg.d_model, cfg.n_heads, cfg.d_ff, cfg.n_shared + cfg.n_branch,
                        cfg.text_vocab, cfg.max_seq};
  SplitLm<float> m = build_split_model(TextLm<float>::init(base_cfg, 0), cfg, 0);
  fill_store(m.params, std::move(raw), path);
  return m;
}

}  // namespace mspl
