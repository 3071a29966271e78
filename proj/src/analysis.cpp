#include "mspl/analysis.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace mspl::analysis {

LayerStates collect_states(SplitLm<float>& model, const std::vector<int>& text_ids,
                           const std::vector<int>& speech_ids,
                           std::vector<data::AlignmentPair> pairs, uint64_t sample_id) {
  MSPL_CHECK(!text_ids.empty() && !speech_ids.empty(), "collect_states: empty rendering");
  MSPL_CHECK(int(text_ids.size()) <= model.cfg.max_seq &&
                 int(speech_ids.size()) <= model.cfg.max_seq,
             "collect_states: rendering longer than max_seq");
  LayerStates out;
  out.sample_id = sample_id;
  out.pairs = std::move(pairs);

  SplitForwardOpts opts;
  opts.record_states = true;
  opts.heads = HeadSelect::TextOnly;  // states come from the trunk; one head suffices

  auto run = [&](const std::vector<Token>& tokens) {
    Graph<float> g;
    auto fwd = split_forward(g, model, tokens, opts);
    std::vector<Matd> states;
    states.reserve(fwd.states.size());
    for (const Matf& s : fwd.states) {
      states.push_back(s.cast<double>());
    }
    return states;
  };

  std::vector<Token> text_tokens, speech_tokens;
  for (int id : text_ids) {
    text_tokens.push_back(text_tok(id));
  }
  for (int id : speech_ids) {
    speech_tokens.push_back(speech_tok(id));
  }
  out.text_states = run(text_tokens);
  out.speech_states = run(speech_tokens);
  return out;
}

Matd cosine_matrix(const Matd& text_rows, const Matd& speech_rows) {
  MSPL_CHECK(text_rows.rows >= 1 && speech_rows.rows >= 1, "cosine_matrix: empty spans");
  MSPL_CHECK(text_rows.cols == speech_rows.cols, "cosine_matrix: dimension mismatch");
  const int n = text_rows.rows, m = speech_rows.rows, d = text_rows.cols;
  std::vector<double> tnorm(size_t(n), 0.0);
  std::vector<double> snorm(size_t(m), 0.0);
  for (int u = 0; u < n; ++u) {
    double s = 0.0;
    for (int c = 0; c < d; ++c) {
      s += text_rows(u, c) * text_rows(u, c);
    }
    tnorm[size_t(u)] = std::sqrt(s);
  }
  for (int v = 0; v < m; ++v) {
    double s = 0.0;
    for (int c = 0; c < d; ++c) {
      s += speech_rows(v, c) * speech_rows(v, c);
    }
    snorm[size_t(v)] = std::sqrt(s);
  }
  Matd out(n, m);
  for (int u = 0; u < n; ++u) {
    for (int v = 0; v < m; ++v) {
      const double denom = tnorm[size_t(u)] * snorm[size_t(v)];
      if (denom == 0.0) {
        out(u, v) = 0.0;
        continue;
      }
      double dot = 0.0;
      for (int c = 0; c < d; ++c) {
        dot += text_rows(u, c) * speech_rows(v, c);
      }
      out(u, v) = dot / denom;
    }
  }
  return out;
}

DtwResult dtw(const Matd& m) {
  MSPL_CHECK(m.rows >= 1 && m.cols >= 1, "dtw: empty matrix");
  const int U = m.rows, V = m.cols;
  Matd dp(U, V);
  // 0 = diagonal, 1 = (1,0), 2 = (0,1), 3 = start; ties take the smallest.
  std::vector<uint8_t> choice(size_t(U) * size_t(V), 3);
  for (int u = 0; u < U; ++u) {
    for (int v = 0; v < V; ++v) {
      if (u == 0 && v == 0) {
        dp(0, 0) = m(0, 0);
        continue;
      }
      double best = -1e300;
      uint8_t pick = 3;
      if (u > 0 && v > 0 && dp(u - 1, v - 1) > best) {
        best = dp(u - 1, v - 1);
        pick = 0;
      }
      if (u > 0 && dp(u - 1, v) > best) {
        best = dp(u - 1, v);
        pick = 1;
      }
      if (v > 0 && dp(u, v - 1) > best) {
        best = dp(u, v - 1);
        pick = 2;
      }
      dp(u, v) = m(u, v) + best;
      choice[size_t(u) * size_t(V) + size_t(v)] = pick;
    }
  }

  DtwResult out;
  int u = U - 1, v = V - 1;
  while (true) {
    out.path.emplace_back(u, v);
    const uint8_t pick = choice[size_t(u) * size_t(V) + size_t(v)];
    if (pick == 3) {
      break;
    }
    if (pick == 0) {
      --u;
      --v;
    } else if (pick == 1) {
      --u;
    } else {
      --v;
    }
  }
  std::reverse(out.path.begin(), out.path.end());
  out.path_sum = dp(U - 1, V - 1);
  out.score = out.path_sum / double(out.path.size());
  return out;
}

double background(const Matd& full_cosine, const data::AlignmentPair& pair) {
  MSPL_CHECK(pair.text_begin >= 0 && pair.text_end <= full_cosine.rows &&
                 pair.speech_begin >= 0 && pair.speech_end <= full_cosine.cols,
             "background: pair outside the cosine matrix");
  const int outside = full_cosine.rows - (pair.text_end - pair.text_begin);
  if (outside <= 0) {
    return 0.0;
  }
  double sum = 0.0;
  for (int u = 0; u < full_cosine.rows; ++u) {
    if (u >= pair.text_begin && u < pair.text_end) {
      continue;
    }
    for (int v = pair.speech_begin; v < pair.speech_end; ++v) {
      sum += full_cosine(u, v);
    }
  }
  return sum / (double(outside) * double(pair.speech_end - pair.speech_begin));
}

SampleScores score_sample(const LayerStates& states) {
  MSPL_CHECK(!states.pairs.empty(), "score_sample: sample has no alignment pairs");
  MSPL_CHECK(states.text_states.size() == states.speech_states.size(),
             "score_sample: text/speech layer counts differ");
  SampleScores out;
  out.sample_id = states.sample_id;
  for (int layer = 0; layer < states.layers(); ++layer) {
    const Matd full = cosine_matrix(states.text_states[size_t(layer)],
                                    states.speech_states[size_t(layer)]);
    std::vector<PairScore> scores;
    scores.reserve(states.pairs.size());
    for (const auto& pair : states.pairs) {
      MSPL_CHECK(pair.text_begin < pair.text_end && pair.speech_begin < pair.speech_end,
                 "score_sample: empty alignment span");
      // Span submatrix for the warping path.
      Matd sub(pair.text_end - pair.text_begin, pair.speech_end - pair.speech_begin);
      for (int u = 0; u < sub.rows; ++u) {
        for (int v = 0; v < sub.cols; ++v) {
          sub(u, v) = full(pair.text_begin + u, pair.speech_begin + v);
        }
      }
      PairScore s;
      s.dtw = dtw(sub).score;
      s.bg = background(full, pair);
      scores.push_back(s);
    }
    out.cosines.push_back(full);
    out.pair_scores.push_back(std::move(scores));
  }
  return out;
}

SimilarityReport layer_scores(std::vector<SampleScores> samples) {
  MSPL_CHECK(!samples.empty(), "layer_scores: no samples");
  SimilarityReport report;
  double dtw_sum = 0.0;
  size_t dtw_count = 0;
  for (const auto& sample : samples) {
    MSPL_CHECK(!sample.pair_scores.empty(), "layer_scores: sample without layers");
    for (const auto& layer : sample.pair_scores) {
      MSPL_CHECK(!layer.empty(), "layer_scores: layer without pairs");
      for (const auto& p : layer) {
        dtw_sum += p.dtw;
        ++dtw_count;
      }
    }
  }
  report.lambda = dtw_sum / double(dtw_count);

  const size_t layers = samples[0].pair_scores.size();
  report.mean_ss.assign(layers, 0.0);
  for (const auto& sample : samples) {
    MSPL_CHECK(sample.pair_scores.size() == layers, "layer_scores: ragged layer counts");
    std::vector<double> ss(layers, 0.0);
    for (size_t layer = 0; layer < layers; ++layer) {
      for (const auto& p : sample.pair_scores[layer]) {
        ss[layer] += p.dtw / (p.bg + report.lambda);
      }
      report.mean_ss[layer] += ss[layer];
    }
    report.ss.push_back(std::move(ss));
  }
  for (double& v : report.mean_ss) {
    v /= double(samples.size());
  }
  report.samples = std::move(samples);
  return report;
}

namespace {

std::string fmt9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

void write_matrix_csv(const Matd& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  MSPL_CHECK_IO(os.is_open(), "emit: cannot write ", path);
  for (int r = 0; r < m.rows; ++r) {
    for (int c = 0; c < m.cols; ++c) {
      if (c > 0) {
        os << ",";
      }
      os << fmt9(m(r, c));
    }
    os << "\n";
  }
  MSPL_CHECK_IO(os.good(), "emit: write failed: ", path);
}

void write_pgm(const Matd& m, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  MSPL_CHECK_IO(os.is_open(), "emit: cannot write ", path);
  os << "P5\n" << m.cols << " " << m.rows << "\n255\n";
  for (int r = 0; r < m.rows; ++r) {
    for (int c = 0; c < m.cols; ++c) {
      os.put(char(cosine_pixel(m(r, c))));
    }
  }
  MSPL_CHECK_IO(os.good(), "emit: write failed: ", path);
}

void write_curve_csv(const std::vector<double>& ss, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  MSPL_CHECK_IO(os.is_open(), "emit: cannot write ", path);
  os << "layer,ss\n";
  for (size_t i = 0; i < ss.size(); ++i) {
    os << i << "," << fmt9(ss[i]) << "\n";
  }
  MSPL_CHECK_IO(os.good(), "emit: write failed: ", path);
}

void write_curve_svg(const std::vector<double>& ss, const std::string& path) {
  const int width = 640, height = 400, margin = 40;
  double lo = ss[0], hi = ss[0];
  for (double v : ss) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi == lo) {
    hi = lo + 1.0;
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  MSPL_CHECK_IO(os.is_open(), "emit: cannot write ", path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
     << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  os << "<polyline fill=\"none\" stroke=\"black\" stroke-width=\"2\" points=\"";
  const double span = ss.size() > 1 ? double(ss.size() - 1) : 1.0;
  for (size_t i = 0; i < ss.size(); ++i) {
    const double x = margin + (width - 2 * margin) * (double(i) / span);
    const double y = height - margin - (height - 2 * margin) * ((ss[i] - lo) / (hi - lo));
    if (i > 0) {
      os << " ";
    }
    os << fmt9(x) << "," << fmt9(y);
  }
  os << "\"/>\n</svg>\n";
  MSPL_CHECK_IO(os.good(), "emit: write failed: ", path);
}

}  // namespace

void emit(const SimilarityReport& report, const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  MSPL_CHECK_IO(!ec, "emit: cannot create ", out_dir);

  nlohmann::ordered_json j;
  j["lambda"] = report.lambda;
  auto jsamples = nlohmann::ordered_json::array();

  for (size_t si = 0; si < report.samples.size(); ++si) {
    const SampleScores& sample = report.samples[si];
    const std::string sdir = out_dir + "/sample" + std::to_string(sample.sample_id);
    fs::create_directories(sdir, ec);
    MSPL_CHECK_IO(!ec, "emit: cannot create ", sdir);

    nlohmann::ordered_json js;
    js["sample_id"] = sample.sample_id;
    auto jlayers = nlohmann::ordered_json::array();
    for (size_t layer = 0; layer < sample.cosines.size(); ++layer) {
      write_matrix_csv(sample.cosines[layer], sdir + "/layer" + std::to_string(layer) + ".csv");
      write_pgm(sample.cosines[layer], sdir + "/layer" + std::to_string(layer) + ".pgm");
      nlohmann::ordered_json jl;
      jl["layer"] = layer;
      jl["ss"] = report.ss[si][layer];
      auto jpairs = nlohmann::ordered_json::array();
      for (const PairScore& p : sample.pair_scores[layer]) {
        jpairs.push_back({{"dtw", p.dtw}, {"bg", p.bg}});
      }
      jl["pairs"] = std::move(jpairs);
      jlayers.push_back(std::move(jl));
    }
    js["layers"] = std::move(jlayers);
    jsamples.push_back(std::move(js));

    write_curve_csv(report.ss[si], sdir + "/ss_curve.csv");
    write_curve_svg(report.ss[si], sdir + "/ss_curve.svg");
  }
  j["samples"] = std::move(jsamples);
  j["mean_ss"] = report.mean_ss;

  write_curve_csv(report.mean_ss, out_dir + "/ss_mean.csv");
  write_curve_svg(report.mean_ss, out_dir + "/ss_mean.svg");

  std::ofstream os(out_dir + "/report.json", std::ios::binary | std::ios::trunc);
  MSPL_CHECK_IO(os.is_open(), "emit: cannot write report.json");
  os << j.dump(2) << "\n";
  MSPL_CHECK_IO(os.good(), "emit: write failed: report.json");
}

}  // namespace mspl::analysis
