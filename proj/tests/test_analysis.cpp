#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <functional>

#include "dtw_oracle.hpp"
#include "mspl/analysis.hpp"

using namespace mspl;
using namespace mspl::analysis;
using mspl::testing::brute_force_dtw;
using mspl::testing::for_each_grid_matrix;

namespace {

Matd from_rows(const std::vector<std::vector<double>>& rows) {
  Matd m(int(rows.size()), int(rows[0].size()));
  for (size_t r = 0; r < rows.size(); ++r) {
    for (size_t c = 0; c < rows[r].size(); ++c) {
      m(int(r), int(c)) = rows[r][c];
    }
  }
  return m;
}

}  // namespace

TEST_CASE("dtw: singleton and dominant-diagonal cases") {
  auto r = dtw(from_rows({{0.37}}));
  CHECK(r.path == std::vector<std::pair<int, int>>{{0, 0}});
  CHECK(r.score == 0.37);

  auto eye = from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  auto re = dtw(eye);
  CHECK(re.path == std::vector<std::pair<int, int>>{{0, 0}, {1, 1}, {2, 2}});
  CHECK(re.score == 1.0);
}

TEST_CASE("dtw: score stays within the matrix value range") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto m = Matd::randn(rng.range(1, 5), rng.range(1, 5), 1.0, rng);
    double lo = m.data[0], hi = m.data[0];
    for (double v : m.data) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const auto r = dtw(m);
    CHECK(r.score >= lo - 1e-12);
    CHECK(r.score <= hi + 1e-12);
  }
}

TEST_CASE("dtw: exhaustive 2x3 grid enumeration matches the DP") {
  int count = 0;
  for_each_grid_matrix(2, 3, {0.0, 0.5, 1.0}, [&](const Matd& m) {
    const auto expect = brute_force_dtw(m);
    const auto got = dtw(m);
    REQUIRE(got.path_sum == expect.sum);  // grid sums are exact in binary
    REQUIRE(got.score == expect.score);
    REQUIRE(got.path == expect.path);
    ++count;
  });
  CHECK(count == 729);
}

TEST_CASE("dtw: grid matrices up to 10 cells, all shapes") {
  for (int rows = 1; rows <= 4; ++rows) {
    for (int cols = 1; cols <= 5; ++cols) {
      if (rows * cols > 10 || (rows == 2 && cols == 3)) {
        continue;
      }
      for_each_grid_matrix(rows, cols, {0.0, 0.5, 1.0}, [&](const Matd& m) {
        const auto expect = brute_force_dtw(m);
        const auto got = dtw(m);
        REQUIRE(got.path_sum == expect.sum);
        REQUIRE(got.path == expect.path);
      });
    }
  }
}

TEST_CASE("dtw: random dense matrices agree with enumeration on the optimum") {
  Rng rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    auto m = Matd::randn(rng.range(1, 4), rng.range(1, 5), 1.0, rng);
    const auto expect = brute_force_dtw(m);
    const auto got = dtw(m);
    CHECK(std::abs(got.path_sum - expect.sum) <= 1e-12);
    CHECK(std::abs(got.score - expect.score) <= 1e-12);
  }
}

TEST_CASE("cosine_matrix: parallel, orthogonal, zero and random entries") {
  auto ones = from_rows({{1, 0}, {1, 0}});
  auto cm = cosine_matrix(ones, ones);
  for (double v : cm.data) {
    CHECK(v == 1.0);
  }

  auto a = from_rows({{1, 0}});
  auto b = from_rows({{0, 1}});
  CHECK(cosine_matrix(a, b)(0, 0) == 0.0);

  auto z = from_rows({{0, 0}});
  CHECK(cosine_matrix(z, b)(0, 0) == 0.0);

  Rng rng(5);
  auto t = Matd::randn(3, 4, 1.0, rng);
  auto s = Matd::randn(3, 4, 1.0, rng);
  auto m = cosine_matrix(t, s);
  for (int u = 0; u < 3; ++u) {
    for (int v = 0; v < 3; ++v) {
      double dot = 0, nt = 0, ns = 0;
      for (int c = 0; c < 4; ++c) {
        dot += t(u, c) * s(v, c);
        nt += t(u, c) * t(u, c);
        ns += s(v, c) * s(v, c);
      }
      CHECK(std::abs(m(u, v) - dot / (std::sqrt(nt) * std::sqrt(ns))) <= 1e-12);
      CHECK(m(u, v) >= -1.0 - 1e-12);
      CHECK(m(u, v) <= 1.0 + 1e-12);
    }
  }
}

TEST_CASE("background: hand-computed mean over the non-aligned rows") {
  // 5 text rows x 4 speech cols; pair covers text [1,3), speech [1,3).
  auto full = from_rows({{0.1, 0.2, 0.3, 0.4},
                         {0.5, 0.6, 0.7, 0.8},
                         {0.9, 1.0, -1.0, -0.9},
                         {-0.8, -0.7, -0.6, -0.5},
                         {-0.4, -0.3, -0.2, -0.1}});
  data::AlignmentPair pair{1, 3, 1, 3};
  // Outside rows: 0, 3, 4; speech cols 1..2.
  const double expected = (0.2 + 0.3 + (-0.7) + (-0.6) + (-0.3) + (-0.2)) / 6.0;
  CHECK(std::abs(background(full, pair) - expected) <= 1e-12);

  data::AlignmentPair all{0, 5, 0, 4};
  CHECK(background(full, all) == 0.0);
}

TEST_CASE("layer_scores: closed-form single pair and uniform-dtw cases") {
  SampleScores s;
  s.sample_id = 0;
  s.pair_scores = {{{0.8, 0.3}}};  // one layer, one pair: dtw=0.8, bg=0.3
  s.cosines = {Matd(1, 1)};
  auto report = layer_scores({s});
  CHECK(report.lambda == 0.8);
  CHECK(std::abs(report.ss[0][0] - 0.8 / (0.3 + 0.8)) <= 1e-15);

  // All dtw equal c with zero background: every SS_i = pair count.
  SampleScores u;
  u.sample_id = 1;
  u.pair_scores = {{{0.4, 0.0}, {0.4, 0.0}, {0.4, 0.0}}, {{0.4, 0.0}, {0.4, 0.0}, {0.4, 0.0}}};
  u.cosines = {Matd(1, 1), Matd(1, 1)};
  auto r2 = layer_scores({u});
  CHECK(r2.lambda == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(r2.ss[0][0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(r2.ss[0][1] == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("layer_scores: three-layer two-sample fixture computed by hand") {
  SampleScores a;
  a.sample_id = 0;
  a.pair_scores = {{{0.2, 0.1}, {0.4, 0.0}},
                   {{0.6, 0.2}, {0.8, 0.1}},
                   {{0.5, 0.0}, {0.1, 0.0}}};
  a.cosines = {Matd(1, 1), Matd(1, 1), Matd(1, 1)};
  SampleScores b;
  b.sample_id = 1;
  b.pair_scores = {{{0.3, 0.05}}, {{0.9, 0.3}}, {{0.6, 0.25}}};
  b.cosines = {Matd(1, 1), Matd(1, 1), Matd(1, 1)};

  auto report = layer_scores({a, b});
  const double lambda = (0.2 + 0.4 + 0.6 + 0.8 + 0.5 + 0.1 + 0.3 + 0.9 + 0.6) / 9.0;
  CHECK(std::abs(report.lambda - lambda) <= 1e-15);
  CHECK(std::abs(report.ss[0][0] - (0.2 / (0.1 + lambda) + 0.4 / (0.0 + lambda))) <= 1e-12);
  CHECK(std::abs(report.ss[0][1] - (0.6 / (0.2 + lambda) + 0.8 / (0.1 + lambda))) <= 1e-12);
  CHECK(std::abs(report.ss[0][2] - (0.5 / lambda + 0.1 / lambda)) <= 1e-12);
  CHECK(std::abs(report.ss[1][0] - 0.3 / (0.05 + lambda)) <= 1e-12);
  CHECK(std::abs(report.ss[1][1] - 0.9 / (0.3 + lambda)) <= 1e-12);
  CHECK(std::abs(report.ss[1][2] - 0.6 / (0.25 + lambda)) <= 1e-12);
  CHECK(std::abs(report.mean_ss[0] - (report.ss[0][0] + report.ss[1][0]) / 2.0) <= 1e-12);

  // Recomputation from the same inputs is idempotent.
  auto again = layer_scores({a, b});
  CHECK(again.lambda == report.lambda);
  CHECK(again.ss == report.ss);
  CHECK(again.mean_ss == report.mean_ss);

  SampleScores empty;
  empty.sample_id = 2;
  empty.pair_scores = {{}};
  CHECK_THROWS_AS(layer_scores({empty}), ContractError);
}

namespace {

LayerStates planted_states(double parallel_band_lo, double parallel_band_hi, int layers,
                           uint64_t seed) {
  const int n = 12, d = 32;
  Rng rng(seed);
  LayerStates states;
  states.sample_id = 7;
  for (int i = 0; i < n; ++i) {
    states.pairs.push_back({i, i + 1, 2 * i, 2 * i + 2});
  }
  for (int layer = 0; layer < layers; ++layer) {
    Matd text = Matd::randn(n, d, 1.0, rng);
    Matd speech(2 * n, d);
    const bool planted = layer >= parallel_band_lo && layer <= parallel_band_hi;
    for (int i = 0; i < n; ++i) {
      for (int rep = 0; rep < 2; ++rep) {
        for (int c = 0; c < d; ++c) {
          speech(2 * i + rep, c) =
              planted ? text(i, c) + 0.02 * rng.normal() : rng.normal();
        }
      }
    }
    states.text_states.push_back(std::move(text));
    states.speech_states.push_back(std::move(speech));
  }
  return states;
}

}  // namespace

TEST_CASE("planted alignment: the SS curve peaks inside the planted band") {
  auto states = planted_states(3, 5, 7, 11);
  // Near-parallel rows in the planted band.
  auto scores = score_sample(states);
  for (int layer = 3; layer <= 5; ++layer) {
    for (const auto& p : scores.pair_scores[size_t(layer)]) {
      CHECK(p.dtw >= 0.95);
    }
  }
  auto report = layer_scores({scores});
  int best = 0;
  for (int layer = 1; layer < 7; ++layer) {
    if (report.ss[0][size_t(layer)] > report.ss[0][size_t(best)]) {
      best = layer;
    }
  }
  CHECK(best >= 3);
  CHECK(best <= 5);
}

TEST_CASE("scale consistency: scaling one layer's states leaves the report unchanged") {
  auto states = planted_states(2, 4, 6, 13);
  auto scaled = states;
  scaled.text_states[3].scale_inplace(4.0);    // exact power-of-two scaling
  scaled.speech_states[3].scale_inplace(4.0);
  auto r1 = layer_scores({score_sample(states)});
  auto r2 = layer_scores({score_sample(scaled)});
  CHECK(r1.lambda == r2.lambda);
  CHECK(r1.ss == r2.ss);
}

TEST_CASE("emit: pixel mapping endpoints and deterministic artifacts") {
  CHECK(cosine_pixel(-1.0) == 0);
  CHECK(cosine_pixel(1.0) == 255);
  CHECK(cosine_pixel(0.0) == 127);
  CHECK(cosine_pixel(-2.0) == 0);
  CHECK(cosine_pixel(2.0) == 255);

  namespace fs = std::filesystem;
  auto states = planted_states(1, 2, 4, 17);
  auto report = layer_scores({score_sample(states)});
  const auto dir = fs::temp_directory_path() / "mspl_emit_test";
  fs::remove_all(dir);
  emit(report, dir.string());

  CHECK(fs::exists(dir / "sample7" / "layer0.csv"));
  CHECK(fs::exists(dir / "sample7" / "layer3.pgm"));
  CHECK(fs::exists(dir / "sample7" / "ss_curve.csv"));
  CHECK(fs::exists(dir / "sample7" / "ss_curve.svg"));
  CHECK(fs::exists(dir / "ss_mean.csv"));
  CHECK(fs::exists(dir / "report.json"));

  // CSV -> parse -> CSV round trip is byte-identical.
  const auto csv_path = dir / "sample7" / "layer0.csv";
  std::ifstream is(csv_path);
  std::string line;
  Matd parsed(12, 24);
  int r = 0;
  while (std::getline(is, line)) {
    int c = 0;
    size_t pos = 0;
    while (pos <= line.size()) {
      size_t comma = line.find(',', pos);
      if (comma == std::string::npos) {
        comma = line.size();
      }
      parsed(r, c++) = std::stod(line.substr(pos, comma - pos));
      pos = comma + 1;
    }
    REQUIRE(c == 24);
    ++r;
  }
  REQUIRE(r == 12);

  auto report2 = report;
  report2.samples[0].cosines[0] = parsed;
  const auto dir2 = fs::temp_directory_path() / "mspl_emit_test2";
  fs::remove_all(dir2);
  emit(report2, dir2.string());
  std::ifstream f1(csv_path, std::ios::binary), f2(dir2 / "sample7" / "layer0.csv",
                                                   std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);

  // Byte determinism of the whole tree.
  const auto dir3 = fs::temp_directory_path() / "mspl_emit_test3";
  fs::remove_all(dir3);
  emit(report, dir3.string());
  std::ifstream g1(dir / "report.json", std::ios::binary), g2(dir3 / "report.json",
                                                              std::ios::binary);
  std::string c1((std::istreambuf_iterator<char>(g1)), std::istreambuf_iterator<char>());
  std::string c2((std::istreambuf_iterator<char>(g2)), std::istreambuf_iterator<char>());
  CHECK(c1 == c2);

  fs::remove_all(dir);
  fs::remove_all(dir2);
  fs::remove_all(dir3);
}

TEST_CASE("collect_states: layer count, shapes, determinism") {
  TextLmConfig bc;
  bc.d_model = 16;
  bc.n_heads = 2;
  bc.d_ff = 32;
  bc.n_blocks = 4;
  bc.vocab = 16;
  bc.max_seq = 32;
  ModelConfig sc;
  sc.d_model = 16;
  sc.n_heads = 2;
  sc.d_ff = 32;
  sc.n_shared = 3;
  sc.n_branch = 1;
  sc.text_vocab = 16;
  sc.speech_vocab = 24;
  sc.max_seq = 32;
  auto m = build_split_model(TextLm<float>::init(bc, 1), sc, 2);

  std::vector<int> text = {4, 5, 6, 7};
  std::vector<int> speech = {3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<data::AlignmentPair> pairs = {{0, 1, 0, 2}, {1, 2, 2, 4}, {2, 3, 4, 6},
                                            {3, 4, 6, 8}};
  auto states = collect_states(m, text, speech, pairs, 3);
  CHECK(states.layers() == sc.n_shared + 1);
  for (const auto& s : states.text_states) {
    CHECK(s.rows == 4);
    CHECK(s.cols == sc.d_model);
  }
  for (const auto& s : states.speech_states) {
    CHECK(s.rows == 8);
    CHECK(s.cols == sc.d_model);
  }
  auto again = collect_states(m, text, speech, pairs, 3);
  for (int layer = 0; layer <= sc.n_shared; ++layer) {
    CHECK(states.text_states[size_t(layer)].bytes_equal(again.text_states[size_t(layer)]));
    CHECK(states.speech_states[size_t(layer)].bytes_equal(again.speech_states[size_t(layer)]));
  }

  std::vector<int> too_long(64, 4);
  CHECK_THROWS_AS(collect_states(m, too_long, speech, pairs, 0), ContractError);
}
