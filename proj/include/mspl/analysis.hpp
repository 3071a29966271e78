#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mspl/corpus.hpp"
#include "mspl/mat.hpp"
#include "mspl/model.hpp"

namespace mspl::analysis {

// Hidden states of one sample under its text rendering and its speech
// rendering: the embedding output plus every shared-block output.
struct LayerStates {
  uint64_t sample_id = 0;
  std::vector<Matd> text_states;
  std::vector<Matd> speech_states;
  std::vector<data::AlignmentPair> pairs;

  int layers() const { return int(text_states.size()); }
};

LayerStates collect_states(SplitLm<float>& model, const std::vector<int>& text_ids,
                           const std::vector<int>& speech_ids,
                           std::vector<data::AlignmentPair> pairs, uint64_t sample_id);

// Full cosine matrix between two sets of row vectors; zero vectors give 0.
Matd cosine_matrix(const Matd& text_rows, const Matd& speech_rows);

struct DtwResult {
  std::vector<std::pair<int, int>> path;  // (0,0) .. (U-1,V-1)
  double path_sum = 0.0;
  double score = 0.0;  // mean similarity along the path
};

// Monotonic warping path with steps {(1,0),(0,1),(1,1)} maximizing the sum of
// similarities; ties prefer (1,1) over (1,0) over (0,1). The reported score
// is the chosen path's mean.
DtwResult dtw(const Matd& m);

// Mean cosine between the pair's speech columns and all text rows outside the
// pair's text span; 0 when the complement is empty.
double background(const Matd& full_cosine, const data::AlignmentPair& pair);

struct PairScore {
  double dtw = 0.0;
  double bg = 0.0;
};

struct SampleScores {
  uint64_t sample_id = 0;
  std::vector<Matd> cosines;                        // per layer, full matrix
  std::vector<std::vector<PairScore>> pair_scores;  // [layer][pair]
};

SampleScores score_sample(const LayerStates& states);

struct SimilarityReport {
  std::vector<SampleScores> samples;
  double lambda = 0.0;
  std::vector<std::vector<double>> ss;  // [sample][layer]
  std::vector<double> mean_ss;          // [layer]
};

// Two-pass aggregation: lambda is the mean DTW over every (sample, layer,
// pair) in the invocation, then SS_i sums dtw/(bg+lambda) over pairs.
SimilarityReport layer_scores(std::vector<SampleScores> samples);

// Output tree: <out>/sample<id>/layer<i>.{csv,pgm}, ss_curve.{csv,svg},
// <out>/ss_mean.{csv,svg}, <out>/report.json. Deterministic bytes.
void emit(const SimilarityReport& report, const std::string& out_dir);

// Grayscale pixel for a cosine value: linear [-1,1] -> [0,255], floor, clamp.
inline int cosine_pixel(double c) {
  const double v = std::floor((c + 1.0) * 0.5 * 255.0);
  return int(std::max(0.0, std::min(255.0, v)));
}

}  // namespace mspl::analysis
