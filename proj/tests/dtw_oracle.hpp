#pragma once

#include <utility>
#include <vector>

#include "mspl/mat.hpp"

namespace mspl::testing {

// Exhaustive warping-path oracle: enumerates every monotonic path with steps
// {(1,0),(0,1),(1,1)} from (0,0) to (U-1,V-1), maximizes the similarity sum,
// and breaks ties exactly like the DP reconstruction (prefer the path whose
// reversed step sequence is lexicographically smallest under
// diagonal < (1,0) < (0,1)).
struct BruteForceDtw {
  double sum = 0.0;
  double score = 0.0;
  std::vector<std::pair<int, int>> path;
};

inline BruteForceDtw brute_force_dtw(const Matd& m) {
  const int U = m.rows, V = m.cols;
  BruteForceDtw best;
  bool have = false;
  std::vector<std::pair<int, int>> current;
  std::vector<int> steps;          // 0 = diag, 1 = (1,0), 2 = (0,1)
  std::vector<int> best_rev_steps;

  auto consider = [&](double sum) {
    std::vector<int> rev(steps.rbegin(), steps.rend());
    if (!have || sum > best.sum || (sum == best.sum && rev < best_rev_steps)) {
      have = true;
      best.sum = sum;
      best.score = sum / double(current.size());
      best.path = current;
      best_rev_steps = std::move(rev);
    }
  };

  std::function<void(int, int, double)> walk = [&](int u, int v, double sum) {
    current.emplace_back(u, v);
    const double total = sum + m(u, v);
    if (u == U - 1 && v == V - 1) {
      consider(total);
    } else {
      if (u + 1 < U && v + 1 < V) {
        steps.push_back(0);
        walk(u + 1, v + 1, total);
        steps.pop_back();
      }
      if (u + 1 < U) {
        steps.push_back(1);
        walk(u + 1, v, total);
        steps.pop_back();
      }
      if (v + 1 < V) {
        steps.push_back(2);
        walk(u, v + 1, total);
        steps.pop_back();
      }
    }
    current.pop_back();
  };
  walk(0, 0, 0.0);
  return best;
}

// All matrices of a given shape with entries drawn from a fixed value grid.
template <class Fn>
void for_each_grid_matrix(int rows, int cols, const std::vector<double>& grid, Fn&& fn) {
  const int cells = rows * cols;
  std::vector<size_t> digits(size_t(cells), 0);
  Matd m(rows, cols);
  for (;;) {
    for (int i = 0; i < cells; ++i) {
      m.data[size_t(i)] = grid[digits[size_t(i)]];
    }
    fn(m);
    int pos = 0;
    while (pos < cells) {
      if (++digits[size_t(pos)] < grid.size()) {
        break;
      }
      digits[size_t(pos)] = 0;
      ++pos;
    }
    if (pos == cells) {
      return;
    }
  }
}

}  // namespace mspl::testing
