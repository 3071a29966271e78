#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "mspl/common.hpp"
#include "mspl/rng.hpp"
#include "mspl/thread_pool.hpp"

namespace mspl {

// Dense row-major matrix. float in training mode, double in check mode.
template <class T>
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), data(size_t(r) * size_t(c), T(0)) {
    MSPL_CHECK(r >= 0 && c >= 0, "matrix dims must be non-negative");
  }

  static Mat zeros(int r, int c) { return Mat(r, c); }

  static Mat full(int r, int c, T v) {
    Mat m(r, c);
    for (auto& x : m.data) {
      x = v;
    }
    return m;
  }

  static Mat randn(int r, int c, T std, Rng& rng) {
    Mat m(r, c);
    for (auto& x : m.data) {
      x = T(rng.normal() * double(std));
    }
    return m;
  }

  size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  T& at(int r, int c) { return data[size_t(r) * cols + c]; }
  T at(int r, int c) const { return data[size_t(r) * cols + c]; }
  T& operator()(int r, int c) { return at(r, c); }
  T operator()(int r, int c) const { return at(r, c); }

  T* row(int r) { return data.data() + size_t(r) * cols; }
  const T* row(int r) const { return data.data() + size_t(r) * cols; }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  void fill(T v) {
    for (auto& x : data) {
      x = v;
    }
  }

  void add_inplace(const Mat& o) {
    MSPL_CHECK(same_shape(o), "add: shape mismatch ", rows, "x", cols, " vs ", o.rows, "x", o.cols);
    for (size_t i = 0; i < data.size(); ++i) {
      data[i] += o.data[i];
    }
  }

  void scale_inplace(T c) {
    for (auto& x : data) {
      x *= c;
    }
  }

  bool all_finite() const {
    for (T x : data) {
      if (!std::isfinite(double(x))) {
        return false;
      }
    }
    return true;
  }

  bool bytes_equal(const Mat& o) const {
    return same_shape(o) &&
           std::memcmp(data.data(), o.data.data(), data.size() * sizeof(T)) == 0;
  }

  template <class U>
  Mat<U> cast() const {
    Mat<U> out(rows, cols);
    for (size_t i = 0; i < data.size(); ++i) {
      out.data[i] = U(data[i]);
    }
    return out;
  }
};

namespace detail {

constexpr int64_t kParallelFlops = 1 << 17;

inline bool parallel_worthwhile(int64_t flops, int rows) {
  return ThreadPool::instance().threads() > 1 && flops >= kParallelFlops && rows >= 2;
}

}  // namespace detail

// out = a @ b (optionally accumulating). i-k-j order, inner loop contiguous.
template <class T>
void matmul_nn(const Mat<T>& a, const Mat<T>& b, Mat<T>& out, bool accumulate = false) {
  MSPL_CHECK(a.cols == b.rows, "matmul: inner dims ", a.cols, " vs ", b.rows);
  MSPL_CHECK(out.rows == a.rows && out.cols == b.cols, "matmul: bad output shape");
  const int m = a.rows, k = a.cols, n = b.cols;
  auto body = [&](int r0, int r1) {
    for (int i = r0; i < r1; ++i) {
      T* __restrict__ crow = out.row(i);
      if (!accumulate) {
        std::memset(crow, 0, size_t(n) * sizeof(T));
      }
      const T* arow = a.row(i);
      for (int kk = 0; kk < k; ++kk) {
        const T av = arow[kk];
        const T* __restrict__ brow = b.row(kk);
        for (int j = 0; j < n; ++j) {
          crow[j] += av * brow[j];
        }
      }
    }
  };
  if (detail::parallel_worthwhile(int64_t(m) * k * n, m)) {
    ThreadPool::instance().run([&](int chunk) {
      auto [lo, hi] = chunk_range(m, ThreadPool::instance().threads(), chunk);
      body(lo, hi);
    });
  } else {
    body(0, m);
  }
}

// out = a @ b^T.
template <class T>
void matmul_nt(const Mat<T>& a, const Mat<T>& b, Mat<T>& out, bool accumulate = false) {
  MSPL_CHECK(a.cols == b.cols, "matmul_nt: inner dims ", a.cols, " vs ", b.cols);
  MSPL_CHECK(out.rows == a.rows && out.cols == b.rows, "matmul_nt: bad output shape");
  const int m = a.rows, k = a.cols, n = b.rows;
  auto body = [&](int r0, int r1) {
    for (int i = r0; i < r1; ++i) {
      const T* arow = a.row(i);
      T* crow = out.row(i);
      for (int j = 0; j < n; ++j) {
        const T* brow = b.row(j);
        T acc = 0;
        for (int kk = 0; kk < k; ++kk) {
          acc += arow[kk] * brow[kk];
        }
        crow[j] = accumulate ? crow[j] + acc : acc;
      }
    }
  };
  if (detail::parallel_worthwhile(int64_t(m) * k * n, m)) {
    ThreadPool::instance().run([&](int chunk) {
      auto [lo, hi] = chunk_range(m, ThreadPool::instance().threads(), chunk);
      body(lo, hi);
    });
  } else {
    body(0, m);
  }
}

// out = a^T @ b.
template <class T>
void matmul_tn(const Mat<T>& a, const Mat<T>& b, Mat<T>& out, bool accumulate = false) {
  MSPL_CHECK(a.rows == b.rows, "matmul_tn: inner dims ", a.rows, " vs ", b.rows);
  MSPL_CHECK(out.rows == a.cols && out.cols == b.cols, "matmul_tn: bad output shape");
  const int m = a.cols, k = a.rows, n = b.cols;
  auto body = [&](int r0, int r1) {
    if (!accumulate) {
      for (int i = r0; i < r1; ++i) {
        std::memset(out.row(i), 0, size_t(n) * sizeof(T));
      }
    }
    for (int kk = 0; kk < k; ++kk) {
      const T* arow = a.row(kk);
      const T* __restrict__ brow = b.row(kk);
      for (int i = r0; i < r1; ++i) {
        const T av = arow[i];
        T* __restrict__ crow = out.row(i);
        for (int j = 0; j < n; ++j) {
          crow[j] += av * brow[j];
        }
      }
    }
  };
  if (detail::parallel_worthwhile(int64_t(m) * k * n, m)) {
    ThreadPool::instance().run([&](int chunk) {
      auto [lo, hi] = chunk_range(m, ThreadPool::instance().threads(), chunk);
      body(lo, hi);
    });
  } else {
    body(0, m);
  }
}

using Matf = Mat<float>;
using Matd = Mat<double>;

}  // namespace mspl
