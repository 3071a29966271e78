#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "mspl/mat.hpp"
#include "mspl/param.hpp"

namespace mspl {

// Reverse-mode tape over whole matrices. Nodes are created in topological
// order by construction; backward walks them in reverse creation order.
// Parameter leaves alias their ParamTensor and accumulate gradients straight
// into it (trainable tensors only).
template <class T>
class Graph {
 public:
  using Val = uint32_t;

  struct RowPick {
    uint8_t table;  // 0 = first table, 1 = second
    int row;
  };

  Val leaf(Mat<T> v) {
    nodes_.push_back(Node{std::move(v), {}, nullptr, {}});
    return Val(nodes_.size() - 1);
  }

  Val param(ParamTensor<T>& p) {
    p.reads += 1;
    nodes_.push_back(Node{{}, {}, &p, {}});
    return Val(nodes_.size() - 1);
  }

  const Mat<T>& value(Val v) const {
    const Node& n = nodes_[v];
    return n.param != nullptr ? n.param->value : n.val;
  }

  // Gradient of a non-parameter node; valid after backward().
  const Mat<T>& grad_of(Val v) const {
    MSPL_CHECK(backward_done_, "grad_of before backward");
    MSPL_CHECK(nodes_[v].param == nullptr, "grad_of on a parameter leaf");
    return nodes_[v].grad;
  }

  size_t node_count() const { return nodes_.size(); }

  void reset() {
    nodes_.clear();
    backward_done_ = false;
  }

  // ---- ops ----

  Val matmul(Val a, Val b) {
    const Mat<T>& av = value(a);
    const Mat<T>& bv = value(b);
    Mat<T> out(av.rows, bv.cols);
    matmul_nn(av, bv, out);
    return make_node(std::move(out), [a, b](Graph& g, const Mat<T>& dy) {
      g.with_grad(a, [&](Mat<T>& da) { matmul_nt(dy, g.value(b), da, true); });
      g.with_grad(b, [&](Mat<T>& db) { matmul_tn(g.value(a), dy, db, true); });
    });
  }

  Val add(Val a, Val b) {
    const Mat<T>& av = value(a);
    const Mat<T>& bv = value(b);
    MSPL_CHECK(av.same_shape(bv), "add: shape mismatch ", av.rows, "x", av.cols,
               " vs ", bv.rows, "x", bv.cols);
    Mat<T> out = av;
    out.add_inplace(bv);
    return make_node(std::move(out), [a, b](Graph& g, const Mat<T>& dy) {
      g.with_grad(a, [&](Mat<T>& da) { da.add_inplace(dy); });
      g.with_grad(b, [&](Mat<T>& db) { db.add_inplace(dy); });
    });
  }

  Val scale(Val a, T c) {
    Mat<T> out = value(a);
    out.scale_inplace(c);
    return make_node(std::move(out), [a, c](Graph& g, const Mat<T>& dy) {
      g.with_grad(a, [&](Mat<T>& da) {
        for (size_t i = 0; i < dy.size(); ++i) {
          da.data[i] += c * dy.data[i];
        }
      });
    });
  }

  Val gelu(Val a) {
    const Mat<T>& x = value(a);
    Mat<T> out(x.rows, x.cols);
    for (size_t i = 0; i < x.size(); ++i) {
      const T v = x.data[i];
      out.data[i] = T(0.5) * v * (T(1) + std::erf(v * T(M_SQRT1_2)));
    }
    return make_node(std::move(out), [a](Graph& g, const Mat<T>& dy) {
      g.with_grad(a, [&](Mat<T>& da) {
        const Mat<T>& x = g.value(a);
        const T inv_sqrt_2pi = T(0.3989422804014326779);
        for (size_t i = 0; i < x.size(); ++i) {
          const T v = x.data[i];
          const T cdf = T(0.5) * (T(1) + std::erf(v * T(M_SQRT1_2)));
          const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
          da.data[i] += dy.data[i] * (cdf + v * pdf);
        }
      });
    });
  }

  // Softmax over the last axis, numerically shifted per row.
  Val softmax_rows(Val a) {
    const Mat<T>& x = value(a);
    MSPL_CHECK(x.cols >= 1, "softmax: empty rows");
    Mat<T> out(x.rows, x.cols);
    for (int r = 0; r < x.rows; ++r) {
      softmax_row(x.row(r), out.row(r), x.cols);
    }
    return make_node(std::move(out), [a, self = Val(nodes_.size())](Graph& g, const Mat<T>& dy) {
      g.with_grad(a, [&](Mat<T>& da) {
        const Mat<T>& p = g.nodes_[self].val;
        for (int r = 0; r < p.rows; ++r) {
          const T* prow = p.row(r);
          const T* dyrow = dy.row(r);
          T dot = 0;
          for (int j = 0; j < p.cols; ++j) {
            dot += dyrow[j] * prow[j];
          }
          T* darow = da.row(r);
          for (int j = 0; j < p.cols; ++j) {
            darow[j] += prow[j] * (dyrow[j] - dot);
          }
        }
      });
    });
  }

  // Pre-norm layer normalization: per-row mean/variance, learned gain/bias.
  Val layer_norm(Val a, Val gain, Val bias, T eps = T(1e-5)) {
    const Mat<T>& x = value(a);
    const Mat<T>& g_ = value(gain);
    const Mat<T>& b_ = value(bias);
    MSPL_CHECK(g_.rows == 1 && g_.cols == x.cols, "layer_norm: gain shape");
    MSPL_CHECK(b_.rows == 1 && b_.cols == x.cols, "layer_norm: bias shape");
    const int d = x.cols;
    Mat<T> xhat(x.rows, d);
    Mat<T> out(x.rows, d);
    Mat<T> istd(x.rows, 1);
    for (int r = 0; r < x.rows; ++r) {
      const T* xr = x.row(r);
      T mean = 0;
      for (int j = 0; j < d; ++j) {
        mean += xr[j];
      }
      mean /= T(d);
      T var = 0;
      for (int j = 0; j < d; ++j) {
        const T c = xr[j] - mean;
        var += c * c;
      }
      var /= T(d);
      const T is = T(1) / std::sqrt(var + eps);
      istd(r, 0) = is;
      T* hr = xhat.row(r);
      T* yr = out.row(r);
      for (int j = 0; j < d; ++j) {
        hr[j] = (xr[j] - mean) * is;
        yr[j] = hr[j] * g_.data[j] + b_.data[j];
      }
    }
    return make_node(
        std::move(out),
        [a, gain, bias, xh = std::move(xhat), is = std::move(istd)](Graph& g,
                                                                   const Mat<T>& dy) {
          const Mat<T>& gv = g.value(gain);
          const int d = xh.cols;
          g.with_grad(gain, [&](Mat<T>& dgain) {
            for (int r = 0; r < xh.rows; ++r) {
              const T* dyr = dy.row(r);
              const T* hr = xh.row(r);
              for (int j = 0; j < d; ++j) {
                dgain.data[j] += dyr[j] * hr[j];
              }
            }
          });
          g.with_grad(bias, [&](Mat<T>& dbias) {
            for (int r = 0; r < xh.rows; ++r) {
              const T* dyr = dy.row(r);
              for (int j = 0; j < d; ++j) {
                dbias.data[j] += dyr[j];
              }
            }
          });
          g.with_grad(a, [&](Mat<T>& da) {
            for (int r = 0; r < xh.rows; ++r) {
              const T* dyr = dy.row(r);
              const T* hr = xh.row(r);
              T sum_dxhat = 0;
              T sum_dxhat_h = 0;
              for (int j = 0; j < d; ++j) {
                const T dxh = dyr[j] * gv.data[j];
                sum_dxhat += dxh;
                sum_dxhat_h += dxh * hr[j];
              }
              const T inv_d = T(1) / T(d);
              T* dar = da.row(r);
              const T is_r = is(r, 0);
              for (int j = 0; j < d; ++j) {
                const T dxh = dyr[j] * gv.data[j];
                dar[j] += is_r * (dxh - inv_d * sum_dxhat - hr[j] * inv_d * sum_dxhat_h);
              }
            }
          });
        });
  }

  // Multi-head scaled dot-product attention with a causal mask. q/k/v are
  // (len x d_model); heads are contiguous column blocks.
  Val causal_attention(Val q, Val k, Val v, int n_heads) {
    const Mat<T>& qv = value(q);
    const Mat<T>& kv = value(k);
    const Mat<T>& vv = value(v);
    MSPL_CHECK(qv.same_shape(kv) && qv.same_shape(vv), "attention: q/k/v shapes differ");
    MSPL_CHECK(n_heads >= 1 && qv.cols % n_heads == 0,
               "attention: head count ", n_heads, " must divide width ", qv.cols);
    const int len = qv.rows;
    const int dh = qv.cols / n_heads;
    const T att_scale = T(1) / std::sqrt(T(dh));

    Mat<T> out(len, qv.cols);
    // One (len x len) probability matrix per head, lower triangle significant.
    std::vector<Mat<T>> probs;
    probs.resize(size_t(n_heads));
    for (int h = 0; h < n_heads; ++h) {
      probs[h] = Mat<T>(len, len);
      const int off = h * dh;
      Mat<T>& p = probs[h];
      for (int i = 0; i < len; ++i) {
        const T* qi = qv.row(i) + off;
        T* pi = p.row(i);
        T mx = -std::numeric_limits<T>::infinity();
        for (int j = 0; j <= i; ++j) {
          const T* kj = kv.row(j) + off;
          T dot = 0;
          for (int c = 0; c < dh; ++c) {
            dot += qi[c] * kj[c];
          }
          pi[j] = dot * att_scale;
          mx = std::max(mx, pi[j]);
        }
        T sum = 0;
        for (int j = 0; j <= i; ++j) {
          pi[j] = std::exp(pi[j] - mx);
          sum += pi[j];
        }
        const T inv = T(1) / sum;
        T* oi = out.row(i) + off;
        for (int c = 0; c < dh; ++c) {
          oi[c] = 0;
        }
        for (int j = 0; j <= i; ++j) {
          pi[j] *= inv;
          const T* vj = vv.row(j) + off;
          const T w = pi[j];
          for (int c = 0; c < dh; ++c) {
            oi[c] += w * vj[c];
          }
        }
      }
    }
    return make_node(
        std::move(out),
        [q, k, v, n_heads, dh, att_scale, ps = std::move(probs)](Graph& g, const Mat<T>& dy) {
          const Mat<T>& qv = g.value(q);
          const Mat<T>& kv = g.value(k);
          const Mat<T>& vv = g.value(v);
          const int len = qv.rows;
          Mat<T> dq(len, qv.cols), dk(len, qv.cols), dv(len, qv.cols);
          std::vector<T> dprow(size_t(len), T(0));
          for (int h = 0; h < n_heads; ++h) {
            const int off = h * dh;
            const Mat<T>& p = ps[h];
            for (int i = 0; i < len; ++i) {
              const T* dyi = dy.row(i) + off;
              const T* pi = p.row(i);
              // dP and the softmax Jacobian, row i over visible keys.
              T dot = 0;
              for (int j = 0; j <= i; ++j) {
                const T* vj = vv.row(j) + off;
                T dp = 0;
                for (int c = 0; c < dh; ++c) {
                  dp += dyi[c] * vj[c];
                }
                dprow[j] = dp;
                dot += dp * pi[j];
              }
              const T* qi = qv.row(i) + off;
              T* dqi = dq.row(i) + off;
              for (int j = 0; j <= i; ++j) {
                const T ds = pi[j] * (dprow[j] - dot) * att_scale;
                const T* kj = kv.row(j) + off;
                T* dkj = dk.row(j) + off;
                T* dvj = dv.row(j) + off;
                const T w = pi[j];
                for (int c = 0; c < dh; ++c) {
                  dqi[c] += ds * kj[c];
                  dkj[c] += ds * qi[c];
                  dvj[c] += w * dyi[c];
                }
              }
            }
          }
          g.with_grad(q, [&](Mat<T>& da) { da.add_inplace(dq); });
          g.with_grad(k, [&](Mat<T>& da) { da.add_inplace(dk); });
          g.with_grad(v, [&](Mat<T>& da) { da.add_inplace(dv); });
        });
  }

  // Row gather from an embedding table; backward scatter-adds.
  Val embed_rows(Val table, std::vector<int> ids) {
    const Mat<T>& tab = value(table);
    Mat<T> out(int(ids.size()), tab.cols);
    for (size_t p = 0; p < ids.size(); ++p) {
      MSPL_CHECK(ids[p] >= 0 && ids[p] < tab.rows, "embed: row ", ids[p],
                 " out of range [0,", tab.rows, ")");
      std::memcpy(out.row(int(p)), tab.row(ids[p]), size_t(tab.cols) * sizeof(T));
    }
    return make_node(std::move(out), [table, ids = std::move(ids)](Graph& g, const Mat<T>& dy) {
      g.with_grad(table, [&](Mat<T>& dt) {
        for (size_t p = 0; p < ids.size(); ++p) {
          T* trow = dt.row(ids[p]);
          const T* dyrow = dy.row(int(p));
          for (int c = 0; c < dy.cols; ++c) {
            trow[c] += dyrow[c];
          }
        }
      });
    });
  }

  // Per-position gather from one of two tables (mixed-modality inputs).
  Val gather2(Val table_a, Val table_b, std::vector<RowPick> picks) {
    const Mat<T>& ta = value(table_a);
    const Mat<T>& tb = value(table_b);
    MSPL_CHECK(ta.cols == tb.cols, "gather2: table widths differ");
    Mat<T> out(int(picks.size()), ta.cols);
    for (size_t p = 0; p < picks.size(); ++p) {
      const Mat<T>& tab = picks[p].table == 0 ? ta : tb;
      MSPL_CHECK(picks[p].row >= 0 && picks[p].row < tab.rows, "gather2: row ",
                 picks[p].row, " out of range [0,", tab.rows, ")");
      std::memcpy(out.row(int(p)), tab.row(picks[p].row), size_t(ta.cols) * sizeof(T));
    }
    return make_node(std::move(out),
                     [table_a, table_b, picks = std::move(picks)](Graph& g, const Mat<T>& dy) {
                       auto scatter = [&](Mat<T>& dt, uint8_t which) {
                         for (size_t p = 0; p < picks.size(); ++p) {
                           if (picks[p].table != which) {
                             continue;
                           }
                           T* trow = dt.row(picks[p].row);
                           const T* dyrow = dy.row(int(p));
                           for (int c = 0; c < dy.cols; ++c) {
                             trow[c] += dyrow[c];
                           }
                         }
                       };
                       g.with_grad(table_a, [&](Mat<T>& dt) { scatter(dt, 0); });
                       g.with_grad(table_b, [&](Mat<T>& dt) { scatter(dt, 1); });
                     });
  }

  // Weighted sum of all entries (1x1 output); w = ones gives a plain sum.
  Val reduce_dot(Val a, Mat<T> w) {
    const Mat<T>& x = value(a);
    MSPL_CHECK(x.same_shape(w), "reduce_dot: weight shape mismatch");
    T total = 0;
    for (size_t i = 0; i < x.size(); ++i) {
      total += x.data[i] * w.data[i];
    }
    Mat<T> out(1, 1);
    out(0, 0) = total;
    return make_node(std::move(out), [a, w = std::move(w)](Graph& g, const Mat<T>& dy) {
      g.with_grad(a, [&](Mat<T>& da) {
        const T s = dy(0, 0);
        for (size_t i = 0; i < da.size(); ++i) {
          da.data[i] += s * w.data[i];
        }
      });
    });
  }

  // Sum of per-position cross-entropy over mask-selected rows (1x1 output).
  Val cross_entropy_sum(Val logits, std::vector<int> targets, std::vector<uint8_t> mask) {
    const Mat<T>& x = value(logits);
    MSPL_CHECK(int(targets.size()) == x.rows && mask.size() == targets.size(),
               "cross_entropy: targets/mask must match logit rows");
    int n_selected = 0;
    for (uint8_t m : mask) {
      n_selected += m != 0;
    }
    MSPL_CHECK(n_selected > 0, "no supervised positions");
    T total = 0;
    for (int r = 0; r < x.rows; ++r) {
      if (!mask[size_t(r)]) {
        continue;
      }
      MSPL_CHECK(targets[size_t(r)] >= 0 && targets[size_t(r)] < x.cols,
                 "cross_entropy: target out of range");
      const T* row = x.row(r);
      T mx = row[0];
      for (int j = 1; j < x.cols; ++j) {
        mx = std::max(mx, row[j]);
      }
      T sum = 0;
      for (int j = 0; j < x.cols; ++j) {
        sum += std::exp(row[j] - mx);
      }
      total += mx + std::log(sum) - row[targets[size_t(r)]];
    }
    Mat<T> out(1, 1);
    out(0, 0) = total;
    return make_node(std::move(out),
                     [logits, targets = std::move(targets), mask = std::move(mask)](
                         Graph& g, const Mat<T>& dy) {
                       g.with_grad(logits, [&](Mat<T>& dx) {
                         const Mat<T>& x = g.value(logits);
                         const T gscale = dy(0, 0);
                         for (int r = 0; r < x.rows; ++r) {
                           if (!mask[size_t(r)]) {
                             continue;
                           }
                           const T* row = x.row(r);
                           T mx = row[0];
                           for (int j = 1; j < x.cols; ++j) {
                             mx = std::max(mx, row[j]);
                           }
                           T sum = 0;
                           for (int j = 0; j < x.cols; ++j) {
                             sum += std::exp(row[j] - mx);
                           }
                           const T inv = T(1) / sum;
                           T* dr = dx.row(r);
                           for (int j = 0; j < x.cols; ++j) {
                             dr[j] += gscale * std::exp(row[j] - mx) * inv;
                           }
                           dr[targets[size_t(r)]] -= gscale;
                         }
                       });
                     });
  }

  // Reverse sweep from a scalar loss; parameter gradients accumulate.
  void backward(Val loss) {
    MSPL_CHECK(!nodes_.empty(), "backward before forward");
    MSPL_CHECK(!backward_done_, "backward already run on this graph");
    const Mat<T>& lv = value(loss);
    MSPL_CHECK(lv.rows == 1 && lv.cols == 1, "backward: loss must be scalar");
    for (Node& n : nodes_) {
      if (n.param == nullptr) {
        n.grad = Mat<T>::zeros(n.val.rows, n.val.cols);
      }
    }
    nodes_[loss].grad(0, 0) = T(1);
    backward_done_ = true;
    for (size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (n.back && !n.grad.empty()) {
        n.back(*this, n.grad);
      }
    }
  }

 private:
  struct Node {
    Mat<T> val;
    Mat<T> grad;
    ParamTensor<T>* param = nullptr;
    std::function<void(Graph&, const Mat<T>&)> back;
  };

  Val make_node(Mat<T> v, std::function<void(Graph&, const Mat<T>&)> back) {
    MSPL_CHECK(v.all_finite(), "op produced non-finite values");
    nodes_.push_back(Node{std::move(v), {}, nullptr, std::move(back)});
    return Val(nodes_.size() - 1);
  }

  // Routes gradient writes: plain nodes always, parameters only if trainable.
  template <class Fn>
  void with_grad(Val v, Fn&& fn) {
    Node& n = nodes_[v];
    if (n.param != nullptr) {
      if (n.param->trainable) {
        fn(n.param->grad);
      }
      return;
    }
    fn(n.grad);
  }

  static void softmax_row(const T* in, T* out, int n) {
    T mx = in[0];
    for (int j = 1; j < n; ++j) {
      mx = std::max(mx, in[j]);
    }
    T sum = 0;
    for (int j = 0; j < n; ++j) {
      out[j] = std::exp(in[j] - mx);
      sum += out[j];
    }
    const T inv = T(1) / sum;
    for (int j = 0; j < n; ++j) {
      out[j] *= inv;
    }
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

using Graphf = Graph<float>;
using Graphd = Graph<double>;

}  // namespace mspl
