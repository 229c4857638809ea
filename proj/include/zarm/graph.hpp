#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <unordered_map>
#include <vector>

#include "zarm/params.hpp"
#include "zarm/tensor.hpp"

namespace zarm {

namespace debug {
// Test hook: negates the softmax backward rule so the gradient checker's
// negative control has a real fault to catch.
inline bool flip_softmax_grad = false;
}  // namespace debug

template <typename S>
struct Node;

template <typename S>
using Var = std::shared_ptr<Node<S>>;

template <typename S>
struct Node {
  Tensor<S> value;
  Tensor<S> grad;  // allocated by Graph::backward
  std::function<void(Node<S>&)> back;
  Parameter<S>* param = nullptr;  // set for leaf nodes
};

using Mask = std::vector<std::uint8_t>;

inline bool any_set(const Mask& m) {
  for (auto b : m)
    if (b) return true;
  return false;
}

// Records every primitive application in creation order (which is already
// topological) and replays them in reverse for the backward pass. Single
// writer: one graph per example, never shared across threads.
template <typename S>
class Graph {
 public:
  Var<S> constant(Tensor<S> t) {
    t.check_finite("constant");
    return make(std::move(t), nullptr);
  }

  Var<S> scalar(S value) { return constant(Tensor<S>::scalar(value)); }

  // One leaf node per parameter per graph, so gradients for repeated uses
  // accumulate on the same node.
  Var<S> leaf(Parameter<S>* p) {
    auto it = leaves_.find(p);
    if (it != leaves_.end()) return it->second;
    Var<S> n = make(p->value, nullptr);
    n->param = p;
    leaves_[p] = n;
    return n;
  }

  // ---- dense linear algebra ----

  // Y = activation(W X + b), applied per column; X may be rank 1 (one
  // column). Columns with col_mask == 0 are forced to exact zero.
  Var<S> linear_cols(Var<S> W, Var<S> X, Var<S> b, bool relu_act,
                     const Mask* col_mask = nullptr) {
    const std::size_t p = W->value.rows(), m = W->value.cols();
    const std::size_t len = X->value.size() / X->value.rows();
    if (X->value.rows() != m || (b && b->value.size() != p))
      throw DimensionError("linear: W " + shape_str(W->value.shape) + " vs x " +
                           shape_str(X->value.shape));
    if (col_mask && col_mask->size() != len)
      throw DimensionError("linear: column mask length mismatch");
    Tensor<S> out(X->value.shape.size() == 1 ? Shape{p} : Shape{p, len});
    Mask cmask = col_mask ? *col_mask : Mask();
    for (std::size_t j = 0; j < len; ++j) {
      if (!cmask.empty() && !cmask[j]) continue;
      for (std::size_t i = 0; i < p; ++i) {
        S acc = b ? b->value[i] : S(0);
        for (std::size_t t = 0; t < m; ++t) acc += W->value.at(i, t) * X->value.at(t, j);
        out.v[i * len + j] = relu_act ? std::max(S(0), acc) : acc;
      }
    }
    return make(std::move(out), [=](Node<S>& n) {
      for (std::size_t j = 0; j < len; ++j) {
        if (!cmask.empty() && !cmask[j]) continue;
        for (std::size_t i = 0; i < p; ++i) {
          S dy = n.grad.v[i * len + j];
          if (relu_act && n.value.v[i * len + j] <= S(0)) dy = S(0);
          if (dy == S(0)) continue;
          if (b) b->grad[i] += dy;
          for (std::size_t t = 0; t < m; ++t) {
            W->grad.at(i, t) += dy * X->value.at(t, j);
            X->grad.at(t, j) += dy * W->value.at(i, t);
          }
        }
      }
    });
  }

  // ---- elementwise and reductions ----

  Var<S> add(Var<S> a, Var<S> b) {
    require_same_shape(a->value, b->value, "add");
    Tensor<S> out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
    return make(std::move(out), [=](Node<S>& n) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        a->grad[i] += n.grad[i];
        b->grad[i] += n.grad[i];
      }
    });
  }

  Var<S> sub(Var<S> a, Var<S> b) {
    require_same_shape(a->value, b->value, "sub");
    Tensor<S> out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
    return make(std::move(out), [=](Node<S>& n) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        a->grad[i] += n.grad[i];
        b->grad[i] -= n.grad[i];
      }
    });
  }

  Var<S> mul(Var<S> a, Var<S> b) {
    require_same_shape(a->value, b->value, "mul");
    Tensor<S> out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
    return make(std::move(out), [=](Node<S>& n) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        a->grad[i] += n.grad[i] * b->value[i];
        b->grad[i] += n.grad[i] * a->value[i];
      }
    });
  }

  Var<S> relu(Var<S> a) {
    Tensor<S> out = a->value;
    for (S& x : out.v) x = std::max(S(0), x);
    return make(std::move(out), [=](Node<S>& n) {
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        if (n.value[i] > S(0)) a->grad[i] += n.grad[i];
    });
  }

  Var<S> square(Var<S> a) {
    Tensor<S> out = a->value;
    for (S& x : out.v) x *= x;
    return make(std::move(out), [=](Node<S>& n) {
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        a->grad[i] += S(2) * a->value[i] * n.grad[i];
    });
  }

  Var<S> dot(Var<S> a, Var<S> b) {
    require_same_shape(a->value, b->value, "dot");
    S acc = 0;
    for (std::size_t i = 0; i < a->value.size(); ++i) acc += a->value[i] * b->value[i];
    return make(Tensor<S>::scalar(acc), [=](Node<S>& n) {
      S g = n.grad[0];
      for (std::size_t i = 0; i < a->value.size(); ++i) {
        a->grad[i] += g * b->value[i];
        b->grad[i] += g * a->value[i];
      }
    });
  }

  Var<S> sum(Var<S> a) {
    S acc = 0;
    for (S x : a->value.v) acc += x;
    return make(Tensor<S>::scalar(acc), [=](Node<S>& n) {
      for (std::size_t i = 0; i < a->value.size(); ++i) a->grad[i] += n.grad[0];
    });
  }

  // ---- gathers, layout ----

  // Output column j is row idx[j] of the table (table: V x d, output: d x len).
  Var<S> embed_cols(Var<S> table, std::vector<int> idx) {
    const std::size_t d = table->value.cols();
    const std::size_t len = idx.size();
    Tensor<S> out({d, len});
    for (std::size_t j = 0; j < len; ++j) {
      if (idx[j] < 0 || static_cast<std::size_t>(idx[j]) >= table->value.rows())
        throw DataError("embedding index out of range");
      for (std::size_t r = 0; r < d; ++r) out.at(r, j) = table->value.at(idx[j], r);
    }
    return make(std::move(out), [=](Node<S>& n) {
      for (std::size_t j = 0; j < len; ++j)
        for (std::size_t r = 0; r < d; ++r)
          table->grad.at(idx[j], r) += n.grad.at(r, j);
    });
  }

  Var<S> table_row(Var<S> table, int row) {
    const std::size_t d = table->value.cols();
    if (row < 0 || static_cast<std::size_t>(row) >= table->value.rows())
      throw DataError("table row out of range");
    Tensor<S> out({d});
    for (std::size_t r = 0; r < d; ++r) out[r] = table->value.at(row, r);
    return make(std::move(out), [=](Node<S>& n) {
      for (std::size_t r = 0; r < d; ++r) table->grad.at(row, r) += n.grad[r];
    });
  }

  Var<S> element(Var<S> vec, int i) {
    if (i < 0 || static_cast<std::size_t>(i) >= vec->value.size())
      throw DataError("element index out of range");
    return make(Tensor<S>::scalar(vec->value[i]),
                [=](Node<S>& n) { vec->grad[i] += n.grad[0]; });
  }

  Var<S> stack_cols(const std::vector<Var<S>>& cols) {
    if (cols.empty()) throw DimensionError("stack_cols: empty input");
    const std::size_t d = cols[0]->value.size();
    Tensor<S> out({d, cols.size()});
    for (std::size_t j = 0; j < cols.size(); ++j) {
      if (cols[j]->value.size() != d) throw DimensionError("stack_cols: ragged columns");
      for (std::size_t r = 0; r < d; ++r) out.at(r, j) = cols[j]->value[r];
    }
    auto saved = cols;
    return make(std::move(out), [=](Node<S>& n) {
      for (std::size_t j = 0; j < saved.size(); ++j)
        for (std::size_t r = 0; r < d; ++r) saved[j]->grad[r] += n.grad.at(r, j);
    });
  }

  Var<S> concat(Var<S> a, Var<S> b) {
    Tensor<S> out({a->value.size() + b->value.size()});
    std::copy(a->value.v.begin(), a->value.v.end(), out.v.begin());
    std::copy(b->value.v.begin(), b->value.v.end(), out.v.begin() + a->value.size());
    return make(std::move(out), [=](Node<S>& n) {
      for (std::size_t i = 0; i < a->value.size(); ++i) a->grad[i] += n.grad[i];
      for (std::size_t i = 0; i < b->value.size(); ++i)
        b->grad[i] += n.grad[a->value.size() + i];
    });
  }

  Var<S> slice(Var<S> vec, std::size_t start, std::size_t len) {
    if (start + len > vec->value.size()) throw DimensionError("slice out of range");
    Tensor<S> out({len});
    std::copy(vec->value.v.begin() + start, vec->value.v.begin() + start + len,
              out.v.begin());
    return make(std::move(out), [=](Node<S>& n) {
      for (std::size_t i = 0; i < len; ++i) vec->grad[start + i] += n.grad[i];
    });
  }

  // Column j of the output is the concatenation of input columns
  // j - half .. j + half; out-of-range or masked neighbors contribute zeros.
  Var<S> ngram_concat(Var<S> X, int width, const Mask& mask) {
    if (width < 1 || width % 2 == 0) throw DimensionError("ngram width must be odd");
    const std::size_t d = X->value.rows();
    const std::size_t len = X->value.cols();
    const int half = (width - 1) / 2;
    Tensor<S> out({d * static_cast<std::size_t>(width), len});
    for (std::size_t j = 0; j < len; ++j)
      for (int w = 0; w < width; ++w) {
        int src = static_cast<int>(j) + w - half;
        if (src < 0 || src >= static_cast<int>(len)) continue;
        if (!mask.empty() && !mask[src]) continue;
        for (std::size_t r = 0; r < d; ++r) out.at(w * d + r, j) = X->value.at(r, src);
      }
    Mask m = mask;
    return make(std::move(out), [=](Node<S>& n) {
      for (std::size_t j = 0; j < len; ++j)
        for (int w = 0; w < width; ++w) {
          int src = static_cast<int>(j) + w - half;
          if (src < 0 || src >= static_cast<int>(len)) continue;
          if (!m.empty() && !m[src]) continue;
          for (std::size_t r = 0; r < d; ++r)
            X->grad.at(r, src) += n.grad.at(w * d + r, j);
        }
    });
  }

  // Masked, numerically stable softmax over a vector. Masked positions come
  // out exactly zero; errors if no position is unmasked.
  Var<S> masked_softmax(Var<S> scores, const Mask& mask) {
    const std::size_t n = scores->value.size();
    if (!mask.empty() && mask.size() != n)
      throw DimensionError("softmax: mask length mismatch");
    if (n == 0 || (!mask.empty() && !any_set(mask)))
      throw DataError("softmax: empty support (all positions masked)");
    Tensor<S> out({n});
    softmax_into(scores->value.v.data(), mask, out.v.data(), n);
    Mask m = mask;
    return make(std::move(out), [=](Node<S>& node) {
      S inner = 0;
      for (std::size_t i = 0; i < n; ++i)
        if (m.empty() || m[i]) inner += node.value[i] * node.grad[i];
      const S sign = debug::flip_softmax_grad ? S(-1) : S(1);
      for (std::size_t i = 0; i < n; ++i)
        if (m.empty() || m[i])
          scores->grad[i] += sign * node.value[i] * (node.grad[i] - inner);
    });
  }

  // score vector = h . column of X, per column
  Var<S> dot_cols(Var<S> h, Var<S> X) {
    const std::size_t d = X->value.rows(), len = X->value.cols();
    if (h->value.size() != d) throw DimensionError("dot_cols: dim mismatch");
    Tensor<S> out({len});
    for (std::size_t j = 0; j < len; ++j) {
      S acc = 0;
      for (std::size_t r = 0; r < d; ++r) acc += h->value[r] * X->value.at(r, j);
      out[j] = acc;
    }
    return make(std::move(out), [=](Node<S>& n) {
      for (std::size_t j = 0; j < len; ++j) {
        S g = n.grad[j];
        if (g == S(0)) continue;
        for (std::size_t r = 0; r < d; ++r) {
          h->grad[r] += g * X->value.at(r, j);
          X->grad.at(r, j) += g * h->value[r];
        }
      }
    });
  }

  // pooled = X w (weighted sum of columns)
  Var<S> weighted_sum_cols(Var<S> X, Var<S> w) {
    const std::size_t d = X->value.rows(), len = X->value.cols();
    if (w->value.size() != len) throw DimensionError("weighted_sum_cols: dim mismatch");
    Tensor<S> out({d});
    for (std::size_t r = 0; r < d; ++r) {
      S acc = 0;
      for (std::size_t j = 0; j < len; ++j) acc += X->value.at(r, j) * w->value[j];
      out[r] = acc;
    }
    return make(std::move(out), [=](Node<S>& n) {
      for (std::size_t j = 0; j < len; ++j) {
        S wj = w->value[j];
        S dw = 0;
        for (std::size_t r = 0; r < d; ++r) {
          X->grad.at(r, j) += n.grad[r] * wj;
          dw += n.grad[r] * X->value.at(r, j);
        }
        w->grad[j] += dw;
      }
    });
  }

  // Multihead self-attention with relative position embeddings clipped at
  // k_max. q, k, v: d x len; pK, pV: (2*k_max + 1) x d_head, shared across
  // heads; either may be null to drop the position terms.
  Var<S> rel_attention(Var<S> q, Var<S> k, Var<S> v, Var<S> pK, Var<S> pV, int heads,
                       int kmax, const Mask& mask,
                       std::vector<Tensor<S>>* attn_out = nullptr) {
    const std::size_t d = q->value.rows(), len = q->value.cols();
    if (k->value.shape != q->value.shape || v->value.shape != q->value.shape)
      throw DimensionError("attention: q/k/v shape mismatch");
    if (heads < 1 || d % heads != 0)
      throw DimensionError("attention: dim not divisible by head count");
    const std::size_t dh = d / heads;
    if (pK && (pK->value.rows() != std::size_t(2 * kmax + 1) || pK->value.cols() != dh))
      throw DimensionError("attention: bad position table shape");
    if (!mask.empty() && !any_set(mask))
      throw DataError("attention: empty support (all positions masked)");
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));

    Tensor<S> out({d, len});
    // Attention rows saved for backward: heads x len x len.
    auto attn = std::make_shared<std::vector<Tensor<S>>>();
    attn->reserve(heads);
    Mask m = mask;
    std::vector<S> e(len);
    for (int h = 0; h < heads; ++h) {
      Tensor<S> a({len, len});
      const std::size_t off = h * dh;
      for (std::size_t j = 0; j < len; ++j) {
        if (!m.empty() && !m[j]) continue;
        for (std::size_t t = 0; t < len; ++t) {
          S acc = 0;
          const int rel = clip_rel(static_cast<int>(t) - static_cast<int>(j), kmax);
          for (std::size_t r = 0; r < dh; ++r) {
            S key = k->value.at(off + r, t);
            if (pK) key += pK->value.at(rel, r);
            acc += q->value.at(off + r, j) * key;
          }
          e[t] = acc * scale;
        }
        softmax_into(e.data(), m, &a.at(j, 0), len);
        for (std::size_t t = 0; t < len; ++t) {
          S w = a.at(j, t);
          if (w == S(0)) continue;
          const int rel = clip_rel(static_cast<int>(t) - static_cast<int>(j), kmax);
          for (std::size_t r = 0; r < dh; ++r) {
            S val = v->value.at(off + r, t);
            if (pV) val += pV->value.at(rel, r);
            out.at(off + r, j) += w * val;
          }
        }
      }
      attn->push_back(std::move(a));
    }
    if (attn_out) *attn_out = *attn;

    return make(std::move(out), [=](Node<S>& n) {
      std::vector<S> da(len), de(len);
      for (int h = 0; h < heads; ++h) {
        const Tensor<S>& a = (*attn)[h];
        const std::size_t off = h * dh;
        for (std::size_t j = 0; j < len; ++j) {
          if (!m.empty() && !m[j]) continue;
          // dz_j -> da, dv, dpV
          for (std::size_t t = 0; t < len; ++t) {
            da[t] = 0;
            S w = a.at(j, t);
            const int rel = clip_rel(static_cast<int>(t) - static_cast<int>(j), kmax);
            for (std::size_t r = 0; r < dh; ++r) {
              S g = n.grad.at(off + r, j);
              S val = v->value.at(off + r, t);
              if (pV) val += pV->value.at(rel, r);
              da[t] += g * val;
              if (w != S(0)) {
                v->grad.at(off + r, t) += w * g;
                if (pV) pV->grad.at(rel, r) += w * g;
              }
            }
          }
          // softmax backward on row j
          S inner = 0;
          for (std::size_t t = 0; t < len; ++t) inner += a.at(j, t) * da[t];
          const S sign = debug::flip_softmax_grad ? S(-1) : S(1);
          for (std::size_t t = 0; t < len; ++t)
            de[t] = sign * a.at(j, t) * (da[t] - inner);
          // de -> dq, dk, dpK
          for (std::size_t t = 0; t < len; ++t) {
            if (de[t] == S(0)) continue;
            const S g = de[t] * scale;
            const int rel = clip_rel(static_cast<int>(t) - static_cast<int>(j), kmax);
            for (std::size_t r = 0; r < dh; ++r) {
              S key = k->value.at(off + r, t);
              if (pK) key += pK->value.at(rel, r);
              q->grad.at(off + r, j) += g * key;
              k->grad.at(off + r, t) += g * q->value.at(off + r, j);
              if (pK) pK->grad.at(rel, r) += g * q->value.at(off + r, j);
            }
          }
        }
      }
    });
  }

  // Cosine similarity matrix between columns of A (d x m) and B (d x n),
  // with the convention that a zero-norm (PAD) column yields exact zeros.
  Var<S> cosine_matrix(Var<S> A, Var<S> B) {
    const std::size_t d = A->value.rows();
    if (B->value.rows() != d) throw DimensionError("cosine_matrix: dim mismatch");
    const std::size_t m = A->value.cols(), nc = B->value.cols();
    auto na = std::make_shared<std::vector<S>>(m);
    auto nb = std::make_shared<std::vector<S>>(nc);
    for (std::size_t j = 0; j < m; ++j) (*na)[j] = col_norm(A->value, j);
    for (std::size_t j = 0; j < nc; ++j) (*nb)[j] = col_norm(B->value, j);
    Tensor<S> out({m, nc});
    for (std::size_t a = 0; a < m; ++a) {
      if ((*na)[a] == S(0)) continue;
      for (std::size_t b = 0; b < nc; ++b) {
        if ((*nb)[b] == S(0)) continue;
        S acc = 0;
        for (std::size_t r = 0; r < d; ++r) acc += A->value.at(r, a) * B->value.at(r, b);
        out.at(a, b) = acc / ((*na)[a] * (*nb)[b]);
      }
    }
    return make(std::move(out), [=](Node<S>& n) {
      for (std::size_t a = 0; a < m; ++a) {
        if ((*na)[a] == S(0)) continue;
        for (std::size_t b = 0; b < nc; ++b) {
          if ((*nb)[b] == S(0)) continue;
          const S g = n.grad.at(a, b);
          if (g == S(0)) continue;
          const S c = n.value.at(a, b);
          const S ia = S(1) / (*na)[a], ib = S(1) / (*nb)[b];
          for (std::size_t r = 0; r < d; ++r) {
            const S ua = A->value.at(r, a) * ia;  // unit columns
            const S ub = B->value.at(r, b) * ib;
            A->grad.at(r, a) += g * (ub - c * ua) * ia;
            B->grad.at(r, b) += g * (ua - c * ub) * ib;
          }
        }
      }
    });
  }

  // Per-row mean over columns with col_valid != 0.
  Var<S> row_mean(Var<S> M, const Mask& col_valid) {
    const std::size_t r = M->value.rows(), c = M->value.cols();
    std::size_t nvalid = count_valid(col_valid, c, "row_mean");
    Tensor<S> out({r});
    for (std::size_t i = 0; i < r; ++i) {
      S acc = 0;
      for (std::size_t j = 0; j < c; ++j)
        if (col_valid.empty() || col_valid[j]) acc += M->value.at(i, j);
      out[i] = acc / static_cast<S>(nvalid);
    }
    Mask m = col_valid;
    return make(std::move(out), [=](Node<S>& n) {
      for (std::size_t i = 0; i < r; ++i) {
        S g = n.grad[i] / static_cast<S>(nvalid);
        for (std::size_t j = 0; j < c; ++j)
          if (m.empty() || m[j]) M->grad.at(i, j) += g;
      }
    });
  }

  // Per-row max over valid columns; gradient routed to the first maximal
  // column so tie-breaking is deterministic.
  Var<S> row_max(Var<S> M, const Mask& col_valid) {
    const std::size_t r = M->value.rows(), c = M->value.cols();
    count_valid(col_valid, c, "row_max");
    Tensor<S> out({r});
    auto arg = std::make_shared<std::vector<std::size_t>>(r);
    for (std::size_t i = 0; i < r; ++i) {
      bool first = true;
      for (std::size_t j = 0; j < c; ++j) {
        if (!col_valid.empty() && !col_valid[j]) continue;
        if (first || M->value.at(i, j) > out[i]) {
          out[i] = M->value.at(i, j);
          (*arg)[i] = j;
          first = false;
        }
      }
    }
    return make(std::move(out), [=](Node<S>& n) {
      for (std::size_t i = 0; i < r; ++i) M->grad.at(i, (*arg)[i]) += n.grad[i];
    });
  }

  // Coordinate-wise max over valid columns (the max-pool aggregator ablation).
  Var<S> col_max(Var<S> X, const Mask& col_valid) {
    const std::size_t d = X->value.rows(), c = X->value.cols();
    count_valid(col_valid, c, "col_max");
    Tensor<S> out({d});
    auto arg = std::make_shared<std::vector<std::size_t>>(d);
    for (std::size_t r = 0; r < d; ++r) {
      bool first = true;
      for (std::size_t j = 0; j < c; ++j) {
        if (!col_valid.empty() && !col_valid[j]) continue;
        if (first || X->value.at(r, j) > out[r]) {
          out[r] = X->value.at(r, j);
          (*arg)[r] = j;
          first = false;
        }
      }
    }
    return make(std::move(out), [=](Node<S>& n) {
      for (std::size_t r = 0; r < d; ++r) X->grad.at(r, (*arg)[r]) += n.grad[r];
    });
  }

  Var<S> mean_cols(Var<S> X, const Mask& col_valid) {
    const std::size_t d = X->value.rows(), c = X->value.cols();
    std::size_t nvalid = count_valid(col_valid, c, "mean_cols");
    Tensor<S> out({d});
    for (std::size_t r = 0; r < d; ++r) {
      S acc = 0;
      for (std::size_t j = 0; j < c; ++j)
        if (col_valid.empty() || col_valid[j]) acc += X->value.at(r, j);
      out[r] = acc / static_cast<S>(nvalid);
    }
    Mask m = col_valid;
    return make(std::move(out), [=](Node<S>& n) {
      for (std::size_t r = 0; r < d; ++r) {
        S g = n.grad[r] / static_cast<S>(nvalid);
        for (std::size_t j = 0; j < c; ++j)
          if (m.empty() || m[j]) X->grad.at(r, j) += g;
      }
    });
  }

  // Softmax over the augmented score vector (0, a_1 .. a_n). Output has
  // n + 1 entries with the zero-sink weight at index 0. Gradient flows into
  // the scores only; the sink score is a constant.
  Var<S> zero_softmax(Var<S> alphas) {
    const std::size_t n = alphas->value.size();
    Tensor<S> out({n + 1});
    S mx = S(0);
    for (S a : alphas->value.v) mx = std::max(mx, a);
    S denom = std::exp(S(0) - mx);
    for (S a : alphas->value.v) denom += std::exp(a - mx);
    out[0] = std::exp(S(0) - mx) / denom;
    for (std::size_t i = 0; i < n; ++i) out[i + 1] = std::exp(alphas->value[i] - mx) / denom;
    return make(std::move(out), [=](Node<S>& node) {
      S inner = 0;
      for (std::size_t i = 0; i <= n; ++i) inner += node.value[i] * node.grad[i];
      for (std::size_t i = 0; i < n; ++i)
        alphas->grad[i] += node.value[i + 1] * (node.grad[i + 1] - inner);
    });
  }

  // log(sigmoid(x)) with the sigmoid clamped to [eps, 1 - eps] before the
  // log; gradient is zero in the clamped region (matches finite differences).
  Var<S> log_sigmoid(Var<S> x, S eps) {
    if (!x->value.is_scalar()) throw DimensionError("log_sigmoid: scalar expected");
    const S s = sigmoid(x->value[0]);
    const bool clamped = s < eps || s > S(1) - eps;
    const S sc = std::min(std::max(s, eps), S(1) - eps);
    return make(Tensor<S>::scalar(std::log(sc)), [=](Node<S>& n) {
      if (!clamped) x->grad[0] += n.grad[0] * (S(1) - s);
    });
  }

  Var<S> log_one_minus_sigmoid(Var<S> x, S eps) {
    if (!x->value.is_scalar()) throw DimensionError("log_one_minus_sigmoid: scalar expected");
    const S s = sigmoid(x->value[0]);
    const S om = S(1) - s;
    const bool clamped = om < eps || om > S(1) - eps;
    const S sc = std::min(std::max(om, eps), S(1) - eps);
    return make(Tensor<S>::scalar(std::log(sc)), [=](Node<S>& n) {
      if (!clamped) x->grad[0] -= n.grad[0] * s;
    });
  }

  // Inverted dropout: scales kept entries by 1/(1-rate) so eval needs no
  // rescaling. Identity when rate == 0.
  Var<S> dropout(Var<S> X, double rate, std::mt19937_64& rng) {
    if (rate <= 0.0) return X;
    if (rate >= 1.0) throw ConfigError("dropout rate must be < 1");
    const S keep_scale = S(1.0 / (1.0 - rate));
    std::bernoulli_distribution drop(rate);
    auto m = std::make_shared<std::vector<S>>(X->value.size());
    Tensor<S> out = X->value;
    for (std::size_t i = 0; i < out.size(); ++i) {
      (*m)[i] = drop(rng) ? S(0) : keep_scale;
      out[i] *= (*m)[i];
    }
    return make(std::move(out), [=](Node<S>& n) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) X->grad[i] += n.grad[i] * (*m)[i];
    });
  }

  // Reverse pass: seeds d(loss)/d(loss) = 1, visits every recorded node once
  // in reverse creation order, then accumulates leaf gradients into their
  // parameters (or into `sink`, indexed by parameter index, when given).
  void backward(Var<S> loss, std::vector<Tensor<S>>* sink = nullptr) {
    if (!loss->value.is_scalar()) throw DimensionError("backward: loss must be scalar");
    for (auto& n : tape_) n->grad = Tensor<S>::zeros(n->value.shape);
    loss->grad[0] = S(1);
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it)
      if ((*it)->back) (*it)->back(**it);
    for (auto& [p, node] : leaves_) {
      Tensor<S>& dst = sink ? (*sink)[p->index] : p->grad;
      const std::size_t cols = node->grad.cols();
      for (std::size_t i = 0; i < node->grad.size(); ++i) {
        if (p->row_frozen(i / cols)) continue;
        dst.v[i] += node->grad[i];
      }
    }
  }

  std::size_t num_nodes() const { return tape_.size(); }

 private:
  Var<S> make(Tensor<S> value, std::function<void(Node<S>&)> back) {
    value.check_finite("op output");
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(value);
    n->back = std::move(back);
    tape_.push_back(n);
    return n;
  }

  static int clip_rel(int rel, int kmax) {
    return std::clamp(rel, -kmax, kmax) + kmax;
  }

  static S col_norm(const Tensor<S>& X, std::size_t j) {
    S acc = 0;
    for (std::size_t r = 0; r < X.rows(); ++r) acc += X.at(r, j) * X.at(r, j);
    return std::sqrt(acc);
  }

  static std::size_t count_valid(const Mask& m, std::size_t c, const char* op) {
    if (!m.empty() && m.size() != c)
      throw DimensionError(std::string(op) + ": mask length mismatch");
    std::size_t n = m.empty() ? c : static_cast<std::size_t>(std::count(m.begin(), m.end(), 1));
    if (n == 0) throw DataError(std::string(op) + ": no valid columns");
    return n;
  }

  static S sigmoid(S x) {
    if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
    const S e = std::exp(x);
    return e / (S(1) + e);
  }

  static void softmax_into(const S* scores, const Mask& mask, S* out, std::size_t n) {
    S mx = -std::numeric_limits<S>::infinity();
    for (std::size_t i = 0; i < n; ++i)
      if (mask.empty() || mask[i]) mx = std::max(mx, scores[i]);
    S denom = 0;
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = (mask.empty() || mask[i]) ? std::exp(scores[i] - mx) : S(0);
      denom += out[i];
    }
    for (std::size_t i = 0; i < n; ++i) out[i] /= denom;
  }

  std::vector<Var<S>> tape_;
  std::unordered_map<Parameter<S>*, Var<S>> leaves_;
};

}  // namespace zarm
