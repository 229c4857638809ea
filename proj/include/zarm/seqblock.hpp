#pragma once

#include <string>
#include <tuple>

#include "zarm/graph.hpp"
#include "zarm/params.hpp"

namespace zarm {

// Self-attentive convolution block: n-gram QKV convolution, multihead
// self-attention with relative position embeddings, position-wise
// feed-forward. One instance per level (word, sentence), no weight sharing.
template <typename S>
struct SeqBlockParams {
  Parameter<S>*Wq, *Wk, *Wv, *bq, *bk, *bv, *Wf, *bf;
  Parameter<S>* pK = nullptr;  // null when position embeddings are ablated
  Parameter<S>* pV = nullptr;
  int heads = 2;
  int width = 3;
  int kmax = 8;

  static SeqBlockParams create(ParamStore<S>& store, const std::string& prefix,
                               std::size_t d_in, std::size_t d_out, int heads, int width,
                               int kmax, bool use_position) {
    if (d_out % heads != 0) throw ConfigError(prefix + ": dim not divisible by heads");
    if (width % 2 == 0) throw ConfigError(prefix + ": conv width must be odd");
    SeqBlockParams p;
    p.heads = heads;
    p.width = width;
    p.kmax = kmax;
    const std::size_t nd = d_in * width;
    p.Wq = store.add(prefix + "/W_q", {d_out, nd});
    p.Wk = store.add(prefix + "/W_k", {d_out, nd});
    p.Wv = store.add(prefix + "/W_v", {d_out, nd});
    p.bq = store.add(prefix + "/b_q", {d_out});
    p.bk = store.add(prefix + "/b_k", {d_out});
    p.bv = store.add(prefix + "/b_v", {d_out});
    if (use_position) {
      const std::size_t table = 2 * kmax + 1;
      p.pK = store.add(prefix + "/p_key", {table, d_out / heads});
      p.pV = store.add(prefix + "/p_value", {table, d_out / heads});
    }
    p.Wf = store.add(prefix + "/W_f", {d_out, d_out});
    p.bf = store.add(prefix + "/b_f", {d_out});
    return p;
  }

  void initialize(std::mt19937_64& rng) const {
    ParamStore<S>::initialize(*Wq, InitKind::glorot_uniform, rng);
    ParamStore<S>::initialize(*Wk, InitKind::glorot_uniform, rng);
    ParamStore<S>::initialize(*Wv, InitKind::glorot_uniform, rng);
    ParamStore<S>::initialize(*bq, InitKind::zeros, rng);
    ParamStore<S>::initialize(*bk, InitKind::zeros, rng);
    ParamStore<S>::initialize(*bv, InitKind::zeros, rng);
    if (pK) ParamStore<S>::initialize(*pK, InitKind::embedding_normal, rng);
    if (pV) ParamStore<S>::initialize(*pV, InitKind::embedding_normal, rng);
    ParamStore<S>::initialize(*Wf, InitKind::glorot_uniform, rng);
    ParamStore<S>::initialize(*bf, InitKind::zeros, rng);
  }
};

// Additive attention aggregator; projection dim is half the input dim.
template <typename S>
struct AggregatorParams {
  Parameter<S>*Wp, *bp, *h;

  static AggregatorParams create(ParamStore<S>& store, const std::string& prefix,
                                 std::size_t d) {
    AggregatorParams p;
    const std::size_t dp = d / 2;
    if (dp == 0) throw ConfigError(prefix + ": aggregator input dim too small");
    p.Wp = store.add(prefix + "/W_p", {dp, d});
    p.bp = store.add(prefix + "/b_p", {dp});
    p.h = store.add(prefix + "/h", {dp});
    return p;
  }

  void initialize(std::mt19937_64& rng) const {
    ParamStore<S>::initialize(*Wp, InitKind::glorot_uniform, rng);
    ParamStore<S>::initialize(*bp, InitKind::zeros, rng);
    ParamStore<S>::initialize(*h, InitKind::glorot_uniform, rng);
  }
};

// Position j consumes the window of width `n` centered on j; out-of-range
// and masked neighbors contribute zero vectors.
template <typename S>
std::tuple<Var<S>, Var<S>, Var<S>> ngram_qkv(Graph<S>& g, Var<S> inputs,
                                             const SeqBlockParams<S>& p, const Mask& mask) {
  Var<S> c = g.ngram_concat(inputs, p.width, mask);
  Var<S> q = g.linear_cols(g.leaf(p.Wq), c, g.leaf(p.bq), true, &mask);
  Var<S> k = g.linear_cols(g.leaf(p.Wk), c, g.leaf(p.bk), true, &mask);
  Var<S> v = g.linear_cols(g.leaf(p.Wv), c, g.leaf(p.bv), true, &mask);
  return {q, k, v};
}

template <typename S>
Var<S> relative_self_attention(Graph<S>& g, Var<S> q, Var<S> k, Var<S> v,
                               const SeqBlockParams<S>& p, const Mask& mask,
                               std::vector<Tensor<S>>* attn_out = nullptr) {
  Var<S> pK = p.pK ? g.leaf(p.pK) : nullptr;
  Var<S> pV = p.pV ? g.leaf(p.pV) : nullptr;
  return g.rel_attention(q, k, v, pK, pV, p.heads, p.kmax, mask, attn_out);
}

template <typename S>
Var<S> position_ffn(Graph<S>& g, Var<S> z, const SeqBlockParams<S>& p, const Mask& mask) {
  return g.linear_cols(g.leaf(p.Wf), z, g.leaf(p.bf), true, &mask);
}

template <typename S>
Var<S> seq_encode(Graph<S>& g, Var<S> inputs, const SeqBlockParams<S>& p, const Mask& mask,
                  std::vector<Tensor<S>>* attn_out = nullptr) {
  auto [q, k, v] = ngram_qkv(g, inputs, p, mask);
  Var<S> z = relative_self_attention(g, q, k, v, p, mask, attn_out);
  return position_ffn(g, z, p, mask);
}

template <typename S>
struct AttentionPooled {
  Var<S> pooled;
  Var<S> weights;
};

template <typename S>
AttentionPooled<S> additive_attention(Graph<S>& g, Var<S> z, const AggregatorParams<S>& p,
                                      const Mask& mask) {
  Var<S> hidden = g.linear_cols(g.leaf(p.Wp), z, g.leaf(p.bp), true, &mask);
  Var<S> scores = g.dot_cols(g.leaf(p.h), hidden);
  Var<S> weights = g.masked_softmax(scores, mask);
  Var<S> pooled = g.weighted_sum_cols(z, weights);
  return {pooled, weights};
}

}  // namespace zarm
