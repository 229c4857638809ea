#pragma once

#include <vector>

#include "zarm/corpus.hpp"
#include "zarm/seqblock.hpp"

namespace zarm {

// Forward-pass context shared by the encoder stack: dropout is active only
// while training and every stochastic draw comes from the run RNG.
template <typename S>
struct EncodeCtx {
  bool train = false;
  double dropout_embed = 0.0;  // after the embedding lookup
  double dropout_ffn = 0.0;    // after each position-wise feed-forward
  std::mt19937_64* rng = nullptr;

  Var<S> maybe_dropout(Graph<S>& g, Var<S> x, double rate) const {
    if (!train || rate <= 0.0) return x;
    return g.dropout(x, rate, *rng);
  }
};

// One encoder tower: embedding table (shared across towers), word- and
// sentence-level blocks, and the review-level aggregator.
template <typename S>
struct EncoderStack {
  Parameter<S>* embedding = nullptr;  // V x d_w, PAD row frozen at zero
  SeqBlockParams<S> word_block;
  AggregatorParams<S> word_agg;
  SeqBlockParams<S> sent_block;
  AggregatorParams<S> sent_agg;
  AggregatorParams<S> review_agg;
  bool hierarchical = true;   // false = average-embedding ablation
  bool attention_agg = true;  // false = max-pool aggregator ablation
};

template <typename S>
struct ReviewTrace {
  std::vector<Tensor<S>> word_attention;  // per sentence, masked softmax weights
  Tensor<S> sentence_attention;
};

// words -> sentence vector s_i. A fully padded sentence yields a zero vector
// and is masked out upstream.
template <typename S>
Var<S> encode_sentence(Graph<S>& g, const std::vector<int>& word_indices,
                       const EncoderStack<S>& stack, const Mask& word_mask,
                       const EncodeCtx<S>& ctx, Tensor<S>* attn_out = nullptr) {
  if (!any_set(word_mask)) {
    const std::size_t d_out = stack.word_block.Wf->value.rows();
    return g.constant(Tensor<S>::zeros({d_out}));
  }
  Var<S> emb = g.embed_cols(g.leaf(stack.embedding), word_indices);
  emb = ctx.maybe_dropout(g, emb, ctx.dropout_embed);
  Var<S> z = seq_encode(g, emb, stack.word_block, word_mask);
  z = ctx.maybe_dropout(g, z, ctx.dropout_ffn);
  auto pooled = additive_attention(g, z, stack.word_agg, word_mask);
  if (attn_out) *attn_out = pooled.weights->value;
  return pooled.pooled;
}

// sentences -> review vector r.
template <typename S>
Var<S> encode_review(Graph<S>& g, const PaddedReview& review, const EncoderStack<S>& stack,
                     const EncodeCtx<S>& ctx, ReviewTrace<S>* trace = nullptr) {
  if (!stack.hierarchical) {
    // Average-embedding ablation: the review vector is the mean of its word
    // embeddings over the non-PAD grid positions.
    if (review.empty()) {
      const std::size_t d_w = stack.embedding->value.cols();
      return g.constant(Tensor<S>::zeros({d_w}));
    }
    Var<S> emb = g.embed_cols(g.leaf(stack.embedding), review.grid);
    emb = ctx.maybe_dropout(g, emb, ctx.dropout_embed);
    return g.mean_cols(emb, review.word_mask);
  }

  const std::size_t d_r = stack.sent_block.Wf->value.rows();
  if (review.empty()) return g.constant(Tensor<S>::zeros({d_r}));

  std::vector<Var<S>> sentence_vecs;
  sentence_vecs.reserve(review.T);
  if (trace) trace->word_attention.resize(review.T);
  for (std::size_t t = 0; t < review.T; ++t) {
    std::vector<int> words(review.grid.begin() + t * review.L,
                           review.grid.begin() + (t + 1) * review.L);
    Mask wmask(review.word_mask.begin() + t * review.L,
               review.word_mask.begin() + (t + 1) * review.L);
    sentence_vecs.push_back(encode_sentence(g, words, stack, wmask, ctx,
                                            trace ? &trace->word_attention[t] : nullptr));
  }
  Var<S> sentences = g.stack_cols(sentence_vecs);
  Var<S> z = seq_encode(g, sentences, stack.sent_block, review.sentence_mask);
  z = ctx.maybe_dropout(g, z, ctx.dropout_ffn);
  auto pooled = additive_attention(g, z, stack.sent_agg, review.sentence_mask);
  if (trace) trace->sentence_attention = pooled.weights->value;
  return pooled.pooled;
}

// review vectors -> u^static / i^static, via additive attention by default
// or coordinate-wise max under the max-pool ablation.
template <typename S>
Var<S> aggregate_static(Graph<S>& g, Var<S> reviews, const EncoderStack<S>& stack,
                        const Mask& review_mask, Tensor<S>* attn_out = nullptr) {
  if (!any_set(review_mask))
    throw DataError("aggregate_static: no reviews to aggregate (empty profile)");
  if (!stack.attention_agg) return g.col_max(reviews, review_mask);
  auto pooled = additive_attention(g, reviews, stack.review_agg, review_mask);
  if (attn_out) *attn_out = pooled.weights->value;
  return pooled.pooled;
}

}  // namespace zarm
