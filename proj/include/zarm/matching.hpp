#pragma once

#include <vector>

#include "zarm/graph.hpp"
#include "zarm/params.hpp"

namespace zarm {

// Relevance matching function m(query review, item document): cosine word
// similarity matrix, row-wise mean/max pooling, importance-weighted feature
// vector, two-layer scorer producing an unbounded real score.
template <typename S>
struct MatchParams {
  Parameter<S>* w_imp;  // word importance vector, d_w
  Parameter<S>* W1;     // hidden x 2M
  Parameter<S>* b1;
  Parameter<S>* w2;     // hidden
  Parameter<S>* b2;     // scalar

  static MatchParams create(ParamStore<S>& store, const std::string& prefix,
                            std::size_t d_w, std::size_t M, std::size_t hidden) {
    MatchParams p;
    p.w_imp = store.add(prefix + "/w_imp", {d_w});
    p.W1 = store.add(prefix + "/W1", {hidden, 2 * M});
    p.b1 = store.add(prefix + "/b1", {hidden});
    p.w2 = store.add(prefix + "/w2", {hidden});
    p.b2 = store.add(prefix + "/b2", {1});
    return p;
  }

  void initialize(std::mt19937_64& rng) const {
    ParamStore<S>::initialize(*w_imp, InitKind::glorot_uniform, rng);
    ParamStore<S>::initialize(*W1, InitKind::glorot_uniform, rng);
    ParamStore<S>::initialize(*b1, InitKind::zeros, rng);
    ParamStore<S>::initialize(*w2, InitKind::glorot_uniform, rng);
    ParamStore<S>::initialize(*b2, InitKind::zeros, rng);
  }
};

template <typename S>
struct MatchTrace {
  Tensor<S> similarity;  // M x (M * N)
  Tensor<S> row_mean;
  Tensor<S> row_max;
  Tensor<S> importance;
  S alpha = 0;
};

// Masked softmax over w_imp . e_j for the M query word positions.
template <typename S>
Var<S> word_importance(Graph<S>& g, Var<S> query_embeds, const MatchParams<S>& p,
                       const Mask& query_mask) {
  Var<S> scores = g.dot_cols(g.leaf(p.w_imp), query_embeds);
  return g.masked_softmax(scores, query_mask);
}

// alpha = w2 . Relu(W1 [imp (.) mean; imp (.) max] + b1) + b2
template <typename S>
Var<S> relevance_score(Graph<S>& g, Var<S> query_embeds, Var<S> doc_embeds,
                       const MatchParams<S>& p, const Mask& query_mask,
                       const Mask& doc_mask, MatchTrace<S>* trace = nullptr) {
  Var<S> sim = g.cosine_matrix(query_embeds, doc_embeds);
  Var<S> mean = g.row_mean(sim, doc_mask);
  Var<S> mx = g.row_max(sim, doc_mask);
  Var<S> imp = word_importance(g, query_embeds, p, query_mask);
  Var<S> feat = g.concat(g.mul(imp, mean), g.mul(imp, mx));
  Var<S> hidden = g.linear_cols(g.leaf(p.W1), feat, g.leaf(p.b1), true);
  Var<S> alpha = g.add(g.dot(g.leaf(p.w2), hidden), g.leaf(p.b2));
  if (trace) {
    trace->similarity = sim->value;
    trace->row_mean = mean->value;
    trace->row_max = mx->value;
    trace->importance = imp->value;
    trace->alpha = alpha->value[0];
  }
  return alpha;
}

// Augmented attention over (0, alpha_1 .. alpha_N): the weight vector sums
// to one and all mass escapes to the zero sink when every score is very
// negative. Returns the N+1 weights with the sink at index 0.
template <typename S>
Var<S> zero_attention(Graph<S>& g, Var<S> alphas) {
  return g.zero_softmax(alphas);
}

// u^dynamic = sum_k alpha_hat_k r_k; the sink mass contributes nothing.
template <typename S>
Var<S> dynamic_user(Graph<S>& g, Var<S> augmented_weights, Var<S> review_reps) {
  const std::size_t n = review_reps->value.cols();
  if (augmented_weights->value.size() != n + 1)
    throw DimensionError("dynamic_user: weights/reviews length mismatch");
  Var<S> review_weights = g.slice(augmented_weights, 1, n);
  return g.weighted_sum_cols(review_reps, review_weights);
}

}  // namespace zarm
