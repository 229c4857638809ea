#pragma once

#include <string>
#include <vector>

#include "zarm/corpus.hpp"
#include "zarm/hier.hpp"
#include "zarm/matching.hpp"

namespace zarm {

enum class Mode { train, eval };

struct AblationFlags {
  bool attention_aggregator = true;  // false: max-pool static review aggregator
  bool hierarchical_encoder = true;  // false: average word embedding per review
  bool use_position = true;
  bool use_ui_bias = true;
  bool use_aux_loss = true;
  bool item_dynamic = false;
};

struct ModelConfig {
  std::size_t d_w = 300, d_s = 100, d_r = 100, d_latent = 32;
  int heads = 2;
  int conv_width = 3;
  std::size_t match_hidden = 16;
  int k_max = 8;
  std::size_t T = 4, L = 20, M = 60, N = 1;
  double dropout_embed = 0.2, dropout_ffn = 0.3, dropout_final = 0.5;
  double sigmoid_clamp = 1e-7;
  bool share_towers = false;
  AblationFlags flags;

  std::size_t vocab_size = 2;
  std::size_t n_users = 0, n_items = 0;

  // Review vectors are d_w-dimensional under the average-embedding ablation.
  std::size_t review_dim() const { return flags.hierarchical_encoder ? d_r : d_w; }
};

// One forward instance. Profiles hold up to N padded reviews; queries are
// present only when the auxiliary loss is computed.
struct ExampleInput {
  int user = -1, item = -1;  // -1 = unknown id (cold-start evaluation)
  double rating = 0.0;
  std::vector<const PaddedReview*> user_profile;
  std::vector<const PaddedReview*> item_profile;
  const PaddedReview* positive_query = nullptr;
  const PaddedReview* negative_query = nullptr;
};

template <typename S>
struct ForwardTrace {
  S yhat = 0;
  std::vector<S> alphas;                      // per matched user review
  std::vector<S> alpha_hats;                  // zero-attention weights, sink at [0]
  std::vector<std::size_t> alpha_review_slots;  // profile slot of each alpha
  Tensor<S> user_review_attention, item_review_attention;
  Tensor<S> u_static, u_dynamic;
  bool has_aux = false;
  S alpha_pos = 0, alpha_neg = 0;
};

template <typename S>
struct ForwardResult {
  Var<S> yhat;
  Var<S> u_dynamic;
  Var<S> item_doc;        // embedded item document (for the aux loss)
  Mask item_doc_mask;
};

template <typename S>
class ZarmModel {
 public:
  explicit ZarmModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    const std::size_t d_r = cfg_.review_dim();
    embedding_ = store_.add("embedding/table", {cfg_.vocab_size, cfg_.d_w});
    embedding_->frozen_rows.assign(cfg_.vocab_size, 0);
    embedding_->frozen_rows[Vocab::kPad] = 1;

    user_ = build_tower("user", nullptr);
    item_ = build_tower("item", cfg_.share_towers ? &user_ : nullptr);

    match_ = MatchParams<S>::create(store_, "match/user", cfg_.d_w, cfg_.M, cfg_.match_hidden);
    if (cfg_.flags.item_dynamic)
      match_item_ = MatchParams<S>::create(store_, "match/item", cfg_.d_w, cfg_.M,
                                           cfg_.match_hidden);

    W_u_static_ = store_.add("head/W_u_static", {cfg_.d_latent, d_r});
    W_u_dynamic_ = store_.add("head/W_u_dynamic", {cfg_.d_latent, d_r});
    W_i_static_ = store_.add("head/W_i_static", {cfg_.d_latent, d_r});
    if (cfg_.flags.item_dynamic)
      W_i_dynamic_ = store_.add("head/W_i_dynamic", {cfg_.d_latent, d_r});
    b_u_transform_ = store_.add("head/b_u_transform", {cfg_.d_latent});
    b_i_transform_ = store_.add("head/b_i_transform", {cfg_.d_latent});
    user_id_ = store_.add("head/user_id", {cfg_.n_users, cfg_.d_latent});
    item_id_ = store_.add("head/item_id", {cfg_.n_items, cfg_.d_latent});
    w_f_ = store_.add("head/w_f", {cfg_.d_latent});
    if (cfg_.flags.use_ui_bias) {
      user_bias_ = store_.add("head/user_bias", {cfg_.n_users});
      item_bias_ = store_.add("head/item_bias", {cfg_.n_items});
    }
    global_bias_ = store_.add("head/global_bias", {1});
  }

  // Draws for every parameter happen in creation order, so a given config
  // and seed always produce the same initial state.
  void initialize(std::mt19937_64& rng) {
    ParamStore<S>::initialize(*embedding_, InitKind::embedding_normal, rng);
    init_tower(user_, rng, /*blocks=*/true);
    init_tower(item_, rng, /*blocks=*/!cfg_.share_towers);
    match_.initialize(rng);
    if (cfg_.flags.item_dynamic) match_item_.initialize(rng);
    ParamStore<S>::initialize(*W_u_static_, InitKind::glorot_uniform, rng);
    ParamStore<S>::initialize(*W_u_dynamic_, InitKind::glorot_uniform, rng);
    ParamStore<S>::initialize(*W_i_static_, InitKind::glorot_uniform, rng);
    if (W_i_dynamic_) ParamStore<S>::initialize(*W_i_dynamic_, InitKind::glorot_uniform, rng);
    ParamStore<S>::initialize(*b_u_transform_, InitKind::zeros, rng);
    ParamStore<S>::initialize(*b_i_transform_, InitKind::zeros, rng);
    ParamStore<S>::initialize(*user_id_, InitKind::embedding_normal, rng);
    ParamStore<S>::initialize(*item_id_, InitKind::embedding_normal, rng);
    ParamStore<S>::initialize(*w_f_, InitKind::glorot_uniform, rng);
    if (user_bias_) {
      ParamStore<S>::initialize(*user_bias_, InitKind::zeros, rng);
      ParamStore<S>::initialize(*item_bias_, InitKind::zeros, rng);
    }
    ParamStore<S>::initialize(*global_bias_, InitKind::zeros, rng);
  }

  ParamStore<S>& params() { return store_; }
  const ParamStore<S>& params() const { return store_; }
  const ModelConfig& config() const { return cfg_; }
  Parameter<S>* embedding() { return embedding_; }

  ForwardResult<S> forward(Graph<S>& g, const ExampleInput& ex, Mode mode,
                           std::mt19937_64* rng = nullptr,
                           ForwardTrace<S>* trace = nullptr) const {
    const bool train = mode == Mode::train;
    if (train && !rng) throw ConfigError("forward: train mode needs an RNG");
    if (train && (ex.user < 0 || ex.item < 0))
      throw DataError("forward: unknown user/item id at training time");
    EncodeCtx<S> ctx{train, cfg_.dropout_embed, cfg_.dropout_ffn, rng};

    // Static towers over the review profiles.
    auto [u_reviews, u_slots] = encode_profile(g, ex.user_profile, user_, ctx);
    auto [i_reviews, i_slots] = encode_profile(g, ex.item_profile, item_, ctx);
    Mask ones_u(u_slots.size(), 1), ones_i(i_slots.size(), 1);
    Var<S> u_static = aggregate_static(g, u_reviews, user_, ones_u,
                                       trace ? &trace->user_review_attention : nullptr);
    Var<S> i_static = aggregate_static(g, i_reviews, item_, ones_i,
                                       trace ? &trace->item_review_attention : nullptr);

    // Item document: the item profile reviews' flat word sequences, one
    // block of M positions per review.
    auto [doc_idx, doc_mask] = flatten_profile(ex.item_profile, i_slots);
    Var<S> item_doc = g.embed_cols(g.leaf(embedding_), doc_idx);

    // Relevance scores of each user review against the item document, then
    // zero attention over the augmented score vector.
    std::vector<Var<S>> alpha_vars;
    for (std::size_t s : u_slots) {
      const PaddedReview& r = *ex.user_profile[s];
      Var<S> query = g.embed_cols(g.leaf(embedding_), r.flat);
      alpha_vars.push_back(
          relevance_score(g, query, item_doc, match_, r.flat_mask, doc_mask));
    }
    Var<S> alphas = g.stack_cols(alpha_vars);
    Var<S> alpha_hats = zero_attention(g, alphas);
    Var<S> u_dynamic = dynamic_user(g, alpha_hats, u_reviews);

    // Feature transform.
    Var<S> u_pre = g.add(g.linear_cols(g.leaf(W_u_static_), u_static, nullptr, false),
                         g.linear_cols(g.leaf(W_u_dynamic_), u_dynamic, nullptr, false));
    Var<S> u_r = g.relu(g.add(u_pre, g.leaf(b_u_transform_)));
    Var<S> i_pre = g.linear_cols(g.leaf(W_i_static_), i_static, nullptr, false);
    if (cfg_.flags.item_dynamic) {
      auto [u_doc_idx, u_doc_mask] = flatten_profile(ex.user_profile, u_slots);
      Var<S> user_doc = g.embed_cols(g.leaf(embedding_), u_doc_idx);
      std::vector<Var<S>> item_alpha_vars;
      for (std::size_t s : i_slots) {
        const PaddedReview& r = *ex.item_profile[s];
        Var<S> query = g.embed_cols(g.leaf(embedding_), r.flat);
        item_alpha_vars.push_back(
            relevance_score(g, query, user_doc, match_item_, r.flat_mask, u_doc_mask));
      }
      Var<S> i_dynamic =
          dynamic_user(g, zero_attention(g, g.stack_cols(item_alpha_vars)), i_reviews);
      i_pre = g.add(i_pre, g.linear_cols(g.leaf(W_i_dynamic_), i_dynamic, nullptr, false));
    }
    Var<S> i_r = g.relu(g.add(i_pre, g.leaf(b_i_transform_)));
    if (train) {
      u_r = g.dropout(u_r, cfg_.dropout_final, *rng);
      i_r = g.dropout(i_r, cfg_.dropout_final, *rng);
    }

    // Prediction: id embeddings and scalar biases fall back to zero for
    // unknown ids at evaluation time.
    Var<S> u = ex.user >= 0 ? g.add(u_r, g.table_row(g.leaf(user_id_), ex.user)) : u_r;
    Var<S> i = ex.item >= 0 ? g.add(i_r, g.table_row(g.leaf(item_id_), ex.item)) : i_r;
    Var<S> yhat = g.dot(g.leaf(w_f_), g.mul(u, i));
    if (cfg_.flags.use_ui_bias) {
      if (ex.user >= 0) yhat = g.add(yhat, g.element(g.leaf(user_bias_), ex.user));
      if (ex.item >= 0) yhat = g.add(yhat, g.element(g.leaf(item_bias_), ex.item));
    }
    yhat = g.add(yhat, g.leaf(global_bias_));

    if (trace) {
      trace->yhat = yhat->value[0];
      trace->alphas.assign(alphas->value.v.begin(), alphas->value.v.end());
      trace->alpha_hats.assign(alpha_hats->value.v.begin(), alpha_hats->value.v.end());
      trace->alpha_review_slots = u_slots;
      trace->u_static = u_static->value;
      trace->u_dynamic = u_dynamic->value;
    }
    return {yhat, u_dynamic, item_doc, doc_mask};
  }

  // loss = (y - yhat)^2 - [log sigma(alpha_pos) + log(1 - sigma(alpha_neg))]
  Var<S> example_loss(Graph<S>& g, const ExampleInput& ex, Mode mode,
                      std::mt19937_64* rng = nullptr,
                      ForwardTrace<S>* trace = nullptr) const {
    ForwardResult<S> fwd = forward(g, ex, mode, rng, trace);
    Var<S> err = g.sub(fwd.yhat, g.scalar(static_cast<S>(ex.rating)));
    Var<S> loss = g.square(err);
    if (cfg_.flags.use_aux_loss) {
      if (!ex.positive_query || !ex.negative_query)
        throw DataError("example_loss: auxiliary loss needs positive and negative queries");
      const S eps = static_cast<S>(cfg_.sigmoid_clamp);
      Var<S> pos = g.embed_cols(g.leaf(embedding_), ex.positive_query->flat);
      Var<S> neg = g.embed_cols(g.leaf(embedding_), ex.negative_query->flat);
      Var<S> alpha_pos = relevance_score(g, pos, fwd.item_doc, match_,
                                         ex.positive_query->flat_mask, fwd.item_doc_mask);
      Var<S> alpha_neg = relevance_score(g, neg, fwd.item_doc, match_,
                                         ex.negative_query->flat_mask, fwd.item_doc_mask);
      Var<S> aux = g.add(g.log_sigmoid(alpha_pos, eps), g.log_one_minus_sigmoid(alpha_neg, eps));
      loss = g.sub(loss, aux);
      if (trace) {
        trace->has_aux = true;
        trace->alpha_pos = alpha_pos->value[0];
        trace->alpha_neg = alpha_neg->value[0];
      }
    }
    return loss;
  }

 private:
  EncoderStack<S> build_tower(const std::string& name, const EncoderStack<S>* shared) {
    EncoderStack<S> t;
    t.embedding = embedding_;
    t.hierarchical = cfg_.flags.hierarchical_encoder;
    t.attention_agg = cfg_.flags.attention_aggregator;
    if (t.hierarchical) {
      if (shared) {
        t.word_block = shared->word_block;
        t.word_agg = shared->word_agg;
        t.sent_block = shared->sent_block;
        t.sent_agg = shared->sent_agg;
      } else {
        t.word_block = SeqBlockParams<S>::create(store_, name + "/word", cfg_.d_w, cfg_.d_s,
                                                 cfg_.heads, cfg_.conv_width, cfg_.k_max,
                                                 cfg_.flags.use_position);
        t.word_agg = AggregatorParams<S>::create(store_, name + "/word_agg", cfg_.d_s);
        t.sent_block = SeqBlockParams<S>::create(store_, name + "/sentence", cfg_.d_s,
                                                 cfg_.d_r, cfg_.heads, cfg_.conv_width,
                                                 cfg_.k_max, cfg_.flags.use_position);
        t.sent_agg = AggregatorParams<S>::create(store_, name + "/sentence_agg", cfg_.d_r);
      }
    }
    if (t.attention_agg)
      t.review_agg = AggregatorParams<S>::create(store_, name + "/review_agg",
                                                 cfg_.review_dim());
    return t;
  }

  void init_tower(const EncoderStack<S>& t, std::mt19937_64& rng, bool blocks) const {
    if (t.hierarchical && blocks) {
      t.word_block.initialize(rng);
      t.word_agg.initialize(rng);
      t.sent_block.initialize(rng);
      t.sent_agg.initialize(rng);
    }
    if (t.attention_agg) t.review_agg.initialize(rng);
  }

  // Encodes the non-empty reviews of a profile; returns them stacked as
  // columns together with their original profile slots.
  std::pair<Var<S>, std::vector<std::size_t>> encode_profile(
      Graph<S>& g, const std::vector<const PaddedReview*>& profile,
      const EncoderStack<S>& tower, const EncodeCtx<S>& ctx) const {
    std::vector<Var<S>> cols;
    std::vector<std::size_t> slots;
    for (std::size_t s = 0; s < profile.size(); ++s) {
      if (!profile[s] || profile[s]->empty()) continue;
      cols.push_back(encode_review(g, *profile[s], tower, ctx));
      slots.push_back(s);
    }
    if (cols.empty()) throw DataError("profile has no non-empty reviews");
    return {g.stack_cols(cols), slots};
  }

  static std::pair<std::vector<int>, Mask> flatten_profile(
      const std::vector<const PaddedReview*>& profile, const std::vector<std::size_t>& slots) {
    std::vector<int> idx;
    Mask mask;
    for (std::size_t s : slots) {
      const PaddedReview& r = *profile[s];
      idx.insert(idx.end(), r.flat.begin(), r.flat.end());
      mask.insert(mask.end(), r.flat_mask.begin(), r.flat_mask.end());
    }
    return {idx, mask};
  }

  ModelConfig cfg_;
  ParamStore<S> store_;
  Parameter<S>* embedding_;
  EncoderStack<S> user_, item_;
  MatchParams<S> match_, match_item_;
  Parameter<S>*W_u_static_, *W_u_dynamic_, *W_i_static_;
  Parameter<S>* W_i_dynamic_ = nullptr;
  Parameter<S>*b_u_transform_, *b_i_transform_;
  Parameter<S>*user_id_, *item_id_, *w_f_;
  Parameter<S>* user_bias_ = nullptr;
  Parameter<S>* item_bias_ = nullptr;
  Parameter<S>* global_bias_;
};

// Resolves a dataset example into embeddable inputs.
inline ExampleInput make_input(const Dataset& data, const RatingExample& ex,
                               bool with_queries) {
  ExampleInput in;
  in.user = ex.user;
  in.item = ex.item;
  in.rating = ex.rating;
  for (std::size_t r : ex.user_profile) in.user_profile.push_back(&data.padded[r]);
  for (std::size_t r : ex.item_profile) in.item_profile.push_back(&data.padded[r]);
  if (with_queries) {
    in.positive_query = &data.padded[ex.record];
    in.negative_query = &data.padded[ex.negative];
  }
  return in;
}

}  // namespace zarm
