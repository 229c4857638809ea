#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <random>

#include "doctest.h"
#include "zarm/gradcheck.hpp"
#include "zarm/hier.hpp"

using namespace zarm;

namespace {

// Minimal one-tower setup over a 6-token vocabulary.
struct Tower {
  ParamStore<double> store;
  EncoderStack<double> stack;
  Parameter<double>* embedding;

  explicit Tower(bool hierarchical = true, bool attention_agg = true,
                 std::uint64_t seed = 101) {
    embedding = store.add("emb", {6, 4});
    embedding->frozen_rows.assign(6, 0);
    embedding->frozen_rows[Vocab::kPad] = 1;
    stack.embedding = embedding;
    stack.hierarchical = hierarchical;
    stack.attention_agg = attention_agg;
    if (hierarchical) {
      stack.word_block = SeqBlockParams<double>::create(store, "w", 4, 4, 2, 3, 2, true);
      stack.word_agg = AggregatorParams<double>::create(store, "wa", 4);
      stack.sent_block = SeqBlockParams<double>::create(store, "s", 4, 4, 2, 3, 2, true);
      stack.sent_agg = AggregatorParams<double>::create(store, "sa", 4);
    }
    if (attention_agg) stack.review_agg = AggregatorParams<double>::create(store, "ra", 4);
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < store.size(); ++i) {
      InitKind kind = store[i].path == "emb" ? InitKind::embedding_normal
                                             : InitKind::glorot_uniform;
      ParamStore<double>::initialize(store[i], kind, rng);
    }
  }

  EncodeCtx<double> ctx() { return EncodeCtx<double>{false, 0.0, 0.0, nullptr}; }
};

PaddedReview review_from(const std::vector<std::vector<int>>& sents, std::size_t T = 2,
                         std::size_t L = 4, std::size_t M = 6) {
  return pad_review(sents, T, L, M);
}

}  // namespace

TEST_CASE("a fully padded sentence encodes to the zero vector") {
  Tower tw;
  Graph<double> g;
  Mask none(4, 0);
  auto v = encode_sentence(g, std::vector<int>{0, 0, 0, 0}, tw.stack, none, tw.ctx());
  for (std::size_t i = 0; i < v->value.size(); ++i) CHECK(v->value[i] == 0.0);
}

TEST_CASE("average-embedding ablation is the masked mean of word vectors") {
  Tower tw(/*hierarchical=*/false);
  Graph<double> g;
  PaddedReview r = review_from({{2, 3}, {4}});
  auto v = encode_review(g, r, tw.stack, tw.ctx());
  REQUIRE(v->value.size() == 4);
  for (std::size_t c = 0; c < 4; ++c) {
    const double want = (tw.embedding->value.at(2, c) + tw.embedding->value.at(3, c) +
                         tw.embedding->value.at(4, c)) /
                        3.0;
    CHECK(v->value[c] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("hierarchical review encoding: shape, determinism, trace") {
  Tower tw;
  Graph<double> g;
  PaddedReview r = review_from({{2, 3, 4}, {5, 2}});
  ReviewTrace<double> trace;
  auto v = encode_review(g, r, tw.stack, tw.ctx(), &trace);
  CHECK(v->value.size() == 4);
  CHECK(trace.word_attention.size() == 2);
  CHECK(trace.sentence_attention.size() == 2);
  double s = trace.sentence_attention[0] + trace.sentence_attention[1];
  CHECK(s == doctest::Approx(1.0).epsilon(1e-12));

  Graph<double> g2;
  auto v2 = encode_review(g2, r, tw.stack, tw.ctx());
  for (std::size_t i = 0; i < 4; ++i) CHECK(v->value[i] == v2->value[i]);
}

TEST_CASE("an empty review encodes to zero") {
  Tower tw;
  Graph<double> g;
  PaddedReview r = review_from({});
  auto v = encode_review(g, r, tw.stack, tw.ctx());
  for (std::size_t i = 0; i < v->value.size(); ++i) CHECK(v->value[i] == 0.0);
}

TEST_CASE("static aggregation: attention vs max-pool ablation") {
  Tower tw;
  Graph<double> g;
  std::mt19937_64 rng(5);
  Tensor<double> R({4, 3});
  std::uniform_real_distribution<double> dist(-1, 1);
  for (double& x : R.v) x = dist(rng);
  Mask mask(3, 1);

  auto pooled = aggregate_static(g, g.constant(R), tw.stack, mask);
  CHECK(pooled->value.size() == 4);

  Tower mx(/*hierarchical=*/true, /*attention_agg=*/false);
  Graph<double> g2;
  auto pooled_max = aggregate_static(g2, g2.constant(R), mx.stack, mask);
  for (std::size_t r = 0; r < 4; ++r) {
    double want = std::max({R.at(r, 0), R.at(r, 1), R.at(r, 2)});
    CHECK(pooled_max->value[r] == doctest::Approx(want));
  }

  Mask none(3, 0);
  CHECK_THROWS_AS(aggregate_static(g, g.constant(R), tw.stack, none), DataError);
}

TEST_CASE("static aggregation is invariant to review order") {
  Tower tw;
  std::mt19937_64 rng(9);
  Tensor<double> R({4, 3});
  std::uniform_real_distribution<double> dist(-1, 1);
  for (double& x : R.v) x = dist(rng);
  Tensor<double> Rp({4, 3});
  const std::size_t perm[3] = {2, 0, 1};
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t r = 0; r < 4; ++r) Rp.at(r, j) = R.at(r, perm[j]);

  Mask mask(3, 1);
  Graph<double> g1, g2;
  auto a = aggregate_static(g1, g1.constant(R), tw.stack, mask);
  auto b = aggregate_static(g2, g2.constant(Rp), tw.stack, mask);
  for (std::size_t r = 0; r < 4; ++r)
    CHECK(a->value[r] == doctest::Approx(b->value[r]).epsilon(1e-12));
}

TEST_CASE("word order changes the review encoding") {
  Tower tw;
  Graph<double> g1, g2;
  auto v1 = encode_review(g1, review_from({{2, 3, 4, 5}}), tw.stack, tw.ctx());
  auto v2 = encode_review(g2, review_from({{5, 3, 4, 2}}), tw.stack, tw.ctx());
  double diff = 0;
  for (std::size_t i = 0; i < 4; ++i) diff += std::abs(v1->value[i] - v2->value[i]);
  CHECK(diff > 1e-8);
}

TEST_CASE("dropout is applied only in training mode") {
  Tower tw;
  PaddedReview r = review_from({{2, 3, 4}});
  EncodeCtx<double> eval_ctx{false, 0.9, 0.9, nullptr};
  Graph<double> g1, g2;
  auto a = encode_review(g1, r, tw.stack, eval_ctx);
  auto b = encode_review(g2, r, tw.stack, tw.ctx());
  for (std::size_t i = 0; i < 4; ++i) CHECK(a->value[i] == b->value[i]);

  std::mt19937_64 rng(3);
  EncodeCtx<double> train_ctx{true, 0.5, 0.5, &rng};
  Graph<double> g3;
  auto c = encode_review(g3, r, tw.stack, train_ctx);
  double diff = 0;
  for (std::size_t i = 0; i < 4; ++i) diff += std::abs(c->value[i] - a->value[i]);
  CHECK(diff > 0.0);
}

TEST_CASE("gradients through the full review encoder match finite differences") {
  Tower tw;
  PaddedReview r1 = review_from({{2, 3, 4}, {5, 2}});
  PaddedReview r2 = review_from({{3, 3}});
  auto build = [&](Graph<double>& g) {
    auto a = encode_review(g, r1, tw.stack, tw.ctx());
    auto b = encode_review(g, r2, tw.stack, tw.ctx());
    auto stacked = g.stack_cols({a, b});
    auto pooled = aggregate_static(g, stacked, tw.stack, Mask{1, 1});
    return g.sum(g.square(pooled));
  };
  auto loss_fn = [&]() {
    Graph<double> g;
    return build(g)->value[0];
  };
  auto backward_fn = [&]() {
    Graph<double> g;
    g.backward(build(g));
  };
  GradCheckReport rep = grad_check(tw.store, loss_fn, backward_fn, 1e-5, 1e-4, 2);
  CHECK(rep.pass);
}
