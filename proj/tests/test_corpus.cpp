#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <cstdint>
#include <map>
#include <set>
#include <vector>

using Bytes = std::vector<std::uint8_t>;

#include "doctest.h"
#include "support/fixture.hpp"
#include "zarm/corpus.hpp"

using namespace zarm;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("tokenizer: sentence boundaries, punctuation, lowercasing") {
  auto s = tokenize("Great phone. Loved it!");
  REQUIRE(s.size() == 2);
  CHECK(s[0] == std::vector<std::string>{"great", "phone", "."});
  CHECK(s[1] == std::vector<std::string>{"loved", "it", "!"});

  // Sentence enders not followed by whitespace do not split.
  auto v = tokenize("costs 3.50 total");
  REQUIRE(v.size() == 1);
  // "3.50" keeps its inner dot glued? No: '.' is word punctuation, split out,
  // but the sentence is not cut because '5' follows the dot.
  CHECK(v[0] == std::vector<std::string>{"costs", "3", ".", "50", "total"});

  auto q = tokenize("Really?! Yes; sure: ok,");
  REQUIRE(q.size() == 2);
  CHECK(q[0] == std::vector<std::string>{"really", "?", "!"});
  CHECK(q[1] == std::vector<std::string>{"yes", ";", "sure", ":", "ok", ","});

  CHECK(tokenize("").empty());
  CHECK(tokenize("   ").empty());
}

TEST_CASE("vocabulary: frequency order, ties, min_count, reserved slots") {
  std::vector<ReviewRecord> recs(1);
  recs[0].text = "bb aa bb cc aa dd";
  Vocab v = build_vocab(recs, 1);
  CHECK(v.tokens[Vocab::kPad] == "<pad>");
  CHECK(v.tokens[Vocab::kOov] == "<oov>");
  // aa and bb both occur twice: lexicographic tie-break.
  CHECK(v.lookup("aa") == 2);
  CHECK(v.lookup("bb") == 3);
  CHECK(v.lookup("cc") == 4);
  CHECK(v.lookup("dd") == 5);
  CHECK(v.lookup("zz") == Vocab::kOov);

  Vocab v2 = build_vocab(recs, 2);
  CHECK(v2.size() == 4);  // pad, oov, aa, bb
  CHECK(v2.lookup("cc") == Vocab::kOov);
}

TEST_CASE("review padding: truncation, masks, flat view") {
  // 3 sentences, T=2, L=3, M=5.
  std::vector<std::vector<int>> sents = {{2, 3, 4, 5}, {6}, {7, 8}};
  PaddedReview p = pad_review(sents, 2, 3, 5);
  CHECK(p.grid == std::vector<int>{2, 3, 4, 6, 0, 0});
  CHECK(p.sentence_mask == Bytes{1, 1});
  CHECK(p.word_mask == Bytes{1, 1, 1, 1, 0, 0});
  // Flat view reads the untruncated word order.
  CHECK(p.flat == std::vector<int>{2, 3, 4, 5, 6});
  CHECK(p.flat_mask == Bytes{1, 1, 1, 1, 1});

  PaddedReview empty = pad_review({}, 2, 3, 5);
  CHECK(empty.empty());
  CHECK_FALSE(p.empty());
}

TEST_CASE("split: sizes, disjointness, determinism") {
  SplitIndices s = split_dataset(10, {8, 1, 1}, 42);
  CHECK(s.train.size() == 8);
  CHECK(s.valid.size() == 1);
  CHECK(s.test.size() == 1);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  all.insert(s.valid.begin(), s.valid.end());
  all.insert(s.test.begin(), s.test.end());
  CHECK(all.size() == 10);

  SplitIndices again = split_dataset(10, {8, 1, 1}, 42);
  CHECK(again.train == s.train);
  SplitIndices other = split_dataset(10, {8, 1, 1}, 43);
  CHECK(other.train != s.train);

  // Floor allocation: remainder goes to train.
  SplitIndices s2 = split_dataset(12, {8, 1, 1}, 0);
  CHECK(s2.valid.size() == 1);
  CHECK(s2.test.size() == 1);
  CHECK(s2.train.size() == 10);
}

TEST_CASE("profile size from user review counts") {
  CHECK(choose_profile_size({1, 1, 2, 9, 10}, 0.9) == 10);
  CHECK(choose_profile_size({1, 1, 2, 9, 10}, 1.0) == 10);
  CHECK(choose_profile_size({1, 1, 2, 9, 10}, 0.6) == 2);
  CHECK(choose_profile_size({5}, 0.9) == 5);
  CHECK_THROWS_AS(choose_profile_size({}, 0.9), DataError);
  CHECK_THROWS_AS(choose_profile_size({1}, 0.0), ConfigError);
}

TEST_CASE("corpus parsing counts malformed lines") {
  const fs::path path = temp_file("zarm_corpus_test.jsonl");
  {
    std::ofstream out(path);
    out << R"({"user_id":"u1","item_id":"i1","rating":4.5,"text":"Nice."})" << "\n";
    out << "\n";  // blank lines ignored
    out << R"({"user_id":"u2","item_id":"i1","rating":2,"text":"Bad.","extra":1})" << "\n";
    out << "not json\n";
    for (int i = 0; i < 20; ++i)
      out << R"({"user_id":"u3","item_id":"i2","rating":3,"text":"Ok."})" << "\n";
  }
  ParseResult r = parse_corpus(path.string());
  CHECK(r.records.size() == 22);
  CHECK(r.malformed == 1);
  CHECK_FALSE(r.empty_corpus);
  fs::remove(path);

  const fs::path bad = temp_file("zarm_corpus_bad.jsonl");
  {
    std::ofstream out(bad);
    out << "garbage\n";
    out << R"({"user_id":"u1","item_id":"i1","rating":4,"text":"x"})" << "\n";
  }
  CHECK_THROWS_AS(parse_corpus(bad.string()), DataError);  // 50% malformed
  fs::remove(bad);

  CHECK_THROWS_AS(parse_corpus("/nonexistent/corpus.jsonl"), IoError);
}

TEST_CASE("dataset assembly on the synthetic fixture") {
  DatasetConfig dc;
  dc.T = 2;
  dc.L = 8;
  dc.M = 10;
  dc.seed = 7;
  Dataset d = build_dataset(testsupport::make_fixture_records(), dc);

  CHECK(d.num_users() == 8);
  CHECK(d.num_items() == 8);
  CHECK(d.train.size() + d.valid.size() + d.test.size() + d.dropped_pairs == 64);
  CHECK(d.valid.size() <= 6);
  CHECK(d.test.size() <= 6);
  CHECK(d.N >= 1);

  for (const auto& split : {d.train, d.valid, d.test}) {
    for (const RatingExample& ex : split) {
      CHECK(ex.user_profile.size() <= d.N);
      CHECK(ex.item_profile.size() <= d.N);
      CHECK(!ex.user_profile.empty());
      CHECK(!ex.item_profile.empty());
      for (std::size_t r : ex.user_profile) {
        CHECK(r != ex.record);  // ground truth never leaks into the profile
        CHECK(d.record_in_train[r]);
        CHECK(d.record_user[r] == ex.user);
      }
      for (std::size_t r : ex.item_profile) {
        CHECK(r != ex.record);
        CHECK(d.record_in_train[r]);
        CHECK(d.record_item[r] == ex.item);
      }
    }
  }
}

TEST_CASE("negative sampling is valid and roughly uniform") {
  DatasetConfig dc;
  dc.T = 2;
  dc.L = 8;
  dc.M = 10;
  dc.seed = 7;
  Dataset d = build_dataset(testsupport::make_fixture_records(), dc);
  const RatingExample& ex = d.train.front();

  std::size_t eligible = 0;
  for (std::size_t r = 0; r < d.records.size(); ++r)
    if (d.record_in_train[r] && d.record_user[r] != ex.user && d.record_item[r] != ex.item)
      ++eligible;
  REQUIRE(eligible > 0);

  std::mt19937_64 rng(123);
  const int draws = 20000;
  std::map<std::size_t, int> hist;
  for (int i = 0; i < draws; ++i) {
    std::size_t r = sample_negative(d, ex, rng);
    CHECK(d.record_user[r] != ex.user);
    CHECK(d.record_item[r] != ex.item);
    CHECK(d.record_in_train[r]);
    ++hist[r];
  }
  CHECK(hist.size() == eligible);
  // Each count is Binomial(draws, 1/eligible); check within 3 sigma.
  const double p = 1.0 / static_cast<double>(eligible);
  const double mean = draws * p;
  const double sigma = std::sqrt(draws * p * (1 - p));
  for (auto& [r, count] : hist) CHECK(std::abs(count - mean) < 3.0 * sigma + 1.0);
}

TEST_CASE("embedding file loading") {
  std::vector<ReviewRecord> recs(1);
  recs[0].text = "alpha beta";
  Vocab v = build_vocab(recs, 1);
  const fs::path path = temp_file("zarm_emb_test.txt");
  {
    std::ofstream out(path);
    out << "alpha 1.0 2.0 3.0\n";
    out << "unknown 9.0 9.0 9.0\n";
    out << "beta 4.0 5.0 6.0\n";
  }
  std::map<int, std::vector<double>> rows;
  std::size_t n = load_embeddings(path.string(), v, 3,
                                  [&](int r, const std::vector<double>& vals) { rows[r] = vals; });
  CHECK(n == 2);
  CHECK(rows[v.lookup("alpha")] == std::vector<double>{1.0, 2.0, 3.0});
  CHECK(rows[v.lookup("beta")] == std::vector<double>{4.0, 5.0, 6.0});
  fs::remove(path);

  const fs::path shortf = temp_file("zarm_emb_short.txt");
  {
    std::ofstream out(shortf);
    out << "alpha 1.0\n";
  }
  CHECK_THROWS_AS(load_embeddings(shortf.string(), v, 3, [](int, const std::vector<double>&) {}),
                  DataError);
  fs::remove(shortf);
}
