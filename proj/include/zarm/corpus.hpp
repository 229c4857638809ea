#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "zarm/errors.hpp"

namespace zarm {

struct ReviewRecord {
  std::string user_id;
  std::string item_id;
  double rating = 0.0;
  std::string text;
};

struct ParseResult {
  std::vector<ReviewRecord> records;
  std::size_t malformed = 0;
  bool empty_corpus = false;
};

// One JSON object per line: {"user_id": str, "item_id": str,
// "rating": number, "text": str}. Unknown keys ignored, malformed lines
// skipped and counted; more than 10% malformed is a corpus error.
ParseResult parse_corpus(const std::string& path);

// Sentence split on {. ! ?} followed by whitespace or end of text; words
// split on whitespace with {. , ! ? ; :} separated into standalone tokens;
// everything lowercased.
std::vector<std::vector<std::string>> tokenize(const std::string& text);

struct Vocab {
  static constexpr int kPad = 0;
  static constexpr int kOov = 1;

  std::unordered_map<std::string, int> index;
  std::vector<std::string> tokens;  // tokens[i] is the token at index i
  int min_count = 1;

  std::size_t size() const { return tokens.size(); }
  int lookup(const std::string& tok) const {
    auto it = index.find(tok);
    return it == index.end() ? kOov : it->second;
  }
};

// Tokens with frequency >= min_count, indexed from 2 in descending frequency
// order with lexicographic tie-breaking; everything else maps to OOV.
Vocab build_vocab(const std::vector<ReviewRecord>& records, int min_count);

struct PaddedReview {
  std::size_t T = 0, L = 0, M = 0;
  std::vector<int> grid;                 // T x L token indices, row-major
  std::vector<std::uint8_t> sentence_mask;  // [T]
  std::vector<std::uint8_t> word_mask;      // [T x L]
  std::vector<int> flat;                 // first M tokens in reading order
  std::vector<std::uint8_t> flat_mask;      // [M]

  int at(std::size_t t, std::size_t l) const { return grid[t * L + l]; }
  bool empty() const;
};

// Keeps the first T sentences and first L words of each; flat view takes the
// first M tokens of the untruncated reading order.
PaddedReview pad_review(const std::vector<std::vector<int>>& sentences, std::size_t T,
                        std::size_t L, std::size_t M);

// Uniform random partition by seeded shuffle; validation/test sizes are
// floor-allocated, the remainder goes to train.
struct SplitIndices {
  std::vector<std::size_t> train, valid, test;
};
SplitIndices split_dataset(std::size_t n_pairs, const std::array<int, 3>& ratios,
                           std::uint64_t seed);

// Smallest N such that at least `coverage` of users have <= N reviews.
std::size_t choose_profile_size(const std::vector<std::size_t>& reviews_per_user,
                                double coverage);

struct RatingExample {
  int user = -1, item = -1;
  double rating = 0.0;
  std::size_t record = 0;                  // ground-truth review record index
  std::vector<std::size_t> user_profile;   // record indices, <= N
  std::vector<std::size_t> item_profile;
  std::size_t negative = 0;                // resampled each epoch for training
};

struct DatasetConfig {
  std::size_t T = 4, L = 20, M = 60;
  std::size_t N = 0;        // 0 = choose from user review counts
  double coverage = 0.9;
  int min_count = 1;
  std::array<int, 3> split_ratios = {8, 1, 1};
  std::uint64_t seed = 0;
};

struct Dataset {
  Vocab vocab;
  DatasetConfig config;
  std::size_t N = 0;

  std::vector<ReviewRecord> records;
  std::vector<PaddedReview> padded;  // parallel to records

  std::vector<std::string> user_ids, item_ids;
  std::unordered_map<std::string, int> user_index, item_index;
  std::vector<int> record_user, record_item;  // per record

  // Training-split review record indices per user/item, in corpus order.
  std::vector<std::vector<std::size_t>> user_train_reviews, item_train_reviews;
  std::vector<bool> record_in_train;

  std::vector<RatingExample> train, valid, test;
  std::size_t dropped_pairs = 0;  // eval pairs whose user/item has no profile

  std::size_t num_users() const { return user_ids.size(); }
  std::size_t num_items() const { return item_ids.size(); }

  const std::vector<RatingExample>& split(const std::string& name) const;
};

// Full pipeline: tokenize, build vocab, pad, split, derive N, assemble
// examples with ground-truth reviews excluded from both profiles.
Dataset build_dataset(std::vector<ReviewRecord> records, const DatasetConfig& config);

// Uniform over training records whose author differs from the example's user
// and whose item differs from the example's item.
std::size_t sample_negative(const Dataset& data, const RatingExample& example,
                            std::mt19937_64& rng);

// Text embedding file: one line per token, "token v1 .. v_d". Returns rows
// loaded into `load_row(vocab_index, values)`; tokens missing from the vocab
// are skipped.
std::size_t load_embeddings(const std::string& path, const Vocab& vocab, std::size_t dim,
                            const std::function<void(int, const std::vector<double>&)>& load_row);

}  // namespace zarm
