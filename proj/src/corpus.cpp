#include "zarm/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace zarm {

namespace {

bool is_sentence_end(char c) { return c == '.' || c == '!' || c == '?'; }
bool is_word_punct(char c) {
  return c == '.' || c == ',' || c == '!' || c == '?' || c == ';' || c == ':';
}

std::vector<std::string> split_words(const std::string& sentence) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  };
  for (char c : sentence) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (is_word_punct(c)) {
      flush();
      out.push_back(std::string(1, c));
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  flush();
  return out;
}

}  // namespace

ParseResult parse_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file: " + path);
  ParseResult result;
  std::string line;
  std::size_t total = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++total;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("user_id") ||
        !j.contains("item_id") || !j.contains("rating") || !j.contains("text") ||
        !j["user_id"].is_string() || !j["item_id"].is_string() ||
        !j["rating"].is_number() || !j["text"].is_string()) {
      ++result.malformed;
      continue;
    }
    ReviewRecord rec;
    rec.user_id = j["user_id"].get<std::string>();
    rec.item_id = j["item_id"].get<std::string>();
    rec.rating = j["rating"].get<double>();
    rec.text = j["text"].get<std::string>();
    if (rec.user_id.empty() || rec.item_id.empty() || !std::isfinite(rec.rating)) {
      ++result.malformed;
      continue;
    }
    result.records.push_back(std::move(rec));
  }
  if (total == 0) result.empty_corpus = true;
  if (total > 0 && result.malformed * 10 > total)
    throw DataError("corpus has more than 10% malformed lines (" +
                    std::to_string(result.malformed) + "/" + std::to_string(total) + ")");
  return result;
}

std::vector<std::vector<std::string>> tokenize(const std::string& text) {
  std::vector<std::vector<std::string>> sentences;
  std::string cur;
  auto flush = [&] {
    auto words = split_words(cur);
    if (!words.empty()) sentences.push_back(std::move(words));
    cur.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    cur.push_back(text[i]);
    if (is_sentence_end(text[i])) {
      const bool at_end = i + 1 == text.size();
      if (at_end || std::isspace(static_cast<unsigned char>(text[i + 1]))) flush();
    }
  }
  flush();
  return sentences;
}

Vocab build_vocab(const std::vector<ReviewRecord>& records, int min_count) {
  if (min_count < 1) throw ConfigError("min_count must be >= 1");
  std::map<std::string, std::size_t> freq;  // ordered map gives the lexicographic tie-break
  for (const auto& rec : records)
    for (const auto& sent : tokenize(rec.text))
      for (const auto& tok : sent) ++freq[tok];

  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, count] : freq)
    if (count >= static_cast<std::size_t>(min_count)) kept.emplace_back(tok, count);
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  Vocab vocab;
  vocab.min_count = min_count;
  vocab.tokens = {"<pad>", "<oov>"};
  for (auto& [tok, count] : kept) {
    vocab.index[tok] = static_cast<int>(vocab.tokens.size());
    vocab.tokens.push_back(tok);
  }
  return vocab;
}

bool PaddedReview::empty() const {
  return std::find(sentence_mask.begin(), sentence_mask.end(), 1) == sentence_mask.end();
}

PaddedReview pad_review(const std::vector<std::vector<int>>& sentences, std::size_t T,
                        std::size_t L, std::size_t M) {
  if (T < 1 || L < 1 || M < 1) throw ConfigError("pad_review: T, L, M must be >= 1");
  PaddedReview p;
  p.T = T;
  p.L = L;
  p.M = M;
  p.grid.assign(T * L, Vocab::kPad);
  p.sentence_mask.assign(T, 0);
  p.word_mask.assign(T * L, 0);
  p.flat.assign(M, Vocab::kPad);
  p.flat_mask.assign(M, 0);
  for (std::size_t t = 0; t < std::min(T, sentences.size()); ++t) {
    const auto& sent = sentences[t];
    if (!sent.empty()) p.sentence_mask[t] = 1;
    for (std::size_t l = 0; l < std::min(L, sent.size()); ++l) {
      p.grid[t * L + l] = sent[l];
      p.word_mask[t * L + l] = 1;
    }
  }
  std::size_t pos = 0;
  for (const auto& sent : sentences) {
    for (int tok : sent) {
      if (pos >= M) return p;
      p.flat[pos] = tok;
      p.flat_mask[pos] = 1;
      ++pos;
    }
  }
  return p;
}

SplitIndices split_dataset(std::size_t n_pairs, const std::array<int, 3>& ratios,
                           std::uint64_t seed) {
  if (ratios[0] <= 0 || ratios[1] <= 0 || ratios[2] <= 0)
    throw ConfigError("split ratios must be positive");
  if (n_pairs < 3) throw DataError("need at least 3 pairs to split");
  std::vector<std::size_t> order(n_pairs);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const double total = ratios[0] + ratios[1] + ratios[2];
  const std::size_t n_valid = static_cast<std::size_t>(n_pairs * ratios[1] / total);
  const std::size_t n_test = static_cast<std::size_t>(n_pairs * ratios[2] / total);
  SplitIndices s;
  s.train.assign(order.begin(), order.end() - n_valid - n_test);
  s.valid.assign(order.end() - n_valid - n_test, order.end() - n_test);
  s.test.assign(order.end() - n_test, order.end());
  return s;
}

std::size_t choose_profile_size(const std::vector<std::size_t>& reviews_per_user,
                                double coverage) {
  if (coverage <= 0.0 || coverage > 1.0) throw ConfigError("coverage must be in (0, 1]");
  if (reviews_per_user.empty()) throw DataError("no users to derive profile size from");
  std::vector<std::size_t> counts = reviews_per_user;
  std::sort(counts.begin(), counts.end());
  // k-th smallest count, k = ceil(coverage * #users)
  std::size_t k = static_cast<std::size_t>(std::ceil(coverage * counts.size() - 1e-12));
  k = std::clamp<std::size_t>(k, 1, counts.size());
  return counts[k - 1];
}

const std::vector<RatingExample>& Dataset::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "valid") return valid;
  if (name == "test") return test;
  throw ConfigError("unknown split: " + name);
}

Dataset build_dataset(std::vector<ReviewRecord> records, const DatasetConfig& config) {
  Dataset d;
  d.config = config;
  d.records = std::move(records);
  if (d.records.empty()) throw DataError("empty corpus");

  d.vocab = build_vocab(d.records, config.min_count);

  d.record_user.resize(d.records.size());
  d.record_item.resize(d.records.size());
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    const auto& rec = d.records[i];
    auto [uit, unew] = d.user_index.try_emplace(rec.user_id, static_cast<int>(d.user_ids.size()));
    if (unew) d.user_ids.push_back(rec.user_id);
    auto [iit, inew] = d.item_index.try_emplace(rec.item_id, static_cast<int>(d.item_ids.size()));
    if (inew) d.item_ids.push_back(rec.item_id);
    d.record_user[i] = uit->second;
    d.record_item[i] = iit->second;
  }

  d.padded.reserve(d.records.size());
  for (const auto& rec : d.records) {
    std::vector<std::vector<int>> ids;
    for (const auto& sent : tokenize(rec.text)) {
      std::vector<int> row;
      row.reserve(sent.size());
      for (const auto& tok : sent) row.push_back(d.vocab.lookup(tok));
      ids.push_back(std::move(row));
    }
    d.padded.push_back(pad_review(ids, config.T, config.L, config.M));
  }

  SplitIndices split = split_dataset(d.records.size(), config.split_ratios, config.seed);
  d.record_in_train.assign(d.records.size(), false);
  for (std::size_t r : split.train) d.record_in_train[r] = true;

  d.user_train_reviews.resize(d.num_users());
  d.item_train_reviews.resize(d.num_items());
  for (std::size_t r = 0; r < d.records.size(); ++r) {
    if (!d.record_in_train[r]) continue;
    d.user_train_reviews[d.record_user[r]].push_back(r);
    d.item_train_reviews[d.record_item[r]].push_back(r);
  }

  if (config.N > 0) {
    d.N = config.N;
  } else {
    std::vector<std::size_t> counts;
    for (const auto& reviews : d.user_train_reviews)
      if (!reviews.empty()) counts.push_back(reviews.size());
    d.N = choose_profile_size(counts, config.coverage);
  }

  auto build_examples = [&](const std::vector<std::size_t>& pair_records, bool training,
                            std::vector<RatingExample>& out) {
    for (std::size_t r : pair_records) {
      RatingExample ex;
      ex.user = d.record_user[r];
      ex.item = d.record_item[r];
      ex.rating = d.records[r].rating;
      ex.record = r;
      // The ground-truth review is excluded from both profiles; at eval time
      // it is not in the training split to begin with.
      for (std::size_t rr : d.user_train_reviews[ex.user]) {
        if (rr == r) continue;
        if (ex.user_profile.size() >= d.N) break;
        ex.user_profile.push_back(rr);
      }
      for (std::size_t rr : d.item_train_reviews[ex.item]) {
        if (rr == r) continue;
        if (ex.item_profile.size() >= d.N) break;
        ex.item_profile.push_back(rr);
      }
      if (ex.user_profile.empty() || ex.item_profile.empty()) {
        ++d.dropped_pairs;
        continue;
      }
      (void)training;
      out.push_back(std::move(ex));
    }
  };
  build_examples(split.train, true, d.train);
  build_examples(split.valid, false, d.valid);
  build_examples(split.test, false, d.test);
  if (d.train.empty()) throw DataError("no usable training pairs after profile construction");
  return d;
}

std::size_t sample_negative(const Dataset& data, const RatingExample& example,
                            std::mt19937_64& rng) {
  std::vector<std::size_t> eligible;
  for (std::size_t r = 0; r < data.records.size(); ++r)
    if (data.record_in_train[r] && data.record_user[r] != example.user &&
        data.record_item[r] != example.item)
      eligible.push_back(r);
  if (eligible.empty())
    throw DataError("no eligible negative review for user " +
                    data.user_ids[example.user] + " / item " + data.item_ids[example.item]);
  std::uniform_int_distribution<std::size_t> dist(0, eligible.size() - 1);
  return eligible[dist(rng)];
}

std::size_t load_embeddings(const std::string& path, const Vocab& vocab, std::size_t dim,
                            const std::function<void(int, const std::vector<double>&)>& load_row) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embedding file: " + path);
  std::string line;
  std::size_t loaded = 0;
  std::vector<double> vals(dim);
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok)) continue;
    auto it = vocab.index.find(tok);
    if (it == vocab.index.end()) continue;
    bool ok = true;
    for (std::size_t i = 0; i < dim; ++i)
      if (!(ls >> vals[i])) {
        ok = false;
        break;
      }
    if (!ok) throw DataError("embedding line for token '" + tok + "' has fewer than " +
                             std::to_string(dim) + " values");
    load_row(it->second, vals);
    ++loaded;
  }
  return loaded;
}

}  // namespace zarm
