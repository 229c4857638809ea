#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "zarm/config.hpp"

namespace zarm::testsupport {

// Synthetic 8 users x 8 items corpus. Users and items each carry one of two
// styles; a style match rates 5.0, a mismatch 1.0, and the review text
// encodes the outcome with style-specific sentiment words plus user- and
// item-specific tokens. Every pair is rated, so the corpus has 64 records.
inline std::vector<ReviewRecord> make_fixture_records() {
  std::vector<ReviewRecord> records;
  for (int u = 0; u < 8; ++u) {
    for (int i = 0; i < 8; ++i) {
      const bool match = (u < 4) == (i < 4);
      ReviewRecord r;
      r.user_id = "user" + std::to_string(u);
      r.item_id = "item" + std::to_string(i);
      r.rating = match ? 5.0 : 1.0;
      const std::string item_tok = "item" + std::to_string(i);
      const std::string user_tok = "user" + std::to_string(u);
      if (match)
        r.text = item_tok + " is wonderful great superb. " + user_tok + " loves " + item_tok +
                 " quality.";
      else
        r.text = item_tok + " is terrible poor awful. " + user_tok + " hates " + item_tok +
                 " quality.";
      records.push_back(std::move(r));
    }
  }
  return records;
}

inline void write_fixture_jsonl(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write fixture corpus: " + path);
  for (const ReviewRecord& r : make_fixture_records()) {
    nlohmann::json j;
    j["user_id"] = r.user_id;
    j["item_id"] = r.item_id;
    j["rating"] = r.rating;
    j["text"] = r.text;
    out << j.dump() << "\n";
  }
}

// Small dimensions that overfit the fixture quickly; dropout is off so the
// learning-sanity and determinism gates are exact.
inline RunConfig fixture_config() {
  RunConfig cfg;
  cfg.d_w = 16;
  cfg.d_s = 8;
  cfg.d_r = 8;
  cfg.d_latent = 8;
  cfg.heads = 2;
  cfg.conv_width = 3;
  cfg.match_hidden = 8;
  cfg.k_max = 4;
  cfg.T = 2;
  cfg.L = 8;
  cfg.M = 10;
  cfg.dropout_embed = 0.0;
  cfg.dropout_ffn = 0.0;
  cfg.dropout_final = 0.0;
  cfg.lr = 0.001;
  cfg.batch_size = 8;
  cfg.epochs = 200;
  cfg.seed = 7;
  cfg.precision = "double";
  return cfg;
}

inline Dataset fixture_dataset(const RunConfig& cfg) {
  return build_dataset(make_fixture_records(), cfg.dataset_config());
}

template <typename S>
ZarmModel<S> fixture_model(const RunConfig& cfg, const Dataset& data) {
  ModelConfig mc = cfg.model_config();
  mc.N = data.N;
  mc.vocab_size = data.vocab.size();
  mc.n_users = data.num_users();
  mc.n_items = data.num_items();
  ZarmModel<S> model(mc);
  std::mt19937_64 rng(cfg.seed);
  model.initialize(rng);
  return model;
}

}  // namespace zarm::testsupport
