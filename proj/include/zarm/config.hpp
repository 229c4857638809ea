#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "zarm/corpus.hpp"
#include "zarm/model.hpp"
#include "zarm/trainer.hpp"

namespace zarm {

// Everything a run needs: model dimensions, optimizer settings, corpus
// wiring, and the ablation toggles. Loaded from a flat `key = value` file
// with `#` comments; command-line flags override file values.
struct RunConfig {
  // Model dimensions.
  std::size_t d_w = 300, d_s = 100, d_r = 100, d_latent = 32;
  int heads = 2;
  int conv_width = 3;
  std::size_t match_hidden = 16;
  int k_max = 8;
  std::size_t T = 4, L = 20, M = 60, N = 0;  // N = 0: derive from the corpus
  double coverage = 0.9;
  int min_count = 1;
  double dropout_embed = 0.2, dropout_ffn = 0.3, dropout_final = 0.5;
  bool share_towers = false;

  // Optimization.
  double lr = 0.001, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  std::string precision = "float";  // float | double
  int workers = 1;

  // Paths.
  std::string corpus;
  std::string embeddings;  // optional pretrained word embedding file
  std::string out = "out";

  AblationFlags flags;

  ModelConfig model_config() const;
  DatasetConfig dataset_config() const;
  AdamConfig adam_config() const;
};

// Parses one flat config file; unknown keys are rejected with a ConfigError
// naming the key and line.
RunConfig parse_config_file(const std::string& path);

// Applies one `key=value` assignment (used for file lines and flag
// overrides alike).
void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value);

// Applies a named ablation: max_pool_aggregator | avg_embedding |
// remove_position | remove_ui_bias | remove_aux_loss | add_item_dynamic.
void apply_ablation(RunConfig& cfg, const std::string& name);

// Canonical `key = value` rendering of every field, one per line, in a fixed
// order; the determinism and reproducibility contracts hash this text.
std::string render_config(const RunConfig& cfg);

// Validates ranges (positive dims, rates in [0,1), known precision).
void validate_config(const RunConfig& cfg);

// Hash over the model-shape-affecting fields plus the corpus-derived sizes,
// stored in checkpoints to refuse incompatible loads.
std::uint64_t model_config_hash(const ModelConfig& mc);

}  // namespace zarm
