#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "zarm/checkpoint.hpp"
#include "zarm/config.hpp"
#include "zarm/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace zarm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct CliArgs {
  std::string config_path;
  std::string corpus;
  std::string out;
  std::string checkpoint;
  std::string split = "test";
  std::string user_id, item_id;
  std::vector<std::string> ablations;
  long long seed = -1;
  int workers = 0;
  long long epochs = -1;
  bool inject_fault = false;
  bool has_config = false;
};

RunConfig resolve_config(const CliArgs& args) {
  RunConfig cfg;
  if (args.has_config) cfg = parse_config_file(args.config_path);
  if (!args.corpus.empty()) cfg.corpus = args.corpus;
  if (!args.out.empty()) cfg.out = args.out;
  if (args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed);
  if (args.workers > 0) cfg.workers = args.workers;
  if (args.epochs >= 0) cfg.epochs = static_cast<std::size_t>(args.epochs);
  for (const std::string& name : args.ablations) apply_ablation(cfg, name);
  validate_config(cfg);
  return cfg;
}

Dataset load_dataset(const RunConfig& cfg) {
  if (cfg.corpus.empty()) throw ConfigError("no corpus path given (corpus= or --corpus)");
  if (!fs::exists(cfg.corpus)) throw DataError("corpus file not found: " + cfg.corpus);
  ParseResult parsed = parse_corpus(cfg.corpus);
  if (parsed.empty_corpus || parsed.records.empty())
    throw DataError("corpus is empty: " + cfg.corpus);
  return build_dataset(std::move(parsed.records), cfg.dataset_config());
}

template <typename S>
ZarmModel<S> build_model(const RunConfig& cfg, const Dataset& data) {
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

template <typename S>
void maybe_load_embeddings(const RunConfig& cfg, const Dataset& data, ZarmModel<S>& model) {
  if (cfg.embeddings.empty()) return;
  Parameter<S>* table = model.embedding();
  const std::size_t loaded =
      load_embeddings(cfg.embeddings, data.vocab, cfg.d_w,
                      [&](int row, const std::vector<double>& vals) {
                        if (table->row_frozen(static_cast<std::size_t>(row))) return;
                        for (std::size_t c = 0; c < vals.size(); ++c)
                          table->value.at(static_cast<std::size_t>(row), c) =
                              static_cast<S>(vals[c]);
                      });
  std::cout << "loaded " << loaded << " pretrained embedding rows\n";
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

template <typename S>
std::string param_inventory(const ParamStore<S>& params) {
  std::string text;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter<S>& p = params[i];
    text += p.path + " " + shape_str(p.value.shape) + " " + std::to_string(p.value.size()) +
            "\n";
  }
  return text;
}

std::string format_metric(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

template <typename S>
int run_train(const RunConfig& cfg) {
  Dataset data = load_dataset(cfg);
  ZarmModel<S> model = build_model<S>(cfg, data);
  maybe_load_embeddings(cfg, data, model);

  fs::create_directories(cfg.out);
  RunConfig resolved = cfg;
  resolved.N = data.N;
  write_file(fs::path(cfg.out) / "config.resolved", render_config(resolved));
  write_file(fs::path(cfg.out) / "params.txt", param_inventory(model.params()));

  TrainOptions opts;
  opts.adam = cfg.adam_config();
  opts.batch_size = cfg.batch_size;
  opts.epochs = cfg.epochs;
  opts.seed = cfg.seed;
  opts.workers = cfg.workers;

  std::string csv = "epoch,train_loss,valid_mse,seconds\n";
  TrainResult<S> result = train(model, data, opts, [&](const EpochMetrics& m) {
    csv += std::to_string(m.epoch) + "," + format_metric(m.train_loss) + "," +
           format_metric(m.valid_mse) + "," + format_metric(m.seconds) + "\n";
    std::cout << "epoch " << m.epoch << " train_loss " << m.train_loss << " valid_mse "
              << m.valid_mse << "\n";
  });
  write_file(fs::path(cfg.out) / "metrics.csv", csv);

  ModelConfig mc = model.config();
  const std::uint64_t hash = model_config_hash(mc);
  save_checkpoint((fs::path(cfg.out) / "best.ckpt").string(), model.params(), hash,
                  &result.best_params);
  save_checkpoint((fs::path(cfg.out) / "final.ckpt").string(), model.params(), hash);
  std::cout << "best_valid_mse " << result.best_valid_mse << " at epoch " << result.best_epoch
            << "\n";
  return kExitOk;
}

template <typename S>
int run_eval(const RunConfig& cfg, const std::string& checkpoint, const std::string& split) {
  if (checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
  Dataset data = load_dataset(cfg);
  ZarmModel<S> model = build_model<S>(cfg, data);
  load_checkpoint(checkpoint, model.params(), model_config_hash(model.config()));
  const double mse = evaluate(model, data, data.split(split));
  std::printf("mse=%.6f\n", mse);
  return kExitOk;
}

// In-memory instance for the gradient check: two users, two items, token
// indices drawn from a small vocabulary, eval-mode loss (dropout off).
PaddedReview fixture_review(std::size_t T, std::size_t L, std::size_t M, std::uint64_t seed,
                            std::size_t vocab_size) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> tok(2, static_cast<int>(vocab_size) - 1);
  std::uniform_int_distribution<std::size_t> n_sent(1, T);
  std::uniform_int_distribution<std::size_t> n_word(1, L);
  std::vector<std::vector<int>> sentences(n_sent(rng));
  for (auto& s : sentences) {
    s.resize(n_word(rng));
    for (int& w : s) w = tok(rng);
  }
  return pad_review(sentences, T, L, M);
}

template <typename S>
int run_gradcheck(const RunConfig& user_cfg, bool inject_fault, bool caps_from_user) {
  RunConfig cfg = user_cfg;
  if (!caps_from_user) {
    // Built-in tiny configuration.
    cfg.d_w = 6;
    cfg.d_s = 4;
    cfg.d_r = 4;
    cfg.d_latent = 4;
    cfg.heads = 2;
    cfg.conv_width = 3;
    cfg.match_hidden = 4;
    cfg.k_max = 2;
    cfg.T = 2;
    cfg.L = 4;
    cfg.M = 6;
    cfg.N = 2;
  }
  if (cfg.N > 3 || cfg.T > 3 || cfg.L > 6 || cfg.M > 6 || cfg.d_w > 8 || cfg.d_s > 8 ||
      cfg.d_r > 8 || cfg.d_latent > 8 || cfg.match_hidden > 8)
    throw ConfigError("gradcheck: config too large (caps: N,T <= 3; L,M <= 6; dims <= 8)");
  if (cfg.N == 0) cfg.N = 2;

  ModelConfig mc = cfg.model_config();
  mc.vocab_size = 10;
  mc.n_users = 2;
  mc.n_items = 2;
  ZarmModel<double> model(mc);
  std::mt19937_64 rng(cfg.seed);
  model.initialize(rng);

  std::vector<PaddedReview> reviews;
  for (std::size_t i = 0; i < 2 * mc.N + 2; ++i)
    reviews.push_back(fixture_review(cfg.T, cfg.L, cfg.M, cfg.seed + 100 + i, mc.vocab_size));
  ExampleInput in;
  in.user = 0;
  in.item = 1;
  in.rating = 4.0;
  for (std::size_t k = 0; k < mc.N; ++k) {
    in.user_profile.push_back(&reviews[k]);
    in.item_profile.push_back(&reviews[mc.N + k]);
  }
  if (mc.flags.use_aux_loss) {
    in.positive_query = &reviews[2 * mc.N];
    in.negative_query = &reviews[2 * mc.N + 1];
  }

  auto loss_fn = [&]() {
    Graph<double> g;
    return model.example_loss(g, in, Mode::eval)->value[0];
  };
  auto backward_fn = [&]() {
    Graph<double> g;
    Var<double> loss = model.example_loss(g, in, Mode::eval);
    g.backward(loss);
  };

  debug::flip_softmax_grad = inject_fault;
  GradCheckReport report = grad_check(model.params(), loss_fn, backward_fn,
                                      /*h=*/1e-5, /*tol=*/1e-4, cfg.seed);
  debug::flip_softmax_grad = false;

  for (const auto& e : report.entries)
    std::printf("%-28s max_rel_err=%.3e checked=%zu\n", e.path.c_str(), e.max_rel_err,
                e.checked);
  if (!report.pass) {
    const auto& w = report.worst();
    std::printf("FAIL worst tensor %s max_rel_err=%.3e (tol %.1e)\n", w.path.c_str(),
                w.max_rel_err, report.tol);
    return kExitNumeric;
  }
  std::printf("PASS all %zu tensors below tol %.1e\n", report.entries.size(), report.tol);
  return kExitOk;
}

template <typename S>
int run_explain(const RunConfig& cfg, const std::string& checkpoint,
                const std::string& user_id, const std::string& item_id) {
  if (checkpoint.empty()) throw ConfigError("explain needs --checkpoint");
  Dataset data = load_dataset(cfg);
  ZarmModel<S> model = build_model<S>(cfg, data);
  load_checkpoint(checkpoint, model.params(), model_config_hash(model.config()));

  auto uit = data.user_index.find(user_id);
  auto iit = data.item_index.find(item_id);
  if (uit == data.user_index.end()) throw DataError("unknown user id: " + user_id);
  if (iit == data.item_index.end()) throw DataError("unknown item id: " + item_id);
  const int u = uit->second, i = iit->second;

  ExampleInput in;
  in.user = u;
  in.item = i;
  auto add_profile = [&](const std::vector<std::size_t>& recs, int other_user, int other_item,
                         std::vector<const PaddedReview*>& out) {
    for (std::size_t r : recs) {
      if (out.size() >= data.N) break;
      // Skip the review this very pair wrote, mirroring training.
      if (data.record_user[r] == other_user && data.record_item[r] == other_item) continue;
      out.push_back(&data.padded[r]);
    }
  };
  add_profile(data.user_train_reviews[static_cast<std::size_t>(u)], u, i, in.user_profile);
  add_profile(data.item_train_reviews[static_cast<std::size_t>(i)], u, i, in.item_profile);
  if (in.user_profile.empty() || in.item_profile.empty())
    throw DataError("pair has no usable reviews: " + user_id + " / " + item_id);

  Graph<S> g;
  ForwardTrace<S> trace;
  model.forward(g, in, Mode::eval, nullptr, &trace);

  fs::create_directories(cfg.out);
  std::string csv = "review_index,alpha,alpha_hat\n";
  for (std::size_t k = 0; k < trace.alphas.size(); ++k) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g\n", trace.alpha_review_slots[k],
                  static_cast<double>(trace.alphas[k]),
                  static_cast<double>(trace.alpha_hats[k + 1]));
    csv += buf;
  }
  {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "ZERO,0,%.9g\n", static_cast<double>(trace.alpha_hats[0]));
    csv += buf;
  }
  write_file(fs::path(cfg.out) / "relevance.csv", csv);
  std::cout << "prediction " << trace.yhat << "; wrote "
            << (fs::path(cfg.out) / "relevance.csv").string() << "\n";
  return kExitOk;
}

template <typename Fn>
int dispatch_precision(const RunConfig& cfg, Fn&& fn) {
  if (cfg.precision == "double") return fn(double{});
  return fn(float{});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"review-based rating prediction with zero-attentive relevance matching"};
  app.require_subcommand(1);

  CliArgs args;
  auto add_shared = [&](CLI::App* cmd) {
    cmd->add_option("--config", args.config_path, "flat key = value config file")
        ->each([&](const std::string&) { args.has_config = true; });
    cmd->add_option("--corpus", args.corpus, "JSONL review corpus path");
    cmd->add_option("--seed", args.seed, "RNG seed (overrides config)");
    cmd->add_option("--out", args.out, "output directory");
    cmd->add_option("--workers", args.workers, "parallel workers within a batch");
    cmd->add_option("--ablation", args.ablations,
                    "repeatable: max_pool_aggregator | avg_embedding | remove_position | "
                    "remove_ui_bias | remove_aux_loss | add_item_dynamic");
  };

  CLI::App* cmd_train = app.add_subcommand("train", "train and write checkpoints + metrics");
  add_shared(cmd_train);
  cmd_train->add_option("--epochs", args.epochs, "epoch count (overrides config)");

  CLI::App* cmd_eval = app.add_subcommand("eval", "print MSE of a checkpoint on a split");
  add_shared(cmd_eval);
  cmd_eval->add_option("--checkpoint", args.checkpoint, "checkpoint file")->required();
  cmd_eval->add_option("--split", args.split, "train | valid | test");

  CLI::App* cmd_gradcheck =
      app.add_subcommand("gradcheck", "compare analytic gradients with finite differences");
  add_shared(cmd_gradcheck);
  cmd_gradcheck->add_flag("--inject-fault", args.inject_fault,
                          "corrupt the softmax backward pass (negative control)");

  CLI::App* cmd_explain =
      app.add_subcommand("explain", "dump per-review relevance weights for a user/item pair");
  add_shared(cmd_explain);
  cmd_explain->add_option("--checkpoint", args.checkpoint, "checkpoint file")->required();
  cmd_explain->add_option("--user", args.user_id, "user id string")->required();
  cmd_explain->add_option("--item", args.item_id, "item id string")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = resolve_config(args);
    if (cmd_train->parsed())
      return dispatch_precision(cfg, [&](auto s) { return run_train<decltype(s)>(cfg); });
    if (cmd_eval->parsed())
      return dispatch_precision(
          cfg, [&](auto s) { return run_eval<decltype(s)>(cfg, args.checkpoint, args.split); });
    if (cmd_gradcheck->parsed())
      return run_gradcheck<double>(cfg, args.inject_fault, args.has_config);
    if (cmd_explain->parsed())
      return dispatch_precision(cfg, [&](auto s) {
        return run_explain<decltype(s)>(cfg, args.checkpoint, args.user_id, args.item_id);
      });
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DimensionError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const IoError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}
