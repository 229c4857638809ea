#include "zarm/config.hpp"

#include <fstream>
#include <sstream>

#include "zarm/checkpoint.hpp"

namespace zarm {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  try {
    const long long x = std::stoll(v);
    if (x < 0) throw std::invalid_argument("negative");
    return static_cast<std::size_t>(x);
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
  }
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    return std::stoi(v);
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
  }
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: bad number for " + key + ": '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: bad boolean for " + key + ": '" + v + "'");
}

std::string bool_str(bool b) { return b ? "true" : "false"; }

std::string real_str(double x) {
  std::ostringstream out;
  out.precision(17);
  out << x;
  return out.str();
}

}  // namespace

ModelConfig RunConfig::model_config() const {
  ModelConfig mc;
  mc.d_w = d_w;
  mc.d_s = d_s;
  mc.d_r = d_r;
  mc.d_latent = d_latent;
  mc.heads = heads;
  mc.conv_width = conv_width;
  mc.match_hidden = match_hidden;
  mc.k_max = k_max;
  mc.T = T;
  mc.L = L;
  mc.M = M;
  mc.N = N;
  mc.dropout_embed = dropout_embed;
  mc.dropout_ffn = dropout_ffn;
  mc.dropout_final = dropout_final;
  mc.share_towers = share_towers;
  mc.flags = flags;
  return mc;
}

DatasetConfig RunConfig::dataset_config() const {
  DatasetConfig dc;
  dc.T = T;
  dc.L = L;
  dc.M = M;
  dc.N = N;
  dc.coverage = coverage;
  dc.min_count = min_count;
  dc.seed = seed;
  return dc;
}

AdamConfig RunConfig::adam_config() const {
  AdamConfig ac;
  ac.lr = lr;
  ac.beta1 = beta1;
  ac.beta2 = beta2;
  ac.eps = eps;
  return ac;
}

void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "d_w") cfg.d_w = parse_size(key, value);
  else if (key == "d_s") cfg.d_s = parse_size(key, value);
  else if (key == "d_r") cfg.d_r = parse_size(key, value);
  else if (key == "d_latent") cfg.d_latent = parse_size(key, value);
  else if (key == "heads") cfg.heads = parse_int(key, value);
  else if (key == "conv_width") cfg.conv_width = parse_int(key, value);
  else if (key == "match_hidden") cfg.match_hidden = parse_size(key, value);
  else if (key == "k_max") cfg.k_max = parse_int(key, value);
  else if (key == "T") cfg.T = parse_size(key, value);
  else if (key == "L") cfg.L = parse_size(key, value);
  else if (key == "M") cfg.M = parse_size(key, value);
  else if (key == "N") cfg.N = parse_size(key, value);
  else if (key == "coverage") cfg.coverage = parse_real(key, value);
  else if (key == "min_count") cfg.min_count = parse_int(key, value);
  else if (key == "dropout_embed") cfg.dropout_embed = parse_real(key, value);
  else if (key == "dropout_ffn") cfg.dropout_ffn = parse_real(key, value);
  else if (key == "dropout_final") cfg.dropout_final = parse_real(key, value);
  else if (key == "share_towers") cfg.share_towers = parse_bool(key, value);
  else if (key == "lr") cfg.lr = parse_real(key, value);
  else if (key == "beta1") cfg.beta1 = parse_real(key, value);
  else if (key == "beta2") cfg.beta2 = parse_real(key, value);
  else if (key == "eps") cfg.eps = parse_real(key, value);
  else if (key == "batch_size") cfg.batch_size = parse_size(key, value);
  else if (key == "epochs") cfg.epochs = parse_size(key, value);
  else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_size(key, value));
  else if (key == "precision") cfg.precision = value;
  else if (key == "workers") cfg.workers = parse_int(key, value);
  else if (key == "corpus") cfg.corpus = value;
  else if (key == "embeddings") cfg.embeddings = value;
  else if (key == "out") cfg.out = value;
  else if (key == "attention_aggregator") cfg.flags.attention_aggregator = parse_bool(key, value);
  else if (key == "hierarchical_encoder") cfg.flags.hierarchical_encoder = parse_bool(key, value);
  else if (key == "use_position") cfg.flags.use_position = parse_bool(key, value);
  else if (key == "use_ui_bias") cfg.flags.use_ui_bias = parse_bool(key, value);
  else if (key == "use_aux_loss") cfg.flags.use_aux_loss = parse_bool(key, value);
  else if (key == "item_dynamic") cfg.flags.item_dynamic = parse_bool(key, value);
  else throw ConfigError("config: unknown key '" + key + "'");
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  RunConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(lineno) + " is not 'key = value': " +
                        line);
    try {
      apply_config_entry(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(e.what()) + " (line " + std::to_string(lineno) + ")");
    }
  }
  return cfg;
}

void apply_ablation(RunConfig& cfg, const std::string& name) {
  if (name == "max_pool_aggregator") cfg.flags.attention_aggregator = false;
  else if (name == "avg_embedding") cfg.flags.hierarchical_encoder = false;
  else if (name == "remove_position") cfg.flags.use_position = false;
  else if (name == "remove_ui_bias") cfg.flags.use_ui_bias = false;
  else if (name == "remove_aux_loss") cfg.flags.use_aux_loss = false;
  else if (name == "add_item_dynamic") cfg.flags.item_dynamic = true;
  else
    throw ConfigError("unknown ablation '" + name +
                      "' (expected max_pool_aggregator | avg_embedding | remove_position | "
                      "remove_ui_bias | remove_aux_loss | add_item_dynamic)");
}

std::string render_config(const RunConfig& cfg) {
  std::ostringstream out;
  out << "d_w = " << cfg.d_w << "\n";
  out << "d_s = " << cfg.d_s << "\n";
  out << "d_r = " << cfg.d_r << "\n";
  out << "d_latent = " << cfg.d_latent << "\n";
  out << "heads = " << cfg.heads << "\n";
  out << "conv_width = " << cfg.conv_width << "\n";
  out << "match_hidden = " << cfg.match_hidden << "\n";
  out << "k_max = " << cfg.k_max << "\n";
  out << "T = " << cfg.T << "\n";
  out << "L = " << cfg.L << "\n";
  out << "M = " << cfg.M << "\n";
  out << "N = " << cfg.N << "\n";
  out << "coverage = " << real_str(cfg.coverage) << "\n";
  out << "min_count = " << cfg.min_count << "\n";
  out << "dropout_embed = " << real_str(cfg.dropout_embed) << "\n";
  out << "dropout_ffn = " << real_str(cfg.dropout_ffn) << "\n";
  out << "dropout_final = " << real_str(cfg.dropout_final) << "\n";
  out << "share_towers = " << bool_str(cfg.share_towers) << "\n";
  out << "lr = " << real_str(cfg.lr) << "\n";
  out << "beta1 = " << real_str(cfg.beta1) << "\n";
  out << "beta2 = " << real_str(cfg.beta2) << "\n";
  out << "eps = " << real_str(cfg.eps) << "\n";
  out << "batch_size = " << cfg.batch_size << "\n";
  out << "epochs = " << cfg.epochs << "\n";
  out << "seed = " << cfg.seed << "\n";
  out << "precision = " << cfg.precision << "\n";
  out << "workers = " << cfg.workers << "\n";
  out << "corpus = " << cfg.corpus << "\n";
  out << "embeddings = " << cfg.embeddings << "\n";
  out << "out = " << cfg.out << "\n";
  out << "attention_aggregator = " << bool_str(cfg.flags.attention_aggregator) << "\n";
  out << "hierarchical_encoder = " << bool_str(cfg.flags.hierarchical_encoder) << "\n";
  out << "use_position = " << bool_str(cfg.flags.use_position) << "\n";
  out << "use_ui_bias = " << bool_str(cfg.flags.use_ui_bias) << "\n";
  out << "use_aux_loss = " << bool_str(cfg.flags.use_aux_loss) << "\n";
  out << "item_dynamic = " << bool_str(cfg.flags.item_dynamic) << "\n";
  return out.str();
}

void validate_config(const RunConfig& cfg) {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("config: ") + name + " must be positive");
  };
  positive(cfg.d_w, "d_w");
  positive(cfg.d_s, "d_s");
  positive(cfg.d_r, "d_r");
  positive(cfg.d_latent, "d_latent");
  positive(cfg.match_hidden, "match_hidden");
  positive(cfg.T, "T");
  positive(cfg.L, "L");
  positive(cfg.M, "M");
  positive(cfg.batch_size, "batch_size");
  if (cfg.heads <= 0) throw ConfigError("config: heads must be positive");
  if (cfg.conv_width <= 0 || cfg.conv_width % 2 == 0)
    throw ConfigError("config: conv_width must be odd and positive");
  if (cfg.k_max < 0) throw ConfigError("config: k_max must be non-negative");
  if (cfg.d_s % static_cast<std::size_t>(cfg.heads) != 0 ||
      cfg.d_r % static_cast<std::size_t>(cfg.heads) != 0)
    throw ConfigError("config: d_s and d_r must be divisible by heads");
  for (double r : {cfg.dropout_embed, cfg.dropout_ffn, cfg.dropout_final})
    if (r < 0.0 || r >= 1.0) throw ConfigError("config: dropout rates must be in [0, 1)");
  if (cfg.coverage <= 0.0 || cfg.coverage > 1.0)
    throw ConfigError("config: coverage must be in (0, 1]");
  if (cfg.lr <= 0.0) throw ConfigError("config: lr must be positive");
  if (cfg.precision != "float" && cfg.precision != "double")
    throw ConfigError("config: precision must be 'float' or 'double'");
  if (cfg.workers < 1) throw ConfigError("config: workers must be >= 1");
  if (cfg.min_count < 1) throw ConfigError("config: min_count must be >= 1");
}

std::uint64_t model_config_hash(const ModelConfig& mc) {
  std::ostringstream out;
  out << mc.d_w << '|' << mc.d_s << '|' << mc.d_r << '|' << mc.d_latent << '|' << mc.heads
      << '|' << mc.conv_width << '|' << mc.match_hidden << '|' << mc.k_max << '|' << mc.T << '|'
      << mc.L << '|' << mc.M << '|' << mc.N << '|' << mc.share_towers << '|'
      << mc.flags.attention_aggregator << mc.flags.hierarchical_encoder << mc.flags.use_position
      << mc.flags.use_ui_bias << mc.flags.use_aux_loss << mc.flags.item_dynamic << '|'
      << mc.vocab_size << '|' << mc.n_users << '|' << mc.n_items;
  return fnv1a(out.str());
}

}  // namespace zarm
