#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cmcl/curriculum.hpp"
#include "cmcl/error.hpp"
#include "cmcl/subword.hpp"

namespace cmcl {

// Flat run configuration. Resolution order: built-in defaults, then the
// config file, then command-line overrides.
struct RunConfig {
  EncoderKind encoder = EncoderKind::trigram;
  std::size_t bpe_merges = 500;
  std::uint64_t min_freq = 2;
  std::size_t emb_dim = 64;
  std::size_t hidden = 64;
  double dropout = 0.2;
  double base_lr = 0.04;
  std::size_t batch_size = 4;
  double clip_norm = 5.0;
  std::uint64_t seed = 0;
  std::string preset = "full";
  std::string stages;  // explicit stage list; overrides preset when set
  std::string data_lang;
  std::string data_pos;
  std::string data_lm;
  std::string data_sentiment;
  std::string out = "run";
  std::size_t pretrain_epochs = 10;
  std::size_t sentiment_epochs = 25;
  std::size_t patience = 3;
  std::size_t k_prefixes = 4;
  double threshold = 0.9;
  bool joint_tagging = false;
  bool rebalance = true;

  static const std::vector<std::string>& keys() {
    static const std::vector<std::string> k{
        "encoder",   "bpe_merges", "min_freq",       "emb_dim",       "hidden",        "dropout",
        "base_lr",   "batch_size", "clip_norm",      "seed",          "preset",        "stages",
        "data_lang", "data_pos",   "data_lm",        "data_sentiment", "out",          "pretrain_epochs",
        "sentiment_epochs", "patience", "k_prefixes", "threshold",    "joint_tagging", "rebalance"};
    return k;
  }

  void set(const std::string& key, const std::string& value) {
    auto as_uint = [&]() -> std::uint64_t {
      std::size_t used = 0;
      std::uint64_t v = 0;
      try {
        if (value.empty() || value[0] == '-') throw std::invalid_argument("negative");
        v = std::stoull(value, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != value.size()) throw ConfigError("'" + key + "' expects a non-negative integer, got '" + value + "'");
      return v;
    };
    auto as_double = [&]() -> double {
      std::size_t used = 0;
      double v = 0;
      try {
        v = std::stod(value, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != value.size()) throw ConfigError("'" + key + "' expects a number, got '" + value + "'");
      return v;
    };
    auto as_bool = [&]() -> bool {
      if (value == "true" || value == "1" || value == "yes") return true;
      if (value == "false" || value == "0" || value == "no") return false;
      throw ConfigError("'" + key + "' expects true/false, got '" + value + "'");
    };

    if (key == "encoder") encoder = parse_encoder_kind(value);
    else if (key == "bpe_merges") bpe_merges = as_uint();
    else if (key == "min_freq") min_freq = as_uint();
    else if (key == "emb_dim") emb_dim = as_uint();
    else if (key == "hidden") hidden = as_uint();
    else if (key == "dropout") dropout = as_double();
    else if (key == "base_lr") base_lr = as_double();
    else if (key == "batch_size") batch_size = as_uint();
    else if (key == "clip_norm") clip_norm = as_double();
    else if (key == "seed") seed = as_uint();
    else if (key == "preset") preset = value;
    else if (key == "stages") stages = value;
    else if (key == "data_lang") data_lang = value;
    else if (key == "data_pos") data_pos = value;
    else if (key == "data_lm") data_lm = value;
    else if (key == "data_sentiment") data_sentiment = value;
    else if (key == "out") out = value;
    else if (key == "pretrain_epochs") pretrain_epochs = as_uint();
    else if (key == "sentiment_epochs") sentiment_epochs = as_uint();
    else if (key == "patience") patience = as_uint();
    else if (key == "k_prefixes") k_prefixes = as_uint();
    else if (key == "threshold") threshold = as_double();
    else if (key == "joint_tagging") joint_tagging = as_bool();
    else if (key == "rebalance") rebalance = as_bool();
    else throw ConfigError("unknown config key '" + key + "'");
  }

  void validate() const {
    if (emb_dim == 0 || hidden == 0) throw ConfigError("emb_dim and hidden must be positive");
    if (!(dropout >= 0 && dropout < 1)) throw ConfigError("dropout must be in [0, 1)");
    if (!(base_lr > 0)) throw ConfigError("base_lr must be positive");
    if (!(clip_norm > 0)) throw ConfigError("clip_norm must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (min_freq == 0) throw ConfigError("min_freq must be >= 1");
    if (encoder == EncoderKind::bpe && bpe_merges == 0) throw ConfigError("bpe_merges must be positive for bpe");
    if (pretrain_epochs == 0 || sentiment_epochs == 0) throw ConfigError("epoch counts must be positive");
    if (k_prefixes == 0) throw ConfigError("k_prefixes must be positive");
    if (!(threshold >= 0 && threshold <= 1)) throw ConfigError("threshold must be in [0, 1]");
    plan();
  }

  PresetOptions preset_options() const {
    PresetOptions o;
    o.base_lr = base_lr;
    o.batch_size = batch_size;
    o.pretrain_epochs = pretrain_epochs;
    o.sentiment_epochs = sentiment_epochs;
    o.patience = patience;
    o.joint_tagging = joint_tagging;
    return o;
  }

  CurriculumPlan plan() const {
    return stages.empty() ? cmcl::preset(preset, seed, preset_options()) : parse_stages(stages, seed, preset_options());
  }

  std::map<std::string, std::string> data_paths() const {
    std::map<std::string, std::string> p;
    if (!data_lang.empty()) p["lang"] = data_lang;
    if (!data_pos.empty()) p["pos"] = data_pos;
    if (!data_lm.empty()) p["lm"] = data_lm;
    if (!data_sentiment.empty()) p["sentiment"] = data_sentiment;
    return p;
  }

  // Every corpus the plan needs must be given (lm may fall back to
  // sentiment) and exist on disk.
  void check_paths() const {
    const auto paths = data_paths();
    for (const auto& st : plan().stages) {
      const bool lm_fallback = st.corpus == "lm" && paths.contains("sentiment");
      if (!paths.contains(st.corpus) && !lm_fallback) {
        throw ConfigError("plan needs data_" + st.corpus + " but it is not set");
      }
    }
    for (const auto& [name, path] : paths) {
      if (!std::filesystem::is_regular_file(path)) throw ConfigError("data_" + name + " '" + path + "' does not exist");
    }
  }

  // Canonical key = value rendering, in key order.
  std::string to_text() const {
    std::ostringstream o;
    o.precision(17);
    o << "encoder = " << to_string(encoder) << '\n'
      << "bpe_merges = " << bpe_merges << '\n'
      << "min_freq = " << min_freq << '\n'
      << "emb_dim = " << emb_dim << '\n'
      << "hidden = " << hidden << '\n'
      << "dropout = " << dropout << '\n'
      << "base_lr = " << base_lr << '\n'
      << "batch_size = " << batch_size << '\n'
      << "clip_norm = " << clip_norm << '\n'
      << "seed = " << seed << '\n'
      << "preset = " << preset << '\n'
      << "stages = " << stages << '\n'
      << "data_lang = " << data_lang << '\n'
      << "data_pos = " << data_pos << '\n'
      << "data_lm = " << data_lm << '\n'
      << "data_sentiment = " << data_sentiment << '\n'
      << "out = " << out << '\n'
      << "pretrain_epochs = " << pretrain_epochs << '\n'
      << "sentiment_epochs = " << sentiment_epochs << '\n'
      << "patience = " << patience << '\n'
      << "k_prefixes = " << k_prefixes << '\n'
      << "threshold = " << threshold << '\n'
      << "joint_tagging = " << (joint_tagging ? "true" : "false") << '\n'
      << "rebalance = " << (rebalance ? "true" : "false") << '\n';
    return o.str();
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

// "key = value" lines; blank lines and lines starting with '#' are skipped.
inline std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text,
                                                                          const std::string& origin = "config") {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    auto key = detail::trim(t.substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    out.emplace_back(std::move(key), detail::trim(t.substr(eq + 1)));
  }
  return out;
}

inline RunConfig resolve_config(const std::string& config_path,
                                const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig cfg;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("cannot read config file '" + config_path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    for (const auto& [k, v] : parse_config_text(buf.str(), config_path)) cfg.set(k, v);
  }
  for (const auto& [k, v] : overrides) cfg.set(k, v);
  return cfg;
}

}  // namespace cmcl
