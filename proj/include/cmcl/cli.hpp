#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmcl/checkpoint.hpp"
#include "cmcl/config.hpp"
#include "cmcl/corpus.hpp"
#include "cmcl/curriculum.hpp"
#include "cmcl/error.hpp"
#include "cmcl/eval.hpp"
#include "cmcl/gradcheck.hpp"
#include "cmcl/model.hpp"
#include "cmcl/pipeline.hpp"
#include "cmcl/synth.hpp"

namespace cmcl::cli {

using json = nlohmann::ordered_json;

enum ExitCode : int { kOk = 0, kFailed = 1, kConfigError = 2, kDiverged = 3, kIoError = 4 };

inline constexpr std::string_view kCheckpointFile = "model.ckpt";
inline constexpr std::string_view kMetricsFile = "metrics.jsonl";
inline constexpr std::string_view kSummaryFile = "summary.json";
inline constexpr std::string_view kConfigFile = "config.txt";

// Appends one JSON object per line and flushes after each record.
class MetricsLog {
 public:
  MetricsLog(const std::filesystem::path& path, bool truncate) : path_(path.string()) {
    out_.open(path_, truncate ? std::ios::trunc : std::ios::app);
    if (!out_) throw IoError("cannot write metrics log " + path_);
  }

  void write(const json& record) {
    out_ << record.dump() << '\n';
    out_.flush();
    if (!out_) throw IoError("write failed for " + path_);
  }

 private:
  std::string path_;
  std::ofstream out_;
};

inline json ladder_json(const LrLadder& l) {
  json a = json::array();
  for (double r : l.rates) a.push_back(r);
  return a;
}

inline json unfrozen_json(const GroupMask& mask) {
  json a = json::array();
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    if (mask[g]) a.push_back(kGroupNames[g]);
  }
  return a;
}

inline json epoch_json(const EpochRecord& r) {
  return json{{"event", "epoch"},
              {"stage", r.stage},
              {"epoch", r.epoch},
              {"task", to_string(r.task)},
              {"train_loss", r.train_loss},
              {"dev_metric", r.dev_metric},
              {"dev_loss", r.dev_loss},
              {"lr_ladder", ladder_json(r.lr_ladder)},
              {"unfrozen_groups", unfrozen_json(r.unfrozen)},
              {"steps", r.steps},
              {"wall_ms", r.wall_ms}};
}

inline json stage_json(std::size_t index, const StageSpec& st) {
  return json{{"event", "stage_start"},
              {"stage", index},
              {"task", to_string(st.task)},
              {"corpus", st.corpus},
              {"epochs", st.epochs},
              {"base_lr", st.base_lr},
              {"discriminative", st.discriminative},
              {"gradual_unfreeze", st.gradual_unfreeze},
              {"batch_size", st.batch_size},
              {"patience", st.patience}};
}

inline std::vector<RawDocument> load_corpus_for(const std::string& corpus_id, const std::string& path) {
  if (corpus_id == "lang" || corpus_id == "pos") return load_token_corpus(path);
  if (corpus_id == "lm") return load_text_corpus(path);
  if (corpus_id == "sentiment") return load_sentence_corpus(path);
  throw ConfigError("unknown corpus id '" + corpus_id + "'");
}

inline std::map<std::string, std::vector<RawDocument>> load_corpora(const RunConfig& cfg) {
  std::map<std::string, std::vector<RawDocument>> raw;
  for (const auto& [id, path] : cfg.data_paths()) {
    raw[id] = load_corpus_for(id, path);
    if (raw[id].empty()) throw IoError(path + ": corpus is empty");
  }
  if (raw.empty()) throw ConfigError("no corpus given (set data_lang, data_pos, data_lm or data_sentiment)");
  return raw;
}

inline PrepareOptions prepare_options(const RunConfig& cfg) {
  PrepareOptions o;
  o.encoder = cfg.encoder;
  o.bpe_merges = cfg.bpe_merges;
  o.min_freq = cfg.min_freq;
  o.seed = cfg.seed;
  o.rebalance_sentiment = cfg.rebalance;
  return o;
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

// Writes the vocabulary, tagsets and merges into cfg.out.
inline EncodingContext cmd_build_vocab(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  const auto raw = load_corpora(cfg);
  auto data = prepare_data(raw, prepare_options(cfg));
  const std::filesystem::path dir(cfg.out);
  ensure_dir(dir);
  data.ctx.save(dir);
  out << json{{"vocab", (dir / "vocab.tsv").string()},
              {"entries", data.ctx.vocab.size()},
              {"vocab_hash", data.ctx.vocab.hash()},
              {"encoder", to_string(cfg.encoder)},
              {"lang_tags", data.ctx.lang_tags.size()},
              {"pos_tags", data.ctx.pos_tags.size()}}
             .dump()
      << '\n';
  return std::move(data.ctx);
}

inline void cmd_synth(std::uint64_t seed, std::size_t n, SynthProfile profile, const std::string& path, std::ostream& out) {
  if (n == 0) throw ConfigError("synth needs n >= 1");
  const auto docs = synth_corpus(seed, n, profile);
  if (profile == SynthProfile::tagging) {
    write_token_corpus(path, docs);
  } else {
    write_sentence_corpus(path, docs);
  }
  out << json{{"synth", path}, {"profile", profile == SynthProfile::tagging ? "tagging" : "sentiment"}, {"sentences", n},
              {"seed", seed}}
             .dump()
      << '\n';
}

template <typename T>
std::vector<std::uint32_t> predict_all(const HierModel<T>& m, std::span<const EncodedSample> samples) {
  std::vector<std::uint32_t> pred;
  pred.reserve(samples.size());
  for (const auto& s : samples) pred.push_back(predict_sentiment(m, s.subword_ids));
  return pred;
}

// Test-split metrics for the final task. Sentiment adds P/R/F1 and the
// confusion matrix.
template <typename T>
json task_metrics(const HierModel<T>& m, Task task, std::span<const EncodedSample> samples) {
  json r{{"task", to_string(task)}, {"samples", samples.size()}};
  if (task == Task::sentiment) {
    std::vector<std::uint32_t> gold;
    for (const auto& s : samples) {
      if (!s.sentiment) throw Error("sample lacks a sentiment label");
      gold.push_back(*s.sentiment);
    }
    const auto pred = predict_all(m, samples);
    const auto cm = classify_metrics(gold, pred, kSentimentClasses);
    r["accuracy"] = cm.accuracy;
    r["precision"] = cm.precision;
    r["recall"] = cm.recall;
    r["f1"] = cm.f1;
    json rows = json::array();
    for (std::size_t g = 0; g < kSentimentClasses; ++g) {
      json row = json::array();
      for (std::size_t p = 0; p < kSentimentClasses; ++p) row.push_back(cm.confusion.at(g, p));
      rows.push_back(row);
    }
    r["confusion"] = rows;
  } else {
    const auto ev = evaluate(m, task, samples);
    r[task == Task::lm ? "perplexity" : "accuracy"] = ev.metric;
    r["loss"] = ev.loss;
  }
  return r;
}

inline std::string plan_label(const RunConfig& cfg) { return cfg.stages.empty() ? cfg.preset : cfg.stages; }

// Runs the configured plan. Writes model.ckpt, the encoding context,
// config.txt, metrics.jsonl and summary.json into cfg.out and returns the
// summary record.
inline json cmd_train(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  cfg.check_paths();
  const auto plan = cfg.plan();
  const auto raw = load_corpora(cfg);
  auto data = prepare_data(raw, prepare_options(cfg));

  const std::filesystem::path dir(cfg.out);
  ensure_dir(dir);
  data.ctx.save(dir);
  write_text(dir / kConfigFile, cfg.to_text());
  MetricsLog log(dir / kMetricsFile, true);

  ModelDims dims;
  dims.vocab = data.ctx.vocab.size();
  dims.emb = cfg.emb_dim;
  dims.hidden = cfg.hidden;
  dims.lang_tags = data.ctx.lang_tags.size();
  dims.pos_tags = data.ctx.pos_tags.size();
  auto model = HierModel<float>::init(dims, cfg.seed);
  model.dropout = cfg.dropout;

  log.write(json{{"event", "run_start"},
                 {"plan", plan_label(cfg)},
                 {"seed", cfg.seed},
                 {"encoder", to_string(cfg.encoder)},
                 {"vocab_size", dims.vocab},
                 {"vocab_hash", data.ctx.vocab.hash()},
                 {"stages", plan.stages.size()}});

  TrainOptions opt;
  opt.clip_norm = cfg.clip_norm;
  opt.k_prefixes = cfg.k_prefixes;
  opt.on_stage = [&](std::size_t i, const StageSpec& st) {
    log.write(stage_json(i, st));
    out << "stage " << i << ": " << to_string(st.task) << " x" << st.epochs << '\n';
  };
  opt.sink = [&](const EpochRecord& r) {
    log.write(epoch_json(r));
    char line[160];
    std::snprintf(line, sizeof line, "  %s epoch %zu  loss %.4f  dev %.4f  (%.0f ms)\n",
                  std::string(to_string(r.task)).c_str(), r.epoch, r.train_loss, r.dev_metric, r.wall_ms);
    out << line;
  };

  TrainReport report;
  try {
    report = run_curriculum(model, plan, data.stages, opt);
  } catch (const DivergenceError& e) {
    log.write(json{{"event", "divergence"}, {"message", e.what()}});
    throw;
  }

  const std::map<std::string, std::string> meta{{"vocab_hash", data.ctx.vocab.hash()},
                                                {"encoder", std::string(to_string(cfg.encoder))},
                                                {"plan", plan_label(cfg)},
                                                {"seed", std::to_string(cfg.seed)}};
  save_checkpoint(model, (dir / kCheckpointFile).string(), meta);

  const auto& last = plan.stages.back();
  const auto& test = data.test.at(last.corpus);
  const auto& eval_set = test.empty() ? data.stages.at(last.corpus).dev : test;

  json summary{{"event", "summary"}, {"plan", plan_label(cfg)}, {"seed", cfg.seed}, {"encoder", to_string(cfg.encoder)}};
  summary["epochs"] = report.records.size();
  summary["final_dev_metric"] = report.records.back().dev_metric;
  if (last.task == Task::sentiment) {
    const auto ett = epochs_to_threshold(report, cfg.threshold);
    summary["threshold"] = cfg.threshold;
    summary["epochs_to_threshold"] = ett ? json(*ett) : json(nullptr);
  }
  summary["test_split"] = test.empty() ? "dev" : "test";
  if (!eval_set.empty()) {
    const auto m = task_metrics(model, last.task, eval_set);
    for (const auto& [k, v] : m.items()) {
      if (k != "task") summary["test_" + k] = v;
    }
  }
  log.write(summary);
  write_text(dir / kSummaryFile, summary.dump(2) + '\n');
  out << summary.dump() << '\n';
  return summary;
}

struct LoadedModel {
  Checkpoint<float> checkpoint;
  EncodingContext ctx;
};

// Loads a checkpoint with the encoding context stored next to it and checks
// that the vocabulary hashes agree.
inline LoadedModel load_model(const std::string& checkpoint_path) {
  LoadedModel lm{load_checkpoint<float>(checkpoint_path), EncodingContext{}};
  const auto& meta = lm.checkpoint.meta;
  const auto dir = std::filesystem::path(checkpoint_path).parent_path();
  const auto kind = meta.contains("encoder") ? parse_encoder_kind(meta.at("encoder")) : EncoderKind::trigram;
  lm.ctx = EncodingContext::load(dir.empty() ? "." : dir, kind);
  const auto hash = lm.ctx.vocab.hash();
  if (!meta.contains("vocab_hash")) throw ConfigError(checkpoint_path + ": checkpoint carries no vocab hash");
  if (meta.at("vocab_hash") != hash) {
    throw ConfigError("vocab hash mismatch: checkpoint " + meta.at("vocab_hash") + ", vocab.tsv " + hash);
  }
  if (lm.ctx.vocab.size() != lm.checkpoint.model.dims.vocab) throw ConfigError("vocab size does not match checkpoint");
  return lm;
}

inline std::string corpus_id_for(Task task) {
  switch (task) {
    case Task::lang: return "lang";
    case Task::pos:
    case Task::pos_lang: return "pos";
    case Task::lm: return "lm";
    case Task::sentiment: return "sentiment";
  }
  return "sentiment";
}

// Scores a corpus and appends the record to the log (default: metrics.jsonl
// next to the checkpoint).
inline json cmd_eval(const std::string& checkpoint_path, const std::string& corpus_path, const std::string& task_name,
                     const std::string& log_path, std::ostream& out) {
  const Task task = parse_task(task_name);
  const auto lm = load_model(checkpoint_path);
  const auto docs = load_corpus_for(corpus_id_for(task), corpus_path);
  if (docs.empty()) throw IoError(corpus_path + ": corpus is empty");
  std::vector<EncodedSample> samples;
  samples.reserve(docs.size());
  for (const auto& d : docs) {
    auto s = lm.ctx.encode(d);
    if (!s.subword_ids.empty()) samples.push_back(std::move(s));
  }
  json rec = task_metrics(lm.checkpoint.model, task, samples);
  rec["event"] = "eval";
  rec["checkpoint"] = checkpoint_path;
  rec["corpus"] = corpus_path;
  const auto path = log_path.empty() ? (std::filesystem::path(checkpoint_path).parent_path() / kMetricsFile).string()
                                     : log_path;
  MetricsLog(path, false).write(rec);
  out << rec.dump() << '\n';
  return rec;
}

inline json cmd_predict(const std::string& checkpoint_path, const std::string& text, std::ostream& out) {
  const auto lm = load_model(checkpoint_path);
  const auto s = lm.ctx.encode(RawDocument{text, {}, std::nullopt});
  if (s.subword_ids.empty()) throw ConfigError("predict: text has no tokens");
  const auto res = forward_sentiment(lm.checkpoint.model, s.subword_ids);
  const auto best = argmax<float>(res.probs);
  json probs = json::object();
  for (std::size_t k = 0; k < kSentimentClasses; ++k) probs[std::string(kSentimentNames[k])] = res.probs[k];
  json rec{{"text", text}, {"label", kSentimentNames[best]}, {"probs", probs}};
  out << rec.dump() << '\n';
  return rec;
}

// One line per op with its worst relative error; true iff every op passes.
inline bool cmd_gradcheck(const gradcheck::SuiteOptions& o, std::ostream& out) {
  const auto reps = gradcheck::run_suite(o);
  for (const auto& r : reps) {
    char line[96];
    std::snprintf(line, sizeof line, "%-16s %s  max_rel_err %.3e  entries %zu  seeds %zu", r.op.c_str(),
                  r.pass ? "PASS" : "FAIL", r.max_rel_err, r.checked, r.seeds);
    out << line;
    if (!r.pass) out << "  worst " << r.worst;
    out << '\n';
  }
  const bool ok = gradcheck::all_pass(reps);
  out << (ok ? "gradcheck: all ops pass" : "gradcheck: FAILED") << " (tolerance " << o.tolerance << ")\n";
  return ok;
}

}  // namespace cmcl::cli
