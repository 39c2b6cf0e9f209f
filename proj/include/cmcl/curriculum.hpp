#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cmcl/corpus.hpp"
#include "cmcl/error.hpp"
#include "cmcl/eval.hpp"
#include "cmcl/model.hpp"
#include "cmcl/nn.hpp"
#include "cmcl/rng.hpp"

namespace cmcl {

struct StageSpec {
  Task task = Task::sentiment;
  std::string corpus;  // key into the corpora map
  std::size_t epochs = 1;
  double base_lr = 0.04;
  bool discriminative = false;
  bool gradual_unfreeze = false;
  std::size_t batch_size = 4;
  std::size_t patience = 0;  // dev-loss early stopping; 0 disables

  void validate() const {
    if (epochs < 1) throw ConfigError("stage epochs must be >= 1");
    if (!(base_lr > 0)) throw ConfigError("stage base_lr must be > 0");
    if (batch_size < 1) throw ConfigError("stage batch_size must be >= 1");
    if (corpus.empty()) throw ConfigError("stage has no corpus id");
  }
};

struct CurriculumPlan {
  std::vector<StageSpec> stages;
  std::uint64_t seed = 0;

  void validate() const {
    if (stages.empty()) throw ConfigError("curriculum plan has no stages");
    for (std::size_t i = 0; i < stages.size(); ++i) {
      stages[i].validate();
      if (stages[i].task == Task::sentiment && i + 1 != stages.size()) {
        throw ConfigError("the sentiment stage must be the last stage");
      }
    }
  }
};

// Per-group rates, deepest first: [emb, lstm1, lstm2, heads].
struct LrLadder {
  std::array<double, kGroupCount> rates{};
  friend bool operator==(const LrLadder&, const LrLadder&) = default;
};

// Heads get base_lr; with discriminative on, each deeper group gets half the
// rate of the group above it.
inline LrLadder lr_ladder(double base_lr, bool discriminative) {
  if (!(base_lr > 0)) throw ConfigError("base_lr must be > 0");
  LrLadder l;
  double rate = base_lr;
  for (std::size_t g = kGroupCount; g-- > 0;) {
    l.rates[g] = rate;
    if (discriminative) rate = rate / 2.0;
  }
  return l;
}

// Which groups are trainable in each (1-based) epoch of a stage. Gradual:
// epoch e unfreezes the top e groups. Groups are indexed deepest first.
class FreezeSchedule {
 public:
  enum class Kind { all_unfrozen, gradual, all_frozen };

  FreezeSchedule(std::size_t n_groups, Kind kind) : n_groups_(n_groups), kind_(kind) {
    if (n_groups < 1) throw ConfigError("freeze schedule needs at least one group");
  }

  std::size_t n_groups() const { return n_groups_; }
  Kind kind() const { return kind_; }

  std::vector<bool> unfrozen(std::size_t epoch) const {
    std::vector<bool> out(n_groups_, kind_ == Kind::all_unfrozen);
    if (kind_ == Kind::gradual) {
      const std::size_t top = std::min(std::max<std::size_t>(epoch, 1), n_groups_);
      for (std::size_t k = 0; k < top; ++k) out[n_groups_ - 1 - k] = true;
    }
    return out;
  }

  GroupMask mask(std::size_t epoch) const {
    if (n_groups_ != kGroupCount) throw Error("model freeze masks need a 4-group schedule");
    const auto u = unfrozen(epoch);
    return {u[0], u[1], u[2], u[3]};
  }

 private:
  std::size_t n_groups_;
  Kind kind_;
};

inline FreezeSchedule freeze_schedule(std::size_t n_groups = kGroupCount, bool gradual = false) {
  return FreezeSchedule(n_groups, gradual ? FreezeSchedule::Kind::gradual : FreezeSchedule::Kind::all_unfrozen);
}

struct EpochRecord {
  std::size_t stage = 0;
  Task task = Task::sentiment;
  std::size_t epoch = 0;  // 1-based within the stage
  double train_loss = 0;
  double dev_metric = 0;  // accuracy; perplexity for the LM task
  double dev_loss = 0;
  LrLadder lr_ladder;
  GroupMask unfrozen{};
  std::size_t steps = 0;
  double wall_ms = 0;
};

struct TrainReport {
  std::vector<EpochRecord> records;
};

// First epoch (1-based, within the final stage) whose dev metric reaches the
// threshold.
inline std::optional<std::size_t> epochs_to_threshold(const TrainReport& report, double threshold_acc) {
  if (report.records.empty()) throw Error("epochs_to_threshold: empty report");
  const std::size_t final_stage = report.records.back().stage;
  for (const auto& r : report.records) {
    if (r.stage == final_stage && r.dev_metric >= threshold_acc) return r.epoch;
  }
  return std::nullopt;
}

struct EvalResult {
  double metric = 0;
  double loss = 0;
};

// Dropout-free evaluation. LM target positions come from a fixed stream so
// repeated evaluations see the same prefixes.
template <typename T>
EvalResult evaluate(const HierModel<T>& m, Task task, std::span<const EncodedSample> samples,
                    std::size_t k_prefixes = 4, std::uint64_t seed = 0) {
  if (samples.empty()) throw Error("evaluate: no samples");
  EvalResult r;
  switch (task) {
    case Task::sentiment: {
      std::size_t correct = 0;
      for (const auto& s : samples) {
        if (!s.sentiment) throw Error("evaluate: sample lacks a sentiment label");
        const auto out = forward_sentiment(m, s.subword_ids);
        correct += argmax<T>(out.probs) == *s.sentiment;
        r.loss -= std::log(std::max<double>(out.probs[*s.sentiment], std::numeric_limits<double>::min()));
      }
      r.metric = static_cast<double>(correct) / static_cast<double>(samples.size());
      r.loss /= static_cast<double>(samples.size());
      return r;
    }
    case Task::lm: {
      Rng rng(seed, 0x6c6d646576ULL);
      std::vector<double> losses;
      for (const auto& s : samples) {
        for (const auto& ex : make_lm_examples(s.subword_ids, k_prefixes, rng)) {
          const auto out = forward_lm(m, ex.prefix);
          losses.push_back(-std::log(std::max<double>(out.probs[ex.target], std::numeric_limits<double>::min())));
        }
      }
      r.metric = perplexity(losses);
      r.loss = std::log(r.metric);
      return r;
    }
    case Task::lang:
    case Task::pos:
    case Task::pos_lang: {
      const bool do_pos = task != Task::lang;
      const bool do_lang = task != Task::pos;
      std::vector<std::vector<std::uint32_t>> gold_pos, pred_pos, gold_lang, pred_lang;
      double loss_pos = 0, loss_lang = 0;
      std::size_t positions = 0;
      for (const auto& s : samples) {
        const auto out = forward_tagging(m, s.subword_ids);
        const std::size_t n = s.subword_ids.size();
        positions += n;
        auto collect = [&](const Tensor<T>& probs, const std::vector<std::uint32_t>& gold, auto& g, auto& p,
                           double& loss) {
          std::vector<std::uint32_t> pred(n);
          for (std::size_t t = 0; t < n; ++t) {
            pred[t] = static_cast<std::uint32_t>(argmax<T>(probs.row(t)));
            loss -= std::log(std::max<double>(probs(t, gold[t]), std::numeric_limits<double>::min()));
          }
          g.push_back(gold);
          p.push_back(std::move(pred));
        };
        if (do_pos) {
          if (!s.pos_labels) throw Error("evaluate: sample lacks POS labels");
          collect(out.pos_probs, *s.pos_labels, gold_pos, pred_pos, loss_pos);
        }
        if (do_lang) {
          if (!s.lang_labels) throw Error("evaluate: sample lacks language labels");
          collect(out.lang_probs, *s.lang_labels, gold_lang, pred_lang, loss_lang);
        }
      }
      const double np = static_cast<double>(positions);
      if (task == Task::pos) return {tagging_accuracy(gold_pos, pred_pos), loss_pos / np};
      if (task == Task::lang) return {tagging_accuracy(gold_lang, pred_lang), loss_lang / np};
      return {(tagging_accuracy(gold_pos, pred_pos) + tagging_accuracy(gold_lang, pred_lang)) / 2,
              (loss_pos + loss_lang) / np};
    }
  }
  return r;
}

struct StageData {
  std::vector<EncodedSample> train;
  std::vector<EncodedSample> dev;
};

struct TrainOptions {
  double clip_norm = 5.0;
  std::size_t k_prefixes = 4;
  std::optional<FreezeSchedule> freeze_override;
  HeadMask heads = kAllHeads;
  std::function<void(const EpochRecord&)> sink;
  std::function<void(std::size_t, const StageSpec&)> on_stage;
};

// Trains one stage in place. Each epoch: seeded shuffle, mini-batches,
// task loss, SGD over the ladder masked by the freeze schedule, then a
// dropout-free dev evaluation.
template <typename T>
std::vector<EpochRecord> run_stage(HierModel<T>& m, const StageSpec& stage, std::size_t stage_index,
                                   const StageData& data, const Rng& rng, const TrainOptions& opt = {}) {
  stage.validate();
  if (data.train.empty()) throw Error("stage '" + std::string(to_string(stage.task)) + "' has no training samples");
  for (const auto* set : {&data.train, &data.dev}) {
    for (const auto& s : *set) detail::require_labels(s, stage.task);
  }
  const auto schedule = opt.freeze_override ? *opt.freeze_override : freeze_schedule(kGroupCount, stage.gradual_unfreeze);
  const auto ladder = lr_ladder(stage.base_lr, stage.discriminative);
  const TaskLossOptions loss_opt{opt.k_prefixes};

  std::vector<EpochRecord> records;
  double best_dev = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::deque<double> recent;

  for (std::size_t epoch = 1; epoch <= stage.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const GroupMask mask = schedule.mask(epoch);
    auto groups = param_groups(m, opt.heads);
    for (std::size_t g = 0; g < kGroupCount; ++g) {
      groups[g].lr = ladder.rates[g];
      groups[g].frozen = !mask[g];
    }
    const Rng erng = rng.split(epoch);
    Rng order_rng = erng.split(0);
    Rng batch_rng = erng.split(1);
    const auto order = order_rng.permutation(data.train.size());

    EpochRecord rec;
    rec.stage = stage_index;
    rec.task = stage.task;
    rec.epoch = epoch;
    rec.lr_ladder = ladder;
    rec.unfrozen = mask;
    double loss_sum = 0;
    std::vector<const EncodedSample*> batch;
    for (std::size_t at = 0; at < order.size(); at += stage.batch_size) {
      batch.clear();
      for (std::size_t j = at; j < std::min(order.size(), at + stage.batch_size); ++j) batch.push_back(&data.train[order[j]]);
      const double loss = task_loss(m, stage.task, std::span<const EncodedSample* const>(batch), true, batch_rng,
                                    mask, loss_opt);
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "non-finite " << to_string(stage.task) << " loss at stage " << stage_index << " epoch " << epoch
            << " step " << rec.steps << "; last finite losses:";
        for (double l : recent) msg << ' ' << l;
        throw DivergenceError(msg.str());
      }
      recent.push_back(loss);
      if (recent.size() > 5) recent.pop_front();
      nn::sgd_step(std::span<nn::ParamGroup<T>>(groups), opt.clip_norm);
      loss_sum += loss;
      ++rec.steps;
    }
    rec.train_loss = loss_sum / static_cast<double>(rec.steps);
    if (!data.dev.empty()) {
      const auto ev = evaluate(m, stage.task, data.dev, opt.k_prefixes, rng.seed());
      rec.dev_metric = ev.metric;
      rec.dev_loss = ev.loss;
    } else {
      rec.dev_metric = std::numeric_limits<double>::quiet_NaN();
      rec.dev_loss = std::numeric_limits<double>::quiet_NaN();
    }
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    records.push_back(rec);
    if (opt.sink) opt.sink(rec);

    if (stage.patience > 0 && !data.dev.empty()) {
      if (rec.dev_loss < best_dev) {
        best_dev = rec.dev_loss;
        since_best = 0;
      } else if (++since_best >= stage.patience) {
        break;
      }
    }
  }
  return records;
}

// Runs every stage in order on the same model.
template <typename T>
TrainReport run_curriculum(HierModel<T>& m, const CurriculumPlan& plan, const std::map<std::string, StageData>& corpora,
                           const TrainOptions& opt = {}) {
  plan.validate();
  for (const auto& st : plan.stages) {
    if (!corpora.contains(st.corpus)) throw ConfigError("missing corpus '" + st.corpus + "' for stage " + std::string(to_string(st.task)));
  }
  const Rng root(plan.seed, 0x63757272ULL);
  TrainReport report;
  for (std::size_t i = 0; i < plan.stages.size(); ++i) {
    if (opt.on_stage) opt.on_stage(i, plan.stages[i]);
    auto recs = run_stage(m, plan.stages[i], i, corpora.at(plan.stages[i].corpus), root.split(i), opt);
    report.records.insert(report.records.end(), recs.begin(), recs.end());
  }
  return report;
}

inline constexpr std::array<std::string_view, 6> kPresetNames{"scratch", "pos_langid", "full",
                                                              "lm_only", "full_no_unfreeze", "full_no_disc"};

struct PresetOptions {
  double base_lr = 0.04;
  std::size_t batch_size = 4;
  std::size_t pretrain_epochs = 10;
  std::size_t sentiment_epochs = 25;
  std::size_t patience = 3;
  bool joint_tagging = false;  // one pos+lang stage instead of lang then pos
};

// Training-regimen presets. Corpus ids: "lang", "pos", "lm", "sentiment".
inline CurriculumPlan preset(std::string_view name, std::uint64_t seed = 0, const PresetOptions& o = {}) {
  auto stage = [&](Task task, std::string corpus, std::size_t epochs, bool disc, bool gradual, std::size_t patience) {
    return StageSpec{task, std::move(corpus), epochs, o.base_lr, disc, gradual, o.batch_size, patience};
  };
  auto tagging = [&](std::vector<StageSpec>& out) {
    if (o.joint_tagging) {
      out.push_back(stage(Task::pos_lang, "pos", o.pretrain_epochs, false, false, o.patience));
    } else {
      out.push_back(stage(Task::lang, "lang", o.pretrain_epochs, false, false, o.patience));
      out.push_back(stage(Task::pos, "pos", o.pretrain_epochs, false, false, o.patience));
    }
  };
  CurriculumPlan plan;
  plan.seed = seed;
  auto& s = plan.stages;
  if (name == "scratch") {
    s.push_back(stage(Task::sentiment, "sentiment", o.sentiment_epochs, false, false, 0));
  } else if (name == "pos_langid") {
    tagging(s);
    s.push_back(stage(Task::sentiment, "sentiment", o.sentiment_epochs, true, true, 0));
  } else if (name == "full" || name == "full_no_unfreeze" || name == "full_no_disc") {
    tagging(s);
    s.push_back(stage(Task::lm, "lm", o.pretrain_epochs, true, false, o.patience));
    s.push_back(stage(Task::sentiment, "sentiment", o.sentiment_epochs, name != "full_no_disc",
                      name != "full_no_unfreeze", 0));
  } else if (name == "lm_only") {
    s.push_back(stage(Task::lm, "lm", o.pretrain_epochs, false, false, o.patience));
    s.push_back(stage(Task::sentiment, "sentiment", o.sentiment_epochs, true, true, 0));
  } else {
    throw ConfigError("unknown preset '" + std::string(name) + "'");
  }
  return plan;
}

// Explicit stage list: "task:epochs[:disc][:unfreeze]" joined by commas,
// e.g. "lang:10,pos:10,lm:10:disc,sentiment:25:disc:unfreeze".
inline CurriculumPlan parse_stages(std::string_view text, std::uint64_t seed, const PresetOptions& o = {}) {
  CurriculumPlan plan;
  plan.seed = seed;
  std::stringstream in{std::string(text)};
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    std::stringstream parts(item);
    std::string field;
    std::vector<std::string> f;
    while (std::getline(parts, field, ':')) f.push_back(field);
    if (f.size() < 2) throw ConfigError("stage '" + item + "' must look like task:epochs[:disc][:unfreeze]");
    StageSpec st;
    st.task = parse_task(f[0]);
    st.corpus = st.task == Task::pos_lang ? "pos" : std::string(to_string(st.task));
    try {
      st.epochs = std::stoul(f[1]);
    } catch (const std::exception&) {
      throw ConfigError("stage '" + item + "': bad epoch count");
    }
    st.base_lr = o.base_lr;
    st.batch_size = o.batch_size;
    st.patience = st.task == Task::sentiment ? 0 : o.patience;
    for (std::size_t k = 2; k < f.size(); ++k) {
      if (f[k] == "disc") {
        st.discriminative = true;
      } else if (f[k] == "unfreeze") {
        st.gradual_unfreeze = true;
      } else {
        throw ConfigError("stage '" + item + "': unknown flag '" + f[k] + "'");
      }
    }
    plan.stages.push_back(st);
  }
  plan.validate();
  return plan;
}

}  // namespace cmcl
