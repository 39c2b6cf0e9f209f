#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmcl/curriculum.hpp"
#include "cmcl/gradcheck.hpp"
#include "cmcl/pipeline.hpp"
#include "cmcl/synth.hpp"

using namespace cmcl;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2;
}

std::string join(const std::vector<double>& v, const char* f = "%.3f") {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + fmt(f, v[i]);
  return s + "]";
}

// Finite-difference check of every op and every task loss.
Outcome gradient_check() {
  const auto t0 = Clock::now();
  gradcheck::SuiteOptions o;
  o.seeds = 20;
  const auto reps = gradcheck::run_suite(o);
  const double secs = seconds_since(t0);
  double worst = 0;
  std::string failed;
  std::size_t losses = 0;
  for (const auto& r : reps) {
    worst = std::max(worst, r.max_rel_err);
    if (!r.pass) failed += " " + r.op;
    if (r.op.rfind("loss.", 0) == 0) ++losses;
    if (r.seeds < 20) failed += " " + r.op + "(seeds)";
  }
  const bool pass = failed.empty() && losses == 4 && o.eps == 1e-5 && o.tolerance == 1e-4 && secs < 120;
  return {pass, fmt("%zu ops, %zu task losses, max rel err %.2e, %.1f s%s", reps.size(), losses, worst, secs,
                    failed.empty() ? "" : (" failed:" + failed).c_str())};
}

std::string trigram_decode(const std::vector<std::string>& pieces) {
  std::string s;
  for (const auto& p : pieces) s += p;
  while (!s.empty() && s.back() == kPad) s.pop_back();
  if (!s.empty() && s.back() == kTerminal) s.pop_back();
  return s;
}

// Tokenizer properties.
Outcome tokenizer_properties() {
  const std::vector<std::string> alphabet{"a", "e", "k", "z", "0", "7", "@", ".", "'", "\xc3\xa9", "\xe0\xa4\x95",
                                          "\xe0\xa4\xbe", "\xf0\x9f\x98\x80"};
  Rng rng(2024);
  std::size_t round_trip_fail = 0;
  for (int i = 0; i < 100000; ++i) {
    std::string tok;
    const auto len = 1 + rng.below(12);
    for (std::uint64_t k = 0; k < len; ++k) tok += alphabet[rng.below(alphabet.size())];
    if (trigram_decode(trigram_encode(tok)) != tok) ++round_trip_fail;
  }
  const bool girl = trigram_encode("girl") == std::vector<std::string>{"gir", "l*#"};

  std::vector<std::string> tokens;
  for (const auto& d : synth_corpus(5, 400, SynthProfile::sentiment)) {
    for (const auto& t : tokenize(normalize(d.text))) {
      if (tokens.size() < 1000 && t != kUserMask && t != kUrlMask) tokens.push_back(t);
    }
  }
  std::map<std::string, std::uint64_t> counts;
  for (const auto& t : tokens) ++counts[t + kTerminal];
  const auto merges = bpe_learn(counts, 400);
  std::set<std::string> types(tokens.begin(), tokens.end());
  std::size_t violations = 0;
  for (const auto& t : types) {
    std::size_t prev = bpe_encode(t, {}).size();
    for (std::size_t k = 1; k <= merges.size(); ++k) {
      const std::vector<Merge> prefix(merges.begin(), merges.begin() + static_cast<std::ptrdiff_t>(k));
      const std::size_t now = bpe_encode(t, prefix).size();
      if (now > prev) ++violations;
      prev = now;
    }
  }
  const bool pass = round_trip_fail == 0 && girl && tokens.size() == 1000 && violations == 0;
  return {pass, fmt("trigram round trip 100000 tokens, %zu mismatches; girl -> [gir, l*#] %s; BPE %zu merges over %zu "
                    "tokens (%zu types), %zu monotonicity violations",
                    round_trip_fail, girl ? "ok" : "WRONG", merges.size(), tokens.size(), types.size(), violations)};
}

ModelDims dims_for(const PreparedData& d) {
  ModelDims m;
  m.vocab = d.ctx.vocab.size();
  m.lang_tags = d.ctx.lang_tags.size();
  m.pos_tags = d.ctx.pos_tags.size();
  return m;
}

struct Stop {};

// Scratch training memorizes 32 samples.
Outcome overfit() {
  const auto t0 = Clock::now();
  std::map<std::string, std::vector<RawDocument>> raw{{"sentiment", synth_corpus(33, 32, SynthProfile::sentiment)}};
  PrepareOptions po;
  po.seed = 3;
  po.min_freq = 1;
  po.ratios = {1.0, 0.0, 0.0};
  po.rebalance_sentiment = false;
  const auto data = prepare_data(raw, po);
  StageData sd;
  sd.train = data.stages.at("sentiment").train;
  sd.dev = sd.train;
  auto m = HierModel<float>::init(dims_for(data), 1);
  m.dropout = 0.2;
  const StageSpec st{Task::sentiment, "sentiment", 200, 0.04, false, false, 4, 0};
  std::size_t reached = 0;
  double last_acc = 0;
  TrainOptions opt;
  opt.sink = [&](const EpochRecord& r) {
    last_acc = r.dev_metric;
    if (r.dev_metric == 1.0) {
      reached = r.epoch;
      throw Stop{};
    }
  };
  try {
    run_stage(m, st, 0, sd, Rng(1), opt);
  } catch (const Stop&) {
  }
  const double secs = seconds_since(t0);
  const bool pass = sd.train.size() == 32 && reached > 0 && secs < 60;
  return {pass, reached ? fmt("100%% train accuracy on %zu samples at epoch %zu, %.1f s", sd.train.size(), reached, secs)
                        : fmt("not reached in 200 epochs (last %.3f), %.1f s", last_acc, secs)};
}

// Freezing, ladder and update-ratio invariants.
Outcome transfer_mechanics() {
  std::map<std::string, std::vector<RawDocument>> raw{{"sentiment", synth_corpus(44, 120, SynthProfile::sentiment)}};
  PrepareOptions po;
  po.seed = 4;
  po.min_freq = 1;
  const auto data = prepare_data(raw, po);
  auto m = HierModel<float>::init(dims_for(data), 4);
  auto snap = [&] {
    std::array<std::vector<std::vector<float>>, kGroupCount> s;
    for (std::size_t g = 0; g < kGroupCount; ++g) {
      for (const auto* t : m.group_tensors(static_cast<Group>(g))) s[g].push_back(t->value);
    }
    return s;
  };
  const auto init = snap();
  std::vector<std::array<bool, kGroupCount>> unchanged;
  TrainOptions opt;
  opt.sink = [&](const EpochRecord&) {
    const auto now = snap();
    std::array<bool, kGroupCount> u{};
    for (std::size_t g = 0; g < kGroupCount; ++g) u[g] = now[g] == init[g];
    unchanged.push_back(u);
  };
  const StageSpec st{Task::sentiment, "sentiment", 5, 0.04, true, true, 4, 0};
  run_stage(m, st, 0, data.stages.at("sentiment"), Rng(4), opt);
  bool frozen_ok = unchanged.size() == 5;
  for (std::size_t e = 1; frozen_ok && e <= unchanged.size(); ++e) {
    for (std::size_t g = 0; g < kGroupCount; ++g) {
      const std::size_t unfreeze_epoch = kGroupCount - g;
      if (unchanged[e - 1][g] != (e < unfreeze_epoch)) frozen_ok = false;
    }
  }

  const auto ladder = lr_ladder(0.04, true).rates;
  const bool ladder_ok = ladder == std::array<double, 4>{0.005, 0.01, 0.02, 0.04};

  auto z = HierModel<double>::create(m.dims);
  auto groups = param_groups(z);
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    groups[g].lr = ladder[g];
    for (auto* t : groups[g].params) {
      t->ensure_grad();
      std::fill(t->grad.begin(), t->grad.end(), 1.0);
    }
  }
  nn::sgd_step(std::span<nn::ParamGroup<double>>(groups), 0.0);
  std::array<std::set<double>, kGroupCount> step;
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    for (const auto* t : groups[g].params) {
      for (double v : t->value) step[g].insert(std::abs(v));
    }
  }
  bool ratio_ok = true;
  std::vector<double> ratios;
  for (std::size_t g = 0; g + 1 < kGroupCount; ++g) {
    if (step[g].size() != 1 || step[g + 1].size() != 1) {
      ratio_ok = false;
      continue;
    }
    ratios.push_back(*step[g + 1].begin() / *step[g].begin());
    ratio_ok = ratio_ok && ratios.back() == 2.0;
  }
  ratio_ok = ratio_ok && step[kGroupCount - 1].size() == 1;
  return {frozen_ok && ladder_ok && ratio_ok,
          fmt("frozen groups unchanged until unfreeze epoch: %s; ladder %s; adjacent update ratios %s",
              frozen_ok ? "yes" : "NO", join({ladder.begin(), ladder.end()}).c_str(), join(ratios, "%.17g").c_str())};
}

// Shared setup for the ordering experiments: 2000 train / 500 dev sentiment
// sentences plus a tagging corpus, seeds 1..5.
constexpr std::size_t kSentimentEpochs = 8;
constexpr std::size_t kPretrainEpochs = 2;
constexpr double kThreshold = 0.9;
const std::vector<std::uint64_t> kSeeds{1, 2, 3, 4, 5};

PreparedData experiment_data(EncoderKind enc) {
  std::map<std::string, std::vector<RawDocument>> raw;
  raw["sentiment"] = synth_corpus(7, 2500, SynthProfile::sentiment);
  raw["lang"] = synth_corpus(8, 500, SynthProfile::tagging);
  raw["pos"] = raw["lang"];
  PrepareOptions po;
  po.encoder = enc;
  po.seed = 7;
  po.ratios = {0.8, 0.2, 0.0};
  return prepare_data(raw, po);
}

struct RunResult {
  double epochs_to_threshold;  // sentiment epochs + 1 when never reached
  double final_dev;
};

RunResult run_plan(const PreparedData& data, const std::string& plan_name, std::uint64_t seed) {
  PresetOptions o;
  o.sentiment_epochs = kSentimentEpochs;
  o.pretrain_epochs = kPretrainEpochs;
  auto m = HierModel<float>::init(dims_for(data), seed);
  const auto report = run_curriculum(m, preset(plan_name, seed, o), data.stages);
  const auto ett = epochs_to_threshold(report, kThreshold);
  return {ett ? static_cast<double>(*ett) : static_cast<double>(kSentimentEpochs + 1), report.records.back().dev_metric};
}

std::vector<RunResult> scratch_trigram;

// Curriculum ordering.
Outcome curriculum_ordering() {
  const auto t0 = Clock::now();
  const auto data = experiment_data(EncoderKind::trigram);
  const auto& sd = data.stages.at("sentiment");
  std::map<std::string, std::vector<RunResult>> res;
  for (const std::string plan : {"scratch", "lm_only", "full"}) {
    for (auto seed : kSeeds) res[plan].push_back(run_plan(data, plan, seed));
  }
  scratch_trigram = res["scratch"];
  const double secs = seconds_since(t0);
  auto col = [&](const std::string& plan, bool ett) {
    std::vector<double> v;
    for (const auto& r : res[plan]) v.push_back(ett ? r.epochs_to_threshold : r.final_dev);
    return v;
  };
  const double ett_lm = median(col("lm_only", true)), ett_scratch = median(col("scratch", true));
  const double acc_full = median(col("full", false)), acc_scratch = median(col("scratch", false));
  const bool pass = ett_lm <= ett_scratch && acc_full >= acc_scratch - 0.005 && secs < 600;
  return {pass, fmt("train %zu / dev %zu; median epochs to %.2f: lm_only %.1f %s vs scratch %.1f %s; median final dev "
                    "acc: full %.4f %s vs scratch %.4f %s; %.0f s (epochs past %zu mean never reached)",
                    sd.train.size(), sd.dev.size(), kThreshold, ett_lm, join(col("lm_only", true), "%.0f").c_str(),
                    ett_scratch, join(col("scratch", true), "%.0f").c_str(), acc_full, join(col("full", false)).c_str(),
                    acc_scratch, join(col("scratch", false)).c_str(), secs, kSentimentEpochs)};
}

// Encoding ordering.
Outcome encoding_ordering() {
  const auto t0 = Clock::now();
  if (scratch_trigram.empty()) {
    const auto data = experiment_data(EncoderKind::trigram);
    for (auto seed : kSeeds) scratch_trigram.push_back(run_plan(data, "scratch", seed));
  }
  const auto data = experiment_data(EncoderKind::unigram);
  std::vector<double> tri, uni;
  for (const auto& r : scratch_trigram) tri.push_back(r.final_dev);
  for (auto seed : kSeeds) uni.push_back(run_plan(data, "scratch", seed).final_dev);
  const double mt = median(tri), mu = median(uni);
  return {mt >= mu, fmt("median final dev acc trigram %.4f %s vs unigram %.4f %s, %.0f s", mt, join(tri).c_str(), mu,
                        join(uni).c_str(), seconds_since(t0))};
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string strip_wall_ms(const std::string& jsonl) {
  std::istringstream in(jsonl);
  std::string line, out;
  while (std::getline(in, line)) {
    auto rec = nlohmann::ordered_json::parse(line);
    rec.erase("wall_ms");
    out += rec.dump() + '\n';
  }
  return out;
}

// Bitwise determinism of two CLI runs.
Outcome determinism() {
  const auto dir = fs::temp_directory_path() / "cmcl_acceptance_det";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string bin = CMCL_BIN;
  auto sh = [](const std::string& cmd) {
    const int st = std::system((cmd + " > /dev/null 2>&1").c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  };
  const auto sent = (dir / "sent.txt").string(), tag = (dir / "tag.txt").string();
  int rc = sh(bin + " synth --seed 12 --n 300 --profile sentiment --out " + sent);
  rc |= sh(bin + " synth --seed 13 --n 100 --profile tagging --out " + tag);
  const std::string common = " --preset full --seed 9 --set pretrain_epochs=1 --set sentiment_epochs=2 --data-sentiment " +
                             sent + " --data-lang " + tag + " --data-pos " + tag;
  rc |= sh(bin + " train --out " + (dir / "a").string() + common);
  rc |= sh(bin + " train --out " + (dir / "b").string() + common);
  if (rc != 0) return {false, fmt("cmcl exited with status %d", rc)};
  const auto ca = read_file(dir / "a" / "model.ckpt"), cb = read_file(dir / "b" / "model.ckpt");
  const auto la = strip_wall_ms(read_file(dir / "a" / "metrics.jsonl"));
  const auto lb = strip_wall_ms(read_file(dir / "b" / "metrics.jsonl"));
  const bool pass = !ca.empty() && ca == cb && !la.empty() && la == lb;
  fs::remove_all(dir);
  return {pass, fmt("checkpoints %zu bytes %s; metric logs (wall_ms removed) %s", ca.size(),
                    ca == cb ? "identical" : "DIFFER", la == lb ? "identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient check suite", gradient_check},
      {"tokenizer properties", tokenizer_properties},
      {"overfit 32 samples", overfit},
      {"transfer mechanics", transfer_mechanics},
      {"curriculum ordering", curriculum_ordering},
      {"encoding ordering", encoding_ordering},
      {"determinism", determinism},
  };
  std::set<std::size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoul(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && !only.contains(i + 1)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  return failed ? 1 : 0;
}
