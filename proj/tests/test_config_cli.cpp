#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

#include "cmcl/config.hpp"

using namespace cmcl;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

int run(const std::string& args, const fs::path& stdout_to = {}) {
  std::string cmd = std::string(CMCL_BIN) + " " + args;
  cmd += stdout_to.empty() ? " > /dev/null" : " > '" + stdout_to.string() + "'";
  cmd += " 2> /dev/null";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::vector<json> read_jsonl(const fs::path& p) {
  std::vector<json> out;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(json::parse(line));
  }
  return out;
}

std::size_t count_event(const std::vector<json>& recs, const std::string& event) {
  std::size_t n = 0;
  for (const auto& r : recs) n += r.value("event", "") == event;
  return n;
}

class CliSmoke : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "cmcl_cli_test";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    ASSERT_EQ(run("synth --seed 3 --n 160 --profile sentiment --out " + path("sent.txt")), 0);
    ASSERT_EQ(run("synth --seed 4 --n 60 --profile tagging --out " + path("tag.txt")), 0);
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static std::string path(const std::string& name) { return (dir_ / name).string(); }

  static std::string small(const std::string& out) {
    return " --out " + path(out) + " --set emb_dim=8 --set hidden=8 --set min_freq=1 --set pretrain_epochs=1" +
           " --set sentiment_epochs=3 --data-sentiment " + path("sent.txt") + " --data-lang " + path("tag.txt") +
           " --data-pos " + path("tag.txt");
  }

  static inline fs::path dir_;
};

}  // namespace

TEST(Config, DefaultHyperparameters) {
  const RunConfig c;
  EXPECT_EQ(c.emb_dim, 64u);
  EXPECT_EQ(c.hidden, 64u);
  EXPECT_EQ(c.dropout, 0.2);
  EXPECT_EQ(c.base_lr, 0.04);
  EXPECT_EQ(c.batch_size, 4u);
  EXPECT_EQ(c.clip_norm, 5.0);
  EXPECT_EQ(c.encoder, EncoderKind::trigram);
  EXPECT_EQ(c.preset, "full");
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, FileThenOverridesTakePrecedence) {
  const auto p = (fs::temp_directory_path() / "cmcl_cfg_test.txt").string();
  write_file(p, "# comment\n\nhidden = 32\nbase_lr = 0.1\nencoder = bpe\n");
  const auto c = resolve_config(p, {{"base_lr", "0.2"}});
  EXPECT_EQ(c.hidden, 32u);
  EXPECT_EQ(c.base_lr, 0.2);
  EXPECT_EQ(c.encoder, EncoderKind::bpe);
  EXPECT_EQ(c.emb_dim, 64u);
  fs::remove(p);
}

TEST(Config, TextRenderingRoundTrips) {
  RunConfig c;
  c.set("stages", "lm:2,sentiment:3:disc");
  c.set("dropout", "0.35");
  c.set("joint_tagging", "yes");
  RunConfig d;
  for (const auto& [k, v] : parse_config_text(c.to_text())) d.set(k, v);
  EXPECT_EQ(d.to_text(), c.to_text());
  EXPECT_EQ(d.plan().stages.size(), 2u);
}

TEST(Config, RejectsBadInput) {
  RunConfig c;
  EXPECT_THROW(c.set("learning_rate", "0.1"), ConfigError);
  EXPECT_THROW(c.set("hidden", "-3"), ConfigError);
  EXPECT_THROW(c.set("hidden", "12x"), ConfigError);
  EXPECT_THROW(c.set("dropout", "abc"), ConfigError);
  EXPECT_THROW(c.set("encoder", "chars"), ConfigError);
  EXPECT_THROW(c.set("rebalance", "maybe"), ConfigError);
  EXPECT_THROW(parse_config_text("hidden 3\n"), ConfigError);
  EXPECT_THROW(parse_config_text(" = 3\n"), ConfigError);
  EXPECT_THROW(resolve_config("/nonexistent/cfg.txt", {}), ConfigError);
  for (const auto& [k, v] : std::vector<std::pair<std::string, std::string>>{
           {"dropout", "1"}, {"base_lr", "0"}, {"batch_size", "0"}, {"threshold", "1.5"}, {"preset", "nope"}}) {
    RunConfig bad;
    bad.set(k, v);
    EXPECT_THROW(bad.validate(), ConfigError) << k;
  }
  RunConfig no_data;
  EXPECT_THROW(no_data.check_paths(), ConfigError);
}

TEST_F(CliSmoke, SynthIsByteIdenticalPerSeed) {
  ASSERT_EQ(run("synth --seed 3 --n 160 --profile sentiment --out " + path("again.txt")), 0);
  EXPECT_EQ(read_file(path("again.txt")), read_file(path("sent.txt")));
  ASSERT_EQ(run("synth --seed 5 --n 160 --profile sentiment --out " + path("other.txt")), 0);
  EXPECT_NE(read_file(path("other.txt")), read_file(path("sent.txt")));
  EXPECT_EQ(run("synth --profile poetry --out " + path("x.txt")), 2);
}

TEST_F(CliSmoke, BuildVocabIsDeterministic) {
  ASSERT_EQ(run("build-vocab" + small("v1")), 0);
  ASSERT_EQ(run("build-vocab" + small("v2")), 0);
  EXPECT_EQ(read_file(path("v1/vocab.tsv")), read_file(path("v2/vocab.tsv")));
  EXPECT_EQ(read_file(path("v1/tags_pos.txt")), read_file(path("v2/tags_pos.txt")));
}

TEST_F(CliSmoke, ScratchTrainLogsOneRecordPerEpoch) {
  ASSERT_EQ(run("train --preset scratch" + small("scratch")), 0);
  const auto recs = read_jsonl(path("scratch/metrics.jsonl"));
  EXPECT_EQ(count_event(recs, "epoch"), 3u);
  EXPECT_EQ(count_event(recs, "stage_start"), 1u);
  for (const auto& r : recs) {
    if (r["event"] != "epoch") continue;
    for (const char* k : {"stage", "epoch", "task", "train_loss", "dev_metric", "dev_loss", "lr_ladder", "unfrozen_groups"}) {
      EXPECT_TRUE(r.contains(k)) << k;
    }
  }
  EXPECT_TRUE(fs::exists(path("scratch/model.ckpt")));
  const auto summary = json::parse(read_file(path("scratch/summary.json")));
  EXPECT_EQ(summary["plan"], "scratch");
  EXPECT_TRUE(summary.contains("epochs_to_threshold"));

  ASSERT_EQ(run("eval --checkpoint " + path("scratch/model.ckpt") + " --data " + path("sent.txt")), 0);
  EXPECT_EQ(count_event(read_jsonl(path("scratch/metrics.jsonl")), "eval"), 1u);

  ASSERT_EQ(run("predict --checkpoint " + path("scratch/model.ckpt") + " --text 'yeh movie bahut acchi thi'",
                path("pred.json")),
            0);
  const auto pred = json::parse(read_file(path("pred.json")));
  double total = 0;
  for (const auto& [k, v] : pred["probs"].items()) total += v.get<double>();
  EXPECT_NEAR(total, 1.0, 1e-5);
  EXPECT_TRUE(pred["label"] == "positive" || pred["label"] == "negative" || pred["label"] == "neutral");
}

TEST_F(CliSmoke, FullPlanRunsFourStages) {
  ASSERT_EQ(run("train --preset full" + small("full")), 0);
  const auto recs = read_jsonl(path("full/metrics.jsonl"));
  EXPECT_EQ(count_event(recs, "stage_start"), 4u);
  EXPECT_EQ(count_event(recs, "epoch"), 6u);
}

TEST_F(CliSmoke, ChangedVocabularyIsRejectedAtLoad) {
  ASSERT_EQ(run("train --preset scratch" + small("mismatch")), 0);
  ASSERT_EQ(run("synth --seed 99 --n 40 --profile sentiment --out " + path("tiny.txt")), 0);
  ASSERT_EQ(run("build-vocab --out " + path("mismatch") + " --set min_freq=1 --preset scratch --data-sentiment " +
                path("tiny.txt")),
            0);
  EXPECT_EQ(run("predict --checkpoint " + path("mismatch/model.ckpt") + " --text hello"), 2);
}

TEST_F(CliSmoke, ErrorsMapToExitCodes) {
  EXPECT_EQ(run("train --preset scratch --out " + path("e1") + " --data-sentiment /nonexistent.txt"), 2);
  EXPECT_EQ(run("train --preset scratch --out " + path("e2")), 2);
  EXPECT_EQ(run("train --set nonsense=1" + small("e3")), 2);
  EXPECT_EQ(run("train --config /nonexistent.cfg" + small("e4")), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("predict --checkpoint /nonexistent/model.ckpt --text hi"), 4);
  EXPECT_EQ(run("train --preset scratch --set base_lr=1e30" + small("div")), 3);
  EXPECT_EQ(count_event(read_jsonl(path("div/metrics.jsonl")), "divergence"), 1u);
}

TEST_F(CliSmoke, GradcheckPassesAndCatchesInjectedBug) {
  EXPECT_EQ(run("gradcheck --seeds 2"), 0);
  EXPECT_EQ(run("gradcheck --seeds 2 --inject-bug"), 1);
}
