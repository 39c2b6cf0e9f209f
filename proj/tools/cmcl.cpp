#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cmcl/cli.hpp"

namespace {

using cmcl::cli::ExitCode;

struct CommonFlags {
  std::string config;
  std::vector<std::string> sets;
  std::vector<std::pair<std::string, std::string>> flagged;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config, "key = value config file");
    cmd->add_option("--set", sets, "override any config key (key=value), repeatable");
    for (const auto& [flag, key] : std::vector<std::pair<std::string, std::string>>{
             {"--seed", "seed"},
             {"--out", "out"},
             {"--preset", "preset"},
             {"--stages", "stages"},
             {"--encoder", "encoder"},
             {"--data-lang", "data_lang"},
             {"--data-pos", "data_pos"},
             {"--data-lm", "data_lm"},
             {"--data-sentiment", "data_sentiment"}}) {
      cmd->add_option_function<std::string>(
          flag, [this, key = key](const std::string& v) { flagged.emplace_back(key, v); }, "sets '" + key + "'");
    }
  }

  cmcl::RunConfig resolve() const {
    std::vector<std::pair<std::string, std::string>> overrides;
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw cmcl::ConfigError("--set expects key=value, got '" + s + "'");
      overrides.emplace_back(cmcl::detail::trim(s.substr(0, eq)), cmcl::detail::trim(s.substr(eq + 1)));
    }
    overrides.insert(overrides.end(), flagged.begin(), flagged.end());
    return cmcl::resolve_config(config, overrides);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Curriculum training for code-mixed sentiment analysis"};
  app.require_subcommand(1);

  CommonFlags vocab_flags, train_flags;
  auto* build_vocab = app.add_subcommand("build-vocab", "build the vocabulary and tagsets into --out");
  vocab_flags.add_to(build_vocab);
  auto* train = app.add_subcommand("train", "run a curriculum plan");
  train_flags.add_to(train);

  std::uint64_t synth_seed = 0;
  std::size_t synth_n = 1000;
  std::string synth_profile = "sentiment";
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "write a seeded synthetic corpus");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--n", synth_n, "number of sentences");
  synth->add_option("--profile", synth_profile, "tagging | sentiment");
  synth->add_option("--out", synth_out, "output file")->required();

  std::string ckpt = "run/model.ckpt";
  std::string eval_data, eval_task = "sentiment", eval_log;
  auto* eval = app.add_subcommand("eval", "score a checkpoint on a corpus");
  eval->add_option("--checkpoint", ckpt, "checkpoint path (context files are read from its directory)");
  eval->add_option("--data", eval_data, "corpus file")->required();
  eval->add_option("--task", eval_task, "lang | pos | pos_lang | lm | sentiment");
  eval->add_option("--log", eval_log, "metrics log to append to");

  std::string text;
  auto* predict = app.add_subcommand("predict", "classify one text");
  predict->add_option("--checkpoint", ckpt, "checkpoint path");
  predict->add_option("--text", text, "input text")->required();

  cmcl::gradcheck::SuiteOptions gc;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
  gradcheck->add_option("--seeds", gc.seeds, "random shapes per op");
  gradcheck->add_flag("--inject-bug", gc.inject_bug, "perturb one analytic gradient (negative control)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? ExitCode::kOk : ExitCode::kConfigError;
  }

  try {
    if (*build_vocab) {
      cmcl::cli::cmd_build_vocab(vocab_flags.resolve(), std::cout);
    } else if (*train) {
      cmcl::cli::cmd_train(train_flags.resolve(), std::cout);
    } else if (*synth) {
      cmcl::cli::cmd_synth(synth_seed, synth_n, cmcl::parse_synth_profile(synth_profile), synth_out, std::cout);
    } else if (*eval) {
      cmcl::cli::cmd_eval(ckpt, eval_data, eval_task, eval_log, std::cout);
    } else if (*predict) {
      cmcl::cli::cmd_predict(ckpt, text, std::cout);
    } else if (*gradcheck) {
      return cmcl::cli::cmd_gradcheck(gc, std::cout) ? ExitCode::kOk : ExitCode::kFailed;
    }
  } catch (const cmcl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return ExitCode::kConfigError;
  } catch (const cmcl::DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return ExitCode::kDiverged;
  } catch (const cmcl::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return ExitCode::kIoError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return ExitCode::kFailed;
  }
  return ExitCode::kOk;
}
