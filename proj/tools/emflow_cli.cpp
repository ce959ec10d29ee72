// Command-line surface: gen | train | eval | export-transition.
// Exit codes: 0 ok, 1 I/O, 2 validation, 3 numeric failure.

#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "emflow/pipeline.hpp"

namespace {

std::string default_out_dir() {
  const char* env = std::getenv("EMFLOW_OUT_DIR");
  return env != nullptr ? env : "";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"noisy-label classification with EM transition-matrix "
               "estimation and a flow-based logit transition"};
  app.require_subcommand(1);

  emflow::GenOptions gen;
  gen.out_dir = default_out_dir();
  auto* cmd_gen = app.add_subcommand("gen", "generate a synthetic corpus");
  cmd_gen->add_option("--classes", gen.classes, "class count")
      ->check(CLI::Range(static_cast<emflow::Index>(2),
                         static_cast<emflow::Index>(4096)));
  cmd_gen->add_option("--train", gen.train_instances, "training instances")
      ->check(CLI::PositiveNumber);
  cmd_gen->add_option("--test", gen.test_instances, "test instances")
      ->check(CLI::PositiveNumber);
  cmd_gen
      ->add_option("--noise-keep", gen.noise_keep,
                   "probability a label stays correct")
      ->check(CLI::Range(0.0, 1.0));
  cmd_gen->add_option("--seed", gen.seed, "rng seed");
  cmd_gen->add_option("--out", gen.out_dir, "output directory");
  cmd_gen->add_option("--vocab", gen.vocab, "base vocabulary size");
  cmd_gen->add_option("--seq-len", gen.seq_len, "token sequence length");
  cmd_gen
      ->add_option("--signal", gen.signal_strength,
                   "span signal-token probability")
      ->check(CLI::Range(0.0, 1.0));
  cmd_gen->add_option("--signal-tokens", gen.signal_tokens_per_class,
                      "signal tokens per class");
  cmd_gen->add_option("--span-min", gen.span_len_min, "minimum span length");
  cmd_gen->add_option("--span-max", gen.span_len_max, "maximum span length");
  cmd_gen->add_option("--bag-min", gen.bag_size_min, "minimum bag size");
  cmd_gen->add_option("--bag-max", gen.bag_size_max, "maximum bag size");
  cmd_gen->add_option("--keep-selector", gen.keep_selector,
                      "constant | signal-count");

  emflow::TrainOptions train;
  train.out_dir = default_out_dir();
  std::string mode;
  std::vector<std::string> sets;
  auto* cmd_train = app.add_subcommand("train", "train a model");
  cmd_train->add_option("--data", train.data_dir, "dataset directory")
      ->required();
  cmd_train->add_option("--config", train.config_file,
                        "key=value config file");
  cmd_train->add_option("--mode", mode,
                        "both | plain-xe | explicit-only | implicit-only");
  cmd_train->add_option("--out", train.out_dir, "output directory");
  cmd_train->add_option("--resume", train.resume,
                        "checkpoint to continue from");
  cmd_train->add_option("--set", sets,
                        "config override as key=value (repeatable)");

  emflow::EvalOptions eval;
  auto* cmd_eval = app.add_subcommand("eval", "evaluate a model on a dataset");
  cmd_eval->add_option("--model", eval.model_dir, "model directory")
      ->required();
  cmd_eval->add_option("--data", eval.data_file, "dataset file")->required();
  cmd_eval->add_option("--na-class", eval.na_class, "no-relation class index")
      ->required();
  cmd_eval->add_option("--report", eval.report_file, "report output file")
      ->required();

  emflow::ExportOptions exp;
  auto* cmd_export = app.add_subcommand("export-transition",
                                        "export the transition matrix as CSV");
  cmd_export->add_option("--model", exp.model_dir, "model directory")
      ->required();
  cmd_export->add_option("--out", exp.out_file, "CSV output file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << '\n';
    return emflow::kExitValidation;
  }

  if (cmd_gen->parsed()) {
    return emflow::run_gen(gen);
  }
  if (cmd_train->parsed()) {
    if (!mode.empty()) train.overrides["mode"] = mode;
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) {
        std::cerr << "--set expects key=value, got '" << kv << "'\n";
        return emflow::kExitValidation;
      }
      train.overrides[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    return emflow::run_train(train);
  }
  if (cmd_eval->parsed()) {
    return emflow::run_eval(eval);
  }
  return emflow::run_export_transition(exp);
}
