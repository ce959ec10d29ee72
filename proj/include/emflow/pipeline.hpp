#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "emflow/datagen.hpp"
#include "emflow/trainer.hpp"
#include "emflow/types.hpp"

namespace emflow {

// Exit-code contract shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitIo = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumeric = 3;

struct GenOptions {
  Index classes = 5;
  long train_instances = 10000;
  long test_instances = 2000;
  double noise_keep = 0.7;
  std::uint64_t seed = 1;
  std::string out_dir;
  Index vocab = 60;
  Index seq_len = 18;
  double signal_strength = 0.55;
  Index signal_tokens_per_class = 6;
  Index span_len_min = 2;
  Index span_len_max = 3;
  Index bag_size_min = 1;
  Index bag_size_max = 3;
  std::string keep_selector = "constant";
};

// Writes train.jsonl, test.jsonl, tstar.csv and meta.json (which doubles as
// the run manifest) into out_dir.
int run_gen(const GenOptions& options);

struct TrainOptions {
  std::string data_dir;
  std::string config_file;  // optional key=value file
  std::string out_dir;
  std::string resume;  // optional checkpoint to continue from
  std::map<std::string, std::string> overrides;  // highest precedence
};

// Writes checkpoint.json, train_log.jsonl and manifest.json into out_dir.
int run_train(const TrainOptions& options);

struct EvalOptions {
  std::string model_dir;
  std::string data_file;
  Index na_class = 0;
  std::string report_file;
};

// Writes the report, a PR table next to it and a manifest.
int run_eval(const EvalOptions& options);

struct ExportOptions {
  std::string model_dir;
  std::string out_file;
};

int run_export_transition(const ExportOptions& options);

// Dataset sidecar (meta.json) as written by run_gen.
struct DatasetMeta {
  Index classes = 0;
  Index vocab = 0;
  std::uint64_t seed = 0;
  double noise_keep = 0.0;
  std::string keep_selector;
  std::string t_star_file;  // relative to the meta's directory
};

DatasetMeta read_dataset_meta(const std::string& path);

}  // namespace emflow
