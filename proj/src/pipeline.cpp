#include "emflow/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "emflow/checkpoint.hpp"
#include "emflow/errors.hpp"
#include "emflow/evalkit.hpp"
#include "emflow/hashing.hpp"

namespace emflow {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

void write_json_file(const json& j, const std::string& path, int indent = 2) {
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw IoError("cannot open " + path + " for writing");
  }
  os << j.dump(indent) << '\n';
  if (!os) {
    throw IoError("write failed for " + path);
  }
}

json load_json_file(const std::string& path, const char* what) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw IoError(std::string(what) + ": cannot open " + path);
  }
  try {
    json j;
    is >> j;
    return j;
  } catch (const json::exception& e) {
    throw ParseError(std::string(what) + ": malformed JSON in " + path +
                     ": " + e.what());
  }
}

int report_error(const std::exception& e, int code) {
  std::cerr << "error: " << e.what() << '\n';
  return code;
}

// Maps the library's exception taxonomy onto the exit-code contract.
template <class Fn>
int guarded(Fn&& fn) {
  try {
    fn();
    return kExitOk;
  } catch (const NumericError& e) {
    return report_error(e, kExitNumeric);
  } catch (const ArgumentError& e) {
    return report_error(e, kExitValidation);
  } catch (const IoError& e) {
    return report_error(e, kExitIo);
  } catch (const ParseError& e) {
    return report_error(e, kExitIo);
  } catch (const CheckpointError& e) {
    return report_error(e, kExitIo);
  } catch (const ShapeError& e) {
    return report_error(e, kExitIo);
  } catch (const Error& e) {
    return report_error(e, kExitValidation);
  }
}

SyntheticConfig synthetic_config_of(const GenOptions& o, long instances,
                                    std::uint64_t seed) {
  SyntheticConfig cfg;
  cfg.classes = o.classes;
  cfg.vocab = o.vocab;
  cfg.seq_len = o.seq_len;
  cfg.instances = instances;
  cfg.signal_strength = o.signal_strength;
  cfg.signal_tokens_per_class = o.signal_tokens_per_class;
  cfg.span_len_min = o.span_len_min;
  cfg.span_len_max = o.span_len_max;
  cfg.bag_size_min = o.bag_size_min;
  cfg.bag_size_max = o.bag_size_max;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

int run_gen(const GenOptions& options) {
  return guarded([&] {
    if (options.out_dir.empty()) {
      throw ArgumentError("gen: --out directory is required");
    }
    if (options.noise_keep < 0.0 || options.noise_keep > 1.0) {
      throw ArgumentError("gen: --noise-keep must lie in [0, 1]");
    }
    if (options.train_instances < 1 || options.test_instances < 1) {
      throw ArgumentError("gen: --train and --test must be >= 1");
    }
    const auto selector = keep_selector_from_string(options.keep_selector);

    fs::create_directories(options.out_dir);
    const fs::path dir(options.out_dir);

    NoiseSpec noise{random_transition_matrix(options.classes, options.seed),
                    options.noise_keep, selector};

    // Disjoint seeds keep train and test corpora independent.
    const auto train_cfg =
        synthetic_config_of(options, options.train_instances, options.seed);
    auto test_cfg = synthetic_config_of(options, options.test_instances,
                                        splitmix64(options.seed ^ 0x5eedULL));

    auto train = generate_clean(train_cfg);
    auto test = generate_clean(test_cfg);
    corrupt_labels(train, noise, train_cfg.seed, &train_cfg);
    corrupt_labels(test, noise, test_cfg.seed, &test_cfg);

    const auto train_path = (dir / "train.jsonl").string();
    const auto test_path = (dir / "test.jsonl").string();
    const auto tstar_path = (dir / "tstar.csv").string();
    write_dataset(train, train_path);
    write_dataset(test, test_path);
    write_transition_csv(noise.t_star, tstar_path);

    json meta;
    meta["kind"] = "emflow-dataset-meta";
    meta["format_version"] = 1;
    meta["subcommand"] = "gen";
    meta["classes"] = options.classes;
    meta["vocab"] = options.vocab;
    meta["seq_len"] = options.seq_len;
    meta["train_instances"] = options.train_instances;
    meta["test_instances"] = options.test_instances;
    meta["noise_keep"] = options.noise_keep;
    meta["keep_selector"] = options.keep_selector;
    meta["signal_strength"] = options.signal_strength;
    meta["signal_tokens_per_class"] = options.signal_tokens_per_class;
    meta["span_len_min"] = options.span_len_min;
    meta["span_len_max"] = options.span_len_max;
    meta["bag_size_min"] = options.bag_size_min;
    meta["bag_size_max"] = options.bag_size_max;
    meta["seed"] = options.seed;
    meta["files"] = {{"train", "train.jsonl"},
                     {"test", "test.jsonl"},
                     {"t_star", "tstar.csv"}};
    meta["hashes"] = {{"train.jsonl", hex64(fnv1a64_file(train_path))},
                      {"test.jsonl", hex64(fnv1a64_file(test_path))},
                      {"tstar.csv", hex64(fnv1a64_file(tstar_path))}};
    write_json_file(meta, (dir / "meta.json").string());
  });
}

DatasetMeta read_dataset_meta(const std::string& path) {
  const json j = load_json_file(path, "dataset meta");
  try {
    if (j.at("kind").get<std::string>() != "emflow-dataset-meta") {
      throw ParseError("dataset meta: unexpected kind in " + path);
    }
    DatasetMeta meta;
    meta.classes = j.at("classes").get<Index>();
    meta.vocab = j.at("vocab").get<Index>();
    meta.seed = j.at("seed").get<std::uint64_t>();
    meta.noise_keep = j.at("noise_keep").get<double>();
    meta.keep_selector = j.at("keep_selector").get<std::string>();
    meta.t_star_file = j.at("files").at("t_star").get<std::string>();
    return meta;
  } catch (const json::exception& e) {
    throw ParseError("dataset meta: missing field in " + path + ": " +
                     e.what());
  }
}

int run_train(const TrainOptions& options) {
  return guarded([&] {
    if (options.data_dir.empty() || options.out_dir.empty()) {
      throw ArgumentError("train: --data and --out are required");
    }
    const fs::path data_dir(options.data_dir);
    const auto meta = read_dataset_meta((data_dir / "meta.json").string());
    const auto train =
        read_dataset((data_dir / "train.jsonl").string(), meta.classes);

    TrainConfig cfg;
    if (!options.resume.empty()) {
      // Architecture and seed come from the checkpoint; only epoch budgets
      // may be extended by file or flags.
      cfg = load_checkpoint(options.resume, meta.classes).config;
    }
    if (!options.config_file.empty()) {
      cfg = load_train_config(options.config_file, cfg);
    }
    for (const auto& [key, value] : options.overrides) {
      apply_config_kv(cfg, key, value);
    }
    cfg.validate();

    TrainerSession session =
        options.resume.empty()
            ? init_session(cfg, meta.classes, meta.vocab)
            : load_checkpoint(options.resume, meta.classes);
    if (!options.resume.empty()) {
      auto resumed_kv = config_to_kv(session.config);
      auto requested_kv = config_to_kv(cfg);
      for (const auto* key : {"pretrain_epochs", "main_epochs"}) {
        resumed_kv.erase(key);
        requested_kv.erase(key);
      }
      if (resumed_kv != requested_kv) {
        throw ArgumentError(
            "train: resume config differs from the checkpoint in more than "
            "the epoch budgets");
      }
      session.config = cfg;
    }

    run_training(train, session);

    fs::create_directories(options.out_dir);
    const fs::path out_dir(options.out_dir);
    const auto ckpt_path = (out_dir / "checkpoint.json").string();
    const auto log_path = (out_dir / "train_log.jsonl").string();
    save_checkpoint(session, ckpt_path);
    write_log(session.log, log_path);

    json manifest;
    manifest["kind"] = "emflow-run-manifest";
    manifest["subcommand"] = "train";
    manifest["config"] = config_to_kv(session.config);
    manifest["config_hash"] = hex64(config_hash(session.config));
    manifest["seed"] = session.config.seed;
    manifest["inputs"] = {
        {"data_dir", options.data_dir},
        {"train.jsonl",
         hex64(fnv1a64_file((data_dir / "train.jsonl").string()))}};
    if (!options.resume.empty()) {
      manifest["inputs"]["resume"] = options.resume;
    }
    manifest["outputs"] = {{"checkpoint.json", hex64(fnv1a64_file(ckpt_path))},
                           {"train_log.jsonl", hex64(fnv1a64_file(log_path))}};
    write_json_file(manifest, (out_dir / "manifest.json").string());
  });
}

int run_eval(const EvalOptions& options) {
  return guarded([&] {
    if (options.model_dir.empty() || options.data_file.empty() ||
        options.report_file.empty()) {
      throw ArgumentError("eval: --model, --data and --report are required");
    }
    const fs::path model_dir(options.model_dir);
    const auto ckpt_path = (model_dir / "checkpoint.json").string();
    TrainerSession session = load_checkpoint(ckpt_path);
    const Index classes = session.params.dims.classes;

    // The sidecar, when present, pins the data's class count and T*.
    const fs::path data_path(options.data_file);
    const fs::path meta_path = data_path.parent_path() / "meta.json";
    std::optional<DatasetMeta> meta;
    if (fs::exists(meta_path)) {
      meta = read_dataset_meta(meta_path.string());
      if (meta->classes != classes) {
        throw ShapeError("eval: model has " + std::to_string(classes) +
                         " classes but the dataset has " +
                         std::to_string(meta->classes));
      }
    }
    const auto instances = read_dataset(options.data_file, classes);
    if (options.na_class < 0 || options.na_class >= classes) {
      throw ArgumentError("eval: --na-class outside the class range");
    }

    EvalReport report = evaluate_dataset(instances, session.params,
                                         session.config.max_len,
                                         options.na_class);
    if (meta.has_value()) {
      const fs::path tstar = data_path.parent_path() / meta->t_star_file;
      if (fs::exists(tstar)) {
        report.transition = transition_error(
            session.params.transition, read_transition_csv(tstar.string()));
      }
    }

    write_report_json(report, options.report_file);
    write_pr_table(report, options.report_file + ".pr.txt");

    json manifest;
    manifest["kind"] = "emflow-run-manifest";
    manifest["subcommand"] = "eval";
    manifest["na_class"] = options.na_class;
    manifest["inputs"] = {
        {"checkpoint.json", hex64(fnv1a64_file(ckpt_path))},
        {"data", hex64(fnv1a64_file(options.data_file))}};
    manifest["outputs"] = {
        {"report", hex64(fnv1a64_file(options.report_file))},
        {"pr_table", hex64(fnv1a64_file(options.report_file + ".pr.txt"))}};
    write_json_file(manifest, options.report_file + ".manifest.json");
  });
}

int run_export_transition(const ExportOptions& options) {
  return guarded([&] {
    if (options.model_dir.empty() || options.out_file.empty()) {
      throw ArgumentError("export-transition: --model and --out are required");
    }
    const fs::path model_dir(options.model_dir);
    const auto ckpt_path = (model_dir / "checkpoint.json").string();
    if (!fs::exists(ckpt_path)) {
      throw IoError("export-transition: no checkpoint at " + ckpt_path);
    }
    const TrainerSession session = load_checkpoint(ckpt_path);
    write_transition_csv(session.params.transition, options.out_file);

    json manifest;
    manifest["kind"] = "emflow-run-manifest";
    manifest["subcommand"] = "export-transition";
    manifest["inputs"] = {{"checkpoint.json", hex64(fnv1a64_file(ckpt_path))}};
    manifest["outputs"] = {
        {"transition", hex64(fnv1a64_file(options.out_file))}};
    write_json_file(manifest, options.out_file + ".manifest.json");
  });
}

}  // namespace emflow
