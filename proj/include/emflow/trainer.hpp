#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "emflow/adam.hpp"
#include "emflow/instance.hpp"
#include "emflow/model.hpp"
#include "emflow/rng.hpp"

namespace emflow {

enum class TrainMode { Both, PlainXe, ExplicitOnly, ImplicitOnly };

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& name);

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  long batch_size = 32;
  Index max_len = 128;
  double dropout = 0.1;
  long pretrain_epochs = 2;
  long main_epochs = 10;
  long explicit_steps_per_cycle = 100;  // J
  long implicit_steps_per_cycle = 1;
  // EM cadence in instances seen by the explicit path; 0 = once per epoch.
  long transition_update_instances = 0;
  // Minimum total posterior mass a window needs before the EM update is
  // committed; thinner windows keep accumulating. 0 = auto (K*(K-1)).
  double transition_min_mass = 0.0;
  double z_learning_rate_scale = 0.1;
  double w_prime_epsilon = 0.1;  // epsilon in the w' initialization
  double norm_target = 1.0;      // c in |w|^2 = c
  std::uint64_t seed = 1;
  TrainMode mode = TrainMode::Both;
  Index embed_dim = 32;
  Index feature_dim = 32;

  void validate() const;
  AdamConfig adam() const;
};

// Flat key=value view used by config files, run manifests and the hash.
std::map<std::string, std::string> config_to_kv(const TrainConfig& cfg);
void apply_config_kv(TrainConfig& cfg, const std::string& key,
                     const std::string& value);
TrainConfig load_train_config(const std::string& path, TrainConfig base = {});
std::uint64_t config_hash(const TrainConfig& cfg);

struct LogEntry {
  long step = 0;
  long epoch = 0;
  std::string kind;  // pretrain | explicit | implicit | em | flow_init
  double loss = 0.0;
  std::optional<double> q_before;
  std::optional<double> q_after;
  long skipped = 0;  // degenerate posteriors skipped in the EM window
};

void write_log(const std::vector<LogEntry>& log, const std::string& path);

// Everything a training run owns. Serializable as a checkpoint; restoring a
// session and continuing reproduces an uninterrupted run bit for bit.
struct TrainerSession {
  TrainConfig config;
  ModelParams params;
  OptimizerState opt;
  RngEngine rng;
  long global_step = 0;
  long pretrain_epochs_done = 0;
  long main_epochs_done = 0;
  long cycle_pos = 0;
  long instances_since_update = 0;
  SufficientStats em_stats;
  long em_skipped = 0;
  bool flow_active = false;
  std::vector<LogEntry> log;
};

TrainerSession init_session(const TrainConfig& cfg, Index classes,
                            Index vocab);

std::vector<LabeledInstance> mark_dataset(
    const std::vector<LabeledInstance>& raw, const EncoderDims& dims,
    Index max_len);

// Minimizes the implicit loss with the flow frozen at the identity, which is
// exactly plain cross entropy on the noisy labels. Consumes epochs until the
// session's pretraining budget is spent.
void pretrain_implicit(const std::vector<LabeledInstance>& marked,
                       TrainerSession& session);

// The alternating schedule: J explicit steps, an EM transition update at the
// configured cadence, then implicit steps with the flow trainable. Baseline
// modes gate the corresponding phases off.
void alternating_train(const std::vector<LabeledInstance>& marked,
                       TrainerSession& session);

// Full schedule for the session's mode on raw (unmarked) instances,
// honoring epochs already recorded in the session.
void run_training(const std::vector<LabeledInstance>& raw,
                  TrainerSession& session);

// softmax(h) in eval mode; neither the flow nor T touches prediction.
Vector predict_instance(const LabeledInstance& raw, const ModelParams& params,
                        Index max_len);

struct BagPrediction {
  Index label = 0;
  double score = 0.0;
};

// The bag rule: if every member predicts the NA class, the bag is NA with
// the strongest NA probability; otherwise the positive label with the
// largest probability among positively-predicted members wins.
BagPrediction predict_bag(const std::vector<Vector>& member_probs,
                          Index na_class);
BagPrediction predict_bag(const std::vector<LabeledInstance>& members,
                          const ModelParams& params, Index max_len,
                          Index na_class);

}  // namespace emflow
