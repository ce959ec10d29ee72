#include "emflow/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "emflow/errors.hpp"
#include "emflow/hashing.hpp"
#include "emflow/ops.hpp"

namespace emflow {

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::uint64_t hash_doubles(const double* data, Index n,
                           std::uint64_t seed = 0xcbf29ce484222325ULL) {
  return fnv1a64(
      std::string_view(reinterpret_cast<const char*>(data),
                       static_cast<std::size_t>(n) * sizeof(double)),
      seed);
}

std::uint64_t hash_flow(const FlowParams& f) {
  std::uint64_t h = hash_doubles(f.u.data(), f.u.size());
  h = hash_doubles(f.w.data(), f.w.size(), h);
  h = hash_doubles(f.w_prime.data(), f.w_prime.size(), h);
  h = hash_doubles(&f.beta, 1, h);
  return h;
}

std::uint64_t hash_transition(const TransitionMatrix& t) {
  return hash_doubles(t.matrix().data(), t.matrix().size());
}

std::vector<Index> shuffled_indices(Index n, RngEngine& eng) {
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  for (Index i = n - 1; i > 0; --i) {
    const Index j = uniform_index(eng, i + 1);
    std::swap(order[static_cast<std::size_t>(i)],
              order[static_cast<std::size_t>(j)]);
  }
  return order;
}

bool runs_explicit(TrainMode mode) {
  return mode == TrainMode::Both || mode == TrainMode::ExplicitOnly;
}

bool runs_implicit(TrainMode mode) {
  return mode == TrainMode::Both || mode == TrainMode::ImplicitOnly;
}

// Moves w' to the epsilon initialization and w onto the norm sphere from
// small random values; u and beta keep their pretraining values.
void activate_flow(TrainerSession& session) {
  auto& flow = session.params.flow;
  const Index k_count = session.params.dims.classes;
  const auto& cfg = session.config;
  flow.w_prime.setConstant(cfg.w_prime_epsilon /
                           (1.0 - static_cast<double>(k_count)));
  flow.w_prime[0] = 1.0 - cfg.w_prime_epsilon;
  Vector w0 = gaussian_vector(session.rng, k_count, 0.01);
  while (w0.norm() == 0.0) {
    w0 = gaussian_vector(session.rng, k_count, 0.01);
  }
  flow.w = project_w(w0, flow.norm_target);
  session.flow_active = true;
  LogEntry entry;
  entry.step = session.global_step;
  entry.epoch = session.main_epochs_done;
  entry.kind = "flow_init";
  session.log.push_back(entry);
}

struct StepOutcome {
  double mean_loss = 0.0;
  long used = 0;
};

StepOutcome explicit_step(const std::vector<LabeledInstance>& marked,
                          const std::vector<Index>& batch,
                          TrainerSession& session) {
  auto& cfg = session.config;
  const std::uint64_t flow_before = hash_flow(session.params.flow);
  ModelGrads grads = ModelGrads::zeros(session.params.dims);
  StepOutcome out;
  for (Index idx : batch) {
    const auto& ins = marked[static_cast<std::size_t>(idx)];
    const auto fwd = model_forward(ins, session.params, RunMode::Train,
                                   cfg.dropout, &session.rng);
    try {
      out.mean_loss += explicit_loss_backward(fwd, session.params,
                                              ins.noisy_label, grads);
      ++out.used;
    } catch (const DegeneratePosteriorError&) {
      ++session.em_skipped;
    }
  }
  if (out.used > 0) {
    grads.scale(1.0 / static_cast<double>(out.used));
    out.mean_loss /= static_cast<double>(out.used);
    try {
      adam_step(session.params, grads, session.opt, cfg.adam(),
                UpdateSet::Backbone);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at step " +
                         std::to_string(session.global_step));
    }
  }

  // Gather EM statistics from eval-mode encodings of the same batch.
  for (Index idx : batch) {
    const auto& ins = marked[static_cast<std::size_t>(idx)];
    const auto fwd =
        model_forward(ins, session.params, RunMode::Eval, 0.0, nullptr);
    try {
      session.em_stats.add(
          ins.noisy_label,
          e_step(softmax(fwd.h), sigmoid(fwd.z_logit),
                 session.params.transition, ins.noisy_label));
    } catch (const DegeneratePosteriorError&) {
      ++session.em_skipped;
    }
  }
  session.instances_since_update += static_cast<long>(batch.size());

  if (hash_flow(session.params.flow) != flow_before) {
    throw Error("trainer: explicit step modified flow parameters");
  }
  return out;
}

StepOutcome implicit_step(const std::vector<LabeledInstance>& marked,
                          const std::vector<Index>& batch,
                          TrainerSession& session) {
  auto& cfg = session.config;
  const std::uint64_t t_before = hash_transition(session.params.transition);
  const FrozenSchedule schedule = session.flow_active
                                      ? FrozenSchedule::all_trainable()
                                      : FrozenSchedule::pretraining();
  ModelGrads grads = ModelGrads::zeros(session.params.dims);
  StepOutcome out;
  for (Index idx : batch) {
    const auto& ins = marked[static_cast<std::size_t>(idx)];
    const auto fwd = model_forward(ins, session.params, RunMode::Train,
                                   cfg.dropout, &session.rng);
    out.mean_loss += implicit_loss_backward(fwd, session.params,
                                            ins.noisy_label, schedule, grads);
    ++out.used;
  }
  grads.scale(1.0 / static_cast<double>(out.used));
  out.mean_loss /= static_cast<double>(out.used);
  try {
    adam_step(session.params, grads, session.opt, cfg.adam(),
              session.flow_active ? UpdateSet::All : UpdateSet::Backbone);
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + " at step " +
                       std::to_string(session.global_step));
  }
  if (hash_transition(session.params.transition) != t_before) {
    throw Error("trainer: implicit step modified the transition matrix");
  }
  return out;
}

void em_update(TrainerSession& session) {
  if (session.em_stats.instances == 0) {
    session.instances_since_update = 0;
    return;
  }
  // A window whose posterior mass is too thin would replace T with noise;
  // keep accumulating until there is real evidence.
  const Index k_count = session.params.dims.classes;
  const double min_mass =
      session.config.transition_min_mass > 0.0
          ? session.config.transition_min_mass
          : std::max(static_cast<double>(k_count * (k_count - 1)),
                     0.01 * static_cast<double>(session.em_stats.instances));
  if (session.em_stats.s.sum() < min_mass) {
    session.instances_since_update = 0;
    return;
  }
  LogEntry entry;
  entry.step = session.global_step;
  entry.epoch = session.main_epochs_done;
  entry.kind = "em";
  entry.q_before = q_value(session.em_stats, session.params.transition);
  const auto next = m_step(session.em_stats, session.params.transition);
  entry.q_after = q_value(session.em_stats, next);
  entry.skipped = session.em_skipped;
  session.params.transition = next;
  session.log.push_back(entry);
  session.em_stats = SufficientStats::zeros(session.params.dims.classes);
  session.em_skipped = 0;
  session.instances_since_update = 0;
}

void log_step(TrainerSession& session, const char* kind, long epoch,
              const StepOutcome& outcome) {
  LogEntry entry;
  entry.step = session.global_step;
  entry.epoch = epoch;
  entry.kind = kind;
  entry.loss = outcome.mean_loss;
  session.log.push_back(entry);
}

std::vector<std::vector<Index>> batches_of(const std::vector<Index>& order,
                                           long batch_size) {
  std::vector<std::vector<Index>> out;
  for (std::size_t at = 0; at < order.size();
       at += static_cast<std::size_t>(batch_size)) {
    const auto end =
        std::min(order.size(), at + static_cast<std::size_t>(batch_size));
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

}  // namespace

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::Both:
      return "both";
    case TrainMode::PlainXe:
      return "plain-xe";
    case TrainMode::ExplicitOnly:
      return "explicit-only";
    case TrainMode::ImplicitOnly:
      return "implicit-only";
  }
  throw ArgumentError("to_string: unknown train mode");
}

TrainMode train_mode_from_string(const std::string& name) {
  if (name == "both") return TrainMode::Both;
  if (name == "plain-xe") return TrainMode::PlainXe;
  if (name == "explicit-only") return TrainMode::ExplicitOnly;
  if (name == "implicit-only") return TrainMode::ImplicitOnly;
  throw ArgumentError("unknown train mode '" + name + "'");
}

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw ArgumentError("config: learning_rate <= 0");
  if (weight_decay < 0.0) throw ArgumentError("config: weight_decay < 0");
  if (batch_size < 1) throw ArgumentError("config: batch_size < 1");
  if (max_len < 4) throw ArgumentError("config: max_len < 4");
  if (dropout < 0.0 || dropout >= 1.0) {
    throw ArgumentError("config: dropout outside [0, 1)");
  }
  if (pretrain_epochs < 0) throw ArgumentError("config: pretrain_epochs < 0");
  if (main_epochs < 0) throw ArgumentError("config: main_epochs < 0");
  if (explicit_steps_per_cycle < 1) {
    throw ArgumentError("config: explicit_steps_per_cycle < 1");
  }
  if (implicit_steps_per_cycle < 1) {
    throw ArgumentError("config: implicit_steps_per_cycle < 1");
  }
  if (transition_update_instances < 0) {
    throw ArgumentError("config: transition_update_instances < 0");
  }
  if (transition_min_mass < 0.0) {
    throw ArgumentError("config: transition_min_mass < 0");
  }
  if (z_learning_rate_scale <= 0.0) {
    throw ArgumentError("config: z_learning_rate_scale <= 0");
  }
  if (w_prime_epsilon <= 0.0 || w_prime_epsilon >= 1.0) {
    throw ArgumentError("config: w_prime_epsilon outside (0, 1)");
  }
  if (norm_target <= 0.0) throw ArgumentError("config: norm_target <= 0");
  if (embed_dim < 1 || feature_dim < 1) {
    throw ArgumentError("config: dimensions must be positive");
  }
}

AdamConfig TrainConfig::adam() const {
  AdamConfig a;
  a.learning_rate = learning_rate;
  a.weight_decay = weight_decay;
  a.z_scale = z_learning_rate_scale;
  return a;
}

std::map<std::string, std::string> config_to_kv(const TrainConfig& cfg) {
  std::map<std::string, std::string> kv;
  kv["learning_rate"] = format_double(cfg.learning_rate);
  kv["weight_decay"] = format_double(cfg.weight_decay);
  kv["batch_size"] = std::to_string(cfg.batch_size);
  kv["max_len"] = std::to_string(cfg.max_len);
  kv["dropout"] = format_double(cfg.dropout);
  kv["pretrain_epochs"] = std::to_string(cfg.pretrain_epochs);
  kv["main_epochs"] = std::to_string(cfg.main_epochs);
  kv["explicit_steps_per_cycle"] = std::to_string(cfg.explicit_steps_per_cycle);
  kv["implicit_steps_per_cycle"] = std::to_string(cfg.implicit_steps_per_cycle);
  kv["transition_update_instances"] =
      std::to_string(cfg.transition_update_instances);
  kv["transition_min_mass"] = format_double(cfg.transition_min_mass);
  kv["z_learning_rate_scale"] = format_double(cfg.z_learning_rate_scale);
  kv["w_prime_epsilon"] = format_double(cfg.w_prime_epsilon);
  kv["norm_target"] = format_double(cfg.norm_target);
  kv["seed"] = std::to_string(cfg.seed);
  kv["mode"] = to_string(cfg.mode);
  kv["embed_dim"] = std::to_string(cfg.embed_dim);
  kv["feature_dim"] = std::to_string(cfg.feature_dim);
  return kv;
}

void apply_config_kv(TrainConfig& cfg, const std::string& key,
                     const std::string& value) {
  try {
    if (key == "learning_rate") {
      cfg.learning_rate = std::stod(value);
    } else if (key == "weight_decay") {
      cfg.weight_decay = std::stod(value);
    } else if (key == "batch_size") {
      cfg.batch_size = std::stol(value);
    } else if (key == "max_len") {
      cfg.max_len = std::stol(value);
    } else if (key == "dropout") {
      cfg.dropout = std::stod(value);
    } else if (key == "pretrain_epochs") {
      cfg.pretrain_epochs = std::stol(value);
    } else if (key == "main_epochs") {
      cfg.main_epochs = std::stol(value);
    } else if (key == "explicit_steps_per_cycle") {
      cfg.explicit_steps_per_cycle = std::stol(value);
    } else if (key == "implicit_steps_per_cycle") {
      cfg.implicit_steps_per_cycle = std::stol(value);
    } else if (key == "transition_update_instances") {
      cfg.transition_update_instances = std::stol(value);
    } else if (key == "transition_min_mass") {
      cfg.transition_min_mass = std::stod(value);
    } else if (key == "z_learning_rate_scale") {
      cfg.z_learning_rate_scale = std::stod(value);
    } else if (key == "w_prime_epsilon") {
      cfg.w_prime_epsilon = std::stod(value);
    } else if (key == "norm_target") {
      cfg.norm_target = std::stod(value);
    } else if (key == "seed") {
      cfg.seed = std::stoull(value);
    } else if (key == "mode") {
      cfg.mode = train_mode_from_string(value);
    } else if (key == "embed_dim") {
      cfg.embed_dim = std::stol(value);
    } else if (key == "feature_dim") {
      cfg.feature_dim = std::stol(value);
    } else {
      throw ArgumentError("config: unknown key '" + key + "'");
    }
  } catch (const std::invalid_argument&) {
    throw ArgumentError("config: bad value '" + value + "' for key '" + key +
                        "'");
  } catch (const std::out_of_range&) {
    throw ArgumentError("config: value out of range for key '" + key + "'");
  }
}

TrainConfig load_train_config(const std::string& path, TrainConfig base) {
  std::ifstream is(path);
  if (!is) {
    throw IoError("load_train_config: cannot open " + path);
  }
  std::string line;
  long line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto strip = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    if (strip(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError("config " + path + ":" + std::to_string(line_no) +
                       ": expected key = value");
    }
    apply_config_kv(base, strip(line.substr(0, eq)),
                    strip(line.substr(eq + 1)));
  }
  return base;
}

std::uint64_t config_hash(const TrainConfig& cfg) {
  std::string blob;
  for (const auto& [k, v] : config_to_kv(cfg)) {
    blob += k;
    blob += '=';
    blob += v;
    blob += '\n';
  }
  return fnv1a64(blob);
}

void write_log(const std::vector<LogEntry>& log, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw IoError("write_log: cannot open " + path);
  }
  for (const auto& entry : log) {
    nlohmann::json j;
    j["step"] = entry.step;
    j["epoch"] = entry.epoch;
    j["kind"] = entry.kind;
    j["loss"] = entry.loss;
    if (entry.q_before) j["q_before"] = *entry.q_before;
    if (entry.q_after) j["q_after"] = *entry.q_after;
    if (entry.skipped > 0) j["skipped"] = entry.skipped;
    os << j.dump() << '\n';
  }
}

TrainerSession init_session(const TrainConfig& cfg, Index classes,
                            Index vocab) {
  cfg.validate();
  if (classes < 2) throw ArgumentError("init_session: classes < 2");
  if (vocab < 1) throw ArgumentError("init_session: vocab < 1");
  ModelDims dims;
  dims.classes = classes;
  dims.enc.vocab = vocab;
  dims.enc.embed_dim = cfg.embed_dim;
  dims.enc.feature_dim = cfg.feature_dim;

  RngEngine init_eng = make_engine(cfg.seed, 0);
  TrainerSession session{cfg,
                         init_model(dims, init_eng, cfg.norm_target),
                         OptimizerState(),
                         make_engine(cfg.seed, 1),
                         0,
                         0,
                         0,
                         0,
                         0,
                         SufficientStats::zeros(classes),
                         0,
                         false,
                         {}};
  session.opt = OptimizerState::zeros(session.params);
  return session;
}

std::vector<LabeledInstance> mark_dataset(
    const std::vector<LabeledInstance>& raw, const EncoderDims& dims,
    Index max_len) {
  std::vector<LabeledInstance> out;
  out.reserve(raw.size());
  for (const auto& ins : raw) {
    out.push_back(mark_entities(ins, dims, max_len));
  }
  return out;
}

void pretrain_implicit(const std::vector<LabeledInstance>& marked,
                       TrainerSession& session) {
  const auto& cfg = session.config;
  const long budget = cfg.mode == TrainMode::PlainXe
                          ? cfg.pretrain_epochs + cfg.main_epochs
                          : cfg.pretrain_epochs;
  while (session.pretrain_epochs_done < budget) {
    const auto order =
        shuffled_indices(static_cast<Index>(marked.size()), session.rng);
    for (const auto& batch : batches_of(order, cfg.batch_size)) {
      const auto outcome = implicit_step(marked, batch, session);
      log_step(session, "pretrain", session.pretrain_epochs_done, outcome);
      ++session.global_step;
    }
    ++session.pretrain_epochs_done;
  }
}

void alternating_train(const std::vector<LabeledInstance>& marked,
                       TrainerSession& session) {
  const auto& cfg = session.config;
  if (cfg.mode == TrainMode::PlainXe) {
    return;  // the entire transition machinery is bypassed
  }
  const bool do_explicit = runs_explicit(cfg.mode);
  const bool do_implicit = runs_implicit(cfg.mode);
  if (do_implicit && !session.flow_active) {
    activate_flow(session);
  }
  const long cycle =
      cfg.explicit_steps_per_cycle + cfg.implicit_steps_per_cycle;

  while (session.main_epochs_done < cfg.main_epochs) {
    const auto order =
        shuffled_indices(static_cast<Index>(marked.size()), session.rng);
    for (const auto& batch : batches_of(order, cfg.batch_size)) {
      bool explicit_turn = do_explicit;
      if (do_explicit && do_implicit) {
        explicit_turn =
            session.cycle_pos % cycle < cfg.explicit_steps_per_cycle;
      }
      if (explicit_turn) {
        const auto outcome = explicit_step(marked, batch, session);
        log_step(session, "explicit", session.main_epochs_done, outcome);
      } else {
        const auto outcome = implicit_step(marked, batch, session);
        log_step(session, "implicit", session.main_epochs_done, outcome);
      }
      ++session.cycle_pos;
      ++session.global_step;
      if (do_explicit && cfg.transition_update_instances > 0 &&
          session.instances_since_update >=
              cfg.transition_update_instances) {
        em_update(session);
      }
    }
    ++session.main_epochs_done;
    if (do_explicit && cfg.transition_update_instances == 0) {
      em_update(session);
    }
  }
}

void run_training(const std::vector<LabeledInstance>& raw,
                  TrainerSession& session) {
  const auto marked = mark_dataset(raw, session.params.dims.enc,
                                   session.config.max_len);
  pretrain_implicit(marked, session);
  alternating_train(marked, session);
}

Vector predict_instance(const LabeledInstance& raw, const ModelParams& params,
                        Index max_len) {
  const auto marked = mark_entities(raw, params.dims.enc, max_len);
  const auto fwd = model_forward(marked, params, RunMode::Eval, 0.0, nullptr);
  return softmax(fwd.h);
}

BagPrediction predict_bag(const std::vector<Vector>& member_probs,
                          Index na_class) {
  if (member_probs.empty()) {
    throw ArgumentError("predict_bag: empty bag");
  }
  const Index k_count = member_probs.front().size();
  if (na_class < 0 || na_class >= k_count) {
    throw ArgumentError("predict_bag: na_class out of range");
  }

  double best_na = 0.0;
  bool any_positive = false;
  Vector positive_max = Vector::Constant(k_count, -1.0);
  for (const auto& probs : member_probs) {
    if (probs.size() != k_count) {
      throw ShapeError("predict_bag: inconsistent class counts");
    }
    Index argmax = 0;
    probs.maxCoeff(&argmax);
    if (argmax == na_class) {
      best_na = std::max(best_na, probs[na_class]);
      continue;
    }
    any_positive = true;
    for (Index r = 0; r < k_count; ++r) {
      if (r == na_class) continue;
      positive_max[r] = std::max(positive_max[r], probs[r]);
    }
  }
  if (!any_positive) {
    return {na_class, best_na};
  }
  Index best = na_class == 0 ? 1 : 0;
  for (Index r = 0; r < k_count; ++r) {
    if (r == na_class) continue;
    if (positive_max[r] > positive_max[best]) best = r;
  }
  return {best, positive_max[best]};
}

BagPrediction predict_bag(const std::vector<LabeledInstance>& members,
                          const ModelParams& params, Index max_len,
                          Index na_class) {
  if (members.empty()) {
    throw ArgumentError("predict_bag: empty bag");
  }
  std::vector<Vector> probs;
  probs.reserve(members.size());
  for (const auto& ins : members) {
    probs.push_back(predict_instance(ins, params, max_len));
  }
  return predict_bag(probs, na_class);
}

}  // namespace emflow
