#include "emflow/checkpoint.hpp"

#include <fstream>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "emflow/errors.hpp"
#include "emflow/hashing.hpp"

namespace emflow {

namespace {

using nlohmann::json;

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& j, Index rows, Index cols,
                        const char* what) {
  if (!j.is_array() || static_cast<Index>(j.size()) != rows) {
    throw CheckpointError(std::string("checkpoint: bad shape for ") + what);
  }
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Index>(row.size()) != cols) {
      throw CheckpointError(std::string("checkpoint: bad shape for ") + what);
    }
    for (Index c = 0; c < cols; ++c) {
      m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
  }
  return m;
}

std::vector<double> vector_to_std(const Vector& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

}  // namespace

void save_checkpoint(const TrainerSession& session, const std::string& path) {
  json j;
  j["kind"] = "emflow-checkpoint";
  j["format_version"] = kCheckpointFormatVersion;
  j["config"] = config_to_kv(session.config);
  j["config_hash"] = hex64(config_hash(session.config));
  j["seed"] = session.config.seed;

  const auto& dims = session.params.dims;
  j["dims"] = {{"classes", dims.classes},
               {"vocab", dims.enc.vocab},
               {"embed_dim", dims.enc.embed_dim},
               {"feature_dim", dims.enc.feature_dim}};

  json blocks;
  visit_blocks(session.params, [&blocks](const std::string& name,
                                         const auto& block) {
    using T = std::decay_t<decltype(block)>;
    if constexpr (std::is_same_v<T, double>) {
      blocks[name] = std::vector<double>{block};
    } else {
      blocks[name] = std::vector<double>(block.data(),
                                         block.data() + block.size());
    }
  });
  j["params"] = std::move(blocks);
  j["transition"] = matrix_to_json(session.params.transition.matrix());
  j["flow_norm_target"] = session.params.flow.norm_target;

  j["optimizer"] = {{"m", vector_to_std(session.opt.m)},
                    {"v", vector_to_std(session.opt.v)},
                    {"block_steps", session.opt.block_steps}};

  std::ostringstream rng_state;
  rng_state << session.rng;
  j["session"] = {{"rng_state", rng_state.str()},
                  {"global_step", session.global_step},
                  {"pretrain_epochs_done", session.pretrain_epochs_done},
                  {"main_epochs_done", session.main_epochs_done},
                  {"cycle_pos", session.cycle_pos},
                  {"instances_since_update", session.instances_since_update},
                  {"em_skipped", session.em_skipped},
                  {"flow_active", session.flow_active},
                  {"em_stats", matrix_to_json(session.em_stats.s)},
                  {"em_instances", session.em_stats.instances}};

  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw IoError("save_checkpoint: cannot open " + path);
  }
  os << j.dump() << '\n';
  if (!os) {
    throw IoError("save_checkpoint: write failed for " + path);
  }
}

TrainerSession load_checkpoint(const std::string& path,
                               Index expected_classes) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw CheckpointError("load_checkpoint: cannot open " + path);
  }
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw CheckpointError("load_checkpoint: corrupt file " + path + ": " +
                          e.what());
  }
  try {
    if (j.at("kind").get<std::string>() != "emflow-checkpoint") {
      throw CheckpointError("load_checkpoint: not a checkpoint: " + path);
    }
    if (j.at("format_version").get<int>() != kCheckpointFormatVersion) {
      throw CheckpointError("load_checkpoint: unsupported format version in " +
                            path);
    }

    TrainConfig cfg;
    for (const auto& [key, value] :
         j.at("config").get<std::map<std::string, std::string>>()) {
      apply_config_kv(cfg, key, value);
    }
    if (j.at("config_hash").get<std::string>() != hex64(config_hash(cfg))) {
      throw CheckpointError("load_checkpoint: config hash mismatch in " +
                            path);
    }

    const auto& dims_j = j.at("dims");
    const Index classes = dims_j.at("classes").get<Index>();
    const Index vocab = dims_j.at("vocab").get<Index>();
    if (expected_classes >= 0 && classes != expected_classes) {
      throw ShapeError("load_checkpoint: checkpoint has " +
                       std::to_string(classes) + " classes, expected " +
                       std::to_string(expected_classes));
    }
    if (dims_j.at("embed_dim").get<Index>() != cfg.embed_dim ||
        dims_j.at("feature_dim").get<Index>() != cfg.feature_dim) {
      throw CheckpointError("load_checkpoint: dims disagree with config in " +
                            path);
    }

    TrainerSession session = init_session(cfg, classes, vocab);
    session.params.flow.norm_target = j.at("flow_norm_target").get<double>();

    const auto& blocks = j.at("params");
    visit_blocks(session.params, [&blocks](const std::string& name,
                                           auto& block) {
      const auto values = blocks.at(name).get<std::vector<double>>();
      using T = std::decay_t<decltype(block)>;
      if constexpr (std::is_same_v<T, double>) {
        if (values.size() != 1) {
          throw CheckpointError("checkpoint: bad size for block " + name);
        }
        block = values[0];
      } else {
        if (static_cast<Index>(values.size()) != block.size()) {
          throw CheckpointError("checkpoint: bad size for block " + name);
        }
        std::copy(values.begin(), values.end(), block.data());
      }
    });
    session.params.transition = TransitionMatrix::from_matrix(
        matrix_from_json(j.at("transition"), classes, classes, "transition"));

    const auto& opt = j.at("optimizer");
    const auto m = opt.at("m").get<std::vector<double>>();
    const auto v = opt.at("v").get<std::vector<double>>();
    if (static_cast<Index>(m.size()) != session.opt.m.size() ||
        static_cast<Index>(v.size()) != session.opt.v.size()) {
      throw CheckpointError("checkpoint: optimizer state size mismatch");
    }
    std::copy(m.begin(), m.end(), session.opt.m.data());
    std::copy(v.begin(), v.end(), session.opt.v.data());
    session.opt.block_steps = opt.at("block_steps").get<std::vector<long>>();
    if (session.opt.block_steps.size() != layout_of(session.params).size()) {
      throw CheckpointError("checkpoint: block step count mismatch");
    }

    const auto& ses = j.at("session");
    std::istringstream rng_state(ses.at("rng_state").get<std::string>());
    rng_state >> session.rng;
    if (rng_state.fail()) {
      throw CheckpointError("checkpoint: bad rng state");
    }
    session.global_step = ses.at("global_step").get<long>();
    session.pretrain_epochs_done = ses.at("pretrain_epochs_done").get<long>();
    session.main_epochs_done = ses.at("main_epochs_done").get<long>();
    session.cycle_pos = ses.at("cycle_pos").get<long>();
    session.instances_since_update =
        ses.at("instances_since_update").get<long>();
    session.em_skipped = ses.at("em_skipped").get<long>();
    session.flow_active = ses.at("flow_active").get<bool>();
    session.em_stats.s =
        matrix_from_json(ses.at("em_stats"), classes, classes, "em_stats");
    session.em_stats.instances = ses.at("em_instances").get<long>();
    return session;
  } catch (const json::exception& e) {
    throw CheckpointError("load_checkpoint: malformed checkpoint " + path +
                          ": " + e.what());
  }
}

}  // namespace emflow
