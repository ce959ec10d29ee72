#pragma once

#include <string>

#include "emflow/trainer.hpp"

namespace emflow {

inline constexpr int kCheckpointFormatVersion = 1;

// Self-describing JSON snapshot of a full training session: parameters,
// transition matrix, optimizer moments, EM window, RNG state and resolved
// config. load(save(s)) restores s bit for bit.
void save_checkpoint(const TrainerSession& session, const std::string& path);

// expected_classes >= 0 enforces a class-count match before any state is
// touched; a corrupt or truncated file never yields a partial session.
TrainerSession load_checkpoint(const std::string& path,
                               Index expected_classes = -1);

}  // namespace emflow
