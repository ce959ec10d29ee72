#pragma once

#include <vector>

#include "emflow/model.hpp"

namespace emflow {

struct AdamConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Step-size multiplier for the correctness head (blocks named z_*). Its
  // bound gradient keeps one sign for long stretches, so at full desk-scale
  // speed the sigmoid saturates within an epoch and the E-step loses all
  // posterior mass; a slower head matches the regime the EM needs.
  double z_scale = 0.1;
};

// Which blocks one optimizer step may touch. The transition matrix is not a
// gradient-trained parameter and is never visible to the optimizer.
enum class UpdateSet {
  Backbone,  // encoder + heads; flow frozen (pretraining and L_e steps)
  All,       // backbone + flow (L_i steps after pretraining)
};

struct OptimizerState {
  Vector m;
  Vector v;
  std::vector<long> block_steps;  // per-block bias-correction counters

  static OptimizerState zeros(const ModelParams& params);
};

// AdamW: decoupled weight decay, bias correction per block so late-unfrozen
// flow parameters are corrected by their own step count. When the update set
// includes the flow, w is re-projected onto its norm sphere afterwards.
// Non-finite gradients abort the step.
void adam_step(ModelParams& params, const ModelGrads& grads,
               OptimizerState& state, const AdamConfig& cfg, UpdateSet set);

}  // namespace emflow
