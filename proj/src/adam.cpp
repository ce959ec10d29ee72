#include "emflow/adam.hpp"

#include <cmath>

#include "emflow/errors.hpp"

namespace emflow {

OptimizerState OptimizerState::zeros(const ModelParams& params) {
  OptimizerState st;
  const Index n = flat_size(params);
  st.m = Vector::Zero(n);
  st.v = Vector::Zero(n);
  st.block_steps.assign(layout_of(params).size(), 0);
  return st;
}

void adam_step(ModelParams& params, const ModelGrads& grads,
               OptimizerState& state, const AdamConfig& cfg, UpdateSet set) {
  if (!grads.all_finite()) {
    throw NumericError("adam_step: non-finite gradient");
  }
  const auto blocks = layout_of(params);
  if (state.block_steps.size() != blocks.size()) {
    throw ShapeError("adam_step: optimizer state does not match the layout");
  }
  Vector flat = flatten_params(params);
  const Vector g = flatten_grads(grads);
  if (flat.size() != g.size() || flat.size() != state.m.size()) {
    throw ShapeError("adam_step: parameter/gradient size mismatch");
  }

  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& blk = blocks[b];
    if (set == UpdateSet::Backbone && blk.flow) continue;
    const long t = ++state.block_steps[b];
    const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    const double lr = blk.name.rfind("z_", 0) == 0
                          ? cfg.learning_rate * cfg.z_scale
                          : cfg.learning_rate;
    for (Index i = blk.offset; i < blk.offset + blk.size; ++i) {
      state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g[i];
      state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = state.m[i] / bias1;
      const double v_hat = state.v[i] / bias2;
      flat[i] -= lr * (m_hat / (std::sqrt(v_hat) + cfg.epsilon) +
                       cfg.weight_decay * flat[i]);
    }
  }
  set_flat_params(params, flat);

  if (set == UpdateSet::All) {
    params.flow.w = project_w(params.flow.w, params.flow.norm_target);
  }
}

}  // namespace emflow
