#pragma once

#include <string>
#include <vector>

#include "emflow/encoder.hpp"
#include "emflow/flow.hpp"
#include "emflow/noisemodel.hpp"
#include "emflow/types.hpp"

namespace emflow {

struct ModelDims {
  Index classes = 2;
  EncoderDims enc;
};

// Every trainable quantity plus the transition matrix. T is estimated by EM
// only and is excluded from the flat parameter view.
struct ModelParams {
  ModelDims dims;
  EncoderParams encoder;
  Matrix label_weight;  // classes x 3*feature_dim, produces h
  Vector label_bias;
  Vector z_weight;      // 3*feature_dim, produces the correctness logit
  double z_bias = 0.0;
  FlowParams flow;
  TransitionMatrix transition;
};

struct ModelGrads {
  EncoderGrads encoder;
  Matrix label_weight;
  Vector label_bias;
  Vector z_weight;
  double z_bias = 0.0;
  FlowGrads flow;

  static ModelGrads zeros(const ModelDims& dims);
  void scale(double factor);
  bool all_finite() const;
};

ModelParams init_model(const ModelDims& dims, RngEngine& eng,
                       double norm_target = 1.0);

// Fixed enumeration of trainable blocks. Params and grads share the order,
// so flat vectors line up coordinate for coordinate.
template <class P, class F>
void visit_blocks(P& p, F&& f) {
  f("embedding", p.encoder.embedding);
  f("mix_weight", p.encoder.mix_weight);
  f("mix_bias", p.encoder.mix_bias);
  f("entity_weight", p.encoder.entity_weight);
  f("entity_bias", p.encoder.entity_bias);
  f("summary_weight", p.encoder.summary_weight);
  f("summary_bias", p.encoder.summary_bias);
  f("label_weight", p.label_weight);
  f("label_bias", p.label_bias);
  f("z_weight", p.z_weight);
  f("z_bias", p.z_bias);
  f("flow_u", p.flow.u);
  f("flow_w", p.flow.w);
  f("flow_w_prime", p.flow.w_prime);
  f("flow_beta", p.flow.beta);
}

struct BlockLayout {
  std::string name;
  Index offset = 0;
  Index size = 0;
  bool flow = false;
};

std::vector<BlockLayout> layout_of(const ModelParams& params);
Index flat_size(const ModelParams& params);

Vector flatten_params(const ModelParams& params);
void set_flat_params(ModelParams& params, const Vector& flat);
Vector flatten_grads(const ModelGrads& grads);

// One encoded instance with the intermediates both losses need.
struct InstanceForward {
  Vector x;
  Vector h;
  double z_logit = 0.0;
  EncodeCache cache;
};

InstanceForward model_forward(const LabeledInstance& marked,
                              const ModelParams& params, RunMode mode,
                              double dropout_rate, RngEngine* eng);

// Pushes dL/dh (and dL/dz_logit, zero when unused) back through the heads
// and the encoder.
void model_backward(const InstanceForward& fwd, const ModelParams& params,
                    const Vector& grad_h, double grad_z_logit,
                    ModelGrads& grads);

// Full explicit path for one instance; accumulates into grads, returns loss.
double explicit_loss_backward(const InstanceForward& fwd,
                              const ModelParams& params, Index noisy,
                              ModelGrads& grads);

// Full implicit path for one instance.
double implicit_loss_backward(const InstanceForward& fwd,
                              const ModelParams& params, Index noisy,
                              const FrozenSchedule& schedule,
                              ModelGrads& grads);

}  // namespace emflow
