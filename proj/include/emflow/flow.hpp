#pragma once

#include "emflow/types.hpp"

namespace emflow {

// Two-step invertible map from true-label logits h to ghost noisy logits:
//   h' = h + u_eff * tanh(w^T h + beta)
//   hhat = h'_0 * w' + (h' with first element zeroed)
// Invertibility needs w^T u >= -1; identifiability needs |w|^2 fixed.

struct FlowParams {
  Vector u;
  Vector w;
  Vector w_prime;
  double beta = 0.0;
  double norm_target = 1.0;  // c in |w|^2 = c
};

struct FlowGrads {
  Vector u;
  Vector w;
  Vector w_prime;
  double beta = 0.0;

  static FlowGrads zeros(Index classes);
};

// Pretraining values: u = 0, w = 0, w' = e1, beta = 0, i.e. the identity map.
FlowParams identity_flow(Index classes, double norm_target = 1.0);

// Trainability flags. During pretraining all four are frozen at the identity
// values and the constraint reparameterizations are bypassed (w is pinned at
// zero there, which the constraints reject by design).
struct FrozenSchedule {
  bool u_trainable = false;
  bool w_trainable = false;
  bool w_prime_trainable = false;
  bool beta_trainable = false;

  static FrozenSchedule pretraining() { return {}; }
  static FrozenSchedule all_trainable() { return {true, true, true, true}; }
  bool constraints_active() const { return u_trainable || w_trainable; }
};

// u_eff = u + (m(w^T u) - w^T u) * w / |w|^2 with m(a) = -1 + log(1 + e^a),
// so w^T u_eff = m(w^T u) >= -1 always.
Vector constrain_u(const Vector& u, const Vector& w);

Vector planar_step(const Vector& h, const Vector& u_eff, const Vector& w_eff,
                   double beta);

// hhat[0] = h'[0] * w'[0]; hhat[t] = h'[0] * w'[t] + h'[t] for t >= 1.
Vector scale_shift(const Vector& h_prime, const Vector& w_prime);

// Rescale w onto the |w|^2 = c sphere.
Vector project_w(const Vector& w, double norm_target);

struct ImplicitLossResult {
  double loss = 0.0;
  Vector grad_h;
  FlowGrads grad_flow;
};

// XE of the noisy label against the transformed logits. When the schedule
// marks parameters trainable the loss is a function of the raw u and w,
// with project_w and constrain_u folded into the forward pass; gradients of
// frozen parameters are zero.
ImplicitLossResult implicit_loss(const Vector& h, const FlowParams& flow,
                                 Index noisy, const FrozenSchedule& schedule);

// Test-only numerical inverse of planar_step: solves the scalar fixed-point
// equation for a = w^T h by bracketed bisection, then recovers h.
Vector invert_planar(const Vector& h_prime, const Vector& u_eff,
                     const Vector& w_eff, double beta);

}  // namespace emflow
