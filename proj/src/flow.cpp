#include "emflow/flow.hpp"

#include <cmath>

#include "emflow/errors.hpp"
#include "emflow/ops.hpp"

namespace emflow {

namespace {

double softplus(double a) {
  return a > 0.0 ? a + std::log1p(std::exp(-a)) : std::log1p(std::exp(a));
}

struct ConstrainResult {
  Vector u_eff;
  double a_u = 0.0;    // w . u before the shift
  double spread = 0.0; // m(a_u) - a_u
};

// m(a) = -1 + softplus(a) > -1, so w . u_eff = m(a) in exact arithmetic.
// Recomposing the dot product reintroduces rounding, which can land an ulp
// below -1; the nudge loop restores the exact bound.
ConstrainResult constrain_u_impl(const Vector& u, const Vector& w,
                                 double norm_sq) {
  const double a = w.dot(u);
  const double m = -1.0 + softplus(a);
  ConstrainResult r{u + (m - a) / norm_sq * w, a, m - a};
  double a_eff = w.dot(r.u_eff);
  double bump = std::max(-1.0 - a_eff, 0.0);
  for (int i = 0; i < 64 && a_eff < -1.0; ++i) {
    bump = std::max(bump * 2.0, 1e-16 * (1.0 + std::abs(a_eff)));
    r.u_eff += bump / norm_sq * w;
    a_eff = w.dot(r.u_eff);
  }
  return r;
}

}  // namespace

FlowGrads FlowGrads::zeros(Index classes) {
  FlowGrads g;
  g.u = Vector::Zero(classes);
  g.w = Vector::Zero(classes);
  g.w_prime = Vector::Zero(classes);
  g.beta = 0.0;
  return g;
}

FlowParams identity_flow(Index classes, double norm_target) {
  FlowParams p;
  p.u = Vector::Zero(classes);
  p.w = Vector::Zero(classes);
  p.w_prime = Vector::Zero(classes);
  p.w_prime[0] = 1.0;
  p.beta = 0.0;
  p.norm_target = norm_target;
  return p;
}

Vector constrain_u(const Vector& u, const Vector& w) {
  const double norm_sq = w.squaredNorm();
  if (norm_sq <= 0.0) {
    throw ConstraintError("constrain_u: w must be nonzero");
  }
  return constrain_u_impl(u, w, norm_sq).u_eff;
}

Vector planar_step(const Vector& h, const Vector& u_eff, const Vector& w_eff,
                   double beta) {
  return h + u_eff * std::tanh(w_eff.dot(h) + beta);
}

Vector scale_shift(const Vector& h_prime, const Vector& w_prime) {
  if (h_prime.size() != w_prime.size()) {
    throw ShapeError("scale_shift: size mismatch");
  }
  Vector out = h_prime;
  const double first = h_prime[0];
  out[0] = first * w_prime[0];
  for (Index t = 1; t < out.size(); ++t) {
    out[t] = first * w_prime[t] + h_prime[t];
  }
  return out;
}

Vector project_w(const Vector& w, double norm_target) {
  if (norm_target <= 0.0) {
    throw ArgumentError("project_w: norm target must be positive");
  }
  const double norm = w.norm();
  if (norm <= 0.0) {
    throw ConstraintError("project_w: w is zero; reinitialize before projecting");
  }
  return w * (std::sqrt(norm_target) / norm);
}

ImplicitLossResult implicit_loss(const Vector& h, const FlowParams& flow,
                                 Index noisy, const FrozenSchedule& schedule) {
  const Index k_count = h.size();
  if (flow.u.size() != k_count || flow.w.size() != k_count ||
      flow.w_prime.size() != k_count) {
    throw ShapeError("implicit_loss: flow parameter size mismatch");
  }

  const bool constrained = schedule.constraints_active();
  Vector w_eff;
  Vector u_eff;
  double proj_scale = 1.0;  // sqrt(c)/|w|
  double a_u = 0.0;         // w_eff . u
  double spread = 0.0;      // m(a_u) - a_u
  if (constrained) {
    w_eff = project_w(flow.w, flow.norm_target);
    auto constrained_u = constrain_u_impl(flow.u, w_eff, flow.norm_target);
    a_u = constrained_u.a_u;
    spread = constrained_u.spread;
    u_eff = std::move(constrained_u.u_eff);
    proj_scale = std::sqrt(flow.norm_target) / flow.w.norm();
  } else {
    w_eff = flow.w;
    u_eff = flow.u;
  }

  const double t_in = w_eff.dot(h) + flow.beta;
  const double tanh_t = std::tanh(t_in);
  const Vector h_prime = h + u_eff * tanh_t;
  const Vector h_hat = scale_shift(h_prime, flow.w_prime);

  const XeResult xe = softmax_cross_entropy(h_hat, noisy);

  ImplicitLossResult out;
  out.loss = xe.loss;
  out.grad_flow = FlowGrads::zeros(k_count);

  // Reverse pass.
  const Vector d_hat = softmax_cross_entropy_backward(xe.probs, noisy);

  Vector d_w_prime = h_prime[0] * d_hat;
  Vector d_h_prime = d_hat;
  // hhat = h'_0 * (w' - e0) + h'
  Vector w_shift = flow.w_prime;
  w_shift[0] -= 1.0;
  d_h_prime[0] += w_shift.dot(d_hat);

  Vector d_h = d_h_prime;
  const double d_tanh = u_eff.dot(d_h_prime);
  Vector d_u_eff = tanh_t * d_h_prime;
  const double d_t_in = (1.0 - tanh_t * tanh_t) * d_tanh;
  d_h += w_eff * d_t_in;
  const double d_beta = d_t_in;
  Vector d_w_eff = h * d_t_in;

  Vector d_u;
  Vector d_w;
  if (constrained) {
    const double g = w_eff.dot(d_u_eff) / flow.norm_target;
    const double d_a_u = (sigmoid(a_u) - 1.0) * g;
    d_u = d_u_eff + d_a_u * w_eff;
    d_w_eff += d_a_u * flow.u + (spread / flow.norm_target) * d_u_eff;
    // w_eff = proj_scale * w with proj_scale depending on |w|: the Jacobian
    // is the scaled tangent projector.
    const Vector w_unit = w_eff / std::sqrt(flow.norm_target);
    d_w = proj_scale * (d_w_eff - w_unit.dot(d_w_eff) * w_unit);
  } else {
    d_u = d_u_eff;
    d_w = d_w_eff;
  }

  out.grad_h = d_h;
  if (schedule.u_trainable) out.grad_flow.u = d_u;
  if (schedule.w_trainable) out.grad_flow.w = d_w;
  if (schedule.w_prime_trainable) out.grad_flow.w_prime = d_w_prime;
  if (schedule.beta_trainable) out.grad_flow.beta = d_beta;
  return out;
}

Vector invert_planar(const Vector& h_prime, const Vector& u_eff,
                     const Vector& w_eff, double beta) {
  const double coupling = w_eff.dot(u_eff);
  if (coupling < -1.0 - 1e-12) {
    throw InversionError(
        "invert_planar: w^T u < -1, map may not be monotone");
  }
  const double target = w_eff.dot(h_prime);
  const auto residual = [&](double a) {
    return a + coupling * std::tanh(a + beta) - target;
  };

  // g(a) = a + coupling*tanh(a+beta) is nondecreasing under the constraint
  // and the root lies within |coupling| of the target.
  double lo = target - std::abs(coupling) - 1.0;
  double hi = target + std::abs(coupling) + 1.0;
  double width = hi - lo;
  while (residual(lo) > 0.0 || residual(hi) < 0.0) {
    lo -= width;
    hi += width;
    width = hi - lo;
    if (std::abs(lo) > 1e6 || std::abs(hi) > 1e6) {
      throw InversionError("invert_planar: no bracket within |a| <= 1e6");
    }
  }
  for (int iter = 0; iter < 200 && hi - lo > 1e-12; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (residual(mid) < 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double a = 0.5 * (lo + hi);
  return h_prime - u_eff * std::tanh(a + beta);
}

}  // namespace emflow
