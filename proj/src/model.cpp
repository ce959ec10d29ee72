#include "emflow/model.hpp"

#include <cmath>

#include "emflow/errors.hpp"
#include "emflow/ops.hpp"

namespace emflow {

namespace {

struct BlockSizer {
  std::vector<BlockLayout>* out;
  Index at = 0;

  void record(const std::string& name, Index size) {
    out->push_back({name, at, size, name.rfind("flow_", 0) == 0});
    at += size;
  }
  void operator()(const std::string& name, const Matrix& m) {
    record(name, m.size());
  }
  void operator()(const std::string& name, const Vector& v) {
    record(name, v.size());
  }
  void operator()(const std::string& name, const double&) { record(name, 1); }
};

struct FlatWriter {
  Vector* flat;
  Index at = 0;

  void operator()(const std::string&, const Matrix& m) {
    flat->segment(at, m.size()) =
        Eigen::Map<const Vector>(m.data(), m.size());
    at += m.size();
  }
  void operator()(const std::string&, const Vector& v) {
    flat->segment(at, v.size()) = v;
    at += v.size();
  }
  void operator()(const std::string&, const double& x) {
    (*flat)[at++] = x;
  }
};

struct FlatReader {
  const Vector* flat;
  Index at = 0;

  void operator()(const std::string&, Matrix& m) {
    Eigen::Map<Vector>(m.data(), m.size()) = flat->segment(at, m.size());
    at += m.size();
  }
  void operator()(const std::string&, Vector& v) {
    v = flat->segment(at, v.size());
    at += v.size();
  }
  void operator()(const std::string&, double& x) { x = (*flat)[at++]; }
};

}  // namespace

ModelGrads ModelGrads::zeros(const ModelDims& dims) {
  ModelGrads g;
  g.encoder = EncoderGrads::zeros(dims.enc);
  g.label_weight = Matrix::Zero(dims.classes, dims.enc.output_dim());
  g.label_bias = Vector::Zero(dims.classes);
  g.z_weight = Vector::Zero(dims.enc.output_dim());
  g.z_bias = 0.0;
  g.flow = FlowGrads::zeros(dims.classes);
  return g;
}

void ModelGrads::scale(double factor) {
  visit_blocks(*this,
               [factor](const std::string&, auto& block) { block *= factor; });
}

bool ModelGrads::all_finite() const {
  bool ok = true;
  visit_blocks(*this, [&ok](const std::string&, const auto& block) {
    if constexpr (std::is_same_v<std::decay_t<decltype(block)>, double>) {
      ok = ok && std::isfinite(block);
    } else {
      ok = ok && block.allFinite();
    }
  });
  return ok;
}

ModelParams init_model(const ModelDims& dims, RngEngine& eng,
                       double norm_target) {
  if (dims.classes < 2) {
    throw ArgumentError("init_model: need at least 2 classes");
  }
  const Index out = dims.enc.output_dim();
  const double bound =
      std::sqrt(6.0 / static_cast<double>(out + dims.classes));
  ModelParams p{dims,
                init_encoder(dims.enc, eng),
                Matrix(dims.classes, out),
                Vector::Zero(dims.classes),
                Vector(out),
                0.0,
                identity_flow(dims.classes, norm_target),
                init_transition(dims.classes)};
  for (Index r = 0; r < p.label_weight.rows(); ++r) {
    for (Index c = 0; c < p.label_weight.cols(); ++c) {
      p.label_weight(r, c) = uniform(eng, -bound, bound);
    }
  }
  p.z_weight.setZero();
  return p;
}

std::vector<BlockLayout> layout_of(const ModelParams& params) {
  std::vector<BlockLayout> out;
  BlockSizer sizer{&out};
  visit_blocks(params, sizer);
  return out;
}

Index flat_size(const ModelParams& params) {
  Index total = 0;
  visit_blocks(params, [&total](const std::string&, const auto& block) {
    if constexpr (std::is_same_v<std::decay_t<decltype(block)>, double>) {
      total += 1;
    } else {
      total += block.size();
    }
  });
  return total;
}

Vector flatten_params(const ModelParams& params) {
  Vector flat(flat_size(params));
  FlatWriter writer{&flat};
  visit_blocks(params, writer);
  return flat;
}

void set_flat_params(ModelParams& params, const Vector& flat) {
  if (flat.size() != flat_size(params)) {
    throw ShapeError("set_flat_params: size mismatch");
  }
  FlatReader reader{&flat};
  visit_blocks(params, reader);
}

Vector flatten_grads(const ModelGrads& grads) {
  Index total = 0;
  visit_blocks(grads, [&total](const std::string&, const auto& block) {
    if constexpr (std::is_same_v<std::decay_t<decltype(block)>, double>) {
      total += 1;
    } else {
      total += block.size();
    }
  });
  Vector flat(total);
  FlatWriter writer{&flat};
  visit_blocks(grads, writer);
  return flat;
}

InstanceForward model_forward(const LabeledInstance& marked,
                              const ModelParams& params, RunMode mode,
                              double dropout_rate, RngEngine* eng) {
  InstanceForward fwd;
  fwd.x = encode(marked, params.encoder, params.dims.enc, mode, dropout_rate,
                 eng, &fwd.cache);
  fwd.h = params.label_weight * fwd.x + params.label_bias;
  fwd.z_logit = params.z_weight.dot(fwd.x) + params.z_bias;
  return fwd;
}

void model_backward(const InstanceForward& fwd, const ModelParams& params,
                    const Vector& grad_h, double grad_z_logit,
                    ModelGrads& grads) {
  grads.label_weight += grad_h * fwd.x.transpose();
  grads.label_bias += grad_h;
  Vector grad_x = params.label_weight.transpose() * grad_h;
  if (grad_z_logit != 0.0) {
    grads.z_weight += grad_z_logit * fwd.x;
    grads.z_bias += grad_z_logit;
    grad_x += grad_z_logit * params.z_weight;
  }
  encode_backward(grad_x, fwd.cache, params.encoder, params.dims.enc, grads.encoder);
}

double explicit_loss_backward(const InstanceForward& fwd,
                              const ModelParams& params, Index noisy,
                              ModelGrads& grads) {
  const ExplicitLossResult r =
      explicit_loss(fwd.h, fwd.z_logit, noisy, params.transition);
  model_backward(fwd, params, r.grad_h, r.grad_z_logit, grads);
  return r.loss;
}

double implicit_loss_backward(const InstanceForward& fwd,
                              const ModelParams& params, Index noisy,
                              const FrozenSchedule& schedule,
                              ModelGrads& grads) {
  const ImplicitLossResult r =
      implicit_loss(fwd.h, params.flow, noisy, schedule);
  model_backward(fwd, params, r.grad_h, 0.0, grads);
  grads.flow.u += r.grad_flow.u;
  grads.flow.w += r.grad_flow.w;
  grads.flow.w_prime += r.grad_flow.w_prime;
  grads.flow.beta += r.grad_flow.beta;
  return r.loss;
}

}  // namespace emflow
