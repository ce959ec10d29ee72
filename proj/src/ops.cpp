#include "emflow/ops.hpp"

#include <cmath>

#include "emflow/errors.hpp"

namespace emflow {

double log_sum_exp(const Vector& logits) {
  const double m = logits.maxCoeff();
  return m + std::log((logits.array() - m).exp().sum());
}

Vector softmax(const Vector& logits) {
  const double lse = log_sum_exp(logits);
  return (logits.array() - lse).exp();
}

XeResult softmax_cross_entropy(const Vector& logits, Index target) {
  if (logits.size() < 2) {
    throw ShapeError("softmax_cross_entropy: need at least 2 logits");
  }
  if (target < 0 || target >= logits.size()) {
    throw ArgumentError("softmax_cross_entropy: target index out of range");
  }
  const double lse = log_sum_exp(logits);
  XeResult r;
  r.probs = (logits.array() - lse).exp();
  r.loss = lse - logits[target];
  return r;
}

Vector softmax_cross_entropy_backward(const Vector& probs, Index target) {
  Vector g = probs;
  g[target] -= 1.0;
  return g;
}

Vector span_mean(const Matrix& token_states, Span span) {
  if (span.first > span.last || span.first < 0 ||
      span.last >= token_states.rows()) {
    throw SpanError("span_mean: empty, reversed or out-of-range span");
  }
  const Index len = span.length();
  Vector out = Vector::Zero(token_states.cols());
  for (Index s = span.first; s <= span.last; ++s) {
    out += token_states.row(s).transpose();
  }
  return out / static_cast<double>(len);
}

void span_mean_backward(const Vector& grad, Span span, Matrix& token_grads) {
  if (span.first > span.last || span.first < 0 ||
      span.last >= token_grads.rows()) {
    throw SpanError("span_mean_backward: invalid span");
  }
  const double scale = 1.0 / static_cast<double>(span.length());
  for (Index s = span.first; s <= span.last; ++s) {
    token_grads.row(s) += scale * grad.transpose();
  }
}

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Vector concat(const std::vector<Vector>& parts) {
  Index total = 0;
  for (const auto& p : parts) total += p.size();
  Vector out(total);
  Index at = 0;
  for (const auto& p : parts) {
    out.segment(at, p.size()) = p;
    at += p.size();
  }
  return out;
}

std::vector<Vector> concat_backward(const Vector& grad,
                                    const std::vector<Index>& sizes) {
  std::vector<Vector> parts;
  parts.reserve(sizes.size());
  Index at = 0;
  for (Index n : sizes) {
    if (at + n > grad.size()) {
      throw ShapeError("concat_backward: sizes exceed gradient length");
    }
    parts.push_back(grad.segment(at, n));
    at += n;
  }
  if (at != grad.size()) {
    throw ShapeError("concat_backward: sizes do not cover gradient");
  }
  return parts;
}

Matrix embedding_lookup(const Matrix& table, const std::vector<int>& ids) {
  Matrix rows(static_cast<Index>(ids.size()), table.cols());
  for (Index i = 0; i < rows.rows(); ++i) {
    const int id = ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= table.rows()) {
      throw VocabularyError("embedding_lookup: token id out of vocabulary");
    }
    rows.row(i) = table.row(id);
  }
  return rows;
}

void embedding_backward(const Matrix& row_grads, const std::vector<int>& ids,
                        Matrix& table_grad) {
  if (row_grads.rows() != static_cast<Index>(ids.size())) {
    throw ShapeError("embedding_backward: row count mismatch");
  }
  for (Index i = 0; i < row_grads.rows(); ++i) {
    const int id = ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= table_grad.rows()) {
      throw VocabularyError("embedding_backward: token id out of vocabulary");
    }
    table_grad.row(id) += row_grads.row(i);
  }
}

Vector dropout_mask(RngEngine& eng, Index n, double rate) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ArgumentError("dropout_mask: rate must be in [0, 1)");
  }
  Vector mask(n);
  for (Index i = 0; i < n; ++i) {
    mask[i] = uniform01(eng) < rate ? 0.0 : 1.0;
  }
  return mask;
}

Vector apply_dropout(const Vector& x, const Vector& mask, double rate) {
  if (x.size() != mask.size()) {
    throw ShapeError("apply_dropout: mask size mismatch");
  }
  return (x.array() * mask.array() / (1.0 - rate)).matrix();
}

double finite_diff_check(const ScalarFn& fn, const Vector& params,
                         double step) {
  if (step <= 0.0) {
    throw ArgumentError("finite_diff_check: step must be positive");
  }
  auto [value, analytic] = fn(params);
  if (!std::isfinite(value) || !all_finite(analytic)) {
    throw NumericError("finite_diff_check: non-finite function or gradient");
  }
  if (analytic.size() != params.size()) {
    throw ShapeError("finite_diff_check: gradient size mismatch");
  }
  double worst = 0.0;
  Vector probe = params;
  for (Index i = 0; i < params.size(); ++i) {
    probe[i] = params[i] + step;
    const double fp = fn(probe).first;
    probe[i] = params[i] - step;
    const double fm = fn(probe).first;
    probe[i] = params[i];
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("finite_diff_check: non-finite probe value");
    }
    const double central = (fp - fm) / (2.0 * step);
    const double denom =
        std::max({std::abs(analytic[i]), std::abs(central), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - central) / denom);
  }
  return worst;
}

bool all_finite(const Vector& v) { return v.allFinite(); }
bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace emflow
