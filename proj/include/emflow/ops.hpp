#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "emflow/rng.hpp"
#include "emflow/types.hpp"

namespace emflow {

// Dense numeric kernels shared by every module. Each forward op has a
// matching reverse rule; the model's computation graph is small and static,
// so gradients are propagated by explicit chaining rather than a tape.
// Everything is double precision.

double log_sum_exp(const Vector& logits);

Vector softmax(const Vector& logits);

struct XeResult {
  double loss = 0.0;
  Vector probs;
};

// Cross-entropy of `target` against raw logits, computed with
// max-subtracted log-sum-exp. Gradient wrt logits is probs - onehot(target).
XeResult softmax_cross_entropy(const Vector& logits, Index target);

Vector softmax_cross_entropy_backward(const Vector& probs, Index target);

// Mean of token_states rows over the inclusive span; gradient distributes
// 1/len to every row in the span.
Vector span_mean(const Matrix& token_states, Span span);
void span_mean_backward(const Vector& grad, Span span, Matrix& token_grads);

inline Vector tanh_fwd(const Vector& x) { return x.array().tanh(); }
inline Vector tanh_bwd(const Vector& y, const Vector& dy) {
  return (dy.array() * (1.0 - y.array().square())).matrix();
}

double sigmoid(double x);
inline Vector sigmoid_fwd(const Vector& x) {
  return (1.0 / (1.0 + (-x.array()).exp())).matrix();
}
inline Vector sigmoid_bwd(const Vector& y, const Vector& dy) {
  return (dy.array() * y.array() * (1.0 - y.array())).matrix();
}

inline Matrix matmul(const Matrix& a, const Matrix& b) { return a * b; }
inline Matrix matmul_bwd_lhs(const Matrix& dc, const Matrix& b) {
  return dc * b.transpose();
}
inline Matrix matmul_bwd_rhs(const Matrix& a, const Matrix& dc) {
  return a.transpose() * dc;
}

inline Vector add(const Vector& a, const Vector& b) { return a + b; }

Vector concat(const std::vector<Vector>& parts);
std::vector<Vector> concat_backward(const Vector& grad,
                                    const std::vector<Index>& sizes);

// Row gather from an embedding table; ids must be < table.rows().
Matrix embedding_lookup(const Matrix& table, const std::vector<int>& ids);
void embedding_backward(const Matrix& row_grads, const std::vector<int>& ids,
                        Matrix& table_grad);

// Inverted dropout. Mask entries are 0/1; apply scales kept entries by
// 1/(1-rate) so eval mode needs no rescaling. Train mode only.
Vector dropout_mask(RngEngine& eng, Index n, double rate);
Vector apply_dropout(const Vector& x, const Vector& mask, double rate);
inline Vector dropout_backward(const Vector& dy, const Vector& mask,
                               double rate) {
  return apply_dropout(dy, mask, rate);
}

// A differentiable scalar map: returns (value, gradient) at the given point.
using ScalarFn = std::function<std::pair<double, Vector>(const Vector&)>;

// Max over coordinates of |analytic - central difference| relative error,
// denominator max(|analytic|, |central|, 1e-8).
double finite_diff_check(const ScalarFn& fn, const Vector& params,
                         double step);

bool all_finite(const Vector& v);
bool all_finite(const Matrix& m);

}  // namespace emflow
