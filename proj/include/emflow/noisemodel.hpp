#pragma once

#include <string>
#include <utility>
#include <vector>

#include "emflow/types.hpp"

namespace emflow {

// Explicit label transition. T(i, k) is the probability that true class k
// is annotated as class i when the annotation is wrong (z = 0). Columns sum
// to 1 and the diagonal is exactly zero.
class TransitionMatrix {
 public:
  static TransitionMatrix uniform_off_diagonal(Index classes);
  static TransitionMatrix from_matrix(const Matrix& m);

  const Matrix& matrix() const { return t_; }
  Index classes() const { return t_.rows(); }
  double operator()(Index noisy, Index truth) const { return t_(noisy, truth); }

  // Sum of row `noisy` excluding the (zero) diagonal.
  double row_sum(Index noisy) const;

  bool operator==(const TransitionMatrix& other) const {
    return t_ == other.t_;
  }

 private:
  explicit TransitionMatrix(Matrix t) : t_(std::move(t)) {}
  Matrix t_;
};

// Off-diagonals 1/(K-1), zero diagonal.
TransitionMatrix init_transition(Index classes);

// Joint posterior over (y, z) given one noisy observation. The cells
// (y = noisy, z = 0) and (y != noisy, z = 1) are identically zero, so only
// p_correct and the off-label p_wrong vector are stored.
struct PosteriorRecord {
  double p_correct = 0.0;  // p(y = noisy, z = 1 | noisy, x)
  Vector p_wrong;          // p(y = e_k, z = 0 | noisy, x); zero at k = noisy
  double normalizer = 0.0;

  double total_mass() const { return p_correct + p_wrong.sum(); }
};

// p(noisy | x) = p_z1 * probs_y[noisy] + (1-p_z1) * sum_{k != noisy} T(noisy,k) probs_y[k]
double marginal_noisy_prob(const Vector& probs_y, double p_z1,
                           const TransitionMatrix& t, Index noisy);

PosteriorRecord e_step(const Vector& probs_y, double p_z1,
                       const TransitionMatrix& t, Index noisy);

// Accumulator for the M-step numerator: S(i, k) sums p_wrong[k] over
// instances whose noisy label is i. Order-independent and mergeable.
struct SufficientStats {
  Matrix s;
  long instances = 0;

  static SufficientStats zeros(Index classes);
  void add(Index noisy, const PosteriorRecord& posterior);
  void merge(const SufficientStats& other);
  Index classes() const { return s.rows(); }
};

SufficientStats accumulate_stats(
    const std::vector<std::pair<Index, PosteriorRecord>>& posteriors,
    Index classes);

// Closed-form maximizer of Q: column k becomes S(.,k) normalized. Columns
// with zero evidence are copied from `previous`.
TransitionMatrix m_step(const SufficientStats& stats,
                        const TransitionMatrix& previous);

// T-dependent part of the expected complete-data log likelihood:
// sum_{i,k} S(i,k) log T(i,k). Entries are floored at 1e-8 inside the log;
// an exactly-zero entry carrying positive weight yields -infinity.
double q_value(const SufficientStats& stats, const TransitionMatrix& t);
double q_value(
    const std::vector<std::pair<Index, PosteriorRecord>>& posteriors,
    Index classes, const TransitionMatrix& t);

struct ExplicitLossResult {
  double loss = 0.0;
  Vector grad_h;
  double grad_z_logit = 0.0;
};

// Jensen upper bound on -log p(noisy | x):
//   sigma(z) * XE(h, noisy)
//   + (1 - sigma(z)) * { sum_{k != noisy} T(noisy,k)/T_row * XE(h, e_k) - log T_row }
// T is constant with respect to the gradients.
ExplicitLossResult explicit_loss(const Vector& h, double z_logit, Index noisy,
                                 const TransitionMatrix& t);

// K header-less rows of K comma-separated decimals; row = noisy class,
// column = true class. Full round-trip precision.
void write_transition_csv(const TransitionMatrix& t, const std::string& path);
TransitionMatrix read_transition_csv(const std::string& path);

}  // namespace emflow
