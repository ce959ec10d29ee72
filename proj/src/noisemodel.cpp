#include "emflow/noisemodel.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "emflow/errors.hpp"
#include "emflow/ops.hpp"

namespace emflow {

namespace {

constexpr double kColumnSumTolerance = 1e-9;
constexpr double kLogFloor = 1e-8;

void check_transition(const Matrix& m) {
  if (m.rows() != m.cols() || m.rows() < 2) {
    throw ShapeError("TransitionMatrix: need a square matrix, K >= 2");
  }
  for (Index k = 0; k < m.cols(); ++k) {
    if (m(k, k) != 0.0) {
      throw ArgumentError("TransitionMatrix: diagonal must be exactly zero");
    }
    double col = 0.0;
    for (Index i = 0; i < m.rows(); ++i) {
      if (m(i, k) < 0.0) {
        throw ArgumentError("TransitionMatrix: negative entry");
      }
      col += m(i, k);
    }
    if (std::abs(col - 1.0) > kColumnSumTolerance) {
      throw ArgumentError("TransitionMatrix: column does not sum to 1");
    }
  }
}

}  // namespace

TransitionMatrix TransitionMatrix::uniform_off_diagonal(Index classes) {
  if (classes < 2) {
    throw ArgumentError("TransitionMatrix: class count must be >= 2");
  }
  Matrix t = Matrix::Constant(classes, classes,
                              1.0 / static_cast<double>(classes - 1));
  t.diagonal().setZero();
  return TransitionMatrix(std::move(t));
}

TransitionMatrix TransitionMatrix::from_matrix(const Matrix& m) {
  check_transition(m);
  return TransitionMatrix(m);
}

double TransitionMatrix::row_sum(Index noisy) const {
  return t_.row(noisy).sum();  // diagonal is zero
}

TransitionMatrix init_transition(Index classes) {
  return TransitionMatrix::uniform_off_diagonal(classes);
}

double marginal_noisy_prob(const Vector& probs_y, double p_z1,
                           const TransitionMatrix& t, Index noisy) {
  const Index k_count = probs_y.size();
  if (k_count != t.classes()) {
    throw ShapeError("marginal_noisy_prob: class count mismatch");
  }
  if (noisy < 0 || noisy >= k_count) {
    throw ArgumentError("marginal_noisy_prob: noisy label out of range");
  }
  if (p_z1 < 0.0 || p_z1 > 1.0) {
    throw ArgumentError("marginal_noisy_prob: p_z1 outside [0, 1]");
  }
  double wrong = 0.0;
  for (Index k = 0; k < k_count; ++k) {
    if (k == noisy) continue;
    wrong += t(noisy, k) * probs_y[k];
  }
  return p_z1 * probs_y[noisy] + (1.0 - p_z1) * wrong;
}

PosteriorRecord e_step(const Vector& probs_y, double p_z1,
                       const TransitionMatrix& t, Index noisy) {
  const Index k_count = probs_y.size();
  if (k_count != t.classes()) {
    throw ShapeError("e_step: class count mismatch");
  }
  if (noisy < 0 || noisy >= k_count) {
    throw ArgumentError("e_step: noisy label out of range");
  }
  PosteriorRecord rec;
  rec.p_wrong = Vector::Zero(k_count);
  const double correct_mass = p_z1 * probs_y[noisy];
  double wrong_mass = 0.0;
  for (Index k = 0; k < k_count; ++k) {
    if (k == noisy) continue;
    rec.p_wrong[k] = (1.0 - p_z1) * t(noisy, k) * probs_y[k];
    wrong_mass += rec.p_wrong[k];
  }
  rec.normalizer = correct_mass + wrong_mass;
  if (rec.normalizer <= 0.0) {
    throw DegeneratePosteriorError("e_step: posterior normalizer is zero");
  }
  rec.p_correct = correct_mass / rec.normalizer;
  rec.p_wrong /= rec.normalizer;
  return rec;
}

SufficientStats SufficientStats::zeros(Index classes) {
  SufficientStats st;
  st.s = Matrix::Zero(classes, classes);
  st.instances = 0;
  return st;
}

void SufficientStats::add(Index noisy, const PosteriorRecord& posterior) {
  if (posterior.p_wrong.size() != s.cols()) {
    throw ShapeError("SufficientStats::add: class count mismatch");
  }
  if (noisy < 0 || noisy >= s.rows()) {
    throw ArgumentError("SufficientStats::add: noisy label out of range");
  }
  s.row(noisy) += posterior.p_wrong.transpose();
  ++instances;
}

void SufficientStats::merge(const SufficientStats& other) {
  if (other.s.rows() != s.rows()) {
    throw ShapeError("SufficientStats::merge: class count mismatch");
  }
  s += other.s;
  instances += other.instances;
}

SufficientStats accumulate_stats(
    const std::vector<std::pair<Index, PosteriorRecord>>& posteriors,
    Index classes) {
  SufficientStats st = SufficientStats::zeros(classes);
  for (const auto& [noisy, rec] : posteriors) {
    st.add(noisy, rec);
  }
  return st;
}

TransitionMatrix m_step(const SufficientStats& stats,
                        const TransitionMatrix& previous) {
  const Index k_count = stats.classes();
  if (k_count != previous.classes()) {
    throw ShapeError("m_step: class count mismatch");
  }
  Matrix t(k_count, k_count);
  for (Index k = 0; k < k_count; ++k) {
    double denom = 0.0;
    for (Index i = 0; i < k_count; ++i) {
      if (i != k) denom += stats.s(i, k);
    }
    if (denom > 0.0) {
      for (Index i = 0; i < k_count; ++i) {
        t(i, k) = i == k ? 0.0 : stats.s(i, k) / denom;
      }
    } else {
      // No evidence for this true class; keep the previous column.
      t.col(k) = previous.matrix().col(k);
    }
  }
  return TransitionMatrix::from_matrix(t);
}

double q_value(const SufficientStats& stats, const TransitionMatrix& t) {
  if (stats.classes() != t.classes()) {
    throw ShapeError("q_value: class count mismatch");
  }
  double q = 0.0;
  for (Index i = 0; i < stats.classes(); ++i) {
    for (Index k = 0; k < stats.classes(); ++k) {
      const double weight = stats.s(i, k);
      if (weight <= 0.0) continue;
      if (t(i, k) == 0.0) {
        return -std::numeric_limits<double>::infinity();
      }
      q += weight * std::log(std::max(t(i, k), kLogFloor));
    }
  }
  return q;
}

double q_value(
    const std::vector<std::pair<Index, PosteriorRecord>>& posteriors,
    Index classes, const TransitionMatrix& t) {
  return q_value(accumulate_stats(posteriors, classes), t);
}

ExplicitLossResult explicit_loss(const Vector& h, double z_logit, Index noisy,
                                 const TransitionMatrix& t) {
  const Index k_count = h.size();
  if (k_count != t.classes()) {
    throw ShapeError("explicit_loss: class count mismatch");
  }
  if (noisy < 0 || noisy >= k_count) {
    throw ArgumentError("explicit_loss: noisy label out of range");
  }
  const double row = t.row_sum(noisy);
  if (row <= 0.0) {
    throw DegeneratePosteriorError("explicit_loss: zero transition row");
  }

  const double sig = sigmoid(z_logit);
  const double lse = log_sum_exp(h);
  const Vector probs = (h.array() - lse).exp();

  // XE(h, e_k) = lse - h[k]; mixing the targets keeps the gradient a single
  // probs - target expression.
  double wrong_term = 0.0;
  Vector target = Vector::Zero(k_count);
  target[noisy] = sig;
  for (Index k = 0; k < k_count; ++k) {
    if (k == noisy) continue;
    const double ratio = t(noisy, k) / row;
    wrong_term += ratio * (lse - h[k]);
    target[k] = (1.0 - sig) * ratio;
  }

  ExplicitLossResult out;
  out.loss = sig * (lse - h[noisy]) +
             (1.0 - sig) * (wrong_term - std::log(row));
  out.grad_h = probs - target;
  out.grad_z_logit =
      sig * (1.0 - sig) *
      ((lse - h[noisy]) - (wrong_term - std::log(row)));
  return out;
}

void write_transition_csv(const TransitionMatrix& t, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw IoError("write_transition_csv: cannot open " + path);
  }
  char buf[64];
  for (Index i = 0; i < t.classes(); ++i) {
    for (Index k = 0; k < t.classes(); ++k) {
      std::snprintf(buf, sizeof(buf), "%.17g", t(i, k));
      os << buf;
      os << (k + 1 == t.classes() ? '\n' : ',');
    }
  }
  if (!os) {
    throw IoError("write_transition_csv: write failed for " + path);
  }
}

TransitionMatrix read_transition_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) {
    throw IoError("read_transition_csv: cannot open " + path);
  }
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ParseError("read_transition_csv: bad cell '" + cell + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) {
    throw ParseError("read_transition_csv: empty file " + path);
  }
  const Index k_count = static_cast<Index>(rows.size());
  Matrix m(k_count, k_count);
  for (Index i = 0; i < k_count; ++i) {
    if (static_cast<Index>(rows[static_cast<std::size_t>(i)].size()) !=
        k_count) {
      throw ParseError("read_transition_csv: ragged row in " + path);
    }
    for (Index k = 0; k < k_count; ++k) {
      m(i, k) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
    }
  }
  return TransitionMatrix::from_matrix(m);
}

}  // namespace emflow
