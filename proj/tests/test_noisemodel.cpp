#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "emflow/errors.hpp"
#include "emflow/noisemodel.hpp"
#include "emflow/ops.hpp"
#include "emflow/rng.hpp"

using namespace emflow;

namespace {

// Random column-stochastic zero-diagonal matrix: each column's off-diagonal
// entries are a normalized vector of unit exponentials (symmetric Dirichlet).
TransitionMatrix random_transition(RngEngine& eng, Index k_count) {
  Matrix t = Matrix::Zero(k_count, k_count);
  for (Index k = 0; k < k_count; ++k) {
    double total = 0.0;
    for (Index i = 0; i < k_count; ++i) {
      if (i == k) continue;
      t(i, k) = -std::log(1.0 - uniform01(eng));
      total += t(i, k);
    }
    t.col(k) /= total;
  }
  return TransitionMatrix::from_matrix(t);
}

Vector random_probs(RngEngine& eng, Index k_count) {
  Vector p(k_count);
  for (Index i = 0; i < k_count; ++i) p[i] = -std::log(1.0 - uniform01(eng));
  return p / p.sum();
}

// The worked three-class configuration shared by several cases.
struct WorkedExample {
  Vector probs_y;
  double p_z1 = 0.6;
  TransitionMatrix t;
  Index noisy = 0;

  WorkedExample() : t(init_transition(3)) {
    probs_y.resize(3);
    probs_y << 0.5, 0.3, 0.2;
    Matrix m = Matrix::Zero(3, 3);
    m(0, 1) = 0.5;
    m(2, 1) = 0.5;
    m(0, 2) = 0.25;
    m(1, 2) = 0.75;
    m(1, 0) = 0.4;
    m(2, 0) = 0.6;
    t = TransitionMatrix::from_matrix(m);
  }
};

}  // namespace

TEST_CASE("init_transition produces uniform off-diagonals") {
  const auto t2 = init_transition(2);
  CHECK(t2(0, 1) == 1.0);
  CHECK(t2(1, 0) == 1.0);
  CHECK(t2(0, 0) == 0.0);
  CHECK(t2(1, 1) == 0.0);

  const auto t3 = init_transition(3);
  CHECK(t3(0, 1) == 0.5);
  CHECK(t3(2, 0) == 0.5);

  const auto t53 = init_transition(53);
  CHECK(t53(0, 1) == doctest::Approx(1.0 / 52.0).epsilon(1e-15));
  for (Index k = 0; k < 53; ++k) {
    CHECK(t53.matrix().col(k).sum() == doctest::Approx(1.0).epsilon(1e-12));
  }

  CHECK_THROWS_AS(init_transition(1), ArgumentError);
}

TEST_CASE("transition matrix construction validates invariants") {
  Matrix bad = Matrix::Zero(2, 2);
  bad(0, 1) = 0.5;  // column does not sum to 1
  bad(1, 0) = 1.0;
  CHECK_THROWS_AS(TransitionMatrix::from_matrix(bad), ArgumentError);

  Matrix diag = Matrix::Zero(2, 2);
  diag(0, 0) = 0.1;
  diag(0, 1) = 1.0;
  diag(1, 0) = 0.9;
  CHECK_THROWS_AS(TransitionMatrix::from_matrix(diag), ArgumentError);
}

TEST_CASE("e_step matches the hand-evaluated posterior") {
  WorkedExample ex;
  const auto rec = e_step(ex.probs_y, ex.p_z1, ex.t, ex.noisy);
  CHECK(rec.normalizer == doctest::Approx(0.38).epsilon(1e-12));
  CHECK(rec.p_correct == doctest::Approx(0.30 / 0.38).epsilon(1e-9));
  CHECK(rec.p_wrong[0] == 0.0);
  CHECK(rec.p_wrong[1] == doctest::Approx(0.157895).epsilon(1e-5));
  CHECK(rec.p_wrong[2] == doctest::Approx(0.052632).epsilon(1e-5));
  CHECK(rec.total_mass() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("e_step collapses onto the correct cell when z is forced") {
  WorkedExample ex;
  const auto rec = e_step(ex.probs_y, 1.0, ex.t, ex.noisy);
  CHECK(rec.p_correct == 1.0);
  CHECK(rec.p_wrong.maxCoeff() == 0.0);
  CHECK(rec.normalizer == doctest::Approx(ex.probs_y[ex.noisy]).epsilon(1e-15));
}

TEST_CASE("e_step normalizer equals the marginal noisy probability") {
  RngEngine eng = make_engine(101);
  for (int trial = 0; trial < 200; ++trial) {
    const Index k_count = 2 + uniform_index(eng, 9);
    const auto t = random_transition(eng, k_count);
    const Vector probs = random_probs(eng, k_count);
    const double p_z1 = uniform01(eng);
    const Index noisy = uniform_index(eng, k_count);
    const double marginal = marginal_noisy_prob(probs, p_z1, t, noisy);
    const auto rec = e_step(probs, p_z1, t, noisy);
    CHECK(std::abs(rec.normalizer - marginal) < 1e-12);
    CHECK(std::abs(rec.total_mass() - 1.0) < 1e-12);
    CHECK(rec.p_wrong[noisy] == 0.0);
    CHECK(marginal >= 0.0);
    CHECK(marginal <= 1.0);
  }
}

TEST_CASE("e_step reports a degenerate posterior") {
  WorkedExample ex;
  Vector probs = Vector::Zero(3);
  probs[1] = 1.0;
  // Noisy label 0 with p_z1 = 0 and T(0,1) mass only: zero it out.
  Matrix m = Matrix::Zero(3, 3);
  m(2, 1) = 1.0;
  m(1, 0) = 1.0;
  m(1, 2) = 1.0;
  const auto t = TransitionMatrix::from_matrix(m);
  CHECK_THROWS_AS(e_step(probs, 0.0, t, 0), DegeneratePosteriorError);
}

TEST_CASE("marginal noisy probability worked values") {
  WorkedExample ex;
  CHECK(marginal_noisy_prob(ex.probs_y, 1.0, ex.t, 0) ==
        doctest::Approx(0.5).epsilon(1e-15));
  CHECK(marginal_noisy_prob(ex.probs_y, 0.6, ex.t, 0) ==
        doctest::Approx(0.38).epsilon(1e-12));

  // Uniform class probabilities reduce to p_z1/K + (1-p_z1) * row_sum / K.
  RngEngine eng = make_engine(55);
  for (int trial = 0; trial < 30; ++trial) {
    const Index k_count = 2 + uniform_index(eng, 7);
    const auto t = random_transition(eng, k_count);
    const Vector uni =
        Vector::Constant(k_count, 1.0 / static_cast<double>(k_count));
    const double p_z1 = uniform01(eng);
    const Index noisy = uniform_index(eng, k_count);
    const double expected =
        p_z1 / static_cast<double>(k_count) +
        (1.0 - p_z1) * t.row_sum(noisy) / static_cast<double>(k_count);
    CHECK(marginal_noisy_prob(uni, p_z1, t, noisy) ==
          doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("sufficient statistics accumulate per noisy label and merge") {
  auto st = SufficientStats::zeros(3);
  CHECK(st.s.isZero());

  WorkedExample ex;
  const auto rec = e_step(ex.probs_y, ex.p_z1, ex.t, ex.noisy);
  st.add(ex.noisy, rec);
  CHECK(st.s.row(0).transpose() == rec.p_wrong);
  CHECK(st.instances == 1);

  // Sharded accumulation equals a single pass.
  RngEngine eng = make_engine(77);
  std::vector<std::pair<Index, PosteriorRecord>> records;
  for (int i = 0; i < 64; ++i) {
    const auto t = random_transition(eng, 4);
    const Index noisy = uniform_index(eng, 4);
    records.emplace_back(
        noisy, e_step(random_probs(eng, 4), uniform01(eng), t, noisy));
  }
  const auto whole = accumulate_stats(records, 4);
  auto shard_a = SufficientStats::zeros(4);
  auto shard_b = SufficientStats::zeros(4);
  for (std::size_t i = 0; i < records.size(); ++i) {
    (i % 2 == 0 ? shard_a : shard_b).add(records[i].first, records[i].second);
  }
  shard_a.merge(shard_b);
  CHECK((whole.s - shard_a.s).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(whole.instances == shard_a.instances);
}

TEST_CASE("m_step reproduces the hand-derived update") {
  auto st = SufficientStats::zeros(3);
  st.s(0, 1) = 0.6;  // noisy class 1, true class 2 (1-based in the spec)
  st.s(0, 2) = 0.2;
  st.s(1, 0) = 0.5;
  st.s(1, 2) = 0.3;
  const auto prev = init_transition(3);
  const auto t = m_step(st, prev);
  CHECK(t(1, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(t(2, 0) == 0.0);
  CHECK(t(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(t(0, 2) == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(t(1, 2) == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("m_step falls back to the previous columns without evidence") {
  const auto prev = init_transition(4);
  const auto t = m_step(SufficientStats::zeros(4), prev);
  CHECK(t.matrix() == prev.matrix());
}

TEST_CASE("m_step output satisfies the transition invariants") {
  RngEngine eng = make_engine(303);
  for (int trial = 0; trial < 50; ++trial) {
    const Index k_count = 2 + uniform_index(eng, 9);
    auto st = SufficientStats::zeros(k_count);
    for (Index i = 0; i < k_count; ++i) {
      for (Index k = 0; k < k_count; ++k) {
        if (i != k && uniform01(eng) < 0.8) {
          st.s(i, k) = uniform(eng, 0.0, 5.0);
        }
      }
    }
    const auto t = m_step(st, init_transition(k_count));
    for (Index k = 0; k < k_count; ++k) {
      CHECK(t(k, k) == 0.0);
      CHECK(std::abs(t.matrix().col(k).sum() - 1.0) < 1e-12);
      CHECK(t.matrix().col(k).minCoeff() >= 0.0);
    }
  }
}

TEST_CASE("q_value prefers mass where the posterior mass is") {
  auto st = SufficientStats::zeros(3);
  st.s(0, 1) = 0.9;
  st.s(0, 2) = 0.1;

  Matrix concentrated = Matrix::Zero(3, 3);
  concentrated(0, 1) = 0.999;
  concentrated(2, 1) = 0.001;
  concentrated(0, 2) = 0.999;
  concentrated(1, 2) = 0.001;
  concentrated(1, 0) = 0.5;
  concentrated(2, 0) = 0.5;
  const auto good = TransitionMatrix::from_matrix(concentrated);
  const auto uniform_t = init_transition(3);
  CHECK(q_value(st, good) > q_value(st, uniform_t));

  CHECK(q_value(SufficientStats::zeros(3), good) == 0.0);
  CHECK(q_value(SufficientStats::zeros(3), uniform_t) == 0.0);
}

TEST_CASE("q_value returns a -infinity sentinel on zero-probability cells") {
  auto st = SufficientStats::zeros(3);
  st.s(2, 0) = 0.4;
  Matrix m = Matrix::Zero(3, 3);
  m(1, 0) = 1.0;  // T(2,0) = 0 where the stats carry weight
  m(0, 1) = 1.0;
  m(0, 2) = 1.0;
  const auto t = TransitionMatrix::from_matrix(m);
  CHECK(std::isinf(q_value(st, t)));
  CHECK(q_value(st, t) < 0.0);
}

TEST_CASE("EM updates never decrease the Q value") {
  RngEngine eng = make_engine(909);
  for (int dataset = 0; dataset < 20; ++dataset) {
    const Index k_count = 2 + uniform_index(eng, 7);
    std::vector<std::pair<Index, Vector>> data;  // (noisy, probs_y)
    std::vector<double> z_probs;
    for (int n = 0; n < 60; ++n) {
      data.emplace_back(uniform_index(eng, k_count),
                        random_probs(eng, k_count));
      z_probs.push_back(uniform01(eng));
    }
    auto t = init_transition(k_count);
    for (int iter = 0; iter < 5; ++iter) {
      auto st = SufficientStats::zeros(k_count);
      for (std::size_t n = 0; n < data.size(); ++n) {
        st.add(data[n].first,
               e_step(data[n].second, z_probs[n], t, data[n].first));
      }
      const auto next = m_step(st, t);
      CHECK(q_value(st, next) >= q_value(st, t) - 1e-10);
      t = next;
    }
  }
}

TEST_CASE("explicit loss equals plain cross entropy when z saturates") {
  WorkedExample ex;
  Vector h(3);
  h << 1.3, -0.2, 0.5;
  const auto xe = softmax_cross_entropy(h, 0);
  const auto r = explicit_loss(h, 40.0, 0, ex.t);
  CHECK(std::abs(r.loss - xe.loss) < 1e-9);
}

TEST_CASE("explicit loss matches the hand-evaluated upper bound") {
  WorkedExample ex;
  // Logits whose softmax is exactly (0.5, 0.3, 0.2).
  Vector h(3);
  h << std::log(0.5), std::log(0.3), std::log(0.2);
  const double z_logit = std::log(0.6 / 0.4);  // sigma = 0.6
  const auto r = explicit_loss(h, z_logit, 0, ex.t);
  CHECK(r.loss == doctest::Approx(1.066613).epsilon(1e-5));
  const double neg_log_marginal =
      -std::log(marginal_noisy_prob(ex.probs_y, 0.6, ex.t, 0));
  CHECK(neg_log_marginal == doctest::Approx(0.967584).epsilon(1e-5));
  CHECK(r.loss >= neg_log_marginal - 1e-12);
}

TEST_CASE("explicit loss upper-bounds the negative log marginal") {
  RngEngine eng = make_engine(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const Index k_count = 2 + uniform_index(eng, 9);
    const auto t = random_transition(eng, k_count);
    const Vector h = gaussian_vector(eng, k_count, 2.0);
    const double z_logit = uniform(eng, -6.0, 6.0);
    const Index noisy = uniform_index(eng, k_count);
    const auto r = explicit_loss(h, z_logit, noisy, t);
    const Vector probs = softmax(h);
    const double marginal =
        marginal_noisy_prob(probs, sigmoid(z_logit), t, noisy);
    CHECK(r.loss >= -std::log(marginal) - 1e-12);
  }
}

TEST_CASE("explicit loss is exact past the inner mixture for single-entry rows") {
  // Row 0 has exactly one nonzero entry (T(0,1) = 1), so the inner Jensen
  // step over k is an identity and the loss collapses to the one-step bound
  // -sigma*log(p_0) - (1-sigma)*log(T_row * p_1).
  Matrix m = Matrix::Zero(3, 3);
  m(0, 1) = 1.0;
  m(1, 2) = 1.0;
  m(1, 0) = 0.3;
  m(2, 0) = 0.7;
  const auto t = TransitionMatrix::from_matrix(m);
  RngEngine eng = make_engine(4242);
  for (int trial = 0; trial < 50; ++trial) {
    const Vector h = gaussian_vector(eng, 3, 1.5);
    const double z_logit = uniform(eng, -4.0, 4.0);
    const double sig = sigmoid(z_logit);
    const auto r = explicit_loss(h, z_logit, 0, t);
    const Vector probs = softmax(h);
    const double one_step =
        -sig * std::log(probs[0]) - (1.0 - sig) * std::log(1.0 * probs[1]);
    CHECK(r.loss == doctest::Approx(one_step).epsilon(1e-12));
    CHECK(r.loss >=
          -std::log(marginal_noisy_prob(probs, sig, t, 0)) - 1e-12);
  }
}

TEST_CASE("explicit loss gradients pass the finite-difference check") {
  RngEngine eng = make_engine(606);
  for (int trial = 0; trial < 20; ++trial) {
    const Index k_count = 2 + uniform_index(eng, 6);
    const auto t = random_transition(eng, k_count);
    const Index noisy = uniform_index(eng, k_count);
    const ScalarFn fn = [&](const Vector& p) {
      const Vector h = p.head(k_count);
      const double z_logit = p[k_count];
      const auto r = explicit_loss(h, z_logit, noisy, t);
      Vector g(k_count + 1);
      g << r.grad_h, r.grad_z_logit;
      return std::make_pair(r.loss, g);
    };
    const Vector point = gaussian_vector(eng, k_count + 1, 1.0);
    CHECK(finite_diff_check(fn, point, 1e-5) < 1e-4);
  }
}

TEST_CASE("explicit loss rejects an all-zero transition row") {
  // Column-stochastic matrix whose row 1 is all zero.
  Matrix m = Matrix::Zero(3, 3);
  m(0, 1) = 1.0;
  m(0, 2) = 1.0;
  m(2, 0) = 1.0;
  const auto t = TransitionMatrix::from_matrix(m);
  Vector h = Vector::Zero(3);
  CHECK_THROWS_AS(explicit_loss(h, 0.0, 1, t), DegeneratePosteriorError);
}

TEST_CASE("transition CSV round trip") {
  RngEngine eng = make_engine(808);
  const auto t = random_transition(eng, 5);
  const auto path =
      std::filesystem::temp_directory_path() / "emflow_t_roundtrip.csv";
  write_transition_csv(t, path.string());
  const auto back = read_transition_csv(path.string());
  CHECK((back.matrix() - t.matrix()).cwiseAbs().maxCoeff() == 0.0);
  std::filesystem::remove(path);

  CHECK_THROWS_AS(read_transition_csv("/nonexistent/path.csv"), IoError);
}
