#include <doctest.h>

#include <cmath>

#include "emflow/errors.hpp"
#include "emflow/ops.hpp"

using namespace emflow;

namespace {

// Independent high-precision log-sum-exp, used as the oracle for the
// cross-entropy forward pass.
long double lse_oracle(const Vector& logits) {
  long double m = logits[0];
  for (Index i = 1; i < logits.size(); ++i) {
    m = std::max<long double>(m, logits[i]);
  }
  long double acc = 0.0L;
  for (Index i = 0; i < logits.size(); ++i) {
    acc += std::exp(static_cast<long double>(logits[i]) - m);
  }
  return m + std::log(acc);
}

}  // namespace

TEST_CASE("softmax cross entropy matches symmetric and saturated cases") {
  Vector two = Vector::Zero(2);
  auto r = softmax_cross_entropy(two, 0);
  CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(r.probs[0] == doctest::Approx(0.5));
  CHECK(r.probs[1] == doctest::Approx(0.5));

  Vector sat(2);
  sat << 1000.0, 0.0;
  auto rs = softmax_cross_entropy(sat, 0);
  CHECK(std::isfinite(rs.loss));
  CHECK(rs.loss < 1e-12);
  CHECK(rs.probs.allFinite());
}

TEST_CASE("softmax cross entropy agrees with a high-precision oracle") {
  Vector logits(3);
  logits << 1.0, 2.0, 3.0;
  auto r = softmax_cross_entropy(logits, 2);
  const long double lse = lse_oracle(logits);
  CHECK(r.loss == doctest::Approx(static_cast<double>(lse - 3.0L))
                      .epsilon(1e-12));
  CHECK(r.probs[0] == doctest::Approx(0.09003).epsilon(1e-4));
  CHECK(r.probs[1] == doctest::Approx(0.24473).epsilon(1e-4));
  CHECK(r.probs[2] == doctest::Approx(0.66524).epsilon(1e-4));
  CHECK(r.probs.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("softmax cross entropy is shift invariant") {
  RngEngine eng = make_engine(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Index k = 2 + uniform_index(eng, 6);
    const Vector logits = gaussian_vector(eng, k, 3.0);
    const Index target = uniform_index(eng, k);
    const double shift = uniform(eng, -50.0, 50.0);
    auto a = softmax_cross_entropy(logits, target);
    auto b = softmax_cross_entropy(
        (logits.array() + shift).matrix(), target);
    CHECK(std::abs(a.loss - b.loss) < 1e-9);
    CHECK((a.probs - b.probs).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("softmax cross entropy rejects bad targets") {
  Vector logits = Vector::Zero(3);
  CHECK_THROWS_AS(softmax_cross_entropy(logits, 3), ArgumentError);
  CHECK_THROWS_AS(softmax_cross_entropy(logits, -1), ArgumentError);
}

TEST_CASE("span mean basics and loop oracle") {
  Matrix rows(2, 2);
  rows << 1, 3, 3, 1;
  const Vector m = span_mean(rows, {0, 1});
  CHECK(m[0] == doctest::Approx(2.0));
  CHECK(m[1] == doctest::Approx(2.0));

  const Vector single = span_mean(rows, {1, 1});
  CHECK(single[0] == 3.0);
  CHECK(single[1] == 1.0);

  RngEngine eng = make_engine(7);
  Matrix big(5, 4);
  for (Index r = 0; r < 5; ++r) {
    for (Index c = 0; c < 4; ++c) big(r, c) = gaussian(eng);
  }
  const Vector got = span_mean(big, {1, 3});
  for (Index c = 0; c < 4; ++c) {
    double acc = 0.0;
    for (Index r = 1; r <= 3; ++r) acc += big(r, c);
    CHECK(std::abs(got[c] - acc / 3.0) < 1e-15);
  }

  CHECK_THROWS_AS(span_mean(big, {3, 1}), SpanError);
  CHECK_THROWS_AS(span_mean(big, {0, 5}), SpanError);
}

TEST_CASE("finite difference checker on a quadratic") {
  const ScalarFn fn = [](const Vector& p) {
    Vector g(1);
    g[0] = 2.0 * p[0];
    return std::make_pair(p[0] * p[0], g);
  };
  Vector x(1);
  x << 3.0;
  CHECK(finite_diff_check(fn, x, 1e-5) < 1e-8);
}

TEST_CASE("primitive reverse rules pass the gradient check") {
  RngEngine eng = make_engine(23);

  // Each primitive is reduced to a scalar through a fixed random projection
  // so the checker sees d(proj . op)/d(input).
  auto check = [&](const ScalarFn& fn, Index n) {
    for (int trial = 0; trial < 20; ++trial) {
      const Vector p = gaussian_vector(eng, n, 1.0);
      CHECK(finite_diff_check(fn, p, 1e-5) < 1e-4);
    }
  };

  const Vector proj4 = gaussian_vector(eng, 4, 1.0);

  check(
      [&](const Vector& p) {
        const Vector y = tanh_fwd(p);
        return std::make_pair(proj4.dot(y), Vector(tanh_bwd(y, proj4)));
      },
      4);

  check(
      [&](const Vector& p) {
        const Vector y = sigmoid_fwd(p);
        return std::make_pair(proj4.dot(y), Vector(sigmoid_bwd(y, proj4)));
      },
      4);

  // 2x2 matrix product with a fixed right factor.
  Matrix rhs(2, 2);
  rhs << 0.3, -1.2, 0.7, 0.4;
  Matrix proj22(2, 2);
  proj22 << 1.0, -0.5, 0.25, 2.0;
  check(
      [&](const Vector& p) {
        Matrix a(2, 2);
        a << p[0], p[1], p[2], p[3];
        const Matrix c = matmul(a, rhs);
        const Matrix da = matmul_bwd_lhs(proj22, rhs);
        Vector g(4);
        g << da(0, 0), da(0, 1), da(1, 0), da(1, 1);
        return std::make_pair((c.array() * proj22.array()).sum(), g);
      },
      4);

  // Elementwise add against a fixed other operand.
  const Vector other = gaussian_vector(eng, 4, 1.0);
  check(
      [&](const Vector& p) {
        return std::make_pair(proj4.dot(add(p, other)), proj4);
      },
      4);

  // Concatenation of two halves.
  const Vector proj8 = gaussian_vector(eng, 8, 1.0);
  check(
      [&](const Vector& p) {
        const Vector y = concat({p.head(4), p.tail(4)});
        auto parts = concat_backward(proj8, {4, 4});
        Vector g(8);
        g << parts[0], parts[1];
        return std::make_pair(proj8.dot(y), g);
      },
      8);

  // Embedding lookup of rows 1 and 0 from a 3x2 table.
  const Vector proj_rows = gaussian_vector(eng, 4, 1.0);
  check(
      [&](const Vector& p) {
        Matrix table(3, 2);
        table << p[0], p[1], p[2], p[3], p[4], p[5];
        const std::vector<int> ids{1, 0};
        const Matrix rows = embedding_lookup(table, ids);
        Matrix row_grads(2, 2);
        row_grads << proj_rows[0], proj_rows[1], proj_rows[2], proj_rows[3];
        Matrix tg = Matrix::Zero(3, 2);
        embedding_backward(row_grads, ids, tg);
        Vector g(6);
        g << tg(0, 0), tg(0, 1), tg(1, 0), tg(1, 1), tg(2, 0), tg(2, 1);
        double val = 0.0;
        for (Index r = 0; r < 2; ++r) {
          for (Index c = 0; c < 2; ++c) val += rows(r, c) * row_grads(r, c);
        }
        return std::make_pair(val, g);
      },
      6);

  // Dropout with a frozen mask is a linear map.
  RngEngine mask_eng = make_engine(99);
  const Vector mask = dropout_mask(mask_eng, 4, 0.5);
  check(
      [&](const Vector& p) {
        const Vector y = apply_dropout(p, mask, 0.5);
        return std::make_pair(proj4.dot(y),
                              Vector(dropout_backward(proj4, mask, 0.5)));
      },
      4);
}

TEST_CASE("dropout is deterministic per seed and inverted") {
  RngEngine a = make_engine(5);
  RngEngine b = make_engine(5);
  const Vector ma = dropout_mask(a, 64, 0.1);
  const Vector mb = dropout_mask(b, 64, 0.1);
  CHECK(ma == mb);
  // Kept entries are scaled by 1/(1-rate).
  Vector x = Vector::Ones(64);
  const Vector y = apply_dropout(x, ma, 0.1);
  for (Index i = 0; i < 64; ++i) {
    CHECK((y[i] == 0.0 || y[i] == doctest::Approx(1.0 / 0.9)));
  }
}

TEST_CASE("forward ops keep finite inputs finite") {
  RngEngine eng = make_engine(31);
  for (int trial = 0; trial < 50; ++trial) {
    const Index k = 2 + uniform_index(eng, 8);
    const Vector logits = gaussian_vector(eng, k, 30.0);
    auto r = softmax_cross_entropy(logits, uniform_index(eng, k));
    CHECK(std::isfinite(r.loss));
    CHECK(r.probs.allFinite());
    CHECK(tanh_fwd(logits).allFinite());
    CHECK(sigmoid_fwd(logits).allFinite());
  }
}
