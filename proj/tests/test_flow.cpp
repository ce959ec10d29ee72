#include <doctest.h>

#include <cmath>
#include <cstring>

#include "emflow/errors.hpp"
#include "emflow/flow.hpp"
#include "emflow/ops.hpp"
#include "emflow/rng.hpp"

using namespace emflow;

namespace {

FlowParams random_flow(RngEngine& eng, Index k_count) {
  FlowParams f;
  f.u = gaussian_vector(eng, k_count, 0.8);
  f.w = gaussian_vector(eng, k_count, 0.8);
  f.w_prime = gaussian_vector(eng, k_count, 0.5);
  f.w_prime[0] += 1.0;
  f.beta = gaussian(eng) * 0.5;
  f.norm_target = 1.0;
  return f;
}

}  // namespace

TEST_CASE("constrain_u satisfies the invertibility bound") {
  Vector w(2);
  w << 1.0, 0.0;

  Vector u = Vector::Zero(2);
  Vector u_eff = constrain_u(u, w);
  CHECK(w.dot(u_eff) == doctest::Approx(-1.0 + std::log(2.0)).epsilon(1e-12));

  u << -5.0, 0.0;
  u_eff = constrain_u(u, w);
  CHECK(w.dot(u_eff) ==
        doctest::Approx(-1.0 + std::log1p(std::exp(-5.0))).epsilon(1e-9));

  RngEngine eng = make_engine(17);
  for (int trial = 0; trial < 200; ++trial) {
    const Index k_count = 2 + uniform_index(eng, 8);
    const Vector uu = gaussian_vector(eng, k_count, 3.0);
    const Vector ww = gaussian_vector(eng, k_count, 3.0);
    CHECK(ww.dot(constrain_u(uu, ww)) >= -1.0);
  }

  CHECK_THROWS_AS(constrain_u(u, Vector::Zero(2)), ConstraintError);
}

TEST_CASE("planar step identity and hand-computed case") {
  Vector h(2);
  h << 1.0, -1.0;
  Vector w(2);
  w << 1.0, 0.0;

  const Vector same = planar_step(h, Vector::Zero(2), w, 0.0);
  CHECK(same == h);

  Vector u_eff(2);
  u_eff << 0.5, 0.0;
  const Vector moved = planar_step(h, u_eff, w, 0.0);
  CHECK(moved[0] == doctest::Approx(1.0 + 0.5 * std::tanh(1.0)).epsilon(1e-12));
  CHECK(moved[0] == doctest::Approx(1.380797).epsilon(1e-6));
  CHECK(moved[1] == -1.0);
}

TEST_CASE("planar step round-trips through the numerical inverse") {
  RngEngine eng = make_engine(29);
  for (int trial = 0; trial < 100; ++trial) {
    const Index k_count = 2 + uniform_index(eng, 8);
    const Vector h = gaussian_vector(eng, k_count, 2.0);
    const Vector w_eff = project_w(gaussian_vector(eng, k_count, 1.0), 1.0);
    const Vector u_eff = constrain_u(gaussian_vector(eng, k_count, 1.0), w_eff);
    const double beta = gaussian(eng);
    const Vector h_prime = planar_step(h, u_eff, w_eff, beta);
    const Vector back = invert_planar(h_prime, u_eff, w_eff, beta);
    CHECK((back - h).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("invert_planar rejects a non-invertible configuration") {
  Vector w(2);
  w << 1.0, 0.0;
  Vector u(2);
  u << -1.5, 0.0;  // w.u = -1.5 < -1
  Vector h_prime(2);
  h_prime << 0.3, 0.2;
  CHECK_THROWS_AS(invert_planar(h_prime, u, w, 0.0), InversionError);
}

TEST_CASE("scale_shift worked cases") {
  Vector h_prime(2);
  h_prime << 1.380797, -1.0;
  Vector w_prime(2);
  w_prime << 2.0, 0.3;
  const Vector h_hat = scale_shift(h_prime, w_prime);
  CHECK(h_hat[0] == doctest::Approx(2.761594).epsilon(1e-6));
  CHECK(h_hat[1] == doctest::Approx(-0.585761).epsilon(1e-6));

  Vector e1 = Vector::Zero(2);
  e1[0] = 1.0;
  CHECK(scale_shift(h_prime, e1) == h_prime);

  Vector zero_first(2);
  zero_first << 0.0, -1.0;
  CHECK(scale_shift(zero_first, w_prime) == zero_first);
}

TEST_CASE("project_w scales onto the target sphere") {
  Vector w(2);
  w << 3.0, 4.0;
  const Vector p = project_w(w, 1.0);
  CHECK(p[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(0.8).epsilon(1e-12));

  const Vector p2 = project_w(p, 1.0);
  CHECK((p2 - p).cwiseAbs().maxCoeff() < 1e-12);

  RngEngine eng = make_engine(41);
  for (int trial = 0; trial < 50; ++trial) {
    const Vector v = gaussian_vector(eng, 3 + uniform_index(eng, 5), 2.0);
    CHECK(std::abs(project_w(v, 2.0).squaredNorm() - 2.0) < 1e-12);
  }

  CHECK_THROWS_AS(project_w(Vector::Zero(3), 1.0), ConstraintError);
}

TEST_CASE("frozen identity flow reproduces plain cross entropy bitwise") {
  RngEngine eng = make_engine(53);
  for (int trial = 0; trial < 50; ++trial) {
    const Index k_count = 2 + uniform_index(eng, 8);
    const Vector h = gaussian_vector(eng, k_count, 2.0);
    const Index noisy = uniform_index(eng, k_count);
    const auto r = implicit_loss(h, identity_flow(k_count), noisy,
                                 FrozenSchedule::pretraining());
    const auto xe = softmax_cross_entropy(h, noisy);
    CHECK(std::memcmp(&r.loss, &xe.loss, sizeof(double)) == 0);
    CHECK((r.grad_h - softmax_cross_entropy_backward(xe.probs, noisy))
              .cwiseAbs()
              .maxCoeff() == 0.0);
    CHECK(r.grad_flow.u.isZero());
    CHECK(r.grad_flow.w.isZero());
    CHECK(r.grad_flow.w_prime.isZero());
    CHECK(r.grad_flow.beta == 0.0);
  }
}

TEST_CASE("frozen identity flow keeps the softmax shift invariance") {
  RngEngine eng = make_engine(67);
  for (int trial = 0; trial < 30; ++trial) {
    const Index k_count = 2 + uniform_index(eng, 6);
    const Vector h = gaussian_vector(eng, k_count, 2.0);
    const Index noisy = uniform_index(eng, k_count);
    const double shift = uniform(eng, -20.0, 20.0);
    const auto a = implicit_loss(h, identity_flow(k_count), noisy,
                                 FrozenSchedule::pretraining());
    const auto b =
        implicit_loss((h.array() + shift).matrix(), identity_flow(k_count),
                      noisy, FrozenSchedule::pretraining());
    CHECK(std::abs(a.loss - b.loss) < 1e-6);
  }
}

TEST_CASE("implicit loss gradients pass the finite-difference check") {
  RngEngine eng = make_engine(71);
  for (int trial = 0; trial < 20; ++trial) {
    const Index k_count = 2 + uniform_index(eng, 6);
    const Index noisy = uniform_index(eng, k_count);
    // Layout: h | u | w | w_prime | beta, all raw (pre-constraint).
    const ScalarFn fn = [&](const Vector& p) {
      FlowParams f;
      Index at = 0;
      const Vector h = p.segment(at, k_count);
      at += k_count;
      f.u = p.segment(at, k_count);
      at += k_count;
      f.w = p.segment(at, k_count);
      at += k_count;
      f.w_prime = p.segment(at, k_count);
      at += k_count;
      f.beta = p[at];
      f.norm_target = 1.0;
      const auto r = implicit_loss(h, f, noisy, FrozenSchedule::all_trainable());
      Vector g(4 * k_count + 1);
      g << r.grad_h, r.grad_flow.u, r.grad_flow.w, r.grad_flow.w_prime,
          r.grad_flow.beta;
      return std::make_pair(r.loss, g);
    };
    Vector point = gaussian_vector(eng, 4 * k_count + 1, 1.0);
    // Keep w away from the origin where the projection is not differentiable.
    const Vector w_part = point.segment(2 * k_count, k_count);
    if (w_part.norm() < 0.5) {
      point.segment(2 * k_count, k_count) =
          w_part + Vector::Ones(k_count);
    }
    CHECK(finite_diff_check(fn, point, 1e-5) < 1e-4);
  }
}
