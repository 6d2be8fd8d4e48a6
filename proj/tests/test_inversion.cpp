// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch.hpp>

#include "ipac/inversion.hpp"
#include "ipac/phantom.hpp"

using namespace ipac;

namespace {
ProbeGeometry probe(int n, double pitch = 0.1e-3) {
  ProbeGeometry g;
  g.n_elements = n;
  g.pitch = pitch;
  g.element_width = 0.8 * pitch;
  g.element_height = 1.5e-3;
  g.elevation_focus = 8e-3;
  return g;
}

PulseSpec pulse_l22() {
  PulseSpec p;
  p.center_frequency = 2.0 * kPi * 15.625e6;
  p.fractional_bandwidth = 0.67;
  p.n_cycles = 3;
  p.sampling_rate = 62.5e6;
  return p;
}

TransmitScheme plane(std::vector<double> deg) {
  TransmitScheme s;
  s.kind = TransmitScheme::Kind::plane_wave;
  for (const double d : deg) s.angles.push_back(d * kPi / 180.0);
  return s;
}

CMat random_h(Rng& rng, int n) {
  CMat h(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) h(i, j) = cplx(rng.normal(), rng.normal());
  return h;
}

CVec random_u(Rng& rng, int n) {
  CVec u(n);
  for (int i = 0; i < n; ++i) u(i) = cplx(rng.normal(), rng.normal());
  return u;
}

// independent evaluation of the model, no library matrix helpers
CVec model_direct(const CMat& h, const CVec& u) {
  const int n = static_cast<int>(u.size());
  CVec m(n);
  for (int i = 0; i < n; ++i) {
    cplx acc(0, 0);
    for (int j = 0; j < n; ++j) acc += h(i, j) * u(j);
    m(i) = u(i) * acc;
  }
  return m;
}

// hand-rolled Gauss-Jordan inverse, the closed-form solver oracle
CMat gauss_jordan_inverse(CMat a) {
  const int n = static_cast<int>(a.rows());
  CMat inv = CMat::Identity(n, n);
  for (int col = 0; col < n; ++col) {
    int piv = col;
    double best = std::abs(a(col, col));
    for (int r = col + 1; r < n; ++r)
      if (std::abs(a(r, col)) > best) {
        best = std::abs(a(r, col));
        piv = r;
      }
    REQUIRE(best > 0.0);
    a.row(col).swap(a.row(piv));
    inv.row(col).swap(inv.row(piv));
    const cplx d = a(col, col);
    a.row(col) /= d;
    inv.row(col) /= d;
    for (int r = 0; r < n; ++r) {
      if (r == col) continue;
      const cplx f = a(r, col);
      a.row(r) -= f * a.row(col);
      inv.row(r) -= f * inv.row(col);
    }
  }
  return inv;
}
}  // namespace

TEST_CASE("second difference matrix matches the stencil and kills constants") {
  const RMat d2 = second_difference_matrix(5);
  REQUIRE(d2(0, 0) == -1.0);
  REQUIRE(d2(0, 1) == 1.0);
  REQUIRE(d2(0, 2) == 0.0);
  for (int i = 1; i < 4; ++i) {
    REQUIRE(d2(i, i - 1) == 1.0);
    REQUIRE(d2(i, i) == -2.0);
    REQUIRE(d2(i, i + 1) == 1.0);
  }
  REQUIRE(d2(4, 3) == -1.0);
  REQUIRE(d2(4, 4) == 1.0);
  REQUIRE((d2 * RVec::Constant(5, 3.7)).norm() == 0.0);
}

TEST_CASE("gradient edge cases") {
  Rng rng(1);
  const CMat h = random_h(rng, 4);
  REQUIRE(gradient(CMat::Zero(4, 4), random_u(rng, 4)).norm() == 0.0);
  REQUIRE(gradient(h, CVec::Zero(4)).norm() == 0.0);
}

TEST_CASE("gradient entries are delta_mn (Hu)_m + u_m H_mn") {
  Rng rng(2);
  const CMat h = random_h(rng, 5);
  const CVec u = random_u(rng, 5);
  const CMat g = gradient(h, u);
  const CVec hu = h * u;
  for (int m = 0; m < 5; ++m)
    for (int n = 0; n < 5; ++n) {
      const cplx want = (m == n ? hu(m) : cplx(0, 0)) + u(m) * h(m, n);
      REQUIRE(std::abs(g(m, n) - want) < 1e-14);
    }
}

TEST_CASE("analytic gradient matches central finite differences of the model") {
  Rng rng(3);
  const double step = 1e-6;
  for (int rep = 0; rep < 5; ++rep) {
    const int n = 6;
    const CMat h = random_h(rng, n);
    const CVec u = random_u(rng, n);
    const CMat g = gradient(h, u);
    for (int col = 0; col < n; ++col) {
      CVec e = CVec::Zero(n);
      e(col) = cplx(step, 0.0);
      const CVec d_re = (model_direct(h, u + e) - model_direct(h, u - e)) / (2.0 * step);
      e(col) = cplx(0.0, step);
      const CVec d_im =
          (model_direct(h, u + e) - model_direct(h, u - e)) / (cplx(0.0, 2.0 * step));
      for (int row = 0; row < n; ++row) {
        const double scale = std::abs(g(row, col)) + 1.0;
        REQUIRE(std::abs(d_re(row) - g(row, col)) < 1e-6 * scale);
        REQUIRE(std::abs(d_im(row) - g(row, col)) < 1e-6 * scale);
      }
    }
  }
}

TEST_CASE("taylor remainder is exactly the quadratic term") {
  Rng rng(4);
  for (int rep = 0; rep < 10; ++rep) {
    const int n = 4 + static_cast<int>(rng.uniform() * 5);
    const CMat h = random_h(rng, n);
    const CVec u0 = random_u(rng, n);
    const CVec delta = random_u(rng, n) * 0.3;
    const CVec lhs =
        model_direct(h, u0 + delta) - model_direct(h, u0) - gradient(h, u0) * delta;
    const CVec rhs = delta.cwiseProduct(h * delta);
    REQUIRE((lhs - rhs).norm() <= 1e-12 * (rhs.norm() + 1e-12));
  }
}

TEST_CASE("gradient at ones is symmetric when H is symmetric") {
  Rng rng(5);
  CMat h = random_h(rng, 6);
  h = (h + h.transpose()).eval();
  const CMat g = gradient(h, CVec::Ones(6));
  REQUIRE((g - g.transpose()).norm() < 1e-12 * g.norm());
}

TEST_CASE("augmented operator satisfies the expansion-point identity") {
  Rng rng(6);
  for (int rep = 0; rep < 10; ++rep) {
    const int n = 4 + static_cast<int>(rng.uniform() * 5);
    const CMat h = random_h(rng, n);
    const CVec u0 = random_u(rng, n);
    const auto op = assemble_k(h, u0);
    CVec aug(n + 1);
    aug.head(n) = u0;
    aug(n) = cplx(1.0, 0.0);
    const CVec lhs = op.k * aug;
    const CVec want = model_direct(h, u0);
    REQUIRE((lhs - want).norm() <= 1e-12 * want.norm());
  }
}

TEST_CASE("augmented column at ones matches direct evaluation") {
  Rng rng(7);
  const int n = 5;
  const CMat h = random_h(rng, n);
  const CVec ones = CVec::Ones(n);
  const auto op = assemble_k(h, ones);
  // M(1) = H row sums; grad(1) 1 = H 1 + diag(H 1) 1 = 2 H 1
  const CVec want = h.rowwise().sum() - 2.0 * (h * ones);
  REQUIRE((op.shift() - want).norm() < 1e-12 * want.norm());
}

TEST_CASE("operator scales linearly with the reflectivity") {
  Rng rng(8);
  const int n = 5;
  const CMat h = random_h(rng, n);
  const CVec u0 = random_u(rng, n);
  const auto a = assemble_k(h, u0);
  const auto b = assemble_k((3.5 * h).eval(), u0);
  REQUIRE((b.k - 3.5 * a.k).norm() < 1e-12 * b.k.norm());
}

TEST_CASE("angle stacking shapes and invariance") {
  Rng rng(9);
  const CMat k1 = random_h(rng, 4);
  const CVec s1 = random_u(rng, 4);
  const auto [k_one, s_one] = stack_angles({k1}, {s1});
  REQUIRE(k_one == k1);
  REQUIRE(s_one == s1);

  // 11 angles by 128 elements stacks to 1408 rows
  std::vector<CMat> blocks;
  std::vector<CVec> rhs;
  for (int a = 0; a < 11; ++a) {
    blocks.push_back(CMat::Zero(128, 129));
    rhs.push_back(CVec::Zero(128));
  }
  const auto [k_stack, s_stack] = stack_angles(blocks, rhs);
  REQUIRE(k_stack.rows() == 1408);
  REQUIRE(s_stack.size() == 1408);

  // permuting the angle order leaves the least-squares solution unchanged
  std::vector<CMat> ka, kb;
  std::vector<CVec> sa, sb;
  for (int a = 0; a < 3; ++a) {
    ka.push_back(random_h(rng, 4));
    sa.push_back(random_u(rng, 4));
  }
  kb = {ka[2], ka[0], ka[1]};
  sb = {sa[2], sa[0], sa[1]};
  const auto [k_a, s_a] = stack_angles(ka, sa);
  const auto [k_b, s_b] = stack_angles(kb, sb);
  const auto reg = RegularizationSpec::for_size(4, 0.1);
  const CVec ua = tikhonov_solve(k_a, s_a, reg);
  const CVec ub = tikhonov_solve(k_b, s_b, reg);
  REQUIRE((ua - ub).norm() < 1e-10 * ua.norm());

  std::vector<CMat> bad = {random_h(rng, 4), random_h(rng, 5)};
  std::vector<CVec> bad_s = {random_u(rng, 4), random_u(rng, 5)};
  REQUIRE_THROWS_AS(stack_angles(bad, bad_s), DimensionError);
}

TEST_CASE("unregularized solve inverts a square system exactly") {
  Rng rng(10);
  const int n = 8;
  const CMat k = random_h(rng, n);
  const CVec truth = random_u(rng, n);
  const CVec s = k * truth;
  const auto reg = RegularizationSpec::for_size(n, 0.0);
  const CVec u = tikhonov_solve(k, s, reg);
  REQUIRE((u - truth).norm() < 1e-10 * truth.norm());

  REQUIRE(tikhonov_solve(k, CVec::Zero(n), reg).norm() < 1e-12);
}

TEST_CASE("solver matches the explicitly formed closed form up to 64 unknowns") {
  Rng rng(11);
  for (const int n : {8, 32, 64}) {
    CMat k(2 * n, n);
    for (int i = 0; i < k.rows(); ++i)
      for (int j = 0; j < n; ++j) k(i, j) = cplx(rng.normal(), rng.normal());
    const CVec s = random_u(rng, 2 * n);
    const auto reg = RegularizationSpec::for_size(n, 0.01);
    const CVec u = tikhonov_solve(k, s, reg);

    const CMat normal =
        k.adjoint() * k + reg.alpha * (reg.d2.transpose() * reg.d2).cast<cplx>();
    const CVec want = gauss_jordan_inverse(normal) * (k.adjoint() * s);
    REQUIRE((u - want).norm() <= 1e-8 * want.norm());
  }
}

TEST_CASE("regularization sweep: smoothness penalty falls, residual rises") {
  Rng rng(12);
  const int n = 16;
  CMat k(3 * n, n);
  for (int i = 0; i < k.rows(); ++i)
    for (int j = 0; j < n; ++j) k(i, j) = cplx(rng.normal(), rng.normal());
  const CVec s = random_u(rng, 3 * n);
  double prev_smooth = std::numeric_limits<double>::infinity();
  double prev_resid = 0.0;
  for (const double alpha : {1e-4, 1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2}) {
    const auto reg = RegularizationSpec::for_size(n, alpha);
    const CVec u = tikhonov_solve(k, s, reg);
    const double smooth = (reg.d2.cast<cplx>() * u).norm();
    const double resid = (s - k * u).norm();
    REQUIRE(smooth <= prev_smooth * (1.0 + 1e-9));
    REQUIRE(resid >= prev_resid * (1.0 - 1e-9));
    prev_smooth = smooth;
    prev_resid = resid;
  }
}

TEST_CASE("normal-equation residual orthogonality holds") {
  Rng rng(13);
  const int n = 12;
  CMat k(30, n);
  for (int i = 0; i < 30; ++i)
    for (int j = 0; j < n; ++j) k(i, j) = cplx(rng.normal(), rng.normal());
  const CVec s = random_u(rng, 30);
  const auto reg = RegularizationSpec::for_size(n, 0.05);
  const CVec u = tikhonov_solve(k, s, reg);
  const CVec resid =
      k.adjoint() * (s - k * u) - reg.alpha * (reg.d2.transpose() * reg.d2).cast<cplx>() * u;
  REQUIRE(resid.norm() <= 1e-8 * (k.adjoint() * s).norm());
}

TEST_CASE("singular normal matrix raises with the smallest eigenvalue named") {
  const CMat k = CMat::Zero(4, 4);
  const CVec s = CVec::Ones(4);
  const auto reg = RegularizationSpec::for_size(4, 0.0);
  try {
    tikhonov_solve(k, s, reg);
    FAIL("expected SingularMatrixError");
  } catch (const SingularMatrixError& e) {
    REQUIRE(std::string(e.what()).find("smallest eigenvalue") != std::string::npos);
  }
}

namespace {
// end-to-end inversion fixture on synthetic channel data with the true
// scatterer scene supplied directly (no localization in the loop)
struct InversionFixture {
  ProbeGeometry geom = probe(16);
  PulseSpec pulse = pulse_l22();
  TransmitScheme scheme = plane({-3, 0, 3});
  std::vector<ScattererScene> scenes;

  IpacResult run(const AberrationFunction& screen, double snr_db, int max_iter,
                 int n_frames = 2) {
    Rng rng(500);
    scenes.clear();
    for (int f = 0; f < n_frames; ++f) {
      ScattererScene sc;
      for (int i = 0; i < 6; ++i) {
        sc.positions.push_back({rng.uniform(-0.6e-3, 0.6e-3), rng.uniform(3.5e-3, 6.5e-3)});
        sc.reflectivity.push_back(cplx(1.0, 0.0));
      }
      scenes.push_back(sc);
    }
    auto ch = simulate_channels(scenes, {}, screen, geom, pulse, scheme, 1540.0);
    if (std::isfinite(snr_db)) ch = add_noise(ch, snr_db, 600);

    IpacProblem prob;
    prob.geom = geom;
    prob.pulse = pulse;
    prob.scheme = scheme;
    prob.c = 1540.0;
    prob.scene_estimator = [this](const std::vector<double>&) { return scenes; };
    IpacOptions opt;
    opt.max_iter = max_iter;
    opt.max_band_bins = 48;
    return ipac_iterate(ch, prob, opt);
  }
};
}  // namespace

TEST_CASE("identity screen: recovered delay span below lambda/50 after one iteration") {
  InversionFixture fx;
  const auto res = fx.run(AberrationFunction::identity(16), 50.0, 1);
  const auto [mn, mx] = std::minmax_element(res.delays.begin(), res.delays.end());
  const double period = 1.0 / fx.pulse.f_c_hz();
  REQUIRE(*mx - *mn < period / 50.0);
}

TEST_CASE("known smooth screen is recovered within period/20 with the true scene") {
  InversionFixture fx;
  PhaseScreenParams params;
  params.max_attenuation = 0.3;
  params.max_delay_wavelengths = 1.0;
  params.smoothness_len = 10;
  const auto screen = random_phase_screen(16, fx.pulse.f_c_hz(), 321, params);
  const auto res = fx.run(screen, 30.0, 6);
  const auto want = remove_piston(screen.delay);
  double rms = 0.0;
  for (int n = 0; n < 16; ++n)
    rms += (res.delays[n] - want[n]) * (res.delays[n] - want[n]);
  rms = std::sqrt(rms / 16.0);
  const double period = 1.0 / fx.pulse.f_c_hz();
  REQUIRE(rms < period / 20.0);
}

TEST_CASE("missing scatterers raise the dedicated error") {
  InversionFixture fx;
  auto ch = simulate_channels({ScattererScene{}}, {}, AberrationFunction::identity(16), fx.geom,
                              fx.pulse, fx.scheme, 1540.0, 512);
  IpacProblem prob;
  prob.geom = fx.geom;
  prob.pulse = fx.pulse;
  prob.scheme = fx.scheme;
  prob.c = 1540.0;
  prob.scene_estimator = [](const std::vector<double>&) {
    return std::vector<ScattererScene>{ScattererScene{}};
  };
  REQUIRE_THROWS_AS(ipac_iterate(ch, prob, {}), NoScattererError);
}
