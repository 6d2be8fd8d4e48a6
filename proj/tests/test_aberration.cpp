// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch.hpp>

#include "ipac/aberration.hpp"

using namespace ipac;

TEST_CASE("degenerate screen parameters give the identity screen") {
  PhaseScreenParams p;
  p.max_attenuation = 0.0;
  p.max_delay_wavelengths = 0.0;
  const auto ab = random_phase_screen(32, 15.625e6, 1, p);
  REQUIRE(ab.is_identity());
}

TEST_CASE("random screen honours attenuation and delay-span bounds") {
  PhaseScreenParams p;
  p.max_attenuation = 0.5;
  p.max_delay_wavelengths = 1.0;
  const double f_c = 15.625e6;
  const auto ab = random_phase_screen(64, f_c, 9, p);
  for (const double a : ab.amplitude) {
    REQUIRE(a >= 0.5);
    REQUIRE(a <= 1.0);
  }
  const auto [mn, mx] = std::minmax_element(ab.delay.begin(), ab.delay.end());
  REQUIRE(*mx - *mn <= 1.0 / f_c + 1e-18);
  // at 15.625 MHz one wavelength of delay is 64 ns
  REQUIRE(*mx - *mn <= 64e-9 + 1e-15);
}

TEST_CASE("random screen is deterministic per seed") {
  const auto a = random_phase_screen(48, 15.625e6, 1234, {});
  const auto b = random_phase_screen(48, 15.625e6, 1234, {});
  const auto c = random_phase_screen(48, 15.625e6, 1235, {});
  REQUIRE(a.amplitude == b.amplitude);
  REQUIRE(a.delay == b.delay);
  REQUIRE(a.delay != c.delay);
}

TEST_CASE("smoothing limits element-to-element jumps") {
  PhaseScreenParams rough;
  rough.smoothness_len = 1;
  PhaseScreenParams smooth;
  smooth.smoothness_len = 12;
  const auto a = random_phase_screen(128, 15.625e6, 5, rough);
  const auto b = random_phase_screen(128, 15.625e6, 5, smooth);
  auto max_jump = [](const std::vector<double>& v) {
    double m = 0.0;
    for (std::size_t i = 1; i < v.size(); ++i) m = std::max(m, std::abs(v[i] - v[i - 1]));
    return m;
  };
  REQUIRE(max_jump(b.delay) < max_jump(a.delay));
}

TEST_CASE("to_spectrum columns follow a_n exp(i w tau_n)") {
  AberrationFunction ab;
  ab.amplitude = {1.0, 0.8, 0.6};
  ab.delay = {0.0, 10e-9, -5e-9};
  const std::vector<double> omegas = {2.0 * kPi * 10e6, 2.0 * kPi * 15e6};
  const auto sp = to_spectrum(ab, omegas);
  REQUIRE(sp.u.rows() == 3);
  REQUIRE(sp.u.cols() == 2);
  for (int n = 0; n < 3; ++n)
    for (int j = 0; j < 2; ++j) {
      const cplx want = ab.amplitude[n] * std::exp(kI * (omegas[j] * ab.delay[n]));
      REQUIRE(std::abs(sp.u(n, j) - want) < 1e-15);
    }

  // tau = 0 -> real columns equal to the amplitudes
  AberrationFunction flat;
  flat.amplitude = {0.9, 0.7};
  flat.delay = {0.0, 0.0};
  const auto sp0 = to_spectrum(flat, omegas);
  for (int n = 0; n < 2; ++n)
    for (int j = 0; j < 2; ++j) {
      REQUIRE(sp0.u(n, j).imag() == 0.0);
      REQUIRE(sp0.u(n, j).real() == Approx(flat.amplitude[n]));
    }
}

TEST_CASE("a delay of one carrier period phases back to zero at the carrier") {
  const double f_c = 15.625e6;
  AberrationFunction ab;
  ab.amplitude = {1.0};
  ab.delay = {1.0 / f_c};
  const auto sp = to_spectrum(ab, {2.0 * kPi * f_c});
  REQUIRE(std::arg(sp.u(0, 0)) == Approx(0.0).margin(1e-12));
}

TEST_CASE("spectrum phase is linear in omega with slope tau") {
  AberrationFunction ab;
  ab.amplitude = {1.0};
  ab.delay = {7.5e-9};
  std::vector<double> omegas;
  for (int j = 1; j <= 8; ++j) omegas.push_back(2.0 * kPi * 1e6 * j);
  const auto sp = to_spectrum(ab, omegas);
  for (std::size_t j = 0; j < omegas.size(); ++j)
    REQUIRE(std::arg(sp.u(0, j)) == Approx(omegas[j] * ab.delay[0]).margin(1e-12));
}

TEST_CASE("spectra compose multiplicatively") {
  AberrationFunction a, b;
  a.amplitude = {0.9, 0.8};
  a.delay = {3e-9, -2e-9};
  b.amplitude = {0.7, 1.0};
  b.delay = {1e-9, 4e-9};
  AberrationFunction sum;
  sum.amplitude = {0.9 * 0.7, 0.8 * 1.0};
  sum.delay = {4e-9, 2e-9};
  const std::vector<double> omegas = {2.0 * kPi * 5e6, 2.0 * kPi * 9e6};
  const auto sa = to_spectrum(a, omegas).u;
  const auto sb = to_spectrum(b, omegas).u;
  const auto ss = to_spectrum(sum, omegas).u;
  REQUIRE(((sa.array() * sb.array()).matrix() - ss).norm() < 1e-14);
}

TEST_CASE("unwrapping recovers a smooth wrapped ramp exactly") {
  const int ne = 24, nw = 40;
  RMat truth(ne, nw);
  for (int i = 0; i < ne; ++i)
    for (int j = 0; j < nw; ++j) truth(i, j) = 0.45 * i + 0.3 * j - 6.0;
  RMat wrapped = truth;
  for (int i = 0; i < ne; ++i)
    for (int j = 0; j < nw; ++j) wrapped(i, j) = detail::wrap_to_pi(truth(i, j));

  const RMat un = unwrap_phase_2d(wrapped);
  // equal to the truth up to one global 2*pi multiple
  const double offset = un(0, 0) - truth(0, 0);
  REQUIRE(std::abs(offset / (2.0 * kPi) - std::round(offset / (2.0 * kPi))) < 1e-9);
  for (int i = 0; i < ne; ++i)
    for (int j = 0; j < nw; ++j) REQUIRE(un(i, j) - truth(i, j) == Approx(offset).margin(1e-9));
  // output stays congruent to the input mod 2*pi
  for (int i = 0; i < ne; ++i)
    for (int j = 0; j < nw; ++j) {
      const double d = (un(i, j) - wrapped(i, j)) / (2.0 * kPi);
      REQUIRE(std::abs(d - std::round(d)) < 1e-12);
    }
}

TEST_CASE("unwrapping keeps a constant field unchanged") {
  RMat c = RMat::Constant(5, 7, 1.234);
  REQUIRE((unwrap_phase_2d(c) - c).norm() == 0.0);
}

TEST_CASE("unwrapping a noisy ramp stays within 0.1 rad RMS") {
  const int ne = 32, nw = 48;
  Rng rng(2024);
  RMat truth(ne, nw);
  for (int i = 0; i < ne; ++i)
    for (int j = 0; j < nw; ++j) truth(i, j) = 0.5 * i + 0.25 * j;
  RMat wrapped(ne, nw);
  RMat noisy_truth(ne, nw);
  for (int i = 0; i < ne; ++i)
    for (int j = 0; j < nw; ++j) {
      noisy_truth(i, j) = truth(i, j) + 0.05 * 2.0 * kPi * rng.normal() * 0.25;
      wrapped(i, j) = detail::wrap_to_pi(noisy_truth(i, j));
    }
  const RMat un = unwrap_phase_2d(wrapped);
  const double offset = std::round((un(0, 0) - noisy_truth(0, 0)) / (2.0 * kPi)) * 2.0 * kPi;
  double rms = 0.0;
  for (int i = 0; i < ne; ++i)
    for (int j = 0; j < nw; ++j) {
      const double e = un(i, j) - offset - truth(i, j);
      rms += e * e;
    }
  rms = std::sqrt(rms / (ne * nw));
  REQUIRE(rms < 0.1);
}

TEST_CASE("delay extraction round-trips a noiseless smooth screen") {
  const double f_c = 15.625e6;
  PhaseScreenParams params;
  params.max_attenuation = 0.3;
  params.max_delay_wavelengths = 0.75;
  params.smoothness_len = 12;
  const auto ab = random_phase_screen(32, f_c, 77, params);
  std::vector<double> omegas, weights;
  for (int j = 0; j < 24; ++j) {
    omegas.push_back(2.0 * kPi * (10e6 + j * 0.5e6));
    weights.push_back(1.0);
  }
  // unwrapping precondition: adjacent phase differences below pi on the grid
  for (int n = 1; n < 32; ++n)
    REQUIRE(std::abs(ab.delay[n] - ab.delay[n - 1]) * omegas.back() < kPi);
  const auto sp = to_spectrum(ab, omegas);
  RMat phase(32, 24);
  for (int n = 0; n < 32; ++n)
    for (int j = 0; j < 24; ++j) phase(n, j) = std::arg(sp.u(n, j));
  const auto est = delays_from_spectrum(unwrap_phase_2d(phase), omegas, weights);
  REQUIRE_FALSE(est.single_bin_fallback);
  const auto want = remove_piston(ab.delay);
  for (int n = 0; n < 32; ++n) REQUIRE(est.tau[n] == Approx(want[n]).margin(1e-12));
}

TEST_CASE("constant spectrum maps to zero delays") {
  RMat phase = RMat::Constant(8, 6, 0.4);
  std::vector<double> omegas(6), weights(6, 1.0);
  for (int j = 0; j < 6; ++j) omegas[j] = 2.0 * kPi * (5e6 + j * 1e6);
  const auto est = delays_from_spectrum(phase, omegas, weights);
  for (const double t : est.tau) REQUIRE(t == Approx(0.0).margin(1e-18));
}

TEST_CASE("single frequency bin falls back to phase over omega and flags it") {
  RMat phase(3, 1);
  phase << 0.1, 0.2, 0.3;
  const std::vector<double> omegas = {2.0 * kPi * 10e6};
  const auto est = delays_from_spectrum(phase, omegas, {1.0});
  REQUIRE(est.single_bin_fallback);
  const double w = omegas[0];
  const double piston = (0.1 + 0.2 + 0.3) / 3.0 / w;
  REQUIRE(est.tau[0] == Approx(0.1 / w - piston).margin(1e-18));
}

TEST_CASE("monte-carlo: noisy phases recover delays within 2 percent of span") {
  const double f_c = 15.625e6;
  const int ne = 32;
  std::vector<double> omegas, weights;
  for (int j = 0; j < 48; ++j) {
    omegas.push_back(2.0 * kPi * (8e6 + j * 0.33e6));
    weights.push_back(1.0);
  }
  double worst_rms = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(5000 + trial);
    AberrationFunction ab;
    for (int n = 0; n < ne; ++n) {
      ab.amplitude.push_back(1.0);
      ab.delay.push_back(rng.uniform(-0.5 / f_c, 0.5 / f_c));
    }
    const auto want = remove_piston(ab.delay);
    RMat phase(ne, static_cast<int>(omegas.size()));
    for (int n = 0; n < ne; ++n)
      for (std::size_t j = 0; j < omegas.size(); ++j)
        phase(n, static_cast<int>(j)) = omegas[j] * ab.delay[n] + 0.05 * rng.normal();
    const auto est = delays_from_spectrum(phase, omegas, weights);
    double rms = 0.0;
    for (int n = 0; n < ne; ++n) rms += (est.tau[n] - want[n]) * (est.tau[n] - want[n]);
    worst_rms = std::max(worst_rms, std::sqrt(rms / ne));
  }
  const double span = 1.0 / f_c;
  REQUIRE(worst_rms < 0.02 * span);
}

TEST_CASE("frame averaging removes the piston and averages profiles") {
  const std::vector<std::vector<double>> frames = {{1e-9, 3e-9, 5e-9}, {3e-9, 5e-9, 7e-9}};
  const auto avg = average_delays(frames);
  REQUIRE(avg[0] == Approx(-2e-9));
  REQUIRE(avg[1] == Approx(0.0).margin(1e-20));
  REQUIRE(avg[2] == Approx(2e-9));
}
