// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <queue>
#include <vector>

#include "ipac/common.hpp"
#include "ipac/numerics.hpp"

namespace ipac {

// Near-field phase screen: per-element amplitude a_n in (0, 1] and delay
// tau_n in seconds. Spectral form u_n(omega) = a_n exp(i omega tau_n); the
// same screen applies in transmit and receive.
struct AberrationFunction {
  std::vector<double> amplitude;
  std::vector<double> delay;

  static AberrationFunction identity(int n_elements) {
    AberrationFunction ab;
    ab.amplitude.assign(n_elements, 1.0);
    ab.delay.assign(n_elements, 0.0);
    return ab;
  }

  int n_elements() const { return static_cast<int>(amplitude.size()); }

  bool is_identity() const {
    for (const double a : amplitude)
      if (a != 1.0) return false;
    for (const double t : delay)
      if (t != 0.0) return false;
    return true;
  }
};

struct PhaseScreenParams {
  double max_attenuation = 0.5;       // amplitudes drawn in [1 - max_attenuation, 1]
  double max_delay_wavelengths = 1.0; // relative delay span limit, in wavelengths at f_c
  int smoothness_len = 8;             // moving-average width, elements
};

namespace detail {
inline std::vector<double> moving_average(const std::vector<double>& v, int width) {
  if (width <= 1) return v;
  const int n = static_cast<int>(v.size());
  std::vector<double> out(n);
  const int half = width / 2;
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    int cnt = 0;
    for (int j = i - half; j <= i + half; ++j) {
      const int jc = std::clamp(j, 0, n - 1);
      acc += v[jc];
      ++cnt;
    }
    out[i] = acc / cnt;
  }
  return out;
}

// Affine map of v onto [lo, hi]; constant input maps to the midpoint.
inline std::vector<double> rescale(const std::vector<double>& v, double lo, double hi) {
  const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  if (*mx - *mn < 1e-300) {
    std::fill(out.begin(), out.end(), 0.5 * (lo + hi));
    return out;
  }
  const double s = (hi - lo) / (*mx - *mn);
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = lo + (v[i] - *mn) * s;
  return out;
}
}  // namespace detail

// Smooth random screen drawn from uniform profiles: amplitudes span
// [1 - max_attenuation, 1], relative delays span max_delay_wavelengths / f_c.
inline AberrationFunction random_phase_screen(int n_elements, double f_c_hz, std::uint64_t seed,
                                              const PhaseScreenParams& p = {}) {
  if (!(p.max_attenuation >= 0.0 && p.max_attenuation < 1.0))
    throw ConfigError("phase screen: max_attenuation must be in [0, 1)");
  Rng rng(seed);
  std::vector<double> a(n_elements), d(n_elements);
  for (auto& v : a) v = rng.uniform();
  for (auto& v : d) v = rng.uniform();
  a = detail::moving_average(a, p.smoothness_len);
  d = detail::moving_average(d, p.smoothness_len);

  AberrationFunction ab;
  if (p.max_attenuation == 0.0) {
    ab.amplitude.assign(n_elements, 1.0);
  } else {
    ab.amplitude = detail::rescale(a, 1.0 - p.max_attenuation, 1.0);
  }
  if (p.max_delay_wavelengths == 0.0) {
    ab.delay.assign(n_elements, 0.0);
  } else {
    const double span = p.max_delay_wavelengths / f_c_hz;
    ab.delay = detail::rescale(d, -0.5 * span, 0.5 * span);
  }
  return ab;
}

// Aberration in the Fourier domain: u[n, j] = a_n exp(i omega_j tau_n).
struct AberrationSpectrum {
  CMat u;                      // n_elements x n_frequencies
  std::vector<double> omegas;  // rad/s, one per column
};

inline AberrationSpectrum to_spectrum(const AberrationFunction& ab,
                                      const std::vector<double>& omegas) {
  AberrationSpectrum sp;
  sp.omegas = omegas;
  const int ne = ab.n_elements();
  const int nw = static_cast<int>(omegas.size());
  sp.u.resize(ne, nw);
  for (int n = 0; n < ne; ++n)
    for (int j = 0; j < nw; ++j)
      sp.u(n, j) = ab.amplitude[n] * std::exp(kI * (omegas[j] * ab.delay[n]));
  return sp;
}

namespace detail {
inline double wrap_to_pi(double x) {
  x = std::fmod(x + kPi, 2.0 * kPi);
  if (x < 0.0) x += 2.0 * kPi;
  return x - kPi;
}
}  // namespace detail

// Reliability-sorted region-growing unwrapper over a 2-D phase grid.
// Pixels are admitted in decreasing reliability (inverse local wrapped
// second-difference energy); each new pixel is offset by the exact 2*pi
// multiple that brings it within pi of its already-unwrapped neighbor, so the
// output equals the input modulo 2*pi entrywise.
inline RMat unwrap_phase_2d(const RMat& wrapped) {
  const int rows = static_cast<int>(wrapped.rows());
  const int cols = static_cast<int>(wrapped.cols());
  if (rows == 0 || cols == 0) throw DimensionError("unwrap_phase_2d: empty matrix");

  auto second_diff = [&](int i, int j, int di, int dj) {
    const int ia = i - di, ja = j - dj, ib = i + di, jb = j + dj;
    if (ia < 0 || ib < 0 || ja < 0 || jb < 0 || ia >= rows || ib >= rows || ja >= cols ||
        jb >= cols)
      return 0.0;
    return detail::wrap_to_pi(wrapped(ia, ja) - wrapped(i, j)) -
           detail::wrap_to_pi(wrapped(i, j) - wrapped(ib, jb));
  };

  RMat quality(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      const double h = second_diff(i, j, 0, 1);
      const double v = second_diff(i, j, 1, 0);
      const double d1 = second_diff(i, j, 1, 1);
      const double d2 = second_diff(i, j, 1, -1);
      quality(i, j) = 1.0 / (h * h + v * v + d1 * d1 + d2 * d2 + 1e-12);
    }

  RMat out = wrapped;
  std::vector<char> done(static_cast<std::size_t>(rows) * cols, 0);
  using Entry = std::pair<double, int>;  // (quality, flat index)
  std::priority_queue<Entry> frontier;

  int seed_i = 0, seed_j = 0;
  quality.maxCoeff(&seed_i, &seed_j);
  done[static_cast<std::size_t>(seed_i) * cols + seed_j] = 1;

  const int di[4] = {0, 0, 1, -1};
  const int dj[4] = {1, -1, 0, 0};
  auto push_neighbors = [&](int i, int j) {
    for (int k = 0; k < 4; ++k) {
      const int ni = i + di[k], nj = j + dj[k];
      if (ni < 0 || nj < 0 || ni >= rows || nj >= cols) continue;
      if (!done[static_cast<std::size_t>(ni) * cols + nj])
        frontier.emplace(quality(ni, nj), ni * cols + nj);
    }
  };
  push_neighbors(seed_i, seed_j);

  while (!frontier.empty()) {
    const int flat = frontier.top().second;
    frontier.pop();
    const int i = flat / cols, j = flat % cols;
    auto& flag = done[static_cast<std::size_t>(i) * cols + j];
    if (flag) continue;
    // anchor on the best already-unwrapped neighbor
    double best_q = -1.0, anchor = 0.0;
    for (int k = 0; k < 4; ++k) {
      const int ni = i + di[k], nj = j + dj[k];
      if (ni < 0 || nj < 0 || ni >= rows || nj >= cols) continue;
      if (done[static_cast<std::size_t>(ni) * cols + nj] && quality(ni, nj) > best_q) {
        best_q = quality(ni, nj);
        anchor = out(ni, nj);
      }
    }
    out(i, j) = wrapped(i, j) + 2.0 * kPi * std::round((anchor - wrapped(i, j)) / (2.0 * kPi));
    flag = 1;
    push_neighbors(i, j);
  }
  return out;
}

struct DelayEstimate {
  std::vector<double> tau;      // seconds, piston removed
  std::vector<double> tau_raw;  // seconds, piston kept (iteration state)
  bool single_bin_fallback = false;
};

// Per-element delay: weighted least-squares slope of unwrapped phase vs
// omega (intercept fitted, so a global 2*pi offset from unwrapping does not
// bias the slope). The mean delay (piston) is removed.
inline DelayEstimate delays_from_spectrum(const RMat& unwrapped_phase,
                                          const std::vector<double>& omegas,
                                          const std::vector<double>& weights) {
  const int ne = static_cast<int>(unwrapped_phase.rows());
  const int nw = static_cast<int>(unwrapped_phase.cols());
  if (nw != static_cast<int>(omegas.size()) || nw != static_cast<int>(weights.size()))
    throw DimensionError("delays_from_spectrum: omega/weight count mismatch");
  DelayEstimate est;
  est.tau.resize(ne);
  if (nw == 1) {
    est.single_bin_fallback = true;
    for (int n = 0; n < ne; ++n) est.tau[n] = unwrapped_phase(n, 0) / omegas[0];
  } else {
    double sw = 0.0, swx = 0.0, swxx = 0.0;
    for (int j = 0; j < nw; ++j) {
      sw += weights[j];
      swx += weights[j] * omegas[j];
      swxx += weights[j] * omegas[j] * omegas[j];
    }
    const double det = sw * swxx - swx * swx;
    if (std::abs(det) < 1e-300)
      throw SingularMatrixError("delays_from_spectrum: degenerate frequency grid");
    for (int n = 0; n < ne; ++n) {
      double swy = 0.0, swxy = 0.0;
      for (int j = 0; j < nw; ++j) {
        swy += weights[j] * unwrapped_phase(n, j);
        swxy += weights[j] * omegas[j] * unwrapped_phase(n, j);
      }
      est.tau[n] = (sw * swxy - swx * swy) / det;
    }
  }
  est.tau_raw = est.tau;
  double piston = 0.0;
  for (const double t : est.tau) piston += t;
  piston /= ne;
  for (auto& t : est.tau) t -= piston;
  return est;
}

inline std::vector<double> remove_piston(std::vector<double> tau) {
  double m = 0.0;
  for (const double t : tau) m += t;
  m /= static_cast<double>(tau.size());
  for (auto& t : tau) t -= m;
  return tau;
}

inline std::vector<double> average_delays(const std::vector<std::vector<double>>& per_frame) {
  if (per_frame.empty()) throw DimensionError("average_delays: no frames");
  std::vector<double> mean(per_frame.front().size(), 0.0);
  for (const auto& tau : per_frame) {
    if (tau.size() != mean.size()) throw DimensionError("average_delays: length mismatch");
    for (std::size_t i = 0; i < tau.size(); ++i) mean[i] += tau[i];
  }
  for (auto& v : mean) v /= static_cast<double>(per_frame.size());
  return remove_piston(std::move(mean));
}

}  // namespace ipac
