// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "ipac/aberration.hpp"
#include "ipac/beamform.hpp"
#include "ipac/common.hpp"
#include "ipac/probe.hpp"
#include "ipac/wave.hpp"

namespace ipac {

// Channels of one transmit realigned on a bubble hyperbola: element n is
// shifted by -t_n(x_s, z_s) so an unaberrated point target becomes flat
// across the aperture. Rows are elements, columns a symmetric time window
// around the echo.
struct RealignedSignals {
  CMat traces;  // analytic, n_elements x window samples
  double fs = 0.0;
  double window_start = 0.0;  // seconds relative to the echo
};

struct RephaseOptions {
  double window_pulse_lengths = 3.0;  // half-window, in pulse durations
};

inline RealignedSignals rephase_hyperbola(const ChannelData& ch, int frame, int tx_index,
                                          const Vec2& bubble, const ProbeGeometry& geom,
                                          const PulseSpec& pulse, const TransmitScheme& scheme,
                                          const RephaseOptions& opt = {}) {
  if (!(bubble.z > 0.0)) throw ConfigError("rephase_hyperbola: bubble must sit at z > 0");
  const auto traces =
      detail::BasebandTraces::from_channel(ch, frame, tx_index, pulse.center_frequency);
  const double t_tx = transmit_arrival(scheme, geom, ch.c, tx_index, bubble);
  const double pulse_len = pulse.n_cycles / pulse.f_c_hz();
  const double half = opt.window_pulse_lengths * pulse_len;
  const int n_win = std::max(8, static_cast<int>(std::round(2.0 * half * ch.fs)));

  RealignedSignals out;
  out.fs = ch.fs;
  out.window_start = -half;
  out.traces.resize(geom.n_elements, n_win);
  for (int n = 0; n < geom.n_elements; ++n) {
    const double t_n = t_tx + distance(bubble, element_position(geom, n)) / ch.c;
    for (int j = 0; j < n_win; ++j)
      out.traces(n, j) = traces.sample(n, t_n - half + j / ch.fs);
  }
  return out;
}

struct CoherenceOptions {
  int zero_pad_factor = 8;
  double min_energy_ratio = 1e-6;  // relative to the strongest element
};

namespace detail {
// Lag (seconds) maximizing |cross-correlation| of two analytic traces,
// computed in the Fourier domain with spectral zero padding for sub-sample
// resolution, refined with a parabolic fit around the peak.
inline double correlation_lag(const CVec& a, const CVec& b, double fs, int pad_factor) {
  const int n = static_cast<int>(a.size());
  const std::size_t m = next_pow2(static_cast<std::size_t>(n) * 2);
  std::vector<cplx> fa(m, cplx(0, 0)), fb(m, cplx(0, 0));
  for (int j = 0; j < n; ++j) {
    fa[j] = a(j);
    fb[j] = b(j);
  }
  fft(fa, true);
  fft(fb, true);
  const std::size_t mp = m * static_cast<std::size_t>(pad_factor);
  std::vector<cplx> cross(mp, cplx(0, 0));
  // cross spectrum, zero padded between the halves to interpolate the lag axis
  for (std::size_t k = 0; k < m; ++k) {
    const cplx v = fa[k] * std::conj(fb[k]);
    if (k < m / 2)
      cross[k] = v;
    else
      cross[mp - (m - k)] = v;
  }
  fft(cross, false);
  std::size_t best = 0;
  double best_mag = -1.0;
  for (std::size_t j = 0; j < mp; ++j) {
    const double mag = std::abs(cross[j]);
    if (mag > best_mag) {
      best_mag = mag;
      best = j;
    }
  }
  // lag grid is circular: index j corresponds to signed lag j (mod mp)
  const auto mag_at = [&](std::size_t j) { return std::abs(cross[j % mp]); };
  const double y0 = mag_at(best + mp - 1), y1 = mag_at(best), y2 = mag_at(best + 1);
  double delta = 0.0;
  const double den = y0 - 2.0 * y1 + y2;
  if (std::abs(den) > 1e-300) delta = std::clamp(0.5 * (y0 - y2) / den, -0.5, 0.5);
  double lag_samples = static_cast<double>(best) + delta;
  if (lag_samples > 0.5 * mp) lag_samples -= static_cast<double>(mp);
  return lag_samples / (fs * pad_factor);
}
}  // namespace detail

// Aberration delays from neighbor-pair cross-correlation lags integrated
// across the aperture, piston removed. Elements with negligible energy get
// their pair lags interpolated from reliable neighbors.
inline std::vector<double> coherence_delays(const RealignedSignals& sig,
                                            const CoherenceOptions& opt = {}) {
  const int ne = static_cast<int>(sig.traces.rows());
  if (ne < 2) throw DimensionError("coherence_delays: need at least 2 elements");
  std::vector<double> energy(ne);
  double max_energy = 0.0;
  for (int n = 0; n < ne; ++n) {
    energy[n] = sig.traces.row(n).squaredNorm();
    max_energy = std::max(max_energy, energy[n]);
  }
  if (max_energy <= 0.0) throw DimensionError("coherence_delays: all channels empty");

  const double floor = opt.min_energy_ratio * max_energy;
  std::vector<double> lag(ne - 1, 0.0);
  std::vector<char> reliable(ne - 1, 0);
  for (int n = 0; n + 1 < ne; ++n) {
    if (energy[n] > floor && energy[n + 1] > floor) {
      lag[n] = detail::correlation_lag(sig.traces.row(n).transpose(),
                                       sig.traces.row(n + 1).transpose(), sig.fs,
                                       opt.zero_pad_factor);
      reliable[n] = 1;
    }
  }
  // fill unreliable pair lags from the nearest reliable neighbors
  for (int n = 0; n + 1 < ne; ++n) {
    if (reliable[n]) continue;
    int l = n - 1, r = n + 1;
    while (l >= 0 && !reliable[l]) --l;
    while (r < ne - 1 && !reliable[r]) ++r;
    if (l >= 0 && r < ne - 1)
      lag[n] = lag[l] + (lag[r] - lag[l]) * (n - l) / static_cast<double>(r - l);
    else if (l >= 0)
      lag[n] = lag[l];
    else if (r < ne - 1)
      lag[n] = lag[r];
  }

  // channel n leads channel n+1 by lag[n]; integrate to per-element delays
  std::vector<double> tau(ne, 0.0);
  for (int n = 0; n + 1 < ne; ++n) tau[n + 1] = tau[n] - lag[n];
  return remove_piston(std::move(tau));
}

}  // namespace ipac
