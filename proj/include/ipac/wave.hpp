// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "ipac/aberration.hpp"
#include "ipac/common.hpp"
#include "ipac/numerics.hpp"
#include "ipac/parallel.hpp"
#include "ipac/probe.hpp"

namespace ipac {

// Sparse scattering medium: the diagonal of the reflectivity operator.
struct ScattererScene {
  std::vector<Vec2> positions;     // z > 0
  std::vector<cplx> reflectivity;  // one coefficient per scatterer

  int size() const { return static_cast<int>(positions.size()); }
  bool empty() const { return positions.empty(); }

  void validate() const {
    if (positions.size() != reflectivity.size())
      throw DimensionError("scene: positions/reflectivity length mismatch");
    for (const auto& p : positions)
      if (!(p.z > 0.0)) throw ConfigError("scene: scatterers must sit at z > 0");
  }
};

// Working frequency band on the DFT grid of an n_fft-sample record.
struct BandGrid {
  int n_fft = 0;
  double fs = 0.0;
  int k_lo = 0;
  int k_hi = -1;

  int n_bins() const { return k_hi - k_lo + 1; }
  double omega(int bin) const { return 2.0 * kPi * fs * (k_lo + bin) / n_fft; }
  std::vector<double> omegas() const {
    std::vector<double> w(n_bins());
    for (int b = 0; b < n_bins(); ++b) w[b] = omega(b);
    return w;
  }
};

// Bins where the two-way response stays above band_floor.
inline BandGrid select_band(const PulseSpec& pulse, int n_fft, double fs,
                            double band_floor = 0.01) {
  BandGrid band;
  band.n_fft = n_fft;
  band.fs = fs;
  int lo = -1, hi = -2;
  for (int k = 1; k <= n_fft / 2; ++k) {
    const double w = 2.0 * kPi * fs * k / n_fft;
    if (transducer_response(pulse, w) >= band_floor) {
      if (lo < 0) lo = k;
      hi = k;
    }
  }
  if (lo < 0) throw ConfigError("select_band: record too short to resolve the pulse band");
  band.k_lo = lo;
  band.k_hi = hi;
  return band;
}

// Free-space Green's function for the Helmholtz equation,
// exp(+i k r) / (4 pi r), outgoing under the exp(-i omega t) convention.
inline cplx greens(const Vec2& r_a, const Vec2& r_b, double k) {
  const double r = distance(r_a, r_b);
  if (r <= 0.0) throw SingularityError("greens: coincident points");
  return std::exp(kI * (k * r)) / (4.0 * kPi * r);
}

// Angle-independent element<->scatterer response D * F * G shared by the
// transmit and reflection operators.
inline CMat geometric_response(const ProbeGeometry& geom, const ScattererScene& scene,
                               double omega, double c) {
  const int ne = geom.n_elements;
  const int ns = scene.size();
  const double k = omega / c;
  CMat e(ne, ns);
  for (int n = 0; n < ne; ++n) {
    const Vec2 rn = element_position(geom, n);
    for (int s = 0; s < ns; ++s) {
      const Vec2& rs = scene.positions[s];
      e(n, s) = directivity(geom, rn, rs, k) * elevation_focusing(geom, rn, rs, k) *
                greens(rn, rs, k);
    }
  }
  return e;
}

// T_{n,s} = D F sqrt(W) P0 exp(i omega dtau_n) G.
inline CMat transmit_operator(const ProbeGeometry& geom, const PulseSpec& pulse,
                              const TransmitScheme& scheme, int transmit_index,
                              const ScattererScene& scene, double omega, double c) {
  if (scene.empty()) throw DimensionError("transmit_operator: empty scene");
  const double sqw = std::sqrt(transducer_response(pulse, omega));
  const cplx p0 = pulse_spectrum(pulse, omega);
  const auto dtau = transmit_delays(scheme, geom, c, transmit_index);
  CMat t = geometric_response(geom, scene, omega, c);
  for (int n = 0; n < geom.n_elements; ++n)
    t.row(n) *= sqw * p0 * std::exp(kI * (omega * dtau[n]));
  return t;
}

// R_{m,s} = sqrt(W) D F G.
inline CMat reflection_operator(const ProbeGeometry& geom, const PulseSpec& pulse,
                                const ScattererScene& scene, double omega, double c) {
  if (scene.empty()) throw DimensionError("reflection_operator: empty scene");
  const double sqw = std::sqrt(transducer_response(pulse, omega));
  return sqw * geometric_response(geom, scene, omega, c);
}

// Propagator H = R Gamma T^T (plain transpose). With zero transmit delays T
// and R share element physics and H is symmetric.
inline CMat propagator(const CMat& t, const CMat& r, const CVec& gamma) {
  if (t.rows() != r.rows() || t.cols() != r.cols() || gamma.size() != t.cols())
    throw DimensionError("propagator: nonconformable operands");
  return r * gamma.asDiagonal() * t.transpose();
}

// Model signal M = u o (H u): element m receives u_m sum_n H_{mn} u_n.
inline CVec forward_signal(const CMat& h, const CVec& u) {
  if (h.rows() != h.cols() || h.cols() != u.size())
    throw DimensionError("forward_signal: nonconformable operands");
  return u.cwiseProduct(h * u);
}

// Per-frame, per-transmit, per-element sampled echoes plus the band-limited
// spectral view (the DFT of the samples on the band bins).
struct ChannelData {
  int n_frames = 0;
  int n_angles = 0;
  int n_elements = 0;
  int n_samples = 0;
  double fs = 0.0;
  double t0 = 0.0;
  double c = 0.0;
  BandGrid band;
  std::vector<double> samples;
  std::vector<cplx> spectra;

  std::size_t trace_index(int f, int a, int e) const {
    return (static_cast<std::size_t>(f) * n_angles + a) * n_elements + e;
  }
  double* trace(int f, int a, int e) {
    return samples.data() + trace_index(f, a, e) * n_samples;
  }
  const double* trace(int f, int a, int e) const {
    return samples.data() + trace_index(f, a, e) * n_samples;
  }
  cplx& spec(int f, int a, int e, int bin) {
    return spectra[trace_index(f, a, e) * band.n_bins() + bin];
  }
  const cplx& spec(int f, int a, int e, int bin) const {
    return spectra[trace_index(f, a, e) * band.n_bins() + bin];
  }

  void allocate() {
    samples.assign(static_cast<std::size_t>(n_frames) * n_angles * n_elements * n_samples, 0.0);
    spectra.assign(static_cast<std::size_t>(n_frames) * n_angles * n_elements * band.n_bins(),
                   cplx(0.0, 0.0));
  }

  // Rebuild the spectral view from the time samples.
  void recompute_spectra() {
    const std::size_t n_traces = static_cast<std::size_t>(n_frames) * n_angles * n_elements;
    spectra.assign(n_traces * band.n_bins(), cplx(0.0, 0.0));
    parallel_for(n_traces, [&](std::size_t tr) {
      std::vector<cplx> buf(n_samples);
      const double* src = samples.data() + tr * n_samples;
      for (int j = 0; j < n_samples; ++j) buf[j] = src[j];
      fft(buf, true);
      for (int b = 0; b < band.n_bins(); ++b) spectra[tr * band.n_bins() + b] = buf[band.k_lo + b];
    });
  }
};

namespace detail {
// Band spectra for one scene at one transmit, through the screen u on both
// paths: M_m = u_m sqrt(W) sum_s E_{ms} Gamma_s q_s with
// q_s = sqrt(W) P0 sum_n E_{ns} exp(i omega dtau_n) u_n. The per-bin
// geometric response E is built once per scene and shared across transmits.
struct SceneSpectraWorkspace {
  std::vector<CMat> e_per_bin;  // geometric response per band bin

  void build(const ProbeGeometry& geom, const ScattererScene& scene, const BandGrid& band,
             double c) {
    e_per_bin.assign(band.n_bins(), CMat());
    parallel_for(band.n_bins(), [&](std::size_t b) {
      e_per_bin[b] = geometric_response(geom, scene, band.omega(static_cast<int>(b)), c);
    });
  }
};

inline void accumulate_scene_spectra(const SceneSpectraWorkspace& ws, const ProbeGeometry& geom,
                                     const PulseSpec& pulse, const std::vector<double>& dtau,
                                     const ScattererScene& scene, const CMat& u_band,
                                     const BandGrid& band, CMat& out) {
  const int ne = geom.n_elements;
  Eigen::Map<const CVec> gamma(scene.reflectivity.data(), scene.size());
  parallel_for(band.n_bins(), [&](std::size_t b) {
    const int bin = static_cast<int>(b);
    const double omega = band.omega(bin);
    const double sqw = std::sqrt(transducer_response(pulse, omega));
    const cplx p0 = pulse_spectrum(pulse, omega);
    const CMat& e = ws.e_per_bin[b];
    CVec steered(ne);
    for (int n = 0; n < ne; ++n)
      steered(n) = std::exp(kI * (omega * dtau[n])) * u_band(n, bin);
    const CVec q = (sqw * p0) * (e.transpose() * steered);
    const CVec m = (sqw * u_band.col(bin).array() * (e * gamma.cwiseProduct(q)).array()).matrix();
    out.col(bin) += m;
  });
}
}  // namespace detail

// Frequency-domain synthesis of channel data: per frame and transmit the
// band spectra of every scatterer contribution (bubble frames plus an
// optional static tissue scene) are accumulated and inverse-transformed to
// real time samples. The screen applies on both transmit and receive.
inline ChannelData simulate_channels(const std::vector<ScattererScene>& frames,
                                     const ScattererScene& tissue, const AberrationFunction& ab,
                                     const ProbeGeometry& geom, const PulseSpec& pulse,
                                     const TransmitScheme& scheme, double c,
                                     int n_samples_hint = 0, double band_floor = 0.01) {
  geom.validate();
  pulse.validate();
  scheme.validate();
  if (c <= 0.0) throw ConfigError("simulate_channels: speed of sound must be > 0");
  if (frames.empty()) throw ConfigError("simulate_channels: need at least one frame");
  for (const auto& f : frames) f.validate();
  tissue.validate();
  if (ab.n_elements() != geom.n_elements)
    throw DimensionError("simulate_channels: screen size != element count");

  const double fs = pulse.sampling_rate;
  int n_samples = n_samples_hint;
  if (n_samples <= 0) {
    double t_max = 0.0;
    auto consider = [&](const ScattererScene& sc) {
      for (const auto& p : sc.positions) {
        double r_max = 0.0;
        for (int n = 0; n < geom.n_elements; ++n)
          r_max = std::max(r_max, distance(element_position(geom, n), p));
        for (int a = 0; a < scheme.n_transmits(); ++a)
          t_max = std::max(t_max, transmit_arrival(scheme, geom, c, a, p) + r_max / c);
      }
    };
    for (const auto& f : frames) consider(f);
    consider(tissue);
    double ab_span = 0.0;
    for (const double t : ab.delay) ab_span = std::max(ab_span, std::abs(t));
    const double t_rec = t_max + 2.0 * ab_span + 2.0 * pulse.n_cycles / pulse.f_c_hz();
    n_samples = static_cast<int>(next_pow2(static_cast<std::size_t>(t_rec * fs) + 1));
  }
  if (!is_pow2(n_samples)) throw ConfigError("simulate_channels: n_samples must be a power of two");

  ChannelData ch;
  ch.n_frames = static_cast<int>(frames.size());
  ch.n_angles = scheme.n_transmits();
  ch.n_elements = geom.n_elements;
  ch.n_samples = n_samples;
  ch.fs = fs;
  ch.t0 = 0.0;
  ch.c = c;
  ch.band = select_band(pulse, n_samples, fs, band_floor);
  ch.allocate();

  const CMat u_band = to_spectrum(ab, ch.band.omegas()).u;
  const int nb = ch.band.n_bins();

  detail::SceneSpectraWorkspace tissue_ws;
  if (!tissue.empty()) tissue_ws.build(geom, tissue, ch.band, c);

  for (int a = 0; a < ch.n_angles; ++a) {
    const auto dtau = transmit_delays(scheme, geom, c, a);
    CMat tissue_spec = CMat::Zero(ch.n_elements, nb);
    if (!tissue.empty())
      detail::accumulate_scene_spectra(tissue_ws, geom, pulse, dtau, tissue, u_band, ch.band,
                                       tissue_spec);
    for (int f = 0; f < ch.n_frames; ++f) {
      CMat spec = tissue_spec;
      if (!frames[f].empty()) {
        detail::SceneSpectraWorkspace ws;
        ws.build(geom, frames[f], ch.band, c);
        detail::accumulate_scene_spectra(ws, geom, pulse, dtau, frames[f], u_band, ch.band, spec);
      }
      parallel_for(ch.n_elements, [&](std::size_t e) {
        std::vector<cplx> buf(n_samples, cplx(0.0, 0.0));
        for (int b = 0; b < nb; ++b) {
          const int k = ch.band.k_lo + b;
          buf[k] = spec(static_cast<int>(e), b);
          buf[n_samples - k] = std::conj(spec(static_cast<int>(e), b));
        }
        fft(buf, false);
        double* dst = ch.trace(f, a, static_cast<int>(e));
        for (int j = 0; j < n_samples; ++j) dst[j] = buf[j].real();
        for (int b = 0; b < nb; ++b) ch.spec(f, a, static_cast<int>(e), b) = spec(static_cast<int>(e), b);
      });
    }
  }
  return ch;
}

// Additive white Gaussian noise at a target peak SNR. The realized noise
// standard deviation is matched to peak / 10^(snr/20) exactly, and the
// spectral view is rebuilt from the noisy samples.
inline ChannelData add_noise(const ChannelData& in, double target_snr_db, std::uint64_t seed) {
  if (!std::isfinite(target_snr_db)) throw ConfigError("add_noise: target SNR must be finite");
  ChannelData out = in;
  double peak = 0.0;
  for (const double v : in.samples) peak = std::max(peak, std::abs(v));
  if (peak == 0.0) peak = 1.0;
  const double sigma = peak * std::pow(10.0, -target_snr_db / 20.0);

  Rng rng(seed);
  std::vector<double> noise(in.samples.size());
  double acc = 0.0, mean = 0.0;
  for (auto& v : noise) {
    v = rng.normal();
    mean += v;
  }
  mean /= static_cast<double>(noise.size());
  for (auto& v : noise) {
    v -= mean;
    acc += v * v;
  }
  const double scale = sigma / std::sqrt(acc / static_cast<double>(noise.size()));
  for (std::size_t i = 0; i < noise.size(); ++i) out.samples[i] += scale * noise[i];
  out.recompute_spectra();
  return out;
}

}  // namespace ipac
