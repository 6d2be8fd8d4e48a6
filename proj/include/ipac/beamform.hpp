// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iostream>
#include <vector>

#include "ipac/common.hpp"
#include "ipac/parallel.hpp"
#include "ipac/probe.hpp"
#include "ipac/wave.hpp"

namespace ipac {

// Rectangular pixel grid in the imaging plane.
struct ImageGrid {
  double x0 = 0.0, z0 = 0.0;  // meters, first pixel center
  double dx = 0.0, dz = 0.0;  // meters per pixel
  int nx = 0, nz = 0;
  double c = 1540.0;

  double x(int i) const { return x0 + i * dx; }
  double z(int j) const { return z0 + j * dz; }

  void validate() const {
    if (nx < 1 || nz < 1) throw ConfigError("grid: empty image grid");
    if (!(dx > 0.0 && dz > 0.0)) throw ConfigError("grid: pixel pitch must be > 0");
    if (!(z0 > 0.0)) throw ConfigError("grid: grid must sit at z > 0");
  }
};

// Complex beamformed frame; pixels indexed (depth row j, lateral column i).
struct Image {
  ImageGrid grid;
  CMat px;  // nz x nx

  RMat magnitude() const { return px.cwiseAbs(); }
};

// One-sided spectrum (analytic) signal of a real record; the real part
// reproduces the input. Records are zero-padded to a power of two internally.
inline std::vector<cplx> analytic_signal(const std::vector<double>& x) {
  const std::size_t n = x.size();
  if (n == 0) return {};
  const std::size_t m = next_pow2(n);
  std::vector<cplx> buf(m, cplx(0.0, 0.0));
  for (std::size_t j = 0; j < n; ++j) buf[j] = x[j];
  fft(buf, true);
  for (std::size_t k = 1; k < m / 2; ++k) buf[k] *= 2.0;
  for (std::size_t k = m / 2 + 1; k < m; ++k) buf[k] = cplx(0.0, 0.0);
  fft(buf, false);
  buf.resize(n);
  return buf;
}

namespace detail {
// Analytic traces with the carrier removed: b[j] = a[j] exp(+i w_c t_j).
// Fractional delays are evaluated by linearly interpolating b and restoring
// the carrier phase at the exact tap time.
struct BasebandTraces {
  CMat b;  // n_elements x n_samples
  double fs = 0.0;
  double t0 = 0.0;
  double omega_c = 0.0;

  static BasebandTraces from_channel(const ChannelData& ch, int frame, int tx,
                                     double omega_c) {
    BasebandTraces out;
    out.fs = ch.fs;
    out.t0 = ch.t0;
    out.omega_c = omega_c;
    out.b.resize(ch.n_elements, ch.n_samples);
    parallel_for(ch.n_elements, [&](std::size_t e) {
      std::vector<double> rec(ch.n_samples);
      const double* src = ch.trace(frame, tx, static_cast<int>(e));
      for (int j = 0; j < ch.n_samples; ++j) rec[j] = src[j];
      const auto a = analytic_signal(rec);
      for (int j = 0; j < ch.n_samples; ++j) {
        const double t = ch.t0 + j / ch.fs;
        out.b(static_cast<int>(e), j) = a[j] * std::exp(kI * (omega_c * t));
      }
    });
    return out;
  }

  // Analytic value at absolute time t for element e; 0 outside the record.
  cplx sample(int e, double t) const {
    const double s = (t - t0) * fs;
    const int i0 = static_cast<int>(std::floor(s));
    if (i0 < 0 || i0 + 1 >= static_cast<int>(b.cols())) return cplx(0.0, 0.0);
    const double frac = s - i0;
    const cplx v = (1.0 - frac) * b(e, i0) + frac * b(e, i0 + 1);
    return v * std::exp(kI * (-omega_c * t));
  }
};
}  // namespace detail

// Delay-and-sum image for one transmit. The receive tap for element n at
// pixel p is  t = t_tx(p) + |p - r_n|/c + tau_n  with per-element correction
// delays tau (zero reproduces standard DAS bit-exactly).
inline Image das(const ChannelData& ch, int frame, int tx_index, const ImageGrid& grid,
                 const std::vector<double>& corrections, const ProbeGeometry& geom,
                 const PulseSpec& pulse, const TransmitScheme& scheme) {
  grid.validate();
  if (static_cast<int>(corrections.size()) != geom.n_elements)
    throw DimensionError("das: corrections length != element count");
  Image img;
  img.grid = grid;
  img.px = CMat::Zero(grid.nz, grid.nx);

  const auto traces =
      detail::BasebandTraces::from_channel(ch, frame, tx_index, pulse.center_frequency);
  std::vector<Vec2> elem(geom.n_elements);
  for (int n = 0; n < geom.n_elements; ++n) elem[n] = element_position(geom, n);

  parallel_for(grid.nz, [&](std::size_t j) {
    for (int i = 0; i < grid.nx; ++i) {
      const Vec2 p{grid.x(i), grid.z(static_cast<int>(j))};
      const double t_tx = transmit_arrival(scheme, geom, ch.c, tx_index, p);
      cplx acc(0.0, 0.0);
      for (int n = 0; n < geom.n_elements; ++n) {
        const double t = t_tx + distance(p, elem[n]) / ch.c + corrections[n];
        acc += traces.sample(n, t);
      }
      img.px(static_cast<int>(j), i) = acc;
    }
  });
  return img;
}

// Coherent compounding: complex sum over transmits on a shared grid.
inline Image compound(const std::vector<Image>& per_angle) {
  if (per_angle.empty()) throw DimensionError("compound: no images");
  Image out = per_angle.front();
  for (std::size_t a = 1; a < per_angle.size(); ++a) {
    if (per_angle[a].px.rows() != out.px.rows() || per_angle[a].px.cols() != out.px.cols())
      throw DimensionError("compound: image dimensions differ");
    out.px += per_angle[a].px;
  }
  return out;
}

// Beamform all transmits of one frame with corrections and compound.
inline Image beamform_frame(const ChannelData& ch, int frame, const ImageGrid& grid,
                            const std::vector<double>& corrections, const ProbeGeometry& geom,
                            const PulseSpec& pulse, const TransmitScheme& scheme) {
  std::vector<Image> per_angle;
  per_angle.reserve(ch.n_angles);
  for (int a = 0; a < ch.n_angles; ++a)
    per_angle.push_back(das(ch, frame, a, grid, corrections, geom, pulse, scheme));
  return compound(per_angle);
}

// Zero every DFT bin outside [f_lo, f_hi] on each trace (conjugate-symmetric,
// so the samples stay real). Pass-through when the limits straddle the whole
// spectrum.
inline ChannelData bandpass_filter(const ChannelData& in, double f_lo_hz, double f_hi_hz) {
  if (f_lo_hz <= 0.0 && f_hi_hz >= 0.5 * in.fs) return in;
  ChannelData out = in;
  const int n = in.n_samples;
  const int k_lo = std::max(1, static_cast<int>(std::ceil(f_lo_hz * n / in.fs)));
  const int k_hi = std::min(n / 2, static_cast<int>(std::floor(f_hi_hz * n / in.fs)));
  const std::size_t n_traces =
      static_cast<std::size_t>(in.n_frames) * in.n_angles * in.n_elements;
  parallel_for(n_traces, [&](std::size_t tr) {
    std::vector<cplx> buf(n);
    double* trace = out.samples.data() + tr * n;
    for (int j = 0; j < n; ++j) buf[j] = trace[j];
    fft(buf, true);
    for (int k = 0; k <= n / 2; ++k) {
      if (k >= k_lo && k <= k_hi) continue;
      buf[k] = cplx(0.0, 0.0);
      if (k > 0 && k < n / 2) buf[n - k] = cplx(0.0, 0.0);
    }
    buf[n / 2] = cplx(0.0, 0.0);
    fft(buf, false);
    for (int j = 0; j < n; ++j) trace[j] = buf[j].real();
  });
  out.recompute_spectra();
  return out;
}

// SVD clutter filter on the spatio-temporal Casorati matrix
// (angle*element*time) x frames: the n_remove largest singular components
// are removed through the eigendecomposition of the frame-by-frame Gram
// matrix. Static (frame-invariant) signal lives in the leading components.
inline ChannelData svd_clutter_filter(const ChannelData& in, int n_remove) {
  if (in.n_frames < 2) throw DimensionError("svd_clutter_filter: need at least 2 frames");
  ChannelData out = in;
  if (n_remove <= 0) return out;
  if (n_remove >= in.n_frames) {
    std::cerr << "svd_clutter_filter: threshold >= frame count, output zeroed\n";
    std::fill(out.samples.begin(), out.samples.end(), 0.0);
    out.recompute_spectra();
    return out;
  }
  const Eigen::Index space =
      static_cast<Eigen::Index>(in.n_angles) * in.n_elements * in.n_samples;
  Eigen::Map<RMat> x(out.samples.data(), space, in.n_frames);
  const RMat gram = x.transpose() * x;
  Eigen::SelfAdjointEigenSolver<RMat> eig(gram);
  if (eig.info() != Eigen::Success)
    throw SingularMatrixError("svd_clutter_filter: eigendecomposition failed");
  // eigenvalues ascending: the trailing n_remove columns span the clutter
  for (int r = 0; r < n_remove; ++r) {
    const RVec v = eig.eigenvectors().col(in.n_frames - 1 - r);
    const RVec proj = x * v;
    x.noalias() -= proj * v.transpose();
  }
  out.recompute_spectra();
  return out;
}

// Per-pixel temporal mean power of beamformed frames.
inline RMat power_doppler(const std::vector<Image>& frames) {
  if (frames.empty()) throw DimensionError("power_doppler: no frames");
  RMat acc = RMat::Zero(frames.front().px.rows(), frames.front().px.cols());
  for (const auto& f : frames) {
    if (f.px.rows() != acc.rows() || f.px.cols() != acc.cols())
      throw DimensionError("power_doppler: image dimensions differ");
    acc += f.px.cwiseAbs2();
  }
  return acc / static_cast<double>(frames.size());
}

}  // namespace ipac
