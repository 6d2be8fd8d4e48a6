// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <iostream>
#include <limits>
#include <sstream>
#include <vector>

#include "ipac/aberration.hpp"
#include "ipac/common.hpp"
#include "ipac/localization.hpp"
#include "ipac/parallel.hpp"
#include "ipac/wave.hpp"

namespace ipac {

// Second-difference stencil: boundary rows [-1 1], interior rows [1 -2 1].
// Annihilates constant vectors, so a global piston is never penalized.
inline RMat second_difference_matrix(int n) {
  if (n < 2) throw DimensionError("second_difference_matrix: need n >= 2");
  RMat d2 = RMat::Zero(n, n);
  d2(0, 0) = -1.0;
  d2(0, 1) = 1.0;
  for (int i = 1; i + 1 < n; ++i) {
    d2(i, i - 1) = 1.0;
    d2(i, i) = -2.0;
    d2(i, i + 1) = 1.0;
  }
  d2(n - 1, n - 2) = -1.0;
  d2(n - 1, n - 1) = 1.0;
  return d2;
}

struct RegularizationSpec {
  double alpha = 0.01;
  RMat d2;

  static RegularizationSpec for_size(int n, double alpha = 0.01) {
    if (alpha < 0.0) throw ConfigError("regularization: alpha must be >= 0");
    RegularizationSpec reg;
    reg.alpha = alpha;
    reg.d2 = second_difference_matrix(n);
    return reg;
  }
};

// Gradient of the model with respect to the screen:
//   grad M = diag(H u) + diag(u) H,
// entry (m, n) = delta_mn (Hu)_m + u_m H_mn.
inline CMat gradient(const CMat& h, const CVec& u) {
  if (h.rows() != h.cols() || h.cols() != u.size())
    throw DimensionError("gradient: nonconformable operands");
  CMat g = u.asDiagonal() * h;
  g.diagonal() += h * u;
  return g;
}

// First-order expansion of the forward model around u0 written as an
// augmented operator acting on (u | 1):
//   K = ( grad M | M(u0) - grad M u0 ),   K (u0 | 1) = M(u0) exactly.
struct LinearOperatorK {
  CMat k;   // n_rows x (n + 1)
  CVec u0;  // linearization point

  CMat grad() const { return k.leftCols(k.cols() - 1); }
  CVec shift() const { return k.col(k.cols() - 1); }
};

inline LinearOperatorK assemble_k(const CMat& h, const CVec& u0) {
  const CMat g = gradient(h, u0);
  LinearOperatorK op;
  op.u0 = u0;
  op.k.resize(g.rows(), g.cols() + 1);
  op.k.leftCols(g.cols()) = g;
  op.k.col(g.cols()) = forward_signal(h, u0) - g * u0;
  return op;
}

// Row-block concatenation over transmit angles; the screen is defined in the
// transducer basis and does not change with the angle.
inline std::pair<CMat, CVec> stack_angles(const std::vector<CMat>& k_blocks,
                                          const std::vector<CVec>& s_blocks) {
  if (k_blocks.empty() || k_blocks.size() != s_blocks.size())
    throw DimensionError("stack_angles: block count mismatch");
  const Eigen::Index cols = k_blocks.front().cols();
  Eigen::Index rows = 0;
  for (std::size_t a = 0; a < k_blocks.size(); ++a) {
    if (k_blocks[a].cols() != cols || k_blocks[a].rows() != s_blocks[a].size())
      throw DimensionError("stack_angles: inconsistent block dimensions");
    rows += k_blocks[a].rows();
  }
  CMat k(rows, cols);
  CVec s(rows);
  Eigen::Index at = 0;
  for (std::size_t a = 0; a < k_blocks.size(); ++a) {
    k.middleRows(at, k_blocks[a].rows()) = k_blocks[a];
    s.segment(at, s_blocks[a].size()) = s_blocks[a];
    at += k_blocks[a].rows();
  }
  return {std::move(k), std::move(s)};
}

// Tikhonov-regularized least squares,
//   u = (K^H K + alpha D2^T D2)^{-1} K^H s,
// solved through the normal equations (Hermitian LDL^T). A singular normal
// matrix raises a diagnostic naming its smallest eigenvalue.
inline CVec tikhonov_solve(const CMat& k, const CVec& s, const RegularizationSpec& reg) {
  if (k.rows() != s.size()) throw DimensionError("tikhonov_solve: rhs length mismatch");
  if (reg.d2.cols() != k.cols()) throw DimensionError("tikhonov_solve: regularizer size mismatch");
  if (reg.alpha < 0.0) throw ConfigError("tikhonov_solve: alpha must be >= 0");
  CMat normal = k.adjoint() * k;
  normal.noalias() += reg.alpha * (reg.d2.transpose() * reg.d2).cast<cplx>();
  const CVec rhs = k.adjoint() * s;
  const Eigen::LDLT<CMat> ldlt(normal);
  CVec u;
  bool bad = ldlt.info() != Eigen::Success;
  if (!bad) {
    u = ldlt.solve(rhs);
    const double resid = (normal * u - rhs).norm();
    bad = !u.allFinite() || (resid > 1e-8 * rhs.norm() + 1e-300);
  }
  if (bad) {
    const Eigen::SelfAdjointEigenSolver<CMat> eig(normal);
    std::ostringstream msg;
    msg << "tikhonov_solve: singular normal matrix, smallest eigenvalue = "
        << (eig.info() == Eigen::Success ? eig.eigenvalues().minCoeff()
                                         : std::numeric_limits<double>::quiet_NaN());
    throw SingularMatrixError(msg.str());
  }
  return u;
}

// Everything the iterative inversion needs to rebuild the model: the
// hardware description plus a scene estimator mapping the current correction
// delays to one scatterer scene per frame. The estimator also receives the
// angular-frequency window the solves will use this iteration, so detection
// can run on matching band-limited images while the continuation window
// grows.
struct IpacProblem {
  ProbeGeometry geom;
  PulseSpec pulse;
  TransmitScheme scheme;
  double c = 1540.0;
  std::function<std::vector<ScattererScene>(const std::vector<double>& delays, double omega_lo,
                                            double omega_hi)>
      scene_estimator;
};

struct IpacOptions {
  double alpha = 0.01;
  int max_iter = 6;
  double epsilon = 1e-2;   // relative ||u_hat - u0|| / ||u0|| tolerance
  int max_band_bins = 96;  // band bins kept for the solves (strided subset)
  // Frequency continuation: early iterations solve only the lowest fraction
  // of the band, where screen phases are proportionally smaller and the
  // linearization holds; the window grows toward the full band. Delays fitted
  // on the partial band rebuild the expansion point at every frequency.
  double continuation_start = 0.25;
  double continuation_growth = 2.0;
  // true: all frames enter one stacked solve per frequency (more equations
  // per unknown); false: solve per frame and average the extracted delays
  bool stack_frames = true;
  // complex moving-average of the per-frequency solutions across bins before
  // phase extraction; the screen spectrum a_n exp(i omega tau_n) is smooth in
  // omega, so a symmetric window denoises without biasing the phase slope
  int smooth_bins = 5;
  // Per-frequency reflectivity calibration: before each screen solve the
  // complex Gamma_s(omega) is re-fit by ridge least squares with u0 held
  // fixed. A localization error is, to first order, a per-scatterer time
  // shift, which is exactly a per-frequency phase on Gamma_s; calibrating it
  // out keeps the screen solve insensitive to subwavelength position error.
  // The screen itself cannot leak into Gamma, which acts identically on
  // every element of a given scatterer path.
  bool calibrate_gamma = true;
  double gamma_ridge = 1e-3;
  bool verbose = false;
};

struct IpacResult {
  CMat u_hat;                    // n_elements x n_bins, final iterate
  std::vector<double> omegas;    // rad/s per column of u_hat
  std::vector<double> delays;    // seconds, piston removed
  std::vector<double> history;   // ||u_hat - u0|| / ||u0|| per iteration
  bool converged = false;
  bool diverged = false;
  int n_detections_last = 0;
};

namespace detail {
inline std::vector<int> strided_bins(int n_bins, int max_bins) {
  std::vector<int> bins;
  if (max_bins <= 0 || n_bins <= max_bins) {
    bins.resize(n_bins);
    for (int b = 0; b < n_bins; ++b) bins[b] = b;
    return bins;
  }
  const double step = static_cast<double>(n_bins - 1) / (max_bins - 1);
  int prev = -1;
  for (int i = 0; i < max_bins; ++i) {
    const int b = static_cast<int>(std::lround(i * step));
    if (b != prev) bins.push_back(b);
    prev = b;
  }
  return bins;
}
}  // namespace detail

// Iterative inversion loop: localize scatterers with the current correction,
// assemble the per-frequency stacked operator, solve the regularized least
// squares per frequency and frame, extract delays through 2-D unwrapping and
// a weighted slope fit, average over frames, and update the expansion point.
// Solutions are carried as complex spectra; only the phase-derived delays
// feed the beamformer.
inline IpacResult ipac_iterate(const ChannelData& ch, const IpacProblem& prob,
                               const IpacOptions& opt = {}) {
  if (ch.n_frames < 1) throw DimensionError("ipac_iterate: no frames");
  if (!prob.scene_estimator) throw ConfigError("ipac_iterate: missing scene estimator");
  const int ne = prob.geom.n_elements;
  const int na = ch.n_angles;

  const auto bin_ids = detail::strided_bins(ch.band.n_bins(), opt.max_band_bins);
  const int nb = static_cast<int>(bin_ids.size());
  std::vector<double> omegas(nb), weights(nb);
  for (int b = 0; b < nb; ++b) {
    omegas[b] = ch.band.omega(bin_ids[b]);
    // inverse-variance weight for the slope fit: per-bin signal amplitude is
    // proportional to W * |P0| (two one-way responses and the pulse), and
    // phase noise variance goes as its inverse square
    const double amp = transducer_response(prob.pulse, omegas[b]) *
                       std::abs(pulse_spectrum(prob.pulse, omegas[b]));
    weights[b] = amp * amp;
  }
  const double w_peak = *std::max_element(weights.begin(), weights.end());
  for (auto& w : weights) w /= w_peak;
  const RegularizationSpec reg = RegularizationSpec::for_size(ne, opt.alpha);

  IpacResult res;
  res.omegas = omegas;
  CMat u0 = CMat::Ones(ne, nb);
  std::vector<double> current_delays(ne, 0.0);
  CMat best_u = u0;
  std::vector<double> best_delays = current_delays;
  double best_h = std::numeric_limits<double>::infinity();
  double prev_h = std::numeric_limits<double>::infinity();
  int rising = 0;

  std::vector<std::vector<double>> tx_delays(na);
  for (int a = 0; a < na; ++a) tx_delays[a] = transmit_delays(prob.scheme, prob.geom, prob.c, a);

  for (int iter = 0; iter < opt.max_iter; ++iter) {
    // continuation window: lowest nb_used bins this iteration
    const double frac = std::min(
        1.0, opt.continuation_start * std::pow(opt.continuation_growth, iter));
    const int nb_used = std::max(2, static_cast<int>(std::lround(frac * nb)));

    const auto scenes =
        prob.scene_estimator(current_delays, omegas.front(), omegas[nb_used - 1]);
    if (static_cast<int>(scenes.size()) != ch.n_frames)
      throw DimensionError("ipac_iterate: estimator frame count mismatch");
    int total_dets = 0;
    for (const auto& sc : scenes) total_dets += sc.size();
    if (total_dets == 0) throw NoScattererError("ipac_iterate: no scatterers detected");
    res.n_detections_last = total_dets;

    // Reflectivity calibration: at fixed u0 the model is linear in Gamma, so
    // each frame's complex Gamma_s(omega) is re-fit per frequency by ridge
    // LS, then projected onto the physical point-scatterer form
    // A_s exp(i(phi_s + omega dt_s)) by a weighted line fit of its phase.
    // The per-scatterer time shift dt_s absorbs localization error, which the
    // screen solve is otherwise very sensitive to.
    std::vector<CMat> gamma_cal(ch.n_frames);  // scene size x nb_used
    for (int f = 0; f < ch.n_frames; ++f) {
      const int ns = scenes[f].size();
      gamma_cal[f].resize(ns, nb_used);
      for (int b = 0; b < nb_used; ++b)
        gamma_cal[f].col(b) = Eigen::Map<const CVec>(scenes[f].reflectivity.data(), ns);
    }
    if (opt.calibrate_gamma) {
      for (int f = 0; f < ch.n_frames; ++f) {
        const auto& scene = scenes[f];
        const int ns = scene.size();
        if (ns == 0 || ne * na <= ns) continue;
        CMat gamma_free(ns, nb_used);
        parallel_for(nb_used, [&](std::size_t bi) {
          const int b = static_cast<int>(bi);
          const double omega = omegas[b];
          const double sqw = std::sqrt(transducer_response(prob.pulse, omega));
          const cplx p0 = pulse_spectrum(prob.pulse, omega);
          const CVec u0_col = u0.col(b);
          const CMat e = geometric_response(prob.geom, scene, omega, prob.c);
          CMat design(ne * na, ns);
          CVec data(ne * na);
          for (int a = 0; a < na; ++a) {
            CVec steered(ne);
            for (int n = 0; n < ne; ++n)
              steered(n) = std::exp(kI * (omega * tx_delays[a][n])) * u0_col(n);
            const CVec q = (sqw * p0) * (e.transpose() * steered);
            for (int m = 0; m < ne; ++m) {
              for (int s = 0; s < ns; ++s)
                design(a * ne + m, s) = u0_col(m) * sqw * e(m, s) * q(s);
              data(a * ne + m) = ch.spec(f, a, m, bin_ids[b]);
            }
          }
          // ridge centered on the detected reflectivities: the fit departs
          // from them only where the data demands it
          const CVec prior = Eigen::Map<const CVec>(scene.reflectivity.data(), ns);
          CMat gn = design.adjoint() * design;
          const double ridge = opt.gamma_ridge * gn.diagonal().real().maxCoeff() + 1e-300;
          gn.diagonal().array() += ridge;
          const CVec fitted = gn.ldlt().solve(design.adjoint() * data + ridge * prior);
          gamma_free.col(b) = fitted.allFinite() ? fitted : prior;
        });
        gamma_cal[f] = gamma_free;
      }
    }

    // one stacked solve per frequency for a group of frames
    auto solve_group = [&](const std::vector<int>& frame_ids) {
      CMat u_hat(ne, nb_used);
      parallel_for(nb_used, [&](std::size_t bi) {
        const int b = static_cast<int>(bi);
        const double omega = omegas[b];
        const double sqw = std::sqrt(transducer_response(prob.pulse, omega));
        const cplx p0 = pulse_spectrum(prob.pulse, omega);
        const CVec u0_col = u0.col(b);

        std::vector<CMat> a_blocks;
        std::vector<CVec> rhs_blocks;
        for (const int f : frame_ids) {
          const auto& scene = scenes[f];
          const CVec gamma = gamma_cal[f].col(b);
          const CMat e = geometric_response(prob.geom, scene, omega, prob.c);
          for (int a = 0; a < na; ++a) {
            CMat t = e;
            for (int n = 0; n < ne; ++n)
              t.row(n) *= sqw * p0 * std::exp(kI * (omega * tx_delays[a][n]));
            const CMat r = sqw * e;
            const CMat h = propagator(t, r, gamma);
            const CMat g = gradient(h, u0_col);
            CVec s_meas(ne);
            for (int m = 0; m < ne; ++m) s_meas(m) = ch.spec(f, a, m, bin_ids[b]);
            // shifted data: solve grad M u = s - (M(u0) - grad M u0)
            rhs_blocks.push_back(s_meas - forward_signal(h, u0_col) + g * u0_col);
            a_blocks.push_back(std::move(g));
          }
        }
        auto [a_stacked, rhs_stacked] = stack_angles(a_blocks, rhs_blocks);
        // normalize the system scale so alpha acts relative to unit model energy
        const double scale =
            a_stacked.norm() / std::sqrt(static_cast<double>(a_stacked.size()));
        if (scale > 0.0) {
          a_stacked /= scale;
          rhs_stacked /= scale;
        }
        u_hat.col(b) = tikhonov_solve(a_stacked, rhs_stacked, reg);
      });
      return u_hat;
    };

    std::vector<std::vector<int>> groups;
    if (opt.stack_frames) {
      groups.emplace_back();
      for (int f = 0; f < ch.n_frames; ++f)
        if (!scenes[f].empty()) groups.back().push_back(f);
      if (groups.back().empty()) groups.clear();
    } else {
      for (int f = 0; f < ch.n_frames; ++f)
        if (!scenes[f].empty()) groups.push_back({f});
    }
    if (groups.empty()) throw NoScattererError("ipac_iterate: no usable frames");

    RMat u_mean_amp = RMat::Zero(ne, nb_used);
    std::vector<std::vector<double>> frame_delays;
    const std::vector<double> om_used(omegas.begin(), omegas.begin() + nb_used);
    const std::vector<double> w_used(weights.begin(), weights.begin() + nb_used);
    for (const auto& group : groups) {
      CMat u_hat_g = solve_group(group);
      if (opt.smooth_bins > 1) {
        const int half = opt.smooth_bins / 2;
        CMat smoothed(ne, nb_used);
        for (int b = 0; b < nb_used; ++b) {
          const int lo = std::max(0, b - half);
          const int hi = std::min(nb_used - 1, b + half);
          const int w = std::min(b - lo, hi - b);  // symmetric around b
          smoothed.col(b) = u_hat_g.middleCols(b - w, 2 * w + 1).rowwise().mean();
        }
        u_hat_g = std::move(smoothed);
      }
      RMat phase(ne, nb_used);
      for (int n = 0; n < ne; ++n)
        for (int b = 0; b < nb_used; ++b) phase(n, b) = std::arg(u_hat_g(n, b));
      const RMat unwrapped = unwrap_phase_2d(phase);
      frame_delays.push_back(delays_from_spectrum(unwrapped, om_used, w_used).tau_raw);
      u_mean_amp += u_hat_g.cwiseAbs();
    }
    u_mean_amp /= static_cast<double>(frame_delays.size());

    // frame-averaged delays; the piston is kept in the iteration state (the
    // data carries it) and removed only for corrections and reporting
    std::vector<double> tau_raw(ne, 0.0);
    for (const auto& fd : frame_delays)
      for (int n = 0; n < ne; ++n) tau_raw[n] += fd[n];
    for (auto& v : tau_raw) v /= static_cast<double>(frame_delays.size());
    const auto tau = remove_piston(tau_raw);

    // rebuild the next expansion point on the full band: the screen model is
    // a_n exp(i omega tau_n) with a frequency-flat amplitude, so the
    // amplitude is the weighted mean over the solved bins
    CMat u_next(ne, nb);
    for (int n = 0; n < ne; ++n) {
      double num = 0.0, den = 0.0;
      for (int b = 0; b < nb_used; ++b) {
        num += weights[b] * u_mean_amp(n, b);
        den += weights[b];
      }
      const double amp = den > 0.0 ? num / den : 1.0;
      for (int b = 0; b < nb; ++b)
        u_next(n, b) = amp * std::exp(kI * (omegas[b] * tau_raw[n]));
    }

    const double h = (u_next - u0).norm() / u0.norm();
    res.history.push_back(h);
    rising = (h > prev_h) ? rising + 1 : 0;
    prev_h = h;
    if (h < best_h) {
      best_h = h;
      best_u = u_next;
      best_delays = tau;
    }
    u0 = u_next;
    current_delays = tau;
    if (opt.verbose)
      std::cerr << "ipac iteration " << iter + 1 << ": step " << h << ", detections "
                << total_dets << "\n";
    if (h < opt.epsilon) {
      res.converged = true;
      break;
    }
    if (rising >= 3) {
      res.diverged = true;
      std::cerr << "ipac_iterate: step size increased 3 times, returning best iterate\n";
      u0 = best_u;
      current_delays = best_delays;
      break;
    }
  }
  res.u_hat = u0;
  res.delays = remove_piston(current_delays);
  return res;
}

}  // namespace ipac
