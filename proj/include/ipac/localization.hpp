// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <functional>
#include <vector>

#include "ipac/beamform.hpp"
#include "ipac/common.hpp"
#include "ipac/wave.hpp"

namespace ipac {

struct Detection {
  double x = 0.0, z = 0.0;   // meters, subpixel
  double amplitude = 0.0;    // fitted peak, linear units
  double correlation = 0.0;  // normalized correlation with the model PSF
};

struct PixelPeak {
  int row = 0, col = 0;  // (depth, lateral)
};

// 8-neighborhood local maxima above max(image) * 10^(-threshold_db/20).
inline std::vector<PixelPeak> detect_peaks(const RMat& mag, double relative_threshold_db = 20.0) {
  if (mag.size() == 0) throw DimensionError("detect_peaks: empty image");
  const double peak = mag.maxCoeff();
  std::vector<PixelPeak> out;
  if (peak <= 0.0) return out;
  const double thr = peak * std::pow(10.0, -relative_threshold_db / 20.0);
  for (int j = 1; j + 1 < mag.rows(); ++j)
    for (int i = 1; i + 1 < mag.cols(); ++i) {
      const double v = mag(j, i);
      if (v < thr) continue;
      bool is_max = true;
      for (int dj = -1; dj <= 1 && is_max; ++dj)
        for (int di = -1; di <= 1; ++di) {
          if (di == 0 && dj == 0) continue;
          if (mag(j + dj, i + di) >= v) {
            is_max = false;
            break;
          }
        }
      if (is_max) out.push_back({j, i});
    }
  return out;
}

struct GaussianFit {
  bool ok = false;
  double amplitude = 0.0;
  double col = 0.0, row = 0.0;    // subpixel center, patch coordinates
  double sigma_col = 0.0, sigma_row = 0.0;
  int iterations = 0;
};

// Levenberg-Marquardt least-squares fit of A exp(-(u-u0)^2/(2su^2)
// - (v-v0)^2/(2sv^2)) to a magnitude patch.
inline GaussianFit fit_gaussian_2d(const RMat& patch, int max_iter = 80) {
  const int rows = static_cast<int>(patch.rows());
  const int cols = static_cast<int>(patch.cols());
  if (rows < 5 || cols < 5) throw DimensionError("fit_gaussian_2d: patch must be at least 5x5");

  GaussianFit fit;
  // moment initialization
  double total = 0.0, mu = 0.0, mv = 0.0;
  for (int v = 0; v < rows; ++v)
    for (int u = 0; u < cols; ++u) {
      total += patch(v, u);
      mu += u * patch(v, u);
      mv += v * patch(v, u);
    }
  if (total <= 0.0) return fit;
  Eigen::Matrix<double, 5, 1> p;
  p << patch.maxCoeff(), mu / total, mv / total, std::max(1.0, cols / 6.0),
      std::max(1.0, rows / 6.0);

  const auto model = [&](const Eigen::Matrix<double, 5, 1>& q, int u, int v) {
    const double du = (u - q(1)) / q(3);
    const double dv = (v - q(2)) / q(4);
    return q(0) * std::exp(-0.5 * (du * du + dv * dv));
  };
  auto cost = [&](const Eigen::Matrix<double, 5, 1>& q) {
    double acc = 0.0;
    for (int v = 0; v < rows; ++v)
      for (int u = 0; u < cols; ++u) {
        const double r = patch(v, u) - model(q, u, v);
        acc += r * r;
      }
    return acc;
  };

  double lambda = 1e-3;
  double prev_cost = cost(p);
  for (int it = 0; it < max_iter; ++it) {
    Eigen::Matrix<double, 5, 5> jtj = Eigen::Matrix<double, 5, 5>::Zero();
    Eigen::Matrix<double, 5, 1> jtr = Eigen::Matrix<double, 5, 1>::Zero();
    for (int v = 0; v < rows; ++v)
      for (int u = 0; u < cols; ++u) {
        const double du = (u - p(1)) / p(3);
        const double dv = (v - p(2)) / p(4);
        const double g = std::exp(-0.5 * (du * du + dv * dv));
        Eigen::Matrix<double, 5, 1> j;
        j << g, p(0) * g * du / p(3), p(0) * g * dv / p(4), p(0) * g * du * du / p(3),
            p(0) * g * dv * dv / p(4);
        const double r = patch(v, u) - p(0) * g;
        jtj.noalias() += j * j.transpose();
        jtr.noalias() += j * r;
      }
    bool stepped = false;
    for (int tries = 0; tries < 12 && !stepped; ++tries) {
      Eigen::Matrix<double, 5, 5> a = jtj;
      a.diagonal() += lambda * jtj.diagonal();
      const Eigen::Matrix<double, 5, 1> dp = a.ldlt().solve(jtr);
      Eigen::Matrix<double, 5, 1> cand = p + dp;
      cand(3) = std::abs(cand(3));
      cand(4) = std::abs(cand(4));
      if (cand(3) < 1e-3) cand(3) = 1e-3;
      if (cand(4) < 1e-3) cand(4) = 1e-3;
      const double c = cost(cand);
      if (std::isfinite(c) && c <= prev_cost) {
        const double rel = (prev_cost - c) / (prev_cost + 1e-300);
        p = cand;
        prev_cost = c;
        lambda = std::max(1e-12, lambda * 0.3);
        stepped = true;
        fit.iterations = it + 1;
        if (rel < 1e-12 || dp.cwiseAbs().maxCoeff() < 1e-10) it = max_iter;  // converged
      } else {
        lambda *= 10.0;
      }
    }
    if (!stepped) break;  // no admissible step left
  }
  const bool in_bounds = p(1) >= 0.0 && p(1) <= cols - 1 && p(2) >= 0.0 &&
                         p(2) <= rows - 1 && p(0) > 0.0;
  fit.ok = fit.iterations > 0 && in_bounds;
  fit.amplitude = p(0);
  fit.col = p(1);
  fit.row = p(2);
  fit.sigma_col = p(3);
  fit.sigma_row = p(4);
  return fit;
}

// Zero-mean normalized correlation of two equally sized patches, in [-1, 1].
inline double patch_correlation(const RMat& a, const RMat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("patch_correlation: size mismatch");
  const double ma = a.mean(), mb = b.mean();
  const RMat da = a.array() - ma;
  const RMat db = b.array() - mb;
  const double den = std::sqrt(da.squaredNorm() * db.squaredNorm());
  if (den <= 0.0) return 0.0;
  return (da.array() * db.array()).sum() / den;
}

// Supplies a model PSF magnitude patch for a given depth (window x window).
using PsfModel = std::function<RMat(double z_m)>;

struct LocalizeOptions {
  double threshold_db = 20.0;
  int fit_window = 7;   // odd
  int max_detections = 0;  // keep the brightest N after fitting; 0 = no cap
};

struct LocalizeOutcome {
  std::vector<Detection> detections;
  int discarded_fits = 0;
};

// Detect peaks on a beamformed frame, fit each with a 2-D Gaussian, and
// score against the model PSF. Fits that fail to converge are discarded and
// counted.
inline LocalizeOutcome localize_frame(const Image& img, const PsfModel& psf,
                                      const LocalizeOptions& opt = {}) {
  const RMat mag = img.magnitude();
  const int w = opt.fit_window;
  const int half = w / 2;
  LocalizeOutcome out;
  for (const auto& pk : detect_peaks(mag, opt.threshold_db)) {
    if (pk.row < half || pk.col < half || pk.row + half >= mag.rows() ||
        pk.col + half >= mag.cols())
      continue;
    const RMat patch = mag.block(pk.row - half, pk.col - half, w, w);
    GaussianFit fit;
    try {
      fit = fit_gaussian_2d(patch);
    } catch (const DimensionError&) {
      ++out.discarded_fits;
      continue;
    }
    if (!fit.ok) {
      ++out.discarded_fits;
      continue;
    }
    Detection det;
    det.x = img.grid.x(pk.col) + (fit.col - half) * img.grid.dx;
    det.z = img.grid.z(pk.row) + (fit.row - half) * img.grid.dz;
    det.amplitude = fit.amplitude;
    det.correlation = psf ? patch_correlation(patch, psf(det.z)) : 1.0;
    out.detections.push_back(det);
  }
  if (opt.max_detections > 0 &&
      static_cast<int>(out.detections.size()) > opt.max_detections) {
    std::sort(out.detections.begin(), out.detections.end(),
              [](const Detection& a, const Detection& b) { return a.amplitude > b.amplitude; });
    out.detections.resize(opt.max_detections);
  }
  return out;
}

// Scene for the forward model: detections passing the correlation gate, with
// reflectivities normalized to unit maximum.
inline ScattererScene scene_from_detections(const std::vector<Detection>& detections,
                                            double min_correlation = 0.5) {
  ScattererScene scene;
  double max_amp = 0.0;
  for (const auto& d : detections)
    if (d.correlation >= min_correlation) max_amp = std::max(max_amp, d.amplitude);
  for (const auto& d : detections) {
    if (d.correlation < min_correlation) continue;
    scene.positions.push_back({d.x, d.z});
    scene.reflectivity.push_back(cplx(d.amplitude / (max_amp > 0.0 ? max_amp : 1.0), 0.0));
  }
  return scene;
}

}  // namespace ipac
