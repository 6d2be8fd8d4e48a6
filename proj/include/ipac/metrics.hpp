// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <limits>
#include <vector>

#include "ipac/beamform.hpp"
#include "ipac/common.hpp"
#include "ipac/numerics.hpp"

namespace ipac {

// Rectangular region of interest, inclusive pixel index ranges.
struct Roi {
  int row0 = 0, row1 = 0;
  int col0 = 0, col1 = 0;

  int n_pixels() const { return (row1 - row0 + 1) * (col1 - col0 + 1); }
  bool overlaps(const Roi& o) const {
    return row0 <= o.row1 && o.row0 <= row1 && col0 <= o.col1 && o.col0 <= col1;
  }
};

namespace detail {
struct RoiStats {
  double mean = 0.0;
  double stddev = 0.0;
};

inline RoiStats roi_stats(const RMat& img, const Roi& roi) {
  if (roi.row0 < 0 || roi.col0 < 0 || roi.row1 >= img.rows() || roi.col1 >= img.cols() ||
      roi.row0 > roi.row1 || roi.col0 > roi.col1)
    throw DimensionError("roi_stats: region outside the image");
  const auto block = img.block(roi.row0, roi.col0, roi.row1 - roi.row0 + 1,
                               roi.col1 - roi.col0 + 1);
  RoiStats st;
  st.mean = block.mean();
  st.stddev = std::sqrt((block.array() - st.mean).square().mean());
  return st;
}

inline void check_rois(const Roi& vessel, const Roi& noise) {
  if (vessel.overlaps(noise)) throw ConfigError("metrics: vessel and noise ROIs overlap");
}
}  // namespace detail

// CNR = 10 log10(|mu_vessel - mu_noise| / sigma_noise). Equal means report
// -inf as a sentinel; zero noise deviation is undefined.
inline double cnr(const RMat& img, const Roi& vessel_roi, const Roi& noise_roi) {
  detail::check_rois(vessel_roi, noise_roi);
  const auto v = detail::roi_stats(img, vessel_roi);
  const auto n = detail::roi_stats(img, noise_roi);
  if (n.stddev <= 0.0) throw UndefinedMetricError("cnr: noise ROI has zero deviation");
  if (v.mean == n.mean) return -std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(std::abs(v.mean - n.mean) / n.stddev);
}

// SNR = 10 log10(mu_vessel / sigma_noise).
inline double snr_image(const RMat& img, const Roi& vessel_roi, const Roi& noise_roi) {
  detail::check_rois(vessel_roi, noise_roi);
  const auto v = detail::roi_stats(img, vessel_roi);
  const auto n = detail::roi_stats(img, noise_roi);
  if (n.stddev <= 0.0) throw UndefinedMetricError("snr_image: noise ROI has zero deviation");
  if (v.mean <= 0.0) return -std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(v.mean / n.stddev);
}

// Modified cosine similarity C = u1.u2 / max(||u1||^2, ||u2||^2); the larger
// norm normalizes so scale mismatch shrinks |C|.
inline double cosine_similarity(const std::vector<double>& u1, const std::vector<double>& u2) {
  if (u1.size() != u2.size() || u1.empty())
    throw DimensionError("cosine_similarity: length mismatch");
  double dot = 0.0, n1 = 0.0, n2 = 0.0;
  for (std::size_t i = 0; i < u1.size(); ++i) {
    dot += u1[i] * u2[i];
    n1 += u1[i] * u1[i];
    n2 += u2[i] * u2[i];
  }
  const double den = std::max(n1, n2);
  if (den <= 0.0) throw UndefinedMetricError("cosine_similarity: both vectors are zero");
  return dot / den;
}

struct FrcResult {
  std::vector<double> frequency;  // cycles per meter, ring centers
  std::vector<double> frc;        // correlation per ring
  std::vector<double> half_bit;   // threshold per ring
  double resolution = 0.0;        // meters
  bool crossed = false;           // false -> resolution is the sentinel 2*pitch
};

// Fourier ring correlation between two point sets rendered as counts on a
// 10x interpolated grid. Resolution is read at the first crossing of the
// half-bit curve T(r) = (0.2071 + 1.9102/sqrt(n)) / (1.2071 + 0.9102/sqrt(n)).
inline FrcResult frc_resolution(const std::vector<Vec2>& points_a,
                                const std::vector<Vec2>& points_b, const ImageGrid& grid,
                                int interp_factor = 10) {
  if (points_a.empty() || points_b.empty())
    throw DimensionError("frc_resolution: empty point set");
  grid.validate();
  const int nx = grid.nx * interp_factor;
  const int nz = grid.nz * interp_factor;
  const double px = grid.dx / interp_factor;
  const double pz = grid.dz / interp_factor;

  const std::size_t n = next_pow2(static_cast<std::size_t>(std::max(nx, nz)));
  const double pitch = 0.5 * (px + pz);

  auto render = [&](const std::vector<Vec2>& pts) {
    std::vector<cplx> img(n * n, cplx(0.0, 0.0));
    for (const auto& p : pts) {
      const int i = static_cast<int>(std::floor((p.x - grid.x0) / px + 0.5));
      const int j = static_cast<int>(std::floor((p.z - grid.z0) / pz + 0.5));
      if (i >= 0 && i < nx && j >= 0 && j < nz) img[static_cast<std::size_t>(j) * n + i] += 1.0;
    }
    // 2-D FFT, rows then columns
    std::vector<cplx> line(n);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c2 = 0; c2 < n; ++c2) line[c2] = img[r * n + c2];
      fft(line, true);
      for (std::size_t c2 = 0; c2 < n; ++c2) img[r * n + c2] = line[c2];
    }
    for (std::size_t c2 = 0; c2 < n; ++c2) {
      for (std::size_t r = 0; r < n; ++r) line[r] = img[r * n + c2];
      fft(line, true);
      for (std::size_t r = 0; r < n; ++r) img[r * n + c2] = line[r];
    }
    return img;
  };

  const auto f1 = render(points_a);
  const auto f2 = render(points_b);

  const int n_rings = static_cast<int>(n) / 2;
  std::vector<double> num(n_rings, 0.0), den1(n_rings, 0.0), den2(n_rings, 0.0);
  std::vector<int> count(n_rings, 0);
  for (std::size_t j = 0; j < n; ++j) {
    const double fj = (j <= n / 2) ? static_cast<double>(j) : static_cast<double>(j) - n;
    for (std::size_t i = 0; i < n; ++i) {
      const double fi = (i <= n / 2) ? static_cast<double>(i) : static_cast<double>(i) - n;
      const int ring = static_cast<int>(std::round(std::hypot(fi, fj)));
      if (ring < 1 || ring >= n_rings) continue;
      const cplx a = f1[j * n + i];
      const cplx b = f2[j * n + i];
      num[ring] += (a * std::conj(b)).real();
      den1[ring] += std::norm(a);
      den2[ring] += std::norm(b);
      ++count[ring];
    }
  }

  FrcResult res;
  for (int r = 1; r < n_rings; ++r) {
    if (count[r] == 0) continue;
    const double den = std::sqrt(den1[r] * den2[r]);
    const double value = den > 0.0 ? num[r] / den : 0.0;
    const double sn = std::sqrt(static_cast<double>(count[r]));
    const double threshold = (0.2071 + 1.9102 / sn) / (1.2071 + 0.9102 / sn);
    res.frequency.push_back(r / (static_cast<double>(n) * pitch));
    res.frc.push_back(value);
    res.half_bit.push_back(threshold);
  }
  for (std::size_t r = 0; r + 1 < res.frc.size(); ++r) {
    if (res.frc[r] >= res.half_bit[r] && res.frc[r + 1] < res.half_bit[r + 1]) {
      // linear interpolation of the crossing
      const double d0 = res.frc[r] - res.half_bit[r];
      const double d1 = res.frc[r + 1] - res.half_bit[r + 1];
      const double t = d0 / (d0 - d1);
      const double fc = res.frequency[r] + t * (res.frequency[r + 1] - res.frequency[r]);
      res.resolution = 1.0 / fc;
      res.crossed = true;
      break;
    }
  }
  if (!res.crossed) res.resolution = 2.0 * pitch;
  return res;
}

}  // namespace ipac
