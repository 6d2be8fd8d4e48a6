// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <vector>

#include "ipac/common.hpp"
#include "ipac/numerics.hpp"

namespace ipac {

enum class ProbeKind { linear, phased };

// 1-D array geometry. Element n sits at (x_n, 0) with x_n symmetric about 0.
struct ProbeGeometry {
  int n_elements = 0;
  double pitch = 0.0;            // meters, center-to-center
  double element_width = 0.0;    // meters (lateral)
  double element_height = 0.0;   // meters (elevation)
  double elevation_focus = 0.0;  // meters
  ProbeKind kind = ProbeKind::linear;

  void validate() const {
    if (n_elements < 2) throw ConfigError("probe: n_elements must be >= 2");
    if (!(pitch > element_width && element_width > 0.0))
      throw ConfigError("probe: require pitch > element_width > 0");
    if (element_height < 0.0) throw ConfigError("probe: element_height must be >= 0");
    if (elevation_focus <= 0.0) throw ConfigError("probe: elevation_focus must be > 0");
  }

  double aperture() const { return (n_elements - 1) * pitch; }
};

inline std::vector<double> element_positions(const ProbeGeometry& geom) {
  geom.validate();
  std::vector<double> x(geom.n_elements);
  const double half = 0.5 * (geom.n_elements - 1);
  for (int n = 0; n < geom.n_elements; ++n) x[n] = (n - half) * geom.pitch;
  return x;
}

inline Vec2 element_position(const ProbeGeometry& geom, int n) {
  const double half = 0.5 * (geom.n_elements - 1);
  return {(n - half) * geom.pitch, 0.0};
}

// Transmit pulse description. Angular frequencies are rad/s.
struct PulseSpec {
  double center_frequency = 0.0;      // omega_c, rad/s
  double fractional_bandwidth = 0.0;  // omega_b / omega_c
  int n_cycles = 0;
  double sampling_rate = 0.0;  // Hz

  double f_c_hz() const { return center_frequency / (2.0 * kPi); }
  double bandwidth() const { return fractional_bandwidth * center_frequency; }

  void validate() const {
    if (!(fractional_bandwidth > 0.0 && fractional_bandwidth < 2.0))
      throw InvalidPulseError("pulse: fractional_bandwidth must be in (0, 2)");
    if (n_cycles < 1) throw InvalidPulseError("pulse: n_cycles must be >= 1");
    if (!(sampling_rate > (center_frequency + 0.5 * bandwidth()) / kPi))
      throw InvalidPulseError("pulse: sampling_rate below twice the band edge");
  }
};

// Two-way element response, a Gaussian window in |omega - omega_c| with
// exponent p = ln(126)/ln(2 omega_c/omega_b). W(omega_c) = 1 and
// W(omega_c +- omega_b/2) = 1/2. One-way response is sqrt(W).
inline double transducer_response(const PulseSpec& pulse, double omega) {
  pulse.validate();
  const double wb = pulse.bandwidth();
  const double p = std::log(126.0) / std::log(2.0 * pulse.center_frequency / wb);
  const double arg = 2.0 * std::abs(omega - pulse.center_frequency) / wb;
  return std::exp(-std::log(2.0) * std::pow(arg, p));
}

inline double sinc(double x) {
  if (std::abs(x) < 1e-8) return 1.0 - x * x / 6.0;
  return std::sin(x) / x;
}

// Baffled-piston directivity sinc(k*b/2 * sin(alpha)), alpha measured from
// the z axis in the imaging plane.
inline double directivity(const ProbeGeometry& geom, const Vec2& r_n, const Vec2& r_s, double k) {
  const double d = distance(r_n, r_s);
  if (d <= 0.0) throw SingularityError("directivity: coincident element and scatterer");
  const double sin_alpha = (r_s.x - r_n.x) / d;
  return sinc(0.5 * k * geom.element_width * sin_alpha);
}

namespace detail {
inline const GaussLegendre& elevation_quadrature() {
  static const GaussLegendre gl(64);
  return gl;
}
}  // namespace detail

// Elevation factor: Fresnel integral across the element height with the
// acoustic lens focused at elevation_focus,
//   F = int_{-h/2}^{h/2} exp(-i k y'^2 / (2 r_f)) exp(+i k y'^2 / (2 |r|)) dy'.
// The integrand is flat at |r| = r_f, so |F| peaks there with value h; at
// k = 0 the integrand is 1 and F = h. Evaluated with fixed-order
// Gauss-Legendre quadrature.
inline cplx elevation_focusing(const ProbeGeometry& geom, const Vec2& r_n, const Vec2& r_s,
                               double k) {
  const double r = distance(r_n, r_s);
  if (r <= 0.0) throw SingularityError("elevation_focusing: coincident element and scatterer");
  const double h = geom.element_height;
  if (h <= 0.0) return cplx(0.0, 0.0);
  const double half = 0.5 * h;
  const double coeff = 0.5 * k * (1.0 / r - 1.0 / geom.elevation_focus);
  const auto& gl = detail::elevation_quadrature();
  cplx acc(0.0, 0.0);
  for (std::size_t q = 0; q < gl.nodes.size(); ++q) {
    const double y = half * gl.nodes[q];
    acc += gl.weights[q] * std::exp(kI * (coeff * y * y));
  }
  return half * acc;
}

// Spectrum of the emitted burst: n_cycles of a cosine at omega_c under a Hann
// window, centered at t = 0 so the spectrum is real (zero-phase) and echo
// envelopes peak exactly at the geometric time of flight.
inline cplx pulse_spectrum(const PulseSpec& pulse, double omega) {
  pulse.validate();
  const double fs = pulse.sampling_rate;
  const double t_burst = pulse.n_cycles / pulse.f_c_hz();
  const int j_max = static_cast<int>(std::floor(0.5 * t_burst * fs));
  double re = 0.0;
  for (int j = -j_max; j <= j_max; ++j) {
    const double t = j / fs;
    const double w = 0.5 * (1.0 + std::cos(2.0 * kPi * t / t_burst));
    // symmetric sum: imaginary parts cancel pairwise
    re += w * std::cos(pulse.center_frequency * t) * std::cos(omega * t);
  }
  return cplx(re / fs, 0.0);
}

struct TransmitScheme {
  enum class Kind { plane_wave, diverging } kind = Kind::plane_wave;
  std::vector<double> angles;  // radians, strictly increasing (plane_wave)
  Vec2 virtual_source;         // z < 0 (diverging)

  int n_transmits() const {
    return kind == Kind::plane_wave ? static_cast<int>(angles.size()) : 1;
  }

  void validate() const {
    if (kind == Kind::plane_wave) {
      if (angles.empty()) throw ConfigError("transmit: at least one plane-wave angle");
      for (std::size_t i = 0; i < angles.size(); ++i) {
        if (std::abs(angles[i]) >= 0.5 * kPi)
          throw ConfigError("transmit: |angle| must be < pi/2");
        if (i > 0 && !(angles[i] > angles[i - 1]))
          throw ConfigError("transmit: angles must be strictly increasing");
      }
    } else {
      if (!(virtual_source.z < 0.0))
        throw ConfigError("transmit: virtual source must sit behind the array (z < 0)");
    }
  }
};

// Firing delays for one transmit, shifted so the earliest element fires at 0.
inline std::vector<double> transmit_delays(const TransmitScheme& scheme,
                                           const ProbeGeometry& geom, double c,
                                           int transmit_index) {
  scheme.validate();
  const auto xs = element_positions(geom);
  std::vector<double> d(xs.size());
  if (scheme.kind == TransmitScheme::Kind::plane_wave) {
    const double s = std::sin(scheme.angles.at(transmit_index));
    for (std::size_t n = 0; n < xs.size(); ++n) d[n] = xs[n] * s / c;
  } else {
    for (std::size_t n = 0; n < xs.size(); ++n)
      d[n] = distance({xs[n], 0.0}, scheme.virtual_source) / c;
  }
  const double lo = *std::min_element(d.begin(), d.end());
  for (auto& v : d) v -= lo;
  return d;
}

// Time at which the transmitted wavefront reaches a field point, on the same
// clock as transmit_delays (the first element fires at t = 0).
inline double transmit_arrival(const TransmitScheme& scheme, const ProbeGeometry& geom, double c,
                               int transmit_index, const Vec2& p) {
  const auto xs = element_positions(geom);
  if (scheme.kind == TransmitScheme::Kind::plane_wave) {
    const double s = std::sin(scheme.angles.at(transmit_index));
    double lo = xs.front() * s;
    for (const double x : xs) lo = std::min(lo, x * s);
    return (p.x * s + p.z * std::cos(scheme.angles.at(transmit_index)) - lo) / c;
  }
  double lo = distance({xs.front(), 0.0}, scheme.virtual_source);
  for (const double x : xs) lo = std::min(lo, distance({x, 0.0}, scheme.virtual_source));
  return (distance(p, scheme.virtual_source) - lo) / c;
}

}  // namespace ipac
