// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch.hpp>

#include "ipac/aberration.hpp"
#include "ipac/localization.hpp"
#include "ipac/phantom.hpp"

using namespace ipac;

namespace {
RMat gaussian_blob(int rows, int cols, double r0, double c0, double amp, double sigma) {
  RMat img = RMat::Zero(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      img(r, c) +=
          amp * std::exp(-((r - r0) * (r - r0) + (c - c0) * (c - c0)) / (2.0 * sigma * sigma));
  return img;
}

ProbeGeometry probe(int n = 24, double pitch = 0.1e-3) {
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
}  // namespace

TEST_CASE("peak detection on blobs") {
  const RMat one = gaussian_blob(31, 31, 15, 12, 1.0, 2.0);
  const auto peaks = detect_peaks(one, 20.0);
  REQUIRE(peaks.size() == 1);
  REQUIRE(peaks[0].row == 15);
  REQUIRE(peaks[0].col == 12);

  // 30 dB weaker second blob is below a 20 dB threshold
  RMat faint = gaussian_blob(41, 41, 10, 10, 1.0, 1.8);
  faint += gaussian_blob(41, 41, 30, 30, 0.0316, 1.8);
  REQUIRE(detect_peaks(faint, 20.0).size() == 1);
  REQUIRE(detect_peaks(faint, 40.0).size() == 2);

  // two equal blobs far apart
  RMat two = gaussian_blob(41, 41, 10, 10, 1.0, 1.8);
  two += gaussian_blob(41, 41, 30, 30, 1.0, 1.8);
  REQUIRE(detect_peaks(two, 20.0).size() == 2);

  const RMat empty = RMat::Zero(16, 16);
  REQUIRE(detect_peaks(empty, 20.0).empty());
}

TEST_CASE("gaussian fit recovers a centered blob to machine precision") {
  const RMat patch = gaussian_blob(7, 7, 3.0, 3.0, 2.5, 1.1);
  const auto fit = fit_gaussian_2d(patch);
  REQUIRE(fit.ok);
  REQUIRE(std::abs(fit.row - 3.0) < 1e-6);
  REQUIRE(std::abs(fit.col - 3.0) < 1e-6);
  REQUIRE(fit.amplitude == Approx(2.5).epsilon(1e-6));
}

TEST_CASE("gaussian fit recovers a subpixel offset within 0.02 pixel") {
  const RMat patch = gaussian_blob(7, 7, 3.3, 2.7, 1.0, 1.2);
  const auto fit = fit_gaussian_2d(patch);
  REQUIRE(fit.ok);
  REQUIRE(std::abs(fit.row - 3.3) < 0.02);
  REQUIRE(std::abs(fit.col - 2.7) < 0.02);
}

TEST_CASE("gaussian fit rejects too-small patches and flat input") {
  REQUIRE_THROWS_AS(fit_gaussian_2d(RMat::Zero(3, 3)), DimensionError);
  const auto fit = fit_gaussian_2d(RMat::Zero(7, 7));
  REQUIRE_FALSE(fit.ok);
}

TEST_CASE("patch correlation is 1 for identical patches and falls off-model") {
  const RMat psf = gaussian_blob(7, 7, 3, 3, 1.0, 1.3);
  REQUIRE(patch_correlation(psf, psf) == Approx(1.0).epsilon(1e-12));
  REQUIRE(patch_correlation(psf, 3.7 * psf) == Approx(1.0).epsilon(1e-12));
  const RMat other = gaussian_blob(7, 7, 1, 5, 1.0, 0.8);
  REQUIRE(patch_correlation(psf, other) < 0.5);
}

TEST_CASE("scene construction and the correlation gate") {
  REQUIRE(scene_from_detections({}, 0.5).empty());

  std::vector<Detection> dets(3);
  for (auto& d : dets) {
    d.x = 1e-3;
    d.z = 4e-3;
    d.amplitude = 2.0;
    d.correlation = 0.4;
  }
  REQUIRE(scene_from_detections(dets, 0.5).empty());

  dets[1].correlation = 0.9;
  dets[1].amplitude = 4.0;
  dets[2].correlation = 0.8;
  dets[2].amplitude = 2.0;
  const auto scene = scene_from_detections(dets, 0.5);
  REQUIRE(scene.size() == 2);
  REQUIRE(std::abs(scene.reflectivity[0]) == Approx(1.0));   // normalized to unit max
  REQUIRE(std::abs(scene.reflectivity[1]) == Approx(0.5));
}

TEST_CASE("scene amplitudes are invariant under global image scaling") {
  std::vector<Detection> dets(2);
  dets[0] = {1e-3, 4e-3, 3.0, 0.9};
  dets[1] = {2e-3, 5e-3, 1.5, 0.9};
  auto scaled = dets;
  scaled[0].amplitude *= 17.0;
  scaled[1].amplitude *= 17.0;
  const auto a = scene_from_detections(dets, 0.5);
  const auto b = scene_from_detections(scaled, 0.5);
  for (int i = 0; i < a.size(); ++i)
    REQUIRE(std::abs(a.reflectivity[i]) == Approx(std::abs(b.reflectivity[i])));
}

namespace {
// mini pipeline: simulate, beamform, localize with a simulated-psf model
struct MiniPipeline {
  ProbeGeometry geom = probe();
  PulseSpec pulse = pulse_l22();
  TransmitScheme scheme = plane({-2, 0, 2});
  ImageGrid grid;

  MiniPipeline() {
    grid.dx = 50e-6;
    grid.dz = 50e-6;
    grid.x0 = -1.5e-3;
    grid.z0 = 3e-3;
    grid.nx = 61;
    grid.nz = 81;
  }

  Image image_of(const ChannelData& ch, int frame) const {
    return beamform_frame(ch, frame, grid, std::vector<double>(geom.n_elements, 0.0), geom,
                          pulse, scheme);
  }

  RMat psf_patch(double z) const {
    ScattererScene sc;
    sc.positions = {{0.0, z}};
    sc.reflectivity = {cplx(1, 0)};
    const auto ch = simulate_channels({sc}, {}, AberrationFunction::identity(geom.n_elements),
                                      geom, pulse, scheme, 1540.0);
    ImageGrid pg = grid;
    pg.nx = 7;
    pg.nz = 7;
    pg.x0 = -3.0 * grid.dx;
    pg.z0 = z - 3.0 * grid.dz;
    return beamform_frame(ch, 0, pg, std::vector<double>(geom.n_elements, 0.0), geom, pulse,
                          scheme)
        .magnitude();
  }
};
}  // namespace

TEST_CASE("noiseless single bubble localizes within a tenth of a wavelength") {
  MiniPipeline mp;
  const double lambda = 1540.0 / mp.pulse.f_c_hz();
  ScattererScene sc;
  sc.positions = {{0.35e-3, 4.3e-3}};
  sc.reflectivity = {cplx(1, 0)};
  const auto ch = simulate_channels({sc}, {}, AberrationFunction::identity(mp.geom.n_elements),
                                    mp.geom, mp.pulse, mp.scheme, 1540.0);
  const auto out = localize_frame(
      mp.image_of(ch, 0), [&](double z) { return mp.psf_patch(z); }, {});
  REQUIRE_FALSE(out.detections.empty());
  const auto best = std::max_element(
      out.detections.begin(), out.detections.end(),
      [](const Detection& a, const Detection& b) { return a.amplitude < b.amplitude; });
  REQUIRE(std::abs(best->x - sc.positions[0].x) < 0.1 * lambda);
  REQUIRE(std::abs(best->z - sc.positions[0].z) < 0.1 * lambda);
  REQUIRE(best->correlation > 0.9);
}

TEST_CASE("ten bubbles at 30 dB SNR: at least eight recovered within half a wavelength") {
  MiniPipeline mp;
  const double lambda = 1540.0 / mp.pulse.f_c_hz();
  Rng rng(314);
  ScattererScene sc;
  // spaced bubbles so point spread functions stay separable
  for (int i = 0; i < 10; ++i) {
    const double x = -1.2e-3 + (i % 5) * 0.6e-3 + rng.uniform(-0.05e-3, 0.05e-3);
    const double z = 3.6e-3 + (i / 5) * 1.6e-3 + rng.uniform(-0.1e-3, 0.1e-3);
    sc.positions.push_back({x, z});
    sc.reflectivity.push_back(cplx(1, 0));
  }
  auto ch = simulate_channels({sc}, {}, AberrationFunction::identity(mp.geom.n_elements),
                              mp.geom, mp.pulse, mp.scheme, 1540.0);
  ch = add_noise(ch, 30.0, 2718);
  const auto out = localize_frame(
      mp.image_of(ch, 0), [&](double z) { return mp.psf_patch(z); }, {});
  const auto scene = scene_from_detections(out.detections, 0.5);

  int matched = 0;
  for (const auto& truth : sc.positions) {
    for (const auto& got : scene.positions)
      if (std::hypot(got.x - truth.x, got.z - truth.z) < 0.5 * lambda) {
        ++matched;
        break;
      }
  }
  REQUIRE(matched >= 8);
}
