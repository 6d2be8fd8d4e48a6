// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "ipac/common.hpp"
#include "ipac/numerics.hpp"
#include "ipac/wave.hpp"

namespace ipac {

struct VesselSegment {
  Vec2 a, b;
  double radius = 0.0;  // meters, lateral half-width around the centerline

  double length() const { return distance(a, b); }
};

struct PhantomSpec {
  std::vector<VesselSegment> vessels;
  int bubbles_per_frame = 20;
  int n_frames = 1;
  double frame_rate = 500.0;         // Hz
  double flow_speed = 10e-3;         // m/s along the vessel
  double bubble_reflectivity = 1.0;
  // static tissue layer
  double speckle_density = 0.0;      // scatterers per m^2 over the field of view
  double speckle_reflectivity = 0.0; // complex-normal std dev per scatterer
  // field of view for the speckle layer
  double fov_x0 = 0.0, fov_x1 = 0.0, fov_z0 = 0.0, fov_z1 = 0.0;
};

// Bubbles travel along straight vessel centerlines at the flow speed and
// re-enter at the far end; positions are re-drawn per frame from the track.
inline std::vector<ScattererScene> bubble_frames(const PhantomSpec& spec, std::uint64_t seed) {
  if (spec.vessels.empty()) throw ConfigError("phantom: no vessels defined");
  if (spec.bubbles_per_frame < 1 || spec.n_frames < 1)
    throw ConfigError("phantom: need at least one bubble and one frame");
  Rng rng(seed);

  double total_len = 0.0;
  for (const auto& v : spec.vessels) total_len += v.length();

  struct Track {
    int vessel;
    double arc0;    // starting arclength
    double offset;  // signed perpendicular offset
  };
  std::vector<Track> tracks(spec.bubbles_per_frame);
  for (auto& t : tracks) {
    const double pick = rng.uniform() * total_len;
    double acc = 0.0;
    t.vessel = 0;
    for (std::size_t v = 0; v < spec.vessels.size(); ++v) {
      acc += spec.vessels[v].length();
      if (pick <= acc || v + 1 == spec.vessels.size()) {
        t.vessel = static_cast<int>(v);
        break;
      }
    }
    t.arc0 = rng.uniform() * spec.vessels[t.vessel].length();
    t.offset = rng.uniform(-1.0, 1.0) * spec.vessels[t.vessel].radius;
  }

  std::vector<ScattererScene> frames(spec.n_frames);
  for (int f = 0; f < spec.n_frames; ++f) {
    auto& scene = frames[f];
    for (const auto& t : tracks) {
      const auto& v = spec.vessels[t.vessel];
      const double len = v.length();
      double arc = std::fmod(t.arc0 + spec.flow_speed * f / spec.frame_rate, len);
      if (arc < 0.0) arc += len;
      const double ux = (v.b.x - v.a.x) / len;
      const double uz = (v.b.z - v.a.z) / len;
      scene.positions.push_back(
          {v.a.x + ux * arc - uz * t.offset, v.a.z + uz * arc + ux * t.offset});
      scene.reflectivity.push_back(cplx(spec.bubble_reflectivity, 0.0));
    }
  }
  return frames;
}

// Static layer of weak random scatterers with circular-Gaussian reflectivity.
inline ScattererScene speckle_scene(const PhantomSpec& spec, std::uint64_t seed) {
  ScattererScene scene;
  if (spec.speckle_density <= 0.0 || spec.speckle_reflectivity <= 0.0) return scene;
  const double area = (spec.fov_x1 - spec.fov_x0) * (spec.fov_z1 - spec.fov_z0);
  if (area <= 0.0) throw ConfigError("phantom: speckle field of view is empty");
  const int n = static_cast<int>(std::round(spec.speckle_density * area));
  Rng rng(seed);
  scene.positions.reserve(n);
  scene.reflectivity.reserve(n);
  const double s = spec.speckle_reflectivity / std::sqrt(2.0);
  for (int i = 0; i < n; ++i) {
    scene.positions.push_back(
        {rng.uniform(spec.fov_x0, spec.fov_x1), rng.uniform(spec.fov_z0, spec.fov_z1)});
    scene.reflectivity.push_back(cplx(s * rng.normal(), s * rng.normal()));
  }
  return scene;
}

}  // namespace ipac
