// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <string>

#include "ipac/baseline.hpp"
#include "ipac/config.hpp"
#include "ipac/inversion.hpp"
#include "ipac/io.hpp"
#include "ipac/metrics.hpp"
#include "ipac/phantom.hpp"

namespace ipac {

struct Hardware {
  ProbeGeometry geom;
  PulseSpec pulse;
  TransmitScheme scheme;
  double c = 1540.0;
};

inline Hardware hardware_from_config(const Config& cfg) {
  Hardware hw;
  hw.geom = probe_from_config(cfg);
  hw.pulse = pulse_from_config(cfg);
  hw.scheme = scheme_from_config(cfg);
  hw.c = cfg.num("sim", "c", 1540.0);
  return hw;
}

// Model PSF provider: a single on-axis scatterer at the requested depth is
// simulated through an unaberrated pipeline and beamformed without
// correction on a fit-window patch of the working grid. Patches are cached
// per depth bucket. Optional band limits match detection images that were
// beamformed from band-passed data.
class PsfModelCache {
 public:
  PsfModelCache(Hardware hw, ImageGrid grid, int window, double f_lo_hz = 0.0,
                double f_hi_hz = 0.0)
      : hw_(std::move(hw)),
        grid_(grid),
        window_(window),
        bucket_(8.0 * grid.dz),
        f_lo_(f_lo_hz),
        f_hi_(f_hi_hz) {}

  int window() const { return window_; }

  RMat operator()(double z) const {
    const long key = std::lround(z / bucket_);
    const auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    const double zq = std::max(key * bucket_, grid_.z0);
    RMat patch = simulate_patch(zq);
    cache_.emplace(key, patch);
    return patch;
  }

 private:
  RMat simulate_patch(double z) const {
    ScattererScene scene;
    scene.positions.push_back({0.0, z});
    scene.reflectivity.push_back(cplx(1.0, 0.0));
    const auto ab = AberrationFunction::identity(hw_.geom.n_elements);
    ChannelData ch = simulate_channels({scene}, ScattererScene{}, ab, hw_.geom, hw_.pulse,
                                       hw_.scheme, hw_.c);
    if (f_hi_ > 0.0) ch = bandpass_filter(ch, f_lo_, f_hi_);
    ImageGrid patch_grid = grid_;
    patch_grid.nx = window_;
    patch_grid.nz = window_;
    patch_grid.x0 = -0.5 * (window_ - 1) * grid_.dx;
    patch_grid.z0 = z - 0.5 * (window_ - 1) * grid_.dz;
    const std::vector<double> zero(hw_.geom.n_elements, 0.0);
    return beamform_frame(ch, 0, patch_grid, zero, hw_.geom, hw_.pulse, hw_.scheme).magnitude();
  }

  Hardware hw_;
  ImageGrid grid_;
  int window_;
  double bucket_;
  double f_lo_, f_hi_;
  mutable std::map<long, RMat> cache_;
};

struct EstimatorOptions {
  LocalizeOptions localize;
  double min_correlation = 0.5;
  // corrections whose span exceeds this are ignored for re-detection (a
  // diverged intermediate screen estimate must not blur the images it will
  // be re-estimated from); 0 disables the guard
  double max_correction_span = 0.0;
};

using SceneEstimator =
    std::function<std::vector<ScattererScene>(const std::vector<double>&, double, double)>;

// Scene estimator used by the iterative inversion: beamform every frame with
// the current corrections, localize, gate on PSF correlation. Detection runs
// on the full band regardless of the solve's continuation window: at typical
// bubble densities the spacing is comparable to a narrowband axial pulse, so
// band-limited detection merges neighbors and loses more than it gains.
inline SceneEstimator make_scene_estimator(const ChannelData& ch, const Hardware& hw,
                                           const ImageGrid& grid, const EstimatorOptions& opt) {
  auto psf = std::make_shared<PsfModelCache>(hw, grid, opt.localize.fit_window);
  return [&ch, hw, grid, opt, psf](const std::vector<double>& delays, double, double) {
    std::vector<double> applied = delays;
    if (opt.max_correction_span > 0.0 && !applied.empty()) {
      const auto [mn, mx] = std::minmax_element(applied.begin(), applied.end());
      if (*mx - *mn > opt.max_correction_span) std::fill(applied.begin(), applied.end(), 0.0);
    }
    std::vector<ScattererScene> scenes(ch.n_frames);
    for (int f = 0; f < ch.n_frames; ++f) {
      const Image img = beamform_frame(ch, f, grid, applied, hw.geom, hw.pulse, hw.scheme);
      const auto out = localize_frame(
          img, [psf](double z) { return (*psf)(z); }, opt.localize);
      scenes[f] = scene_from_detections(out.detections, opt.min_correlation);
    }
    return scenes;
  };
}

inline IpacOptions ipac_options_from_config(const Config& cfg) {
  IpacOptions opt;
  opt.alpha = cfg.num("inversion", "alpha", 0.01);
  opt.max_iter = cfg.integer("inversion", "max_iter", 6);
  opt.epsilon = cfg.num("inversion", "epsilon", 1e-2);
  opt.max_band_bins = cfg.integer("inversion", "max_band_bins", 96);
  opt.verbose = cfg.boolean("inversion", "verbose", false);
  return opt;
}

inline EstimatorOptions estimator_options_from_config(const Config& cfg) {
  EstimatorOptions opt;
  opt.localize.threshold_db = cfg.num("inversion", "threshold_db", 20.0);
  opt.localize.fit_window = cfg.integer("inversion", "fit_window", 7);
  opt.localize.max_detections = cfg.integer("inversion", "max_detections", 0);
  opt.min_correlation = cfg.num("inversion", "min_correlation", 0.5);
  return opt;
}

// simulate: phantom frames + static speckle through a random screen, noise,
// channel container + ground truth exports.
inline void run_simulate(const Config& cfg, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const Hardware hw = hardware_from_config(cfg);
  const auto phantom = phantom_from_config(cfg);
  const std::uint64_t seed = static_cast<std::uint64_t>(cfg.num("sim", "seed", 1.0));

  const auto frames = bubble_frames(phantom, seed);
  const auto tissue = speckle_scene(phantom, seed ^ 0x9e3779b97f4a7c15ull);

  AberrationFunction ab = AberrationFunction::identity(hw.geom.n_elements);
  if (cfg.boolean("aberration", "enabled", true)) {
    const auto params = screen_from_config(cfg);
    const std::uint64_t ab_seed =
        static_cast<std::uint64_t>(cfg.num("aberration", "seed", static_cast<double>(seed + 7)));
    ab = random_phase_screen(hw.geom.n_elements, hw.pulse.f_c_hz(), ab_seed, params);
  }

  ChannelData ch = simulate_channels(frames, tissue, ab, hw.geom, hw.pulse, hw.scheme, hw.c,
                                     cfg.integer("sim", "n_samples", 0),
                                     cfg.num("sim", "band_floor", 0.01));
  if (cfg.has("sim", "snr_db")) ch = add_noise(ch, cfg.require_num("sim", "snr_db"), seed + 1);

  io::save_channel(ch, out_dir + "/channel", cfg.hash_hex(), seed);
  io::save_delays_csv(out_dir + "/truth_aberration.csv", remove_piston(ab.delay), ab.amplitude,
                      hw.pulse.f_c_hz());
  std::vector<std::pair<int, Detection>> truth;
  for (std::size_t f = 0; f < frames.size(); ++f)
    for (std::size_t s = 0; s < frames[f].positions.size(); ++s) {
      Detection d;
      d.x = frames[f].positions[s].x;
      d.z = frames[f].positions[s].z;
      d.amplitude = std::abs(frames[f].reflectivity[s]);
      d.correlation = 1.0;
      truth.emplace_back(static_cast<int>(f), d);
    }
  io::save_detections_csv(out_dir + "/truth_positions.csv", truth);
  std::ofstream cfg_out(out_dir + "/config.txt");
  cfg_out << cfg.serialize();

  std::cout << "simulate: seed " << seed << ", frames " << ch.n_frames << ", angles "
            << ch.n_angles << ", elements " << ch.n_elements << ", samples " << ch.n_samples
            << "\n"
            << "band: bins " << ch.band.n_bins() << " ("
            << ch.band.omega(0) / (2.0 * kPi) * 1e-6 << " - "
            << ch.band.omega(ch.band.n_bins() - 1) / (2.0 * kPi) * 1e-6 << " MHz)\n";
}

inline ChannelData load_filtered_channel(const Config& cfg, const std::string& channel_base) {
  ChannelData ch = io::load_channel(channel_base);
  const int svd_remove = cfg.integer("inversion", "svd_remove", 0);
  if (svd_remove > 0 && ch.n_frames >= 2) return svd_clutter_filter(ch, svd_remove);
  return ch;
}

// invert: recover the aberration profile (IPAC or the coherence baseline).
inline IpacResult run_invert_ipac(const Config& cfg, const std::string& channel_base,
                                  const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const Hardware hw = hardware_from_config(cfg);
  const ImageGrid grid = grid_from_config(cfg);
  const ChannelData ch = load_filtered_channel(cfg, channel_base);

  const auto est_opt = estimator_options_from_config(cfg);
  IpacProblem prob;
  prob.geom = hw.geom;
  prob.pulse = hw.pulse;
  prob.scheme = hw.scheme;
  prob.c = hw.c;
  prob.scene_estimator = make_scene_estimator(ch, hw, grid, est_opt);

  const IpacResult res = ipac_iterate(ch, prob, ipac_options_from_config(cfg));

  // amplitude profile at the bin closest to the carrier
  int bin_c = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t b = 0; b < res.omegas.size(); ++b) {
    const double d = std::abs(res.omegas[b] - hw.pulse.center_frequency);
    if (d < best) {
      best = d;
      bin_c = static_cast<int>(b);
    }
  }
  std::vector<double> amps(hw.geom.n_elements);
  for (int n = 0; n < hw.geom.n_elements; ++n) amps[n] = std::abs(res.u_hat(n, bin_c));

  io::save_delays_csv(out_dir + "/delays.csv", res.delays, amps, hw.pulse.f_c_hz());
  nlohmann::json j;
  j["history"] = res.history;
  j["converged"] = res.converged;
  j["diverged"] = res.diverged;
  j["iterations"] = res.history.size();
  j["detections_last"] = res.n_detections_last;
  j["config_hash"] = cfg.hash_hex();
  std::ofstream out(out_dir + "/history.json");
  out << j.dump(2) << "\n";
  return res;
}

inline std::vector<double> run_invert_coherence(const Config& cfg,
                                                const std::string& channel_base,
                                                const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const Hardware hw = hardware_from_config(cfg);
  const ImageGrid grid = grid_from_config(cfg);
  const ChannelData ch = load_filtered_channel(cfg, channel_base);

  const auto est_opt = estimator_options_from_config(cfg);
  auto psf = std::make_shared<PsfModelCache>(hw, grid, est_opt.localize.fit_window);
  const std::vector<double> zero(hw.geom.n_elements, 0.0);
  const Image img = beamform_frame(ch, 0, grid, zero, hw.geom, hw.pulse, hw.scheme);
  const auto loc = localize_frame(
      img, [psf](double z) { return (*psf)(z); }, est_opt.localize);
  if (loc.detections.empty())
    throw NoScattererError("coherence method: no microbubble detected on frame 0");
  const auto best = std::max_element(
      loc.detections.begin(), loc.detections.end(),
      [](const Detection& a, const Detection& b) { return a.amplitude < b.amplitude; });

  // central transmit (plane angle nearest 0, or the single diverging wave)
  int tx = 0;
  if (hw.scheme.kind == TransmitScheme::Kind::plane_wave) {
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < hw.scheme.angles.size(); ++a)
      if (std::abs(hw.scheme.angles[a]) < bd) {
        bd = std::abs(hw.scheme.angles[a]);
        tx = static_cast<int>(a);
      }
  }
  const auto realigned =
      rephase_hyperbola(ch, 0, tx, {best->x, best->z}, hw.geom, hw.pulse, hw.scheme);
  const auto tau = coherence_delays(realigned);
  io::save_delays_csv(out_dir + "/delays.csv", tau, std::vector<double>(tau.size(), 1.0),
                      hw.pulse.f_c_hz());
  return tau;
}

// correct: beamform with and without the recovered delays, write power
// Doppler and B-mode pairs.
inline void run_correct(const Config& cfg, const std::string& channel_base,
                        const std::string& delays_csv, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const Hardware hw = hardware_from_config(cfg);
  const ImageGrid grid = grid_from_config(cfg);
  const auto prof = io::load_delays_csv(delays_csv);
  if (static_cast<int>(prof.delays.size()) != hw.geom.n_elements)
    throw DimensionError("correct: delay profile length does not match the probe");
  const ChannelData ch = load_filtered_channel(cfg, channel_base);

  const std::vector<double> zero(hw.geom.n_elements, 0.0);
  std::vector<Image> plain, corrected;
  for (int f = 0; f < ch.n_frames; ++f) {
    plain.push_back(beamform_frame(ch, f, grid, zero, hw.geom, hw.pulse, hw.scheme));
    corrected.push_back(beamform_frame(ch, f, grid, prof.delays, hw.geom, hw.pulse, hw.scheme));
  }
  const double dyn = cfg.num("render", "dynamic_range_db", 40.0);

  const RMat pd_plain = power_doppler(plain);
  const RMat pd_corr = power_doppler(corrected);
  io::save_image_raw(pd_plain, grid, out_dir + "/power_doppler_uncorrected");
  io::save_image_raw(pd_corr, grid, out_dir + "/power_doppler_corrected");
  io::save_image_png_db(pd_plain.cwiseSqrt(), out_dir + "/power_doppler_uncorrected.png", dyn);
  io::save_image_png_db(pd_corr.cwiseSqrt(), out_dir + "/power_doppler_corrected.png", dyn);

  const RMat b_plain = plain.front().magnitude();
  const RMat b_corr = corrected.front().magnitude();
  io::save_image_raw(b_plain, grid, out_dir + "/bmode_uncorrected");
  io::save_image_raw(b_corr, grid, out_dir + "/bmode_corrected");
  io::save_image_png_db(b_plain, out_dir + "/bmode_uncorrected.png", dyn);
  io::save_image_png_db(b_corr, out_dir + "/bmode_corrected.png", dyn);
}

struct EvaluateInputs {
  std::string image_base;      // raw image for CNR/SNR
  std::string delays_a, delays_b;
  std::string points_a, points_b;
};

inline nlohmann::json run_evaluate(const Config& cfg, const EvaluateInputs& in,
                                   const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  nlohmann::json j;
  j["config_hash"] = cfg.hash_hex();
  if (!in.image_base.empty()) {
    if (!cfg.has("rois", "vessel") || !cfg.has("rois", "noise"))
      throw ConfigError("evaluate: [rois] vessel and noise are required for image metrics");
    auto parse_roi = [&](const std::string& key) {
      const auto v = cfg.num_list("rois", key);
      if (v.size() != 4) throw ConfigError("evaluate: ROI needs row0,row1,col0,col1");
      Roi roi;
      roi.row0 = static_cast<int>(v[0]);
      roi.row1 = static_cast<int>(v[1]);
      roi.col0 = static_cast<int>(v[2]);
      roi.col1 = static_cast<int>(v[3]);
      return roi;
    };
    const RMat img = io::load_image_raw(in.image_base);
    const Roi vessel = parse_roi("vessel"), noise = parse_roi("noise");
    j["cnr_db"] = cnr(img, vessel, noise);
    j["snr_db"] = snr_image(img, vessel, noise);
  }
  if (!in.delays_a.empty() && !in.delays_b.empty()) {
    const auto a = io::load_delays_csv(in.delays_a);
    const auto b = io::load_delays_csv(in.delays_b);
    j["cosine_similarity"] =
        cosine_similarity(remove_piston(a.delays), remove_piston(b.delays));
  }
  if (!in.points_a.empty() && !in.points_b.empty()) {
    const ImageGrid grid = grid_from_config(cfg);
    auto to_points = [](const std::string& path) {
      std::vector<Vec2> pts;
      for (const auto& [frame, d] : io::load_detections_csv(path)) pts.push_back({d.x, d.z});
      return pts;
    };
    const auto res = frc_resolution(to_points(in.points_a), to_points(in.points_b), grid);
    j["frc_resolution_m"] = res.resolution;
    j["frc_crossed"] = res.crossed;
  }
  std::ofstream out(out_dir + "/metrics.json");
  out << j.dump(2) << "\n";
  // experiment ledger: one row per evaluate call
  const std::string ledger = out_dir + "/ledger.csv";
  const bool fresh = !fs::exists(ledger);
  std::ofstream led(ledger, std::ios::app);
  if (fresh) led << "config_hash,cnr_db,snr_db,cosine_similarity,frc_resolution_m\n";
  auto field = [&](const char* key) {
    return j.contains(key) ? j[key].dump() : std::string("");
  };
  led << j["config_hash"].get<std::string>() << "," << field("cnr_db") << "," << field("snr_db")
      << "," << field("cosine_similarity") << "," << field("frc_resolution_m") << "\n";
  return j;
}

}  // namespace ipac
