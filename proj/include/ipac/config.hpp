// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ipac/beamform.hpp"
#include "ipac/common.hpp"
#include "ipac/numerics.hpp"
#include "ipac/phantom.hpp"
#include "ipac/probe.hpp"

namespace ipac {

// Flat key-value configuration with [section] headers, SI units throughout.
class Config {
 public:
  Config() = default;

  static Config from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_string(ss.str());
  }

  static Config from_string(const std::string& text) {
    Config cfg;
    cfg.merge_string(text);
    return cfg;
  }

  void merge_string(const std::string& text) {
    std::istringstream in(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          throw ConfigError("config line " + std::to_string(line_no) + ": unterminated section");
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
      values_[section + "." + key] = value;
    }
  }

  void merge_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    merge_string(ss.str());
  }

  void set(const std::string& section, const std::string& key, const std::string& value) {
    values_[section + "." + key] = value;
  }
  template <typename T>
  void set_num(const std::string& section, const std::string& key, T v) {
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    set(section, key, ss.str());
  }

  bool has(const std::string& section, const std::string& key) const {
    return values_.count(section + "." + key) > 0;
  }

  std::string str(const std::string& section, const std::string& key,
                  const std::string& fallback) const {
    const auto it = values_.find(section + "." + key);
    return it == values_.end() ? fallback : it->second;
  }
  std::string require_str(const std::string& section, const std::string& key) const {
    const auto it = values_.find(section + "." + key);
    if (it == values_.end())
      throw ConfigError("config: missing required field [" + section + "] " + key);
    return it->second;
  }

  double num(const std::string& section, const std::string& key, double fallback) const {
    return has(section, key) ? parse_num(section, key) : fallback;
  }
  double require_num(const std::string& section, const std::string& key) const {
    require_str(section, key);
    return parse_num(section, key);
  }
  int integer(const std::string& section, const std::string& key, int fallback) const {
    return has(section, key) ? static_cast<int>(parse_num(section, key)) : fallback;
  }
  bool boolean(const std::string& section, const std::string& key, bool fallback) const {
    if (!has(section, key)) return fallback;
    const std::string v = str(section, key, "");
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config: field [" + section + "] " + key + " is not a boolean");
  }

  std::vector<double> num_list(const std::string& section, const std::string& key) const {
    const std::string v = require_str(section, key);
    std::vector<double> out;
    // range syntax start:step:stop, otherwise comma list
    if (v.find(':') != std::string::npos) {
      const auto parts = split(v, ':');
      if (parts.size() != 3)
        throw ConfigError("config: field [" + section + "] " + key + " range needs lo:step:hi");
      const double lo = to_num(parts[0], section, key);
      const double step = to_num(parts[1], section, key);
      const double hi = to_num(parts[2], section, key);
      if (step <= 0.0) throw ConfigError("config: range step must be > 0");
      for (double x = lo; x <= hi + 0.5 * step; x += step) out.push_back(x);
      return out;
    }
    for (const auto& p : split(v, ',')) out.push_back(to_num(p, section, key));
    return out;
  }

  // Canonical serialization: keys sorted, one per line. Used for hashing.
  std::string serialize() const {
    std::ostringstream ss;
    for (const auto& [k, v] : values_) ss << k << " = " << v << "\n";
    return ss.str();
  }
  std::string hash_hex() const {
    std::ostringstream ss;
    ss << std::hex << fnv1a(serialize());
    return ss.str();
  }

 private:
  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
  }
  static std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::istringstream ss(s);
    std::string part;
    while (std::getline(ss, part, sep)) out.push_back(trim(part));
    return out;
  }
  static double to_num(const std::string& s, const std::string& section, const std::string& key) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config: field [" + section + "] " + key + " is not a number: '" + s +
                        "'");
    }
  }
  double parse_num(const std::string& section, const std::string& key) const {
    return to_num(values_.at(section + "." + key), section, key);
  }

  std::map<std::string, std::string> values_;
};

// Bundled probe presets. Pulse and geometry follow the named hardware where
// published; element height and elevation focus are placeholder defaults and
// can be overridden in the config file.
inline Config preset_config(const std::string& name) {
  Config cfg;
  if (name == "l22") {
    cfg.merge_string(R"(
[probe]
n_elements = 128
pitch = 100e-6
element_width = 80e-6
element_height = 1.5e-3
elevation_focus = 8e-3
kind = linear
[pulse]
center_frequency = 15.625e6
fractional_bandwidth = 0.67
n_cycles = 3
sampling_rate = 62.5e6
[transmit]
kind = plane
angles_deg = -5:1:5
[sim]
c = 1540
)");
  } else if (name == "p42") {
    cfg.merge_string(R"(
[probe]
n_elements = 64
pitch = 320e-6
element_width = 250e-6
element_height = 13e-3
elevation_focus = 60e-3
kind = phased
[pulse]
center_frequency = 2.5e6
fractional_bandwidth = 0.6
n_cycles = 3
sampling_rate = 10e6
[transmit]
kind = diverging
virtual_source_x = 0
virtual_source_z = -20e-3
[sim]
c = 1540
)");
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected l22 or p42)");
  }
  return cfg;
}

inline ProbeGeometry probe_from_config(const Config& cfg) {
  ProbeGeometry geom;
  geom.n_elements = cfg.integer("probe", "n_elements", 0);
  geom.pitch = cfg.require_num("probe", "pitch");
  geom.element_width = cfg.require_num("probe", "element_width");
  geom.element_height = cfg.require_num("probe", "element_height");
  geom.elevation_focus = cfg.require_num("probe", "elevation_focus");
  const std::string kind = cfg.str("probe", "kind", "linear");
  if (kind == "linear")
    geom.kind = ProbeKind::linear;
  else if (kind == "phased")
    geom.kind = ProbeKind::phased;
  else
    throw ConfigError("config: probe kind must be linear or phased");
  geom.validate();
  return geom;
}

inline PulseSpec pulse_from_config(const Config& cfg) {
  PulseSpec pulse;
  pulse.center_frequency = 2.0 * kPi * cfg.require_num("pulse", "center_frequency");
  pulse.fractional_bandwidth = cfg.require_num("pulse", "fractional_bandwidth");
  pulse.n_cycles = cfg.integer("pulse", "n_cycles", 3);
  pulse.sampling_rate = cfg.require_num("pulse", "sampling_rate");
  pulse.validate();
  return pulse;
}

inline TransmitScheme scheme_from_config(const Config& cfg) {
  TransmitScheme scheme;
  const std::string kind = cfg.str("transmit", "kind", "plane");
  if (kind == "plane") {
    scheme.kind = TransmitScheme::Kind::plane_wave;
    for (const double deg : cfg.num_list("transmit", "angles_deg"))
      scheme.angles.push_back(deg * kPi / 180.0);
  } else if (kind == "diverging") {
    scheme.kind = TransmitScheme::Kind::diverging;
    scheme.virtual_source = {cfg.num("transmit", "virtual_source_x", 0.0),
                             cfg.require_num("transmit", "virtual_source_z")};
  } else {
    throw ConfigError("config: transmit kind must be plane or diverging");
  }
  scheme.validate();
  return scheme;
}

inline ImageGrid grid_from_config(const Config& cfg) {
  ImageGrid grid;
  grid.x0 = cfg.require_num("grid", "x0");
  grid.z0 = cfg.require_num("grid", "z0");
  grid.dx = cfg.require_num("grid", "dx");
  grid.dz = cfg.require_num("grid", "dz");
  grid.nx = cfg.integer("grid", "nx", 0);
  grid.nz = cfg.integer("grid", "nz", 0);
  grid.c = cfg.num("sim", "c", 1540.0);
  grid.validate();
  return grid;
}

inline PhantomSpec phantom_from_config(const Config& cfg) {
  PhantomSpec spec;
  const std::string vessels = cfg.require_str("phantom", "vessels");
  std::istringstream ss(vessels);
  std::string seg;
  while (std::getline(ss, seg, ';')) {
    std::istringstream fs(seg);
    std::string num;
    std::vector<double> vals;
    while (std::getline(fs, num, ',')) vals.push_back(std::stod(num));
    if (vals.size() != 5)
      throw ConfigError("config: vessel segments need x0,z0,x1,z1,radius");
    spec.vessels.push_back({{vals[0], vals[1]}, {vals[2], vals[3]}, vals[4]});
  }
  spec.bubbles_per_frame = cfg.integer("phantom", "bubbles_per_frame", 20);
  spec.n_frames = cfg.integer("phantom", "n_frames", 1);
  spec.frame_rate = cfg.num("phantom", "frame_rate", 500.0);
  spec.flow_speed = cfg.num("phantom", "flow_speed", 10e-3);
  spec.bubble_reflectivity = cfg.num("phantom", "bubble_reflectivity", 1.0);
  spec.speckle_density = cfg.num("phantom", "speckle_density", 0.0);
  spec.speckle_reflectivity = cfg.num("phantom", "speckle_reflectivity", 0.0);
  spec.fov_x0 = cfg.num("phantom", "fov_x0", 0.0);
  spec.fov_x1 = cfg.num("phantom", "fov_x1", 0.0);
  spec.fov_z0 = cfg.num("phantom", "fov_z0", 0.0);
  spec.fov_z1 = cfg.num("phantom", "fov_z1", 0.0);
  return spec;
}

inline PhaseScreenParams screen_from_config(const Config& cfg) {
  PhaseScreenParams p;
  p.max_attenuation = cfg.num("aberration", "max_attenuation", 0.5);
  p.max_delay_wavelengths = cfg.num("aberration", "max_delay_wavelengths", 1.0);
  p.smoothness_len = cfg.integer("aberration", "smoothness_len", 8);
  return p;
}

}  // namespace ipac
