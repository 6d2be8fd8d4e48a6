// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ipac/aberration.hpp"
#include "ipac/beamform.hpp"
#include "ipac/common.hpp"
#include "ipac/localization.hpp"
#include "ipac/wave.hpp"

namespace ipac {

namespace io {

inline void write_bytes(const std::string& path, const void* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("io: cannot write '" + path + "'");
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
}

inline std::vector<char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("io: cannot read '" + path + "'");
  const auto size = in.tellg();
  std::vector<char> buf(static_cast<std::size_t>(size));
  in.seekg(0);
  in.read(buf.data(), size);
  return buf;
}

// Channel container: raw little-endian float64 samples next to a JSON
// sidecar carrying dimensions and provenance. Round trips bit-exactly.
inline void save_channel(const ChannelData& ch, const std::string& base_path,
                         const std::string& config_hash = "", std::uint64_t seed = 0) {
  write_bytes(base_path + ".bin", ch.samples.data(), ch.samples.size() * sizeof(double));
  nlohmann::json j;
  j["n_frames"] = ch.n_frames;
  j["n_angles"] = ch.n_angles;
  j["n_elements"] = ch.n_elements;
  j["n_samples"] = ch.n_samples;
  j["sampling_rate"] = ch.fs;
  j["t0"] = ch.t0;
  j["c"] = ch.c;
  j["band"] = {{"n_fft", ch.band.n_fft}, {"k_lo", ch.band.k_lo}, {"k_hi", ch.band.k_hi}};
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  j["byte_order"] = "little";
  std::ofstream out(base_path + ".json");
  out << j.dump(2) << "\n";
}

inline ChannelData load_channel(const std::string& base_path) {
  std::ifstream in(base_path + ".json");
  if (!in) throw std::runtime_error("io: cannot read '" + base_path + ".json'");
  nlohmann::json j;
  in >> j;
  ChannelData ch;
  ch.n_frames = j.at("n_frames");
  ch.n_angles = j.at("n_angles");
  ch.n_elements = j.at("n_elements");
  ch.n_samples = j.at("n_samples");
  ch.fs = j.at("sampling_rate");
  ch.t0 = j.at("t0");
  ch.c = j.at("c");
  ch.band.n_fft = j.at("band").at("n_fft");
  ch.band.fs = ch.fs;
  ch.band.k_lo = j.at("band").at("k_lo");
  ch.band.k_hi = j.at("band").at("k_hi");
  const auto bytes = read_bytes(base_path + ".bin");
  const std::size_t expect =
      static_cast<std::size_t>(ch.n_frames) * ch.n_angles * ch.n_elements * ch.n_samples;
  if (bytes.size() != expect * sizeof(double))
    throw DimensionError("io: channel payload size does not match sidecar dimensions");
  ch.samples.resize(expect);
  std::memcpy(ch.samples.data(), bytes.data(), bytes.size());
  ch.recompute_spectra();
  return ch;
}

// Delay profile CSV: element, amplitude, delay_ns. The header records the
// center frequency and that the piston (mean delay) has been removed.
inline void save_delays_csv(const std::string& path, const std::vector<double>& delays,
                            const std::vector<double>& amplitudes, double f_c_hz) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("io: cannot write '" + path + "'");
  out.precision(12);
  out << "# f_c_hz=" << f_c_hz << " piston=removed unit=ns\n";
  out << "element,amplitude,delay_ns\n";
  for (std::size_t n = 0; n < delays.size(); ++n) {
    const double a = n < amplitudes.size() ? amplitudes[n] : 1.0;
    out << n << "," << a << "," << delays[n] * 1e9 << "\n";
  }
}

struct DelayProfile {
  std::vector<double> delays;      // seconds
  std::vector<double> amplitudes;
  double f_c_hz = 0.0;
};

inline DelayProfile load_delays_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("io: cannot read '" + path + "'");
  DelayProfile prof;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.front() == '#') {
      const auto pos = line.find("f_c_hz=");
      if (pos != std::string::npos) prof.f_c_hz = std::stod(line.substr(pos + 7));
      continue;
    }
    if (line.find("element") == 0) continue;
    std::istringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
    if (vals.size() != 3) throw std::runtime_error("io: malformed delay CSV row: " + line);
    prof.amplitudes.push_back(vals[1]);
    prof.delays.push_back(vals[2] * 1e-9);
  }
  return prof;
}

inline void save_detections_csv(const std::string& path,
                                const std::vector<std::pair<int, Detection>>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("io: cannot write '" + path + "'");
  out.precision(12);
  out << "frame,x,z,amplitude,correlation\n";
  for (const auto& [frame, d] : rows)
    out << frame << "," << d.x << "," << d.z << "," << d.amplitude << "," << d.correlation
        << "\n";
}

inline std::vector<std::pair<int, Detection>> load_detections_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("io: cannot read '" + path + "'");
  std::vector<std::pair<int, Detection>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line.find("frame") == 0 || line.front() == '#') continue;
    std::istringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
    if (vals.size() != 5) throw std::runtime_error("io: malformed detections CSV row: " + line);
    Detection d;
    d.x = vals[1];
    d.z = vals[2];
    d.amplitude = vals[3];
    d.correlation = vals[4];
    rows.emplace_back(static_cast<int>(vals[0]), d);
  }
  return rows;
}

// Images: raw float32 payload plus a JSON sidecar with the grid.
inline void save_image_raw(const RMat& img, const ImageGrid& grid, const std::string& base_path) {
  std::vector<float> payload(static_cast<std::size_t>(img.rows()) * img.cols());
  for (int j = 0; j < img.rows(); ++j)
    for (int i = 0; i < img.cols(); ++i)
      payload[static_cast<std::size_t>(j) * img.cols() + i] = static_cast<float>(img(j, i));
  write_bytes(base_path + ".f32", payload.data(), payload.size() * sizeof(float));
  nlohmann::json j;
  j["nz"] = img.rows();
  j["nx"] = img.cols();
  j["x0"] = grid.x0;
  j["z0"] = grid.z0;
  j["dx"] = grid.dx;
  j["dz"] = grid.dz;
  j["dtype"] = "float32";
  j["byte_order"] = "little";
  std::ofstream out(base_path + ".f32.json");
  out << j.dump(2) << "\n";
}

inline RMat load_image_raw(const std::string& base_path, ImageGrid* grid_out = nullptr) {
  std::ifstream in(base_path + ".f32.json");
  if (!in) throw std::runtime_error("io: cannot read '" + base_path + ".f32.json'");
  nlohmann::json j;
  in >> j;
  const int nz = j.at("nz"), nx = j.at("nx");
  const auto bytes = read_bytes(base_path + ".f32");
  if (bytes.size() != static_cast<std::size_t>(nz) * nx * sizeof(float))
    throw DimensionError("io: image payload does not match sidecar dimensions");
  RMat img(nz, nx);
  const float* p = reinterpret_cast<const float*>(bytes.data());
  for (int r = 0; r < nz; ++r)
    for (int c = 0; c < nx; ++c) img(r, c) = p[static_cast<std::size_t>(r) * nx + c];
  if (grid_out) {
    grid_out->nx = nx;
    grid_out->nz = nz;
    grid_out->x0 = j.at("x0");
    grid_out->z0 = j.at("z0");
    grid_out->dx = j.at("dx");
    grid_out->dz = j.at("dz");
  }
  return img;
}

namespace detail {
inline std::uint32_t crc32(const std::uint8_t* data, std::size_t len, std::uint32_t crc = 0) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc ^= 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

inline std::uint32_t adler32(const std::uint8_t* data, std::size_t len) {
  std::uint32_t a = 1, b = 0;
  for (std::size_t i = 0; i < len; ++i) {
    a = (a + data[i]) % 65521u;
    b = (b + a) % 65521u;
  }
  return (b << 16) | a;
}

inline void push_be32(std::vector<std::uint8_t>& v, std::uint32_t x) {
  v.push_back((x >> 24) & 0xFF);
  v.push_back((x >> 16) & 0xFF);
  v.push_back((x >> 8) & 0xFF);
  v.push_back(x & 0xFF);
}

inline void push_chunk(std::vector<std::uint8_t>& out, const char type[5],
                       const std::vector<std::uint8_t>& data) {
  push_be32(out, static_cast<std::uint32_t>(data.size()));
  std::vector<std::uint8_t> body(type, type + 4);
  body.insert(body.end(), data.begin(), data.end());
  out.insert(out.end(), body.begin(), body.end());
  push_be32(out, crc32(body.data(), body.size()));
}
}  // namespace detail

// Minimal 8-bit grayscale PNG (zlib stream with stored deflate blocks).
inline void save_png_gray(const std::string& path, const std::vector<std::uint8_t>& pixels,
                          int width, int height) {
  if (static_cast<std::size_t>(width) * height != pixels.size())
    throw DimensionError("png: pixel count does not match dimensions");
  std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};

  std::vector<std::uint8_t> ihdr;
  detail::push_be32(ihdr, static_cast<std::uint32_t>(width));
  detail::push_be32(ihdr, static_cast<std::uint32_t>(height));
  ihdr.insert(ihdr.end(), {8, 0, 0, 0, 0});  // depth 8, grayscale, default coding
  detail::push_chunk(out, "IHDR", ihdr);

  // scanlines with filter byte 0
  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(height) * (width + 1));
  for (int r = 0; r < height; ++r) {
    raw.push_back(0);
    raw.insert(raw.end(), pixels.begin() + static_cast<std::size_t>(r) * width,
               pixels.begin() + static_cast<std::size_t>(r + 1) * width);
  }
  std::vector<std::uint8_t> idat = {0x78, 0x01};  // zlib header, no compression preset
  std::size_t off = 0;
  while (off < raw.size() || raw.empty()) {
    const std::size_t n = std::min<std::size_t>(65535, raw.size() - off);
    const bool final = off + n == raw.size();
    idat.push_back(final ? 1 : 0);
    idat.push_back(n & 0xFF);
    idat.push_back((n >> 8) & 0xFF);
    idat.push_back(~n & 0xFF);
    idat.push_back((~n >> 8) & 0xFF);
    idat.insert(idat.end(), raw.begin() + off, raw.begin() + off + n);
    off += n;
    if (raw.empty()) break;
  }
  detail::push_be32(idat, detail::adler32(raw.data(), raw.size()));
  detail::push_chunk(out, "IDAT", idat);
  detail::push_chunk(out, "IEND", {});
  write_bytes(path, out.data(), out.size());
}

// dB-scale rendering: 0 dB at the image peak, clipped at -dynamic_range.
inline void save_image_png_db(const RMat& img, const std::string& path,
                              double dynamic_range_db = 40.0) {
  const double peak = img.maxCoeff();
  std::vector<std::uint8_t> px(static_cast<std::size_t>(img.rows()) * img.cols(), 0);
  if (peak > 0.0) {
    for (int r = 0; r < img.rows(); ++r)
      for (int c = 0; c < img.cols(); ++c) {
        const double v = img(r, c);
        double db = v > 0.0 ? 20.0 * std::log10(v / peak) : -dynamic_range_db;
        db = std::clamp(db, -dynamic_range_db, 0.0);
        px[static_cast<std::size_t>(r) * img.cols() + c] =
            static_cast<std::uint8_t>(std::lround(255.0 * (db + dynamic_range_db) /
                                                  dynamic_range_db));
      }
  }
  save_png_gray(path, px, static_cast<int>(img.cols()), static_cast<int>(img.rows()));
}

}  // namespace io
}  // namespace ipac
