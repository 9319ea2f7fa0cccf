#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include "dppo/error.hpp"
#include "dppo/reward.hpp"
#include "dppo/world.hpp"

namespace dppo::pgm {

/// Raw binary PGM raster.
struct Image {
  int width = 0;
  int height = 0;
  int maxval = 255;
  std::vector<std::uint16_t> samples;  ///< row-major
};

/// Parses binary PGM (P5). Header tokens are separated by whitespace and may be
/// interleaved with '#' comments; exactly one whitespace byte precedes the
/// raster. maxval must be 255 (1 byte/sample) or 65535 (2 bytes, big-endian).
inline Image decode(std::string_view bytes) {
  std::size_t pos = 0;
  const auto is_space = [](char c) {
    return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v';
  };
  const auto next_token = [&]() -> std::string {
    while (pos < bytes.size()) {
      if (is_space(bytes[pos])) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !is_space(bytes[pos]) && bytes[pos] != '#') ++pos;
    if (start == pos) throw FormatError("pgm: truncated header");
    return std::string(bytes.substr(start, pos - start));
  };
  const auto positive = [](const std::string& tok, const char* what) {
    const auto v = text::parse_int(tok);
    if (!v || *v <= 0 || *v > (1 << 24)) throw FormatError(std::string("pgm: bad ") + what);
    return static_cast<int>(*v);
  };

  if (bytes.size() < 2 || bytes.substr(0, 2) != "P5") throw FormatError("pgm: missing P5 magic");
  pos = 2;
  Image img;
  img.width = positive(next_token(), "width");
  img.height = positive(next_token(), "height");
  img.maxval = positive(next_token(), "maxval");
  if (img.maxval != 255 && img.maxval != 65535)
    throw FormatError("pgm: maxval must be 255 or 65535");
  if (pos >= bytes.size() || !is_space(bytes[pos])) throw FormatError("pgm: truncated header");
  ++pos;

  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  const std::size_t bps = img.maxval == 255 ? 1 : 2;
  if (bytes.size() - pos != n * bps)
    throw FormatError("pgm: raster has " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                      std::to_string(n * bps));
  img.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto b0 = static_cast<unsigned char>(bytes[pos + i * bps]);
    if (bps == 1) {
      img.samples[i] = b0;
    } else {
      const auto b1 = static_cast<unsigned char>(bytes[pos + i * bps + 1]);
      img.samples[i] = static_cast<std::uint16_t>((b0 << 8) | b1);
    }
  }
  return img;
}

inline std::string encode(const Image& img) {
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n" +
                    std::to_string(img.maxval) + "\n";
  for (std::uint16_t s : img.samples) {
    if (img.maxval == 255) {
      out.push_back(static_cast<char>(s & 0xFF));
    } else {
      out.push_back(static_cast<char>(s >> 8));
      out.push_back(static_cast<char>(s & 0xFF));
    }
  }
  return out;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

/// depth = sample / maxval * max_range
inline DepthImage to_depth(const Image& img, double max_range) {
  if (!(max_range > 0.0)) throw DomainError("max_range must be positive");
  DepthImage depth(img.width, img.height);
  for (std::size_t i = 0; i < img.samples.size(); ++i)
    depth.values[i] = static_cast<double>(img.samples[i]) / img.maxval * max_range;
  return depth;
}

/// 8-bit mask image: 255 for free pixels, 0 otherwise.
inline Image from_mask(const FreeSpaceMask& mask) {
  Image img;
  img.width = mask.width;
  img.height = mask.height;
  img.maxval = 255;
  img.samples.resize(mask.bits.size());
  for (std::size_t i = 0; i < mask.bits.size(); ++i) img.samples[i] = mask.bits[i] ? 255 : 0;
  return img;
}

}  // namespace dppo::pgm
