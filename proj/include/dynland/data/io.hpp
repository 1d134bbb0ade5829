/*
 * Copyright 2026 The dynland Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dynland/core/error.hpp"
#include "dynland/core/tensor.hpp"
#include "dynland/data/episode.hpp"
#include "dynland/data/render.hpp"

namespace dynland {

// Dump formats
//   image     binary PGM (P5), 8-bit, value = round(255 * clamp(v, 0, 1))
//   coords    CSV "landmark,x,y" with x = column, y = row in pixels, then a
//             final "area,<value>" line; numbers printed with %.6f
//   labelmap  text, first line "<Nc> <h> <w>", then one line per landmark with
//             the row-major cells as "value:count" runs separated by spaces

inline std::string format_fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

/// %.17g: enough digits to round-trip a double.
inline std::string format_exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// P5 PGM bytes for an H x W array of values in [0, 1].
inline std::string encode_pgm(std::span<const double> values, std::size_t H, std::size_t W) {
  if (values.size() != H * W) throw ShapeError("encode_pgm: size mismatch");
  std::string out = "P5\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  out.reserve(out.size() + H * W);
  for (double v : values) {
    const double c = std::clamp(v, 0.0, 1.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
  }
  return out;
}

struct Gray8 {
  std::size_t H = 0, W = 0;
  std::vector<unsigned char> pixels;
};

inline Gray8 decode_pgm(const std::string& bytes) {
  std::istringstream in(bytes);
  std::string magic;
  std::size_t W = 0, H = 0;
  int maxval = 0;
  in >> magic >> W >> H >> maxval;
  if (magic != "P5" || maxval != 255 || !in) throw DataError("decode_pgm: not an 8-bit P5 image");
  in.get();
  Gray8 g{H, W, std::vector<unsigned char>(H * W)};
  in.read(reinterpret_cast<char*>(g.pixels.data()), static_cast<std::streamsize>(H * W));
  if (!in) throw DataError("decode_pgm: truncated payload");
  return g;
}

inline std::string encode_coords_csv(const Sample& s) {
  std::string out = "landmark,x,y\n";
  for (std::size_t n = 0; n < s.coords.size(); ++n) {
    out += std::to_string(n) + "," + format_fixed(s.coords[n].x) + "," + format_fixed(s.coords[n].y) + "\n";
  }
  out += "area," + format_fixed(s.area) + "\n";
  return out;
}

inline std::string encode_labelmap_rle(const Tensor& labelmap) {
  if (labelmap.rank() != 3) throw ShapeError("encode_labelmap_rle: expected Nc x h x w");
  const std::size_t nc = labelmap.dim(0), hw = labelmap.dim(1) * labelmap.dim(2);
  std::string out = std::to_string(nc) + " " + std::to_string(labelmap.dim(1)) + " " +
                    std::to_string(labelmap.dim(2)) + "\n";
  for (std::size_t n = 0; n < nc; ++n) {
    std::size_t i = 0;
    bool first = true;
    while (i < hw) {
      const double v = labelmap[n * hw + i];
      std::size_t j = i;
      while (j < hw && labelmap[n * hw + j] == v) ++j;
      if (!first) out += ' ';
      out += (v == 0.0 ? std::string("0") : v == 1.0 ? std::string("1") : format_exact(v)) + ":" +
             std::to_string(j - i);
      first = false;
      i = j;
    }
    out += '\n';
  }
  return out;
}

inline Tensor decode_labelmap_rle(const std::string& text) {
  std::istringstream in(text);
  std::size_t nc = 0, h = 0, w = 0;
  if (!(in >> nc >> h >> w)) throw DataError("labelmap rle: bad header");
  std::vector<double> v;
  v.reserve(nc * h * w);
  std::string line;
  std::getline(in, line);
  for (std::size_t n = 0; n < nc; ++n) {
    if (!std::getline(in, line)) throw DataError("labelmap rle: missing landmark " + std::to_string(n));
    std::istringstream runs(line);
    std::string run;
    std::size_t filled = 0;
    while (runs >> run) {
      const auto colon = run.find(':');
      if (colon == std::string::npos) throw DataError("labelmap rle: bad run '" + run + "'");
      const double value = std::stod(run.substr(0, colon));
      const std::size_t count = std::stoul(run.substr(colon + 1));
      v.insert(v.end(), count, value);
      filled += count;
    }
    if (filled != h * w) throw DataError("labelmap rle: landmark " + std::to_string(n) + " has wrong cell count");
  }
  return Tensor({nc, h, w}, std::move(v));
}

/// Writes <dir>/<stem>.pgm, <stem>.csv and <stem>.rle for one sample.
inline void dump_sample(const Sample& s, const std::filesystem::path& dir, const std::string& stem) {
  write_file(dir / (stem + ".pgm"), encode_pgm(s.image.data(), s.image.dim(0), s.image.dim(1)));
  write_file(dir / (stem + ".csv"), encode_coords_csv(s));
  write_file(dir / (stem + ".rle"), encode_labelmap_rle(s.labelmap));
}

/// Canonical text form of an episode; equal episodes give equal bytes.
inline std::string serialize_episode(const Episode& ep) {
  std::string out = "episode category=" + std::to_string(ep.category_id) + " seed=" + std::to_string(ep.seed) +
                    " support=" + std::to_string(ep.support.size()) + " query=" + std::to_string(ep.query.size()) +
                    "\n";
  auto put = [&](const char* role, const Sample& s) {
    out += std::string(role) + " seed=" + std::to_string(s.seed) + " area=" + format_exact(s.area) + "\n";
    for (const auto& p : s.coords) out += format_exact(p.x) + " " + format_exact(p.y) + "\n";
    for (double v : s.image.data()) out += format_exact(v) + "\n";
    out += encode_labelmap_rle(s.labelmap);
  };
  for (const auto& s : ep.support) put("support", s);
  for (const auto& s : ep.query) put("query", s);
  return out;
}

}  // namespace dynland
