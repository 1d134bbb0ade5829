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

#include <bit>
#include <type_traits>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dynland/core/error.hpp"
#include "dynland/core/param_set.hpp"

namespace dynland {

// Binary layout, all integers and floats little-endian:
//   "DLCK"  u32 version  u32 entry_count
//   per entry: u32 name_len, name bytes, u32 rank, u64 dims[rank], f64 values[numel]

inline constexpr char kCheckpointMagic[4] = {'D', 'L', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class T>
void put_le(std::string& out, T v) {
  std::uint64_t bits = 0;
  if constexpr (std::is_same_v<T, double>) {
    bits = std::bit_cast<std::uint64_t>(v);
  } else {
    bits = static_cast<std::uint64_t>(v);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string source) : b_(bytes), src_(std::move(source)) {}

  template <class T>
  T get() {
    need(sizeof(T));
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    if constexpr (std::is_same_v<T, double>) {
      return std::bit_cast<double>(bits);
    } else {
      return static_cast<T>(bits);
    }
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw DataError("checkpoint " + src_ + ": truncated");
  }
  const std::string& b_;
  std::string src_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const ParamSet& params) {
  std::string out(kCheckpointMagic, 4);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) detail::put_le<std::uint64_t>(out, d);
    for (double v : t.data()) detail::put_le<double>(out, v);
  }
  return out;
}

inline ParamSet decode_checkpoint(const std::string& bytes, const std::string& source = "<memory>") {
  detail::Reader r(bytes, source);
  if (r.bytes(4) != std::string(kCheckpointMagic, 4)) throw DataError("checkpoint " + source + ": bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint " + source + ": unsupported version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>();
  ParamSet p;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto len = r.get<std::uint32_t>();
    std::string name = r.bytes(len);
    const auto rank = r.get<std::uint32_t>();
    if (rank > 4) throw DataError("checkpoint " + source + ": entry '" + name + "' has rank " + std::to_string(rank));
    Shape shape;
    std::size_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
      n *= shape.back();
    }
    std::vector<double> v(n);
    for (auto& x : v) x = r.get<double>();
    p.add(std::move(name), Tensor(shape, std::move(v)));
  }
  if (!r.done()) throw DataError("checkpoint " + source + ": trailing bytes");
  return p;
}

inline void save_checkpoint(const ParamSet& params, const std::filesystem::path& path) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  const std::string bytes = encode_checkpoint(params);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

inline ParamSet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str(), path.string());
}

}  // namespace dynland
