// Copyright 2026 The TCM Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// TSR1 tensor container:
//   bytes 0-3  magic "TSR1"
//   byte  4    dtype code (0 = f32, 1 = f64)
//   byte  5    ndim
//   bytes 6-7  zero
//   ndim x u32 little-endian extents
//   raw little-endian elements, row-major

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <variant>

#include "tcm/tensor.hpp"

namespace tcm {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <Real T>
constexpr DType dtype_of() {
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

inline const char* dtype_name(DType d) { return d == DType::f32 ? "f32" : "f64"; }

using AnyTensor = std::variant<Tensor<float>, Tensor<double>>;

namespace detail {

template <typename U>
U to_little_endian(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<std::uint8_t, sizeof(U)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<U>(bytes);
  } else {
    return v;
  }
}

template <Real T>
using RawBits = std::conditional_t<std::is_same_v<T, float>, std::uint32_t, std::uint64_t>;

template <Real T>
Tensor<T> read_payload(std::istream& in, Shape shape) {
  Tensor<T> t(std::move(shape));
  std::vector<RawBits<T>> raw(t.size());
  in.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(raw.size() * sizeof(RawBits<T>)));
  if (!in) throw FormatError("TSR1: truncated element data");
  for (std::size_t i = 0; i < raw.size(); ++i) {
    t[i] = std::bit_cast<T>(to_little_endian(raw[i]));
  }
  return t;
}

}  // namespace detail

template <Real T>
void write_tsr(std::ostream& out, const Tensor<T>& t) {
  if (t.empty()) throw FormatError("TSR1: cannot write an empty tensor");
  if (t.rank() > 255) throw FormatError("TSR1: rank exceeds 255");
  const char header[8] = {'T', 'S', 'R', '1', static_cast<char>(dtype_of<T>()),
                          static_cast<char>(t.rank()), 0, 0};
  out.write(header, sizeof(header));
  for (std::size_t e : t.shape()) {
    if (e > 0xFFFFFFFFull) throw FormatError("TSR1: extent exceeds 32 bits");
    const auto le = detail::to_little_endian(static_cast<std::uint32_t>(e));
    out.write(reinterpret_cast<const char*>(&le), sizeof(le));
  }
  std::vector<detail::RawBits<T>> raw(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    raw[i] = detail::to_little_endian(std::bit_cast<detail::RawBits<T>>(t[i]));
  }
  out.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size() * sizeof(raw[0])));
  if (!out) throw FormatError("TSR1: write failed");
}

inline AnyTensor read_tsr(std::istream& in) {
  char header[8];
  in.read(header, sizeof(header));
  if (!in || std::memcmp(header, "TSR1", 4) != 0) throw FormatError("TSR1: bad magic");
  const auto code = static_cast<std::uint8_t>(header[4]);
  const auto ndim = static_cast<std::uint8_t>(header[5]);
  if (header[6] != 0 || header[7] != 0) throw FormatError("TSR1: non-zero padding bytes");
  if (ndim == 0) throw FormatError("TSR1: ndim must be >= 1");
  Shape shape(ndim);
  for (auto& e : shape) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw FormatError("TSR1: truncated extents");
    e = detail::to_little_endian(v);
    if (e == 0) throw FormatError("TSR1: zero extent");
  }
  switch (code) {
    case 0: return detail::read_payload<float>(in, std::move(shape));
    case 1: return detail::read_payload<double>(in, std::move(shape));
    default: throw FormatError("TSR1: unknown dtype code " + std::to_string(code));
  }
}

template <Real T>
void save_tsr(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_tsr(out, t);
}

inline AnyTensor load_tsr(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_tsr(in);
}

/// Loads a TSR1 file and converts it to element type T if necessary.
template <Real T>
Tensor<T> load_tsr_as(const std::filesystem::path& path) {
  return std::visit(
      [](auto&& t) -> Tensor<T> {
        using U = typename std::decay_t<decltype(t)>::value_type;
        if constexpr (std::is_same_v<U, T>) {
          return std::move(t);
        } else {
          return t.template cast<T>();
        }
      },
      load_tsr(path));
}

}  // namespace tcm
