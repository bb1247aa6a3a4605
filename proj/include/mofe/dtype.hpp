// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include "mofe/errors.hpp"

namespace mofe {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

inline std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }

inline std::string dtype_name(DType d) { return d == DType::f32 ? "f32" : "f64"; }

inline DType dtype_from_name(const std::string& s) {
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  throw FormatError("unknown dtype name: " + s);
}

inline DType dtype_from_code(std::uint8_t code) {
  if (code > 1) throw FormatError("unknown dtype code: " + std::to_string(code));
  return static_cast<DType>(code);
}

template <typename T>
struct dtype_of;

template <>
struct dtype_of<float> {
  static constexpr DType value = DType::f32;
};

template <>
struct dtype_of<double> {
  static constexpr DType value = DType::f64;
};

}  // namespace mofe
