// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "mofe/dtype.hpp"
#include "mofe/tensor.hpp"

namespace mofe {

// Raw named tensor: dtype + dims + little-endian IEEE-754 payload bytes.
struct RawTensor {
  DType dtype = DType::f32;
  std::vector<std::size_t> dims;
  std::vector<std::uint8_t> bytes;

  std::size_t numel() const { return shape_numel(dims); }
};

template <typename T>
RawTensor raw_from_tensor(const Tensor<T>& t) {
  RawTensor r;
  r.dtype = dtype_of<T>::value;
  r.dims = t.shape();
  r.bytes.resize(t.numel() * sizeof(T));
  std::memcpy(r.bytes.data(), t.data().data(), r.bytes.size());
  return r;
}

template <typename T>
Tensor<T> tensor_from_raw(const RawTensor& r, const std::string& name = "") {
  if (r.dtype != dtype_of<T>::value) {
    throw FormatError("tensor " + name + ": dtype " + dtype_name(r.dtype) + " does not match requested " +
                      dtype_name(dtype_of<T>::value));
  }
  std::vector<T> data(r.numel());
  std::memcpy(data.data(), r.bytes.data(), r.bytes.size());
  return Tensor<T>::from_data(r.dims, std::move(data));
}

// Named-tensor checkpoint container. Bit-exact: save followed by load
// returns identical payload bytes for every tensor. File layout is
// documented in docs/checkpoint_format.md.
class TensorArchive {
 public:
  static constexpr char kMagic[4] = {'M', 'O', 'F', 'E'};
  static constexpr std::uint32_t kVersion = 1;
  static constexpr std::size_t kAlignment = 64;

  void put(const std::string& name, RawTensor tensor);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  const RawTensor& at(const std::string& name) const;
  std::size_t size() const { return tensors_.size(); }

  // Sorted by name (the on-disk order).
  const std::map<std::string, RawTensor>& tensors() const { return tensors_; }
  std::map<std::string, RawTensor>& tensors() { return tensors_; }

 private:
  std::map<std::string, RawTensor> tensors_;
};

struct ArchiveEntry {
  std::string name;
  DType dtype;
  std::vector<std::size_t> dims;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
};

struct ArchiveListing {
  std::uint32_t version = 0;
  std::vector<ArchiveEntry> entries;
  // Bytes consumed producing the listing (header + index only).
  std::uint64_t bytes_read = 0;
  std::uint64_t file_size = 0;
};

void save_archive(const TensorArchive& archive, const std::string& path);
TensorArchive load_archive(const std::string& path);

// Header + index only; payloads are never touched.
ArchiveListing inspect_archive(const std::string& path);

}  // namespace mofe
