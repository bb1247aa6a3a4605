// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "mofe/archive.hpp"
#include "mofe/decoder.hpp"
#include "mofe/meta.hpp"

namespace mofe {

template <typename T>
void save_model(DecoderT<T>& model, const ModelMeta& meta, const std::string& path) {
  TensorArchive archive = dump_decoder(model);
  save_archive(archive, path);
  save_meta(meta, path);
}

template <typename T>
DecoderT<T> load_model(const std::string& path, ModelMeta* meta_out = nullptr) {
  ModelMeta meta = load_meta(path);
  if (meta.dtype != dtype_of<T>::value) {
    throw FormatError("model " + path + " has dtype " + dtype_name(meta.dtype) + ", expected " +
                      dtype_name(dtype_of<T>::value));
  }
  TensorArchive archive = load_archive(path);
  if (meta_out != nullptr) *meta_out = meta;
  return build_decoder<T>(archive, meta.config, meta.n_experts, meta.top_m);
}

template <typename T>
ModelMeta make_meta(const DecoderT<T>& model) {
  ModelMeta meta;
  meta.config = model.config;
  meta.n_experts = model.n_experts;
  meta.top_m = model.top_m;
  meta.dtype = dtype_of<T>::value;
  return meta;
}

}  // namespace mofe
