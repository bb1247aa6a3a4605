// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace mofe {

// Error taxonomy shared by the library and the CLI. `kind` is a stable
// machine-readable tag; `json_path` points at the offending config field
// when the error originates from a config/spec file.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message, std::string json_path = "")
      : std::runtime_error(message), kind_(std::move(kind)), json_path_(std::move(json_path)) {}

  const std::string& kind() const { return kind_; }
  const std::string& json_path() const { return json_path_; }

 private:
  std::string kind_;
  std::string json_path_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& msg) : Error("shape", msg) {}
};

struct ContractError : Error {
  explicit ContractError(const std::string& msg) : Error("contract", msg) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& msg, std::string path = "")
      : Error("config", msg, std::move(path)) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error("io", msg) {}
};

struct FormatError : Error {
  explicit FormatError(const std::string& msg) : Error("format", msg) {}
};

struct ManifestError : Error {
  explicit ManifestError(const std::string& msg) : Error("manifest", msg) {}
};

struct MergeError : Error {
  explicit MergeError(const std::string& msg) : Error("merge", msg) {}
};

struct StructuralError : Error {
  explicit StructuralError(const std::string& msg) : Error("structural", msg) {}
};

}  // namespace mofe
