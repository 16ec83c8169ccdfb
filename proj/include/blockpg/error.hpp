// SPDX-FileCopyrightText: Copyright (c) 2026 The blockpg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace blockpg {

enum class ErrorKind {
  kConfig,
  kInput,
  kNumericDomain,
  kShape,
  kIo,
  kResource,
};

// Base for every error the library raises. The kind maps one-to-one onto the
// status codes of the C API.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::kConfig, what) {}
};

class InputError : public Error {
 public:
  explicit InputError(const std::string& what) : Error(ErrorKind::kInput, what) {}
};

class NumericDomainError : public Error {
 public:
  explicit NumericDomainError(const std::string& what) : Error(ErrorKind::kNumericDomain, what) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorKind::kShape, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::kIo, what) {}
};

class ResourceError : public Error {
 public:
  explicit ResourceError(const std::string& what) : Error(ErrorKind::kResource, what) {}
};

}  // namespace blockpg
