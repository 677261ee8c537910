// Copyright 2026 The tastas Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <stdexcept>
#include <string>

namespace tastas {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string &what) : std::runtime_error(what) {}
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// WAV reading errors, one type per failure class.
class MissingFileError : public IoError {
 public:
  using IoError::IoError;
};

class MultiChannelError : public IoError {
 public:
  explicit MultiChannelError(const std::string &path)
      : IoError("multi-channel unsupported: " + path) {}
};

class UnsupportedEncodingError : public IoError {
 public:
  using IoError::IoError;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// Raised when a frozen component changed or a dependency is not frozen.
class FreezeError : public Error {
 public:
  using Error::Error;
};

}  // namespace tastas
