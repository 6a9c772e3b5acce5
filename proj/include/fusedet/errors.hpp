#pragma once

#include <stdexcept>
#include <string>

namespace fusedet {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that do not fit an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A backward pass was handed a cache that does not belong to the forward call.
class CacheError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration values (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Filesystem failures (CLI exit code 3).
class IoError : public Error {
 public:
  using Error::Error;
};

// Bad or inconsistent data: manifests, class balance, coverage (CLI exit code 4).
class DataError : public Error {
 public:
  using Error::Error;
};

// Malformed image files.
class FormatError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  enum class Kind { corrupt_header, shape_mismatch, truncated, checksum_mismatch };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace fusedet
