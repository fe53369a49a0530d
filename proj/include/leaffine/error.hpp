#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace leaffine {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Out-of-range class labels or indices.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Operation invoked in the wrong lifecycle state (double backward, missing grad).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DatasetError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary input. Carries the byte offset at which parsing failed.
class OffsetError : public Error {
 public:
  OffsetError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), message_(what), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }
  /// The description without the offset suffix.
  const std::string& message() const noexcept { return message_; }

 private:
  std::string message_;
  std::uint64_t offset_;
};

/// Checkpoint file that cannot be parsed.
class FormatError : public OffsetError {
 public:
  using OffsetError::OffsetError;
};

/// Image payload that cannot be decoded.
class DecodeError : public OffsetError {
 public:
  using OffsetError::OffsetError;
};

/// Training produced a non-finite or exploding loss.
class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t epoch, std::size_t iteration, double loss)
      : Error("training diverged at epoch " + std::to_string(epoch) + ", iteration " +
              std::to_string(iteration) + " (loss " + std::to_string(loss) + ")"),
        epoch_(epoch),
        iteration_(iteration) {}

  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t epoch_;
  std::size_t iteration_;
};

/// LR range test whose loss curve carries no usable minimum.
class NoSignalError : public Error {
 public:
  using Error::Error;
};

}  // namespace leaffine
