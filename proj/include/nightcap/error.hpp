#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace nightcap {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes or dimensions that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Misuse of an API precondition (e.g. backward on a non-scalar).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Bad data: empty corpora, out-of-range ids, missing files, malformed lines.
class DataError : public Error {
 public:
  using Error::Error;
};

/// A numeric or configuration parameter outside its domain.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// An invalid scene description.
class SpecError : public Error {
 public:
  using Error::Error;
};

/// Corrupt or incompatible checkpoint file.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::optional<std::size_t> byte_position = std::nullopt)
      : Error(byte_position ? what + " (at byte " + std::to_string(*byte_position) + ")" : what),
        byte_position_(byte_position) {}

  std::optional<std::size_t> byte_position() const { return byte_position_; }

 private:
  std::optional<std::size_t> byte_position_;
};

}  // namespace nightcap
