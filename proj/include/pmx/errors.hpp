#pragma once

#include <stdexcept>
#include <string>

namespace pmx {

/// Shape mismatch between operands; message names both shapes.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// On-disk format violation; message carries the byte offset where it was found.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t byte_offset)
      : std::runtime_error(what + " (byte offset " + std::to_string(byte_offset) + ")"),
        offset_(byte_offset) {}
  std::size_t byte_offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Dataset-level problem: missing file, duplicate slide id, label out of range.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite value produced where a finite one is required (losses, gradients).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument or configuration (k=0, folds exceeding class size, ...).
class ParamError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// API misuse: operation invoked in a state that cannot serve it
/// (e.g. backward without a matching train-mode forward).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace pmx
