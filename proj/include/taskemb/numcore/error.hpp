#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace taskemb {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape mismatch. `layer` is the offending layer index, or npos when the
/// mismatch is not tied to a layer.
class DimensionError : public Error {
 public:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  DimensionError(const std::string& what, std::size_t layer = npos)
      : Error(layer == npos ? what : "layer " + std::to_string(layer) + ": " + what), layer_(layer) {}

  std::size_t layer() const noexcept { return layer_; }

 private:
  std::size_t layer_;
};

class InvalidAction : public Error {
 public:
  using Error::Error;
};

/// The scripted expert cannot make progress from a state (e.g. its next
/// action is masked).
class UnsolvableState : public Error {
 public:
  using Error::Error;
};

class NonFiniteLoss : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace taskemb
