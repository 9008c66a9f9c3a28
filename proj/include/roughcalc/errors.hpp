#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace roughcalc {

enum class ErrorKind {
  kDegenerateInput,
  kParameter,
  kOrdering,
  kAlignment,
  kDimension,
  kUnsupported,
  kCapability,
  kDivergence,
  kNonContraction,
  kOverflow,
  kAdaptedness,
  kExtrapolation,
  kCfl,
  kInput,
  kIo,
};

const char* error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(error_kind_name(kind)) + ": " + what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Raised by time steppers; carries the last node whose state was finite and bounded.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t last_good_node)
      : Error(ErrorKind::kDivergence, what + " (last good node " + std::to_string(last_good_node) + ")"),
        last_good_node_(last_good_node) {}
  std::size_t last_good_node() const noexcept { return last_good_node_; }

 private:
  std::size_t last_good_node_;
};

class NonContractionError : public Error {
 public:
  NonContractionError(const std::string& what, std::size_t suggested_window_steps)
      : Error(ErrorKind::kNonContraction,
              what + " (suggested window " + std::to_string(suggested_window_steps) + " steps)"),
        suggested_(suggested_window_steps) {}
  std::size_t suggested_window_steps() const noexcept { return suggested_; }

 private:
  std::size_t suggested_;
};

inline void require(bool condition, ErrorKind kind, const std::string& what) {
  if (!condition) throw Error(kind, what);
}
inline void require(bool condition, ErrorKind kind, const char* what) {
  if (!condition) throw Error(kind, what);
}

}  // namespace roughcalc
