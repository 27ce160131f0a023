#pragma once

#include <stdexcept>
#include <string>

namespace poco {

enum class ErrorKind {
  InvalidArgument,
  Shape,
  Io,
  Format,
  Numeric,
  Runtime,
};

/// Exception carrying a kind (mapped to a C status code) and the module that
/// raised it. what() reads "<module>: <message>".
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& module, const std::string& message)
      : std::runtime_error(module + ": " + message), kind_(kind), module_(module) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& module() const noexcept { return module_; }

 private:
  ErrorKind kind_;
  std::string module_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& module, const std::string& message) {
  throw Error(kind, module, message);
}

}  // namespace poco
