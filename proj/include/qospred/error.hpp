#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace qospred {

enum class ErrorKind {
  io,
  schema,
  parse,
  config,
  input,
  numeric,
  integrity,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::io: return "I/O error";
    case ErrorKind::schema: return "schema error";
    case ErrorKind::parse: return "parse error";
    case ErrorKind::config: return "configuration error";
    case ErrorKind::input: return "input error";
    case ErrorKind::numeric: return "numeric error";
    case ErrorKind::integrity: return "referential-integrity error";
  }
  return "error";
}

// Every fatal condition in the library surfaces as an Error tagged with the
// module that raised it, so the CLI can name the failing stage.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string module, const std::string& what)
      : std::runtime_error(module + ": " + std::string(to_string(kind)) + ": " + what),
        kind_(kind),
        module_(std::move(module)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& module() const noexcept { return module_; }

 private:
  ErrorKind kind_;
  std::string module_;
};

}  // namespace qospred
