#pragma once

#include <stdexcept>
#include <string>

namespace wmmt {

// Error categories map one-to-one onto CLI exit codes (see tools/wmmt.cpp).
enum class ErrorKind {
  shape,
  format,
  io,
  config,
  domain,
  numeric,
  alignment,
  empty_input,
  oracle_scope,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::shape: return "shape";
    case ErrorKind::format: return "format";
    case ErrorKind::io: return "io";
    case ErrorKind::config: return "config";
    case ErrorKind::domain: return "domain";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::alignment: return "alignment";
    case ErrorKind::empty_input: return "empty_input";
    case ErrorKind::oracle_scope: return "oracle_scope";
  }
  return "unknown";
}

}  // namespace wmmt
