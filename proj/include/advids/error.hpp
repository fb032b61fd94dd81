#pragma once

#include <stdexcept>
#include <string>

namespace advids {

// Failure classes. The C API and the CLI map these onto status and exit codes.
enum class ErrorKind {
  dimension,
  parameter,
  contract,
  label,
  data,
  parse,
  config,
  metric,
  missing_splits,
  checkpoint_mismatch,
  empty_reports,
  io,
};

const char* to_string(ErrorKind kind) noexcept;

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

}  // namespace advids
