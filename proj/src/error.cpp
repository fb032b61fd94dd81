#include "advids/error.hpp"

namespace advids {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::dimension: return "dimension error";
    case ErrorKind::parameter: return "parameter error";
    case ErrorKind::contract: return "contract error";
    case ErrorKind::label: return "label error";
    case ErrorKind::data: return "data error";
    case ErrorKind::parse: return "parse error";
    case ErrorKind::config: return "config error";
    case ErrorKind::metric: return "metric error";
    case ErrorKind::missing_splits: return "missing splits";
    case ErrorKind::checkpoint_mismatch: return "checkpoint mismatch";
    case ErrorKind::empty_reports: return "empty report directory";
    case ErrorKind::io: return "io error";
  }
  return "error";
}

}  // namespace advids
