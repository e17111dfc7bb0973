#include "visionsim/error.hpp"

namespace visionsim {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::domain: return "domain_error";
    case ErrorKind::validation: return "validation_error";
    case ErrorKind::state: return "state_error";
    case ErrorKind::io: return "io_error";
    case ErrorKind::not_found: return "not_found";
    case ErrorKind::parse: return "parse_error";
    case ErrorKind::unsupported: return "unsupported_capability";
  }
  return "error";
}

}  // namespace visionsim
