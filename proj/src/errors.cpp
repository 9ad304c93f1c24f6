#include "ndsg/errors.hpp"

namespace ndsg {

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Shape:
      return "shape_mismatch";
    case ErrorKind::Config:
      return "config_error";
    case ErrorKind::Integrity:
      return "crc_mismatch";
    case ErrorKind::Divergence:
      return "training_divergence";
    case ErrorKind::Capacity:
      return "capacity_exceeded";
    case ErrorKind::Io:
      return "io_error";
    case ErrorKind::Internal:
      return "internal_error";
  }
  return "unknown";
}

}  // namespace ndsg
