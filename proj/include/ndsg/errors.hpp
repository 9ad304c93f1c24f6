#pragma once

#include <stdexcept>
#include <string>

namespace ndsg {

enum class ErrorKind {
  Shape,       // tensor/layer dimension mismatch
  Config,      // invalid configuration or arguments
  Integrity,   // checksum failure, wrong key, corrupted file
  Divergence,  // non-finite loss or parameters during training
  Capacity,    // payload does not fit into the host model
  Io,          // file system problems
  Internal,    // broken invariant inside the library
};

const char* error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  const char* kind_name() const noexcept { return error_kind_name(kind_); }

 private:
  ErrorKind kind_;
};

}  // namespace ndsg
