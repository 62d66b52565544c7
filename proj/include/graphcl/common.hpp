#pragma once

#include <stdexcept>
#include <string>

namespace graphcl {

// Global scalar type. Tests and training both run at 64 bit; checkpoint
// blobs are stored as f32 per the on-disk format.
using real = double;

// Exit codes used by the CLI: 0 ok, 2 config, 3 numeric, 4 I/O.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitNumeric = 3,
  kExitIo = 4,
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeError : public ConfigError {
 public:
  explicit ShapeError(const std::string& msg) : ConfigError(msg) {}
};

class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace graphcl
