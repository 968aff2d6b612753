#pragma once

#include <stdexcept>
#include <string>

namespace bhfa {

// Violated precondition or type invariant (caller bug).
class ContractViolation : public std::logic_error {
 public:
  explicit ContractViolation(const std::string& what) : std::logic_error(what) {}
};

// Filesystem / decoding failure; message names the offending path.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Bad or missing run-config entry; message names the key or path.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Checkpoint header does not match the requested architecture.
class CheckpointMismatch : public std::runtime_error {
 public:
  explicit CheckpointMismatch(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

inline void require_io(bool cond, const std::string& msg) {
  if (!cond) throw IoError(msg);
}

}  // namespace bhfa
