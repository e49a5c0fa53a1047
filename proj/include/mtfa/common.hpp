#pragma once

#include <stdexcept>
#include <string>

namespace mtfa {

#define MTFA_VERSION_STRING "0.1.0"

#ifdef MTFA_REAL_FLOAT
using real = float;
#else
using real = double;
#endif

// Violated operation precondition (bad shapes, invalid arguments).
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

// Unreadable/unwritable/malformed files.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Invalid run configuration (empty dataset, bad split, ...).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Checkpoint does not match the constructed architecture.
class CheckpointError : public std::runtime_error {
 public:
  explicit CheckpointError(const std::string& what) : std::runtime_error(what) {}
};

#define MTFA_REQUIRE(cond, msg)                  \
  do {                                           \
    if (!(cond)) throw ::mtfa::ContractError(msg); \
  } while (0)

}  // namespace mtfa
