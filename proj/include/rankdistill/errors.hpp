#pragma once

#include <stdexcept>
#include <string>

namespace rankdistill {

// Bad user-supplied data or arguments. The CLI maps this to exit code 1.
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

// Invalid configuration (file or programmatic).
class ConfigError : public InputError {
 public:
  explicit ConfigError(const std::string& what) : InputError(what) {}
};

// File / wire format problems. Carries a byte offset when known.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what, long long offset = -1)
      : std::runtime_error(offset >= 0 ? what + " (byte offset " + std::to_string(offset) + ")"
                                       : what),
        offset_(offset) {}
  long long offset() const { return offset_; }

 private:
  long long offset_;
};

// A labeler backend broke its contract (ids outside the input set,
// duplicates, or malformed output). Callers may skip the query.
class LabelerContractError : public std::runtime_error {
 public:
  explicit LabelerContractError(const std::string& what) : std::runtime_error(what) {}
};

// Checkpoint kind tag does not match the loader (e.g. encoder file fed to
// the decoder loader).
class CheckpointKindError : public std::runtime_error {
 public:
  explicit CheckpointKindError(const std::string& what) : std::runtime_error(what) {}
};

// Checkpoint carries a model configuration different from the expected one.
class CheckpointConfigError : public std::runtime_error {
 public:
  explicit CheckpointConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Optimization produced non-finite parameters or losses.
class TrainingDiverged : public std::runtime_error {
 public:
  explicit TrainingDiverged(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace rankdistill
