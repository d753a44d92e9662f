#pragma once

#include <stdexcept>
#include <string>

namespace vilsum {

// Incompatible tensor shapes (messages name both shapes).
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration value (head split, bad ranges, unknown keys...).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// API contract violation (non-scalar loss, missing grads, label out of range...).
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// File / stream problems outside the checkpoint format itself.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Checkpoint deserialization failures, one kind per failure mode.
class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { BadMagic, VersionMismatch, Corrupt };

  CheckpointError(Kind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Training aborted (non-finite loss, retrieval scorer failed to separate...).
class TrainingError : public std::runtime_error {
 public:
  explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace vilsum
