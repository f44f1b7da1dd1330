#pragma once

#include <stdexcept>
#include <string>

namespace concausal {

/// Malformed input, failed precondition, or a violated contract.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// A stage needs an artifact that has not been produced yet.
class MissingArtifact : public std::runtime_error {
 public:
  explicit MissingArtifact(const std::string& artifact)
      : std::runtime_error("missing artifact: " + artifact), artifact_(artifact) {}
  const std::string& artifact() const { return artifact_; }

 private:
  std::string artifact_;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, int epoch)
      : std::runtime_error(what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

}  // namespace concausal
