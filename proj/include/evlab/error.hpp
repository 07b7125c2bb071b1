#pragma once

#include <stdexcept>
#include <string>

namespace evlab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// sbf_core
class MalformedBinary : public Error {
 public:
  explicit MalformedBinary(const std::string& what) : Error("malformed binary: " + what) {}
};
class CorruptPayload : public Error {
 public:
  explicit CorruptPayload(const std::string& what) : Error("corrupt payload: " + what) {}
};

// actions
class EmptyCorpus : public Error {
 public:
  explicit EmptyCorpus(const std::string& what) : Error("empty corpus: " + what) {}
};

// rl_nn
class ShapeMismatch : public Error {
 public:
  explicit ShapeMismatch(const std::string& what) : Error("shape mismatch: " + what) {}
};
class NonFiniteUpdate : public Error {
 public:
  explicit NonFiniteUpdate(const std::string& what) : Error("non-finite update: " + what) {}
};

// detectors
class DegenerateCorpus : public Error {
 public:
  explicit DegenerateCorpus(const std::string& what) : Error("degenerate corpus: " + what) {}
};

// environment
class PreconditionViolation : public Error {
 public:
  explicit PreconditionViolation(const std::string& what) : Error("precondition violated: " + what) {}
};
class NotInitiallyDetected : public Error {
 public:
  explicit NotInitiallyDetected(const std::string& what) : Error("sample not initially detected: " + what) {}
};
class EpisodeFinished : public Error {
 public:
  EpisodeFinished() : Error("step called on a finished episode") {}
};

// report
class InconsistentInputs : public Error {
 public:
  explicit InconsistentInputs(const std::string& what) : Error("inconsistent inputs: " + what) {}
};

// cli / config
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config: " + what) {}
};
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error("format: " + what) {}
};
/// A safety property failed at run time, e.g. an evaded binary whose
/// behavioral digest changed.
class InvariantViolation : public Error {
 public:
  explicit InvariantViolation(const std::string& what) : Error("invariant violated: " + what) {}
};

}  // namespace evlab
