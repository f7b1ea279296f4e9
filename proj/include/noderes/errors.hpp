#pragma once

#include <stdexcept>
#include <string>

namespace noderes {

// Shapes or widths that do not line up (layer chaining, tape reuse, input widths).
class StructuralError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A numeric argument outside its admissible range.
class ParameterError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Residual wiring that cannot be resolved or violates its invariants.
class SpecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class AnalysisError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when more than half of the training windows in an epoch diverge.
class TrainingFailure : public std::runtime_error {
 public:
  TrainingFailure(int epoch, const std::string& what)
      : std::runtime_error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

}  // namespace noderes
