#pragma once

#include <stdexcept>
#include <string>

namespace l2tkt {

// Every library failure derives from Error. kind() is a stable, machine
// parsable tag used by the CLI for its "error[kind]: message" lines.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define L2TKT_DEFINE_ERROR(Name, tag)                                    \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& message) : Error(tag, message) {}   \
  };

L2TKT_DEFINE_ERROR(ShapeError, "shape")
L2TKT_DEFINE_ERROR(ValidationError, "validation")
L2TKT_DEFINE_ERROR(CapabilityError, "capability")
L2TKT_DEFINE_ERROR(DegenerateInputError, "degenerate-input")
L2TKT_DEFINE_ERROR(UndefinedMetricError, "undefined-metric")
L2TKT_DEFINE_ERROR(LeakageError, "leakage")
L2TKT_DEFINE_ERROR(IoError, "io")
L2TKT_DEFINE_ERROR(UsageError, "usage")

#undef L2TKT_DEFINE_ERROR

// Raised when an objective or gradient evaluates to a non-finite value.
class EvaluationError : public Error {
 public:
  EvaluationError(std::string entry, const std::string& message)
      : Error("evaluation", message + " (entry '" + entry + "')"),
        entry_(std::move(entry)) {}

  const std::string& entry() const noexcept { return entry_; }

 private:
  std::string entry_;
};

}  // namespace l2tkt
