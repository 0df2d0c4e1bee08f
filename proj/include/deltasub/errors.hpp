#pragma once

#include <stdexcept>
#include <string>

namespace deltasub {

// All domain errors carry a stable category string so callers (and the CLI)
// can report machine-readable failures.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& message)
      : std::runtime_error(category + ": " + message), category_(std::move(category)) {}

  const std::string& category() const { return category_; }

 private:
  std::string category_;
};

#define DELTASUB_DEFINE_ERROR(Name, Category)            \
  class Name : public Error {                            \
   public:                                               \
    explicit Name(const std::string& message)            \
        : Error(Category, message) {}                    \
  }

DELTASUB_DEFINE_ERROR(ShapeMismatchError, "ShapeMismatch");
DELTASUB_DEFINE_ERROR(NonFiniteError, "NonFinite");
DELTASUB_DEFINE_ERROR(TargetOutOfRangeError, "TargetOutOfRange");
DELTASUB_DEFINE_ERROR(NonScalarLossError, "NonScalarLoss");
DELTASUB_DEFINE_ERROR(PrefixShapeMismatchError, "PrefixShapeMismatch");
DELTASUB_DEFINE_ERROR(TokenOutOfRangeError, "TokenOutOfRange");
DELTASUB_DEFINE_ERROR(SequenceTooLongError, "SequenceTooLong");
DELTASUB_DEFINE_ERROR(ParityViolationError, "ParityViolation");
DELTASUB_DEFINE_ERROR(DivergedLossError, "DivergedLoss");
DELTASUB_DEFINE_ERROR(RatioOutOfRangeError, "RatioOutOfRange");
DELTASUB_DEFINE_ERROR(NotPowerOfTwoError, "NotPowerOfTwo");
DELTASUB_DEFINE_ERROR(MissingSolutionError, "MissingSolution");
DELTASUB_DEFINE_ERROR(SubspaceMismatchError, "SubspaceMismatch");
DELTASUB_DEFINE_ERROR(ZeroBaselineError, "ZeroBaseline");
DELTASUB_DEFINE_ERROR(DegenerateGeometryError, "DegenerateGeometry");
DELTASUB_DEFINE_ERROR(InfeasibleSpecError, "InfeasibleSpec");
DELTASUB_DEFINE_ERROR(EmptySplitError, "EmptySplit");
DELTASUB_DEFINE_ERROR(MissingArtifactError, "MissingArtifact");
DELTASUB_DEFINE_ERROR(ConfigInvalidError, "ConfigInvalid");
DELTASUB_DEFINE_ERROR(CorruptCheckpointError, "CorruptCheckpoint");

#undef DELTASUB_DEFINE_ERROR

}  // namespace deltasub
