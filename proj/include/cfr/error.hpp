#pragma once

#include <stdexcept>
#include <string>

namespace cfr {

/// Base of every error raised by the library. Subclasses name the failure kind
/// so callers (and the CLI) can map them without parsing messages.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define CFR_DEFINE_ERROR(Name)          \
  class Name : public Error {           \
   public:                              \
    using Error::Error;                 \
  }

CFR_DEFINE_ERROR(DimensionError);
CFR_DEFINE_ERROR(IndexError);
CFR_DEFINE_ERROR(InputError);
CFR_DEFINE_ERROR(ParameterError);
CFR_DEFINE_ERROR(NotPositiveDefiniteError);
CFR_DEFINE_ERROR(SingularError);
CFR_DEFINE_ERROR(InsufficientDataError);
CFR_DEFINE_ERROR(FormatError);
CFR_DEFINE_ERROR(CorruptionError);
CFR_DEFINE_ERROR(IoError);
CFR_DEFINE_ERROR(CacheInvalidError);
CFR_DEFINE_ERROR(DivergenceError);
CFR_DEFINE_ERROR(DegenerateDistributionError);
CFR_DEFINE_ERROR(UndefinedCorrelationError);

#undef CFR_DEFINE_ERROR

/// Wraps a failure from one pipeline stage; what() is "<stage>: <cause>".
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& cause)
      : Error(stage + ": " + cause), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace cfr
