#pragma once

#include <stdexcept>
#include <string>

namespace xmodal {

// Every error raised by the toolkit derives from Error. The CLI maps the
// category onto its exit code.
enum class ErrorCategory { validation, runtime, divergence };

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, ErrorCategory category = ErrorCategory::runtime)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

#define XMODAL_DEFINE_ERROR(Name, Category)                                   \
  class Name : public Error {                                                 \
   public:                                                                    \
    explicit Name(const std::string& what) : Error(what, ErrorCategory::Category) {} \
  };

XMODAL_DEFINE_ERROR(ShapeError, runtime)
XMODAL_DEFINE_ERROR(InputTooShortError, runtime)
XMODAL_DEFINE_ERROR(EmptySequenceError, runtime)
XMODAL_DEFINE_ERROR(NumericInstabilityError, divergence)
XMODAL_DEFINE_ERROR(DivergenceError, divergence)
XMODAL_DEFINE_ERROR(FormatError, runtime)
XMODAL_DEFINE_ERROR(CorruptCheckpointError, runtime)
XMODAL_DEFINE_ERROR(MissingWeightError, runtime)
XMODAL_DEFINE_ERROR(FixtureIncompatibleError, runtime)
XMODAL_DEFINE_ERROR(StaleCacheError, runtime)
XMODAL_DEFINE_ERROR(UndefinedAucError, runtime)
XMODAL_DEFINE_ERROR(ConfigError, validation)
XMODAL_DEFINE_ERROR(ValidationError, validation)
XMODAL_DEFINE_ERROR(DegenerateLabelsError, validation)
XMODAL_DEFINE_ERROR(StratificationError, validation)

#undef XMODAL_DEFINE_ERROR

}  // namespace xmodal
