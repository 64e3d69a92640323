#ifndef QREW_ERRORS_HPP
#define QREW_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace qrew {

// Base error carrying a stable machine-readable code alongside the message.
// The CLI serializes failures as {"error": code(), "message": what()}.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

#define QREW_DEFINE_ERROR(Name, Code)                          \
  class Name : public Error {                                  \
   public:                                                     \
    explicit Name(const std::string& message)                  \
        : Error(Code, message) {}                              \
  }

QREW_DEFINE_ERROR(EmptyTextError, "EmptyText");
QREW_DEFINE_ERROR(InvalidOrderError, "InvalidOrder");
QREW_DEFINE_ERROR(ParseError, "ParseError");
QREW_DEFINE_ERROR(SchemaError, "SchemaError");
QREW_DEFINE_ERROR(ScoreRangeError, "ScoreRange");
QREW_DEFINE_ERROR(InvalidSchemeError, "InvalidScheme");
QREW_DEFINE_ERROR(TooFewRecordsError, "TooFewRecords");
QREW_DEFINE_ERROR(UnknownRecordError, "UnknownRecord");
QREW_DEFINE_ERROR(ShapeError, "ShapeError");
QREW_DEFINE_ERROR(NotScalarError, "NotScalar");
QREW_DEFINE_ERROR(NondeterministicFunctionError, "NondeterministicFunction");
QREW_DEFINE_ERROR(OOVTokenError, "OOVToken");
QREW_DEFINE_ERROR(SequenceTooLongError, "SequenceTooLong");
QREW_DEFINE_ERROR(EmptyCorpusError, "EmptyCorpus");
QREW_DEFINE_ERROR(FrozenBaseViolatedError, "FrozenBaseViolated");
QREW_DEFINE_ERROR(FrozenModelViolatedError, "FrozenModelViolated");
QREW_DEFINE_ERROR(ConfigError, "ConfigError");
QREW_DEFINE_ERROR(MissingGoldLabelError, "MissingGoldLabel");
QREW_DEFINE_ERROR(EmptyClassError, "EmptyClass");
QREW_DEFINE_ERROR(StageError, "StageError");
QREW_DEFINE_ERROR(IoError, "IoError");

#undef QREW_DEFINE_ERROR

}  // namespace qrew

#endif  // QREW_ERRORS_HPP
