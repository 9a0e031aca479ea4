#pragma once

#include <stdexcept>
#include <string>

namespace labeldiff {

// Broad failure classes. The CLI maps these onto process exit codes.
enum class ErrorKind {
  kShape,
  kParameter,
  kData,
  kNumeric,
  kModel,
  kGeneration,
  kCheckpoint,
  kBatch,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define LABELDIFF_DEFINE_ERROR(Name, Kind, Prefix)                               \
  class Name : public Error {                                                    \
   public:                                                                       \
    explicit Name(const std::string& what) : Error(Kind, Prefix + what) {}       \
  };

LABELDIFF_DEFINE_ERROR(ShapeError, ErrorKind::kShape, std::string("shape error: "))
LABELDIFF_DEFINE_ERROR(ParameterError, ErrorKind::kParameter, std::string("parameter error: "))
LABELDIFF_DEFINE_ERROR(DataError, ErrorKind::kData, std::string("data error: "))
LABELDIFF_DEFINE_ERROR(NumericError, ErrorKind::kNumeric, std::string("numeric error: "))
LABELDIFF_DEFINE_ERROR(ModelError, ErrorKind::kModel, std::string("model error: "))
LABELDIFF_DEFINE_ERROR(GenerationError, ErrorKind::kGeneration, std::string("generation error: "))
LABELDIFF_DEFINE_ERROR(CheckpointError, ErrorKind::kCheckpoint, std::string("checkpoint error: "))
LABELDIFF_DEFINE_ERROR(BatchError, ErrorKind::kBatch, std::string("batch error: "))

#undef LABELDIFF_DEFINE_ERROR

}  // namespace labeldiff
