#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace acl {

// Base of every error raised by the library. `kind()` is a stable token
// used in logs, manifests and CSV status columns.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define ACL_DEFINE_ERROR(Name)                                          \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& what) : Error(#Name, what) {}      \
  }

ACL_DEFINE_ERROR(DegenerateVector);
ACL_DEFINE_ERROR(DimensionMismatch);
ACL_DEFINE_ERROR(EmptyInput);
ACL_DEFINE_ERROR(ShapeMismatch);
ACL_DEFINE_ERROR(NonFiniteLoss);
ACL_DEFINE_ERROR(TapeConsumed);
ACL_DEFINE_ERROR(EmptyClassifier);
ACL_DEFINE_ERROR(UnknownLabel);
ACL_DEFINE_ERROR(InvalidConfig);
ACL_DEFINE_ERROR(InvalidSpec);
ACL_DEFINE_ERROR(DimInconsistent);
ACL_DEFINE_ERROR(IncompleteMatrix);
ACL_DEFINE_ERROR(SingleTask);
ACL_DEFINE_ERROR(LengthMismatch);
ACL_DEFINE_ERROR(TooFewSamples);
ACL_DEFINE_ERROR(BoundViolation);

#undef ACL_DEFINE_ERROR

// Parse failures carry the 1-based line number of the offending input.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("ParseError", "line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace acl
