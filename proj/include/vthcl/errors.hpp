#pragma once

#include <stdexcept>
#include <string>

namespace vthcl {

// Base of every error thrown by the library. `error_class()` is the stable,
// machine-parsable name the CLI prints on failure.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* error_class() const noexcept { return "Error"; }
};

#define VTHCL_DEFINE_ERROR(Name)                                         \
  class Name : public Error {                                            \
   public:                                                               \
    using Error::Error;                                                  \
    const char* error_class() const noexcept override { return #Name; }  \
  }

VTHCL_DEFINE_ERROR(ConfigError);
VTHCL_DEFINE_ERROR(ShapeError);
VTHCL_DEFINE_ERROR(BoundsError);
VTHCL_DEFINE_ERROR(DegenerateInputError);
VTHCL_DEFINE_ERROR(LookupError);
VTHCL_DEFINE_ERROR(IoError);
VTHCL_DEFINE_ERROR(ValidationError);
VTHCL_DEFINE_ERROR(NonFiniteError);
VTHCL_DEFINE_ERROR(FormatError);

#undef VTHCL_DEFINE_ERROR

// Configuration error that names the offending key.
class KeyError : public ConfigError {
 public:
  KeyError(std::string key, const std::string& what)
      : ConfigError("key '" + key + "': " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

}  // namespace vthcl
