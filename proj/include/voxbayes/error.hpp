#pragma once

#include <stdexcept>
#include <string>

namespace voxbayes {

enum class ErrorKind { usage, data, numerical };

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, std::string code, const std::string& what)
    : std::runtime_error(what), kind_(kind), code_(std::move(code)) {}

  ErrorKind kind() const noexcept { return kind_; }
  // short machine-readable tag, e.g. "payload-size-mismatch"
  const std::string& code() const noexcept { return code_; }

  int exit_code() const noexcept
  {
    switch (kind_) {
      case ErrorKind::usage: return 2;
      case ErrorKind::data: return 3;
      case ErrorKind::numerical: return 4;
    }
    return 1;
  }

private:
  ErrorKind kind_;
  std::string code_;
};

inline Error usage_error(std::string code, const std::string& msg)
{
  return Error(ErrorKind::usage, std::move(code), msg);
}

inline Error data_error(std::string code, const std::string& msg)
{
  return Error(ErrorKind::data, std::move(code), msg);
}

inline Error numerical_error(std::string code, const std::string& msg)
{
  return Error(ErrorKind::numerical, std::move(code), msg);
}

} // namespace voxbayes
