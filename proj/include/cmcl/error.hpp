#pragma once

#include <stdexcept>
#include <string>

namespace cmcl {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or arguments (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss or gradient (CLI exit code 3).
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Unreadable/unwritable files and malformed file contents (CLI exit code 4).
class IoError : public Error {
 public:
  using Error::Error;
};

class ParseError : public IoError {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what)
      : IoError(path + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace cmcl
