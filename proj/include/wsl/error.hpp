#pragma once

#include <stdexcept>
#include <string>

namespace wsl {

// Failure categories; each maps to a distinct process exit code in the CLI.
enum class ErrorKind { usage = 2, validation = 3, integrity = 4, divergence = 5 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(ErrorKind::validation, what) {}
};

class IntegrityError : public Error {
 public:
  explicit IntegrityError(const std::string& what) : Error(ErrorKind::integrity, what) {}
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int epoch) : Error(ErrorKind::divergence, what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

inline int exit_code(ErrorKind kind) { return static_cast<int>(kind); }

}  // namespace wsl
