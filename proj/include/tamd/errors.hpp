#pragma once

#include <stdexcept>
#include <string>

namespace tamd {

/// Base class for every error raised by the library. `exit_code()` is the
/// process status the command-line runner reports for this error family.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

/// Invalid or inconsistent user input (bad key, out-of-range parameter).
class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// A numerical guard refused to proceed (unstable step, under-resolved grid).
class GuardError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

/// A linear solve or eigensolve failed or produced an inconsistent answer.
class SolverError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

}  // namespace tamd
