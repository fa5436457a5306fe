#pragma once

#include <stdexcept>
#include <string>

namespace polyclass {

// Every library error carries the name of the module that raised it, so the
// CLI can report which stage of a run failed.
class Error : public std::runtime_error {
public:
  Error(std::string module, const std::string& what)
      : std::runtime_error(module + ": " + what), module_(std::move(module)) {}

  const std::string& module() const noexcept { return module_; }

private:
  std::string module_;
};

class DimensionError : public Error {
public:
  using Error::Error;
};

class EvaluationError : public Error {
public:
  using Error::Error;
};

class DegenerateError : public Error {
public:
  using Error::Error;
};

class NearSingularError : public Error {
public:
  using Error::Error;
};

class DivergenceError : public Error {
public:
  DivergenceError(std::string module, int epoch, const std::string& what)
      : Error(std::move(module), "epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}

  int epoch() const noexcept { return epoch_; }

private:
  int epoch_;
};

class FormatError : public Error {
public:
  using Error::Error;
};

class LengthError : public Error {
public:
  using Error::Error;
};

class MissingClassError : public Error {
public:
  using Error::Error;
};

class InvalidTargetError : public Error {
public:
  using Error::Error;
};

// A property the run checks about its own results does not hold.
class InvariantError : public Error {
public:
  using Error::Error;
};

inline void ensure(bool ok, const char* module, const std::string& what) {
  if (!ok) throw InvariantError(module, what);
}

// Bad user-supplied configuration (unknown experiment, malformed flag values).
class ConfigError : public Error {
public:
  using Error::Error;
};

// Input data the run needs is absent. The message names the expected file.
class MissingDataError : public Error {
public:
  using Error::Error;
};

}  // namespace polyclass
