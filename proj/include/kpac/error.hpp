#pragma once

#include <stdexcept>
#include <string>

namespace kpac {

/// Base of every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An argument outside the operation's domain (bad rounds, oversized PAC, ...).
class ParamError : public Error {
 public:
  using Error::Error;
};

/// A caller-side contract was violated, e.g. signing an already-signed pointer.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input. `line` is 1-based, 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line = 0)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

class LinkError : public Error {
 public:
  using Error::Error;
};

class BootError : public Error {
 public:
  using Error::Error;
};

/// Machine operation invoked in the wrong architectural state (e.g. ERET at EL0 via the API).
class StateError : public Error {
 public:
  using Error::Error;
};

}  // namespace kpac
