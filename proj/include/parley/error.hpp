#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <variant>

namespace parley {

// Typed, attributable failures. Every recoverable error in the library is an
// Error value carried through Result<T>; exceptions are reserved for misuse
// (dereferencing an empty Result).
enum class ErrorKind {
  io,                // file system, disk full
  schema,            // malformed record / document
  config,            // invalid scenario or flag combination
  argument,          // bad argument to an operation
  network,           // transport failure after retries
  auth,              // non-retryable 401/403
  rate_limited,      // retry/backoff budget exhausted on 429
  http,              // other non-retryable HTTP status
  budget,            // per-sample call budget violated
  replay_exhausted,  // no recorded turn for (sample, agent, round)
  corrupt,           // unreadable persisted record
  unsupported,       // media type / feature not supported
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::io: return "io";
    case ErrorKind::schema: return "schema";
    case ErrorKind::config: return "config";
    case ErrorKind::argument: return "argument";
    case ErrorKind::network: return "network";
    case ErrorKind::auth: return "auth";
    case ErrorKind::rate_limited: return "rate_limited";
    case ErrorKind::http: return "http";
    case ErrorKind::budget: return "budget";
    case ErrorKind::replay_exhausted: return "replay_exhausted";
    case ErrorKind::corrupt: return "corrupt";
    case ErrorKind::unsupported: return "unsupported";
  }
  return "unknown";
}

struct Error {
  ErrorKind kind = ErrorKind::io;
  std::string message;

  std::string describe() const { return std::string(to_string(kind)) + ": " + message; }
};

inline Error make_error(ErrorKind kind, std::string message) {
  return Error{kind, std::move(message)};
}

// Minimal expected-like result carrier (std::expected is C++23).
template <typename T>
class [[nodiscard]] Result {
 public:
  Result(T value) : state_(std::move(value)) {}
  Result(Error error) : state_(std::move(error)) {}

  bool ok() const { return std::holds_alternative<T>(state_); }
  explicit operator bool() const { return ok(); }

  T& value() & {
    require_ok();
    return std::get<T>(state_);
  }
  const T& value() const& {
    require_ok();
    return std::get<T>(state_);
  }
  T&& value() && {
    require_ok();
    return std::get<T>(std::move(state_));
  }

  const Error& error() const {
    if (ok()) throw std::logic_error("Result::error() on ok result");
    return std::get<Error>(state_);
  }

  T* operator->() { return &value(); }
  const T* operator->() const { return &value(); }
  T& operator*() & { return value(); }
  const T& operator*() const& { return value(); }

 private:
  void require_ok() const {
    if (!ok()) throw std::logic_error("Result::value() on error: " + std::get<Error>(state_).describe());
  }

  std::variant<T, Error> state_;
};

// Result<void> analogue.
class [[nodiscard]] Status {
 public:
  Status() = default;
  Status(Error error) : error_(std::move(error)), failed_(true) {}

  static Status ok_status() { return Status(); }

  bool ok() const { return !failed_; }
  explicit operator bool() const { return ok(); }
  const Error& error() const {
    if (!failed_) throw std::logic_error("Status::error() on ok status");
    return error_;
  }

 private:
  Error error_;
  bool failed_ = false;
};

}  // namespace parley
