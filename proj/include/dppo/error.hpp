#pragma once

#include <stdexcept>
#include <string>

namespace dppo {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidPoseError : public Error {
  using Error::Error;
};
class SpawnFailureError : public Error {
  using Error::Error;
};
class EpisodeFinishedError : public Error {
  using Error::Error;
};
class DomainError : public Error {
  using Error::Error;
};
class ShapeMismatchError : public Error {
  using Error::Error;
};
class NonFiniteError : public Error {
  using Error::Error;
};
class FormatError : public Error {
  using Error::Error;
};

/// Configuration problem; carries the offending key and (when known) line.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& message, int line = 0)
      : Error(format(key, message, line)), key_(std::move(key)), message_(message), line_(line) {}

  const std::string& key() const noexcept { return key_; }
  const std::string& message() const noexcept { return message_; }
  int line() const noexcept { return line_; }

 private:
  static std::string format(const std::string& key, const std::string& message, int line) {
    std::string out;
    if (line > 0) out += "line " + std::to_string(line) + ": ";
    if (!key.empty()) out += "'" + key + "': ";
    return out + message;
  }

  std::string key_;
  std::string message_;
  int line_;
};

}  // namespace dppo
