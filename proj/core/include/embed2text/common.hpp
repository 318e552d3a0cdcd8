#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

namespace embed2text {

// Error taxonomy used across the toolkit.
//   ConfigError    — bad user input: invalid option, unknown key, missing file.
//   ContractError  — a caller violated an API precondition (dimension mismatch, zero vector).
//   TransportError — remote endpoint failed after retries, or returned a non-retryable status.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class LogLevel { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3, kSilent = 4 };

LogLevel& log_level();

namespace detail {
void log_line(LogLevel level, const std::string& msg);
}

inline void log_debug(const std::string& msg) { detail::log_line(LogLevel::kDebug, msg); }
inline void log_info(const std::string& msg) { detail::log_line(LogLevel::kInfo, msg); }
inline void log_warn(const std::string& msg) { detail::log_line(LogLevel::kWarn, msg); }
inline void log_error(const std::string& msg) { detail::log_line(LogLevel::kError, msg); }

}  // namespace embed2text
