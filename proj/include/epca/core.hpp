#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace epca {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;
using Index = Eigen::Index;

// Failure categories; the CLI maps these onto exit codes 2, 3 and 4.
enum class ErrorKind { config, data, numerical };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error config_error(const std::string& msg) { return {ErrorKind::config, msg}; }
inline Error data_error(const std::string& msg) { return {ErrorKind::data, msg}; }
inline Error numerical_error(const std::string& msg) { return {ErrorKind::numerical, msg}; }

enum class LogLevel { debug, info, warn };

// Process-wide log sink. Library code only ever writes through log();
// the default sink drops everything, the CLI installs a stderr sink.
using LogSink = std::function<void(LogLevel, const std::string&)>;

inline LogSink& log_sink() {
  static LogSink sink = [](LogLevel, const std::string&) {};
  return sink;
}

inline void set_log_sink(LogSink sink) { log_sink() = std::move(sink); }

inline void log(LogLevel level, const std::string& msg) { log_sink()(level, msg); }

}  // namespace epca
