#ifndef ATTNFACTOR_COMMON_HPP
#define ATTNFACTOR_COMMON_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace attnfactor {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

// Thrown for malformed inputs, bad arguments, and unusable configs.
class ArgumentError : public std::invalid_argument {
 public:
  explicit ArgumentError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Thrown when a computation degenerates (rank deficiency, sigma = 0,
// divergence, non-finite values).
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown for unreadable/ill-formed files and config documents.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ArgumentError(msg);
}

// Log verbosity is controlled by the ATTNFACTOR_LOG environment variable:
// "quiet" (default for tests), "info", "debug".
int log_level();
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

}  // namespace attnfactor

#endif
