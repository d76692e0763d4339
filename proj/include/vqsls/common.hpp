#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <iostream>
#include <exception>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace vqsls {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class ResourceError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class UnsupportedReferenceError : public Error {
 public:
  using Error::Error;
};

/// A cost function returned something that is not a finite number.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

/// An iterative method hit its cap; carries the best point seen.
class NonConvergenceError : public Error {
 public:
  NonConvergenceError(const std::string& what, Vector best, double best_value)
      : Error(what), best_(std::move(best)), best_value_(best_value) {}
  const Vector& best_point() const noexcept { return best_; }
  double best_value() const noexcept { return best_value_; }

 private:
  Vector best_;
  double best_value_;
};

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

/// Verbosity from the VQSLS_LOG environment variable (error, warn, info,
/// debug or 0-3); warn when unset.
inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* v = std::getenv("VQSLS_LOG");
    if (!v) return LogLevel::warn;
    const std::string s(v);
    if (s == "error" || s == "0") return LogLevel::error;
    if (s == "info" || s == "2") return LogLevel::info;
    if (s == "debug" || s == "3") return LogLevel::debug;
    return LogLevel::warn;
  }();
  return level;
}

inline void log_message(LogLevel level, const std::string& msg) {
  static const char* names[] = {"error", "warn", "info", "debug"};
  if (level > log_level()) return;
  static std::mutex mu;
  std::lock_guard lock(mu);
  std::cerr << "[vqsls " << names[static_cast<int>(level)] << "] " << msg << '\n';
}

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for an independent random stream identified by (seed, index).
inline constexpr std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index) noexcept {
  return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

/// Evaluates fn(i) for i in [0, n) on up to `jobs` threads. Results are
/// stored by index so the output never depends on scheduling. The first
/// exception thrown (lowest index) is rethrown after all workers finish.
template <class T>
std::vector<T> parallel_map(std::size_t n, const std::function<T(std::size_t)>& fn, int jobs = 1) {
  std::vector<T> out(n);
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
    return out;
  }
  std::vector<std::exception_ptr> errors(n);
  std::mutex mu;
  std::size_t next = 0;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(mu);
        if (next >= n) return;
        i = next++;
      }
      try {
        out[i] = fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto n_threads = static_cast<std::size_t>(jobs) < n ? static_cast<std::size_t>(jobs) : n;
  std::vector<std::thread> pool;
  pool.reserve(n_threads);
  for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace vqsls
