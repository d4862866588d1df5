#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace mpnn {

// Base error; subcommands map subclasses to distinct exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad or inconsistent configuration / input layout (exit code 2).
struct ConfigError : Error {
  using Error::Error;
};

// An ensemble member never reached the stopping threshold (exit code 3).
struct ThresholdError : Error {
  double best_dsc = 0.0;
  int epochs_run = 0;
  ThresholdError(const std::string& msg, double best, int epochs)
      : Error(msg), best_dsc(best), epochs_run(epochs) {}
};

// Non-finite loss or other numeric failure during training (exit code 4).
struct NumericError : Error {
  using Error::Error;
};

namespace detail {

template <class... Args>
[[noreturn]] void fail(const Args&... args) {
  std::ostringstream os;
  (os << ... << args);
  throw Error(os.str());
}

template <class E, class... Args>
[[noreturn]] void fail_as(const Args&... args) {
  std::ostringstream os;
  (os << ... << args);
  throw E(os.str());
}

}  // namespace detail

}  // namespace mpnn

#define MPNN_CHECK(cond, ...)                  \
  do {                                         \
    if (!(cond)) ::mpnn::detail::fail(__VA_ARGS__); \
  } while (0)

#define MPNN_CHECK_AS(E, cond, ...)                     \
  do {                                                  \
    if (!(cond)) ::mpnn::detail::fail_as<E>(__VA_ARGS__); \
  } while (0)
