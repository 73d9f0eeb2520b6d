#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace vrg {

// Bad arguments or malformed configuration; the CLI maps this to exit code 2.
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Unreadable or inconsistent dataset / image / manifest input; exit code 3.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Checkpoint file unreadable, corrupt, or built for a different architecture.
struct CheckpointError : DataError {
  using DataError::DataError;
};

// Raised when a loss or gradient goes non-finite; carries the path of the
// diagnostic snapshot written just before aborting.  Exit code 4.
struct NumericAbort : std::runtime_error {
  explicit NumericAbort(const std::string& what, std::string snapshot = {})
      : std::runtime_error(what), snapshot_path(std::move(snapshot)) {}
  std::string snapshot_path;
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <class T, class... Rest>
void format_into(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  format_into(os, rest...);
}
}  // namespace detail

template <class Err = ArgumentError, class... Parts>
[[noreturn]] void fail(const Parts&... parts) {
  std::ostringstream os;
  detail::format_into(os, parts...);
  throw Err(os.str());
}

}  // namespace vrg

#define VRG_CHECK(cond, ...)                      \
  do {                                            \
    if (!(cond)) ::vrg::fail<::vrg::ArgumentError>(__VA_ARGS__); \
  } while (0)
