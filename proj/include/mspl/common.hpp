#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace mspl {

// Contract violations map to CLI exit code 1, I/O failures to exit code 2.
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

template <class... Parts>
std::string cat(const Parts&... parts) {
  std::ostringstream os;
  (os << ... << parts);
  return os.str();
}

}  // namespace detail

template <class... Parts>
[[noreturn]] void contract_fail(const Parts&... parts) {
  throw ContractError(detail::cat(parts...));
}

template <class... Parts>
[[noreturn]] void io_fail(const Parts&... parts) {
  throw IoError(detail::cat(parts...));
}

}  // namespace mspl

#define MSPL_CHECK(cond, ...)                \
  do {                                       \
    if (!(cond)) {                           \
      ::mspl::contract_fail(__VA_ARGS__);    \
    }                                        \
  } while (0)

#define MSPL_CHECK_IO(cond, ...)             \
  do {                                       \
    if (!(cond)) {                           \
      ::mspl::io_fail(__VA_ARGS__);          \
    }                                        \
  } while (0)
