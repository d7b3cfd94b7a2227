#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace transcp {

// Project-wide error type. Contract violations and I/O failures both raise
// Error; the message carries the expected/actual detail.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <typename A, typename... Rest>
void format_into(std::ostringstream& os, A&& a, Rest&&... rest) {
  os << std::forward<A>(a);
  format_into(os, std::forward<Rest>(rest)...);
}
}  // namespace detail

template <typename... Args>
std::string msg(Args&&... args) {
  std::ostringstream os;
  detail::format_into(os, std::forward<Args>(args)...);
  return os.str();
}

template <typename... Args>
[[noreturn]] void fail(Args&&... args) {
  throw Error(msg(std::forward<Args>(args)...));
}

#define TCP_CHECK(cond, ...)                  \
  do {                                        \
    if (!(cond)) ::transcp::fail(__VA_ARGS__); \
  } while (0)

}  // namespace transcp
