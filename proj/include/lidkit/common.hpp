#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace lidkit {

using i64 = std::int64_t;
using u64 = std::uint64_t;

// All recoverable failures surface as this exception type; the CLI maps it
// to exit code 2.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {
inline void append_all(std::ostringstream&) {}
template <class A, class... Rest>
void append_all(std::ostringstream& os, A&& a, Rest&&... rest) {
    os << std::forward<A>(a);
    append_all(os, std::forward<Rest>(rest)...);
}
} // namespace detail

template <class... Args>
std::string concat(Args&&... args) {
    std::ostringstream os;
    detail::append_all(os, std::forward<Args>(args)...);
    return os.str();
}

} // namespace lidkit

#define LID_CHECK(cond, ...)                                        \
    do {                                                            \
        if (!(cond)) throw ::lidkit::Error(::lidkit::concat(__VA_ARGS__)); \
    } while (0)

#define LID_FAIL(...) throw ::lidkit::Error(::lidkit::concat(__VA_ARGS__))
