#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace crowdlabel {

/// Dense class index assigned by file order of the class table.
using ClassId = int;
/// Opaque image identifier (file name or URL stem).
using ImageId = std::string;
using WorkerId = std::string;
using TaskId = std::string;

inline constexpr double kEps = 1e-12;

// Threshold comparisons on ratios of small integers. The tolerance absorbs
// rounding in products like 0.75 * (2/3) so boundary values resolve exactly.
inline bool approx_ge(double a, double b) { return a >= b - kEps; }
inline bool strictly_less(double a, double b) { return a < b - kEps; }
inline bool strictly_greater(double a, double b) { return a > b + kEps; }

/// Every recoverable failure in the library surfaces as this type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename... Args>
[[noreturn]] void fail(Args&&... args) {
  std::ostringstream os;
  (os << ... << std::forward<Args>(args));
  throw Error(os.str());
}

template <typename Range>
std::string join(const Range& r, const char* sep = ",") {
  std::ostringstream os;
  bool first = true;
  for (const auto& v : r) {
    if (!first) os << sep;
    os << v;
    first = false;
  }
  return os.str();
}

}  // namespace crowdlabel
