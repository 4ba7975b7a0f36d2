#ifndef IBINN_COMMON_HPP
#define IBINN_COMMON_HPP

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ibinn {

#ifdef IBINN_SINGLE_PRECISION
using real = float;
#else
using real = double;
#endif

using dvec = std::vector<double>;

inline constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)
inline constexpr double kLn2 = std::numbers::ln2;

// Thrown when an activation, loss, or gradient stops being finite; carries
// the name of the layer or parameter block that produced it.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(const std::string& where, const std::string& what_value)
      : std::runtime_error("non-finite " + what_value + " in " + where), where_(where) {}
  const std::string& where() const { return where_; }

 private:
  std::string where_;
};

inline bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// logsumexp over a small vector, stable for arguments ~ -1e4.
inline double log_sum_exp(std::span<const double> a) {
  double m = a[0];
  for (double x : a) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : a) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace ibinn

#endif  // IBINN_COMMON_HPP
