#pragma once

#include <cstdio>
#include <string>

namespace floodsim {

// Locale-independent fixed-point rendering used in every log and prompt.
inline std::string fixed(double v, int precision = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

// Shortest form that round-trips a double.
inline std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace floodsim
