#pragma once

#include <cstdio>
#include <string>

namespace balign {

/// Shortest decimal text with 9 significant digits, used for every float
/// written to CSV and JSON outputs.
inline std::string sig9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

/// Value rounded to 9 significant digits (what a reader of sig9 text gets back).
inline double round_sig9(double v) { return std::stod(sig9(v)); }

}  // namespace balign
