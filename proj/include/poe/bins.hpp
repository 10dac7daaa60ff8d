#pragma once

#include <cstddef>

namespace poe {

// C equal-width bins over [y_min, y_max]; classes are 1-based. Intervals are
// half-open [lo, hi) except the last, which is closed. Targets outside the
// range clamp to the nearest end bin.
struct BinLayout {
  double y_min = 0.0;
  double y_max = 1.0;
  int classes = 2;

  double width() const { return (y_max - y_min) / classes; }
  int bin(double y) const;
  double center(int class_index) const;
  double edge(int k) const { return y_min + k * width(); }  // k in [0, C]
  bool valid() const { return y_min < y_max && classes >= 2; }
};

}  // namespace poe
