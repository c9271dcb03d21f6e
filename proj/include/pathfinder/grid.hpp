#pragma once

#include <algorithm>
#include <vector>

#include "pathfinder/common.hpp"

namespace pathfinder {

// Dense row-major H x W grid of doubles, the unit all maps are built on.
struct Grid {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Grid() = default;
  Grid(int r, int c, double fill = 0.0) : rows(r), cols(c), v(std::size_t(r) * c, fill) {
    require(r >= 0 && c >= 0, "Grid: negative shape");
  }

  double& at(int r, int c) { return v[std::size_t(r) * cols + c]; }
  double at(int r, int c) const { return v[std::size_t(r) * cols + c]; }

  std::size_t size() const { return v.size(); }
  bool same_shape(const Grid& o) const { return rows == o.rows && cols == o.cols; }
  bool in_bounds(int r, int c) const { return r >= 0 && r < rows && c >= 0 && c < cols; }

  bool operator==(const Grid& o) const {
    return rows == o.rows && cols == o.cols && v == o.v;
  }

  double min_value() const { return v.empty() ? 0.0 : *std::min_element(v.begin(), v.end()); }
  double max_value() const { return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end()); }

  bool all_in_unit_interval() const {
    return std::all_of(v.begin(), v.end(), [](double x) { return x >= 0.0 && x <= 1.0; });
  }
};

inline Grid operator*(double s, const Grid& g) {
  Grid out = g;
  for (double& x : out.v) x *= s;
  return out;
}

inline Grid operator+(const Grid& a, const Grid& b) {
  require(a.same_shape(b), "Grid+: shape mismatch");
  Grid out = a;
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.v[i];
  return out;
}

}  // namespace pathfinder
