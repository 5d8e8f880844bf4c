#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "qfbsde/errors.hpp"

namespace qfbsde {

// Strictly increasing time points t_0 = 0 < ... < t_N = T.
struct TimeGrid {
  std::vector<double> points;

  double horizon() const { return points.back(); }
  std::size_t steps() const { return points.size() - 1; }
  double dt(std::size_t i) const { return points[i + 1] - points[i]; }

  void validate() const {
    if (points.size() < 2) throw config_error("time grid needs at least one step");
    if (points.front() != 0.0) throw config_error("time grid must start at 0");
    for (std::size_t i = 0; i + 1 < points.size(); ++i)
      if (!(points[i] < points[i + 1]))
        throw config_error("time grid must be strictly increasing");
  }

  // Index of t on the grid; coefficient discontinuities and restart times must
  // be grid points, so a miss is a configuration error.
  std::size_t index_of(double t, double tol = 1e-12) const {
    for (std::size_t i = 0; i < points.size(); ++i)
      if (std::fabs(points[i] - t) <= tol * std::max(1.0, horizon())) return i;
    throw config_error("time " + std::to_string(t) + " is not a grid point");
  }

  bool contains(double t, double tol = 1e-12) const {
    for (double p : points)
      if (std::fabs(p - t) <= tol * std::max(1.0, horizon())) return true;
    return false;
  }

  static TimeGrid uniform(double T, std::size_t N) {
    TimeGrid g;
    g.points.resize(N + 1);
    for (std::size_t i = 0; i <= N; ++i)
      g.points[i] = T * static_cast<double>(i) / static_cast<double>(N);
    g.points[0] = 0.0;
    g.points[N] = T;
    g.validate();
    return g;
  }

  // Uniform grid refined so that every requested time is a grid point.
  static TimeGrid uniform_with(double T, std::size_t N,
                               const std::vector<double>& must_contain) {
    TimeGrid g = uniform(T, N);
    for (double t : must_contain) {
      if (t <= 0.0 || t >= T || g.contains(t)) continue;
      g.points.push_back(t);
    }
    std::sort(g.points.begin(), g.points.end());
    g.validate();
    return g;
  }
};

}  // namespace qfbsde
