#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qfbsde/grid.hpp"

namespace qfbsde {

// Volatility of the driving martingale: fills a d x d row-major matrix a(t, m).
using VolatilityFn =
    std::function<void(double t, std::span<const double> m, std::span<double> out)>;
// Scalar volatility of the orthogonal component N.
using OrthVolatilityFn = std::function<double(double t, double n)>;

struct MartingaleModel {
  enum class Kind { brownian, diffusion_martingale };

  std::size_t d = 1;
  Kind kind = Kind::brownian;
  VolatilityFn volatility;  // required for diffusion_martingale; identity otherwise
  std::vector<double> m0;   // initial value, size d
  double bracket_bound = 1e6;  // Q: abort when any |<M_i,M_j>| exceeds it

  bool with_orthogonal = false;
  OrthVolatilityFn orth_volatility;  // defaults to 1 (Brownian N)
  double n0 = 0.0;

  void validate() const;
};

// Restart data: simulation begins at grid index `index` from martingale value
// `m` with the bracket already at level `bracket0` (row-major d x d). The
// bracket level fixes the clock seen by the restarted problem, so restarts
// reproduce the original system's clock when the bracket is deterministic.
struct PathStart {
  std::size_t index = 0;
  std::vector<double> m;
  std::vector<double> bracket0;  // empty means zero
  double n = 0.0;
  double bracket_nn0 = 0.0;
};

struct PathBundle {
  TimeGrid grid;
  std::size_t paths = 0;
  std::size_t d = 1;
  std::size_t start_index = 0;
  std::uint64_t seed = 0;

  // Node arrays are P x (N+1) x (...); q is a per-step value, held at index N.
  std::vector<double> M;          // P x (N+1) x d
  std::vector<double> bracketMM;  // P x (N+1) x d x d, cumulative
  std::vector<double> C;          // P x (N+1)
  std::vector<double> q;          // P x (N+1) x d x d, symmetric PSD
  std::vector<double> N_orth;     // P x (N+1) when orthogonal present
  std::vector<double> bracketNN;  // P x (N+1) when orthogonal present

  bool has_orthogonal() const { return !N_orth.empty(); }
  std::size_t nodes() const { return grid.points.size(); }

  const double* m_at(std::size_t p, std::size_t i) const {
    return &M[(p * nodes() + i) * d];
  }
  const double* bracket_at(std::size_t p, std::size_t i) const {
    return &bracketMM[(p * nodes() + i) * d * d];
  }
  const double* q_at(std::size_t p, std::size_t i) const {
    return &q[(p * nodes() + i) * d * d];
  }
  double clock_at(std::size_t p, std::size_t i) const { return C[p * nodes() + i]; }
  double dC(std::size_t p, std::size_t i) const {
    return C[p * nodes() + i + 1] - C[p * nodes() + i];
  }
};

// Memory budget in doubles for the largest array allocation; exceeding it
// raises capacity_error before allocating.
std::size_t memory_budget_doubles();
void set_memory_budget_doubles(std::size_t n);

PathBundle generate_paths(const MartingaleModel& model, const TimeGrid& grid,
                          std::size_t paths, std::uint64_t seed,
                          const PathStart* start = nullptr);

// Recomputes clock paths from the stored brackets. With `augmented` the
// orthogonal bracket is included (the transformed clock of the two-block
// system); otherwise the plain arctan of the summed M-bracket trace.
std::vector<double> compute_clock(const PathBundle& bundle, bool augmented = false);

// Recomputes the per-step density q from brackets and clock: q q* dC = d<M,M>.
std::vector<double> q_density(const PathBundle& bundle);

// Running sum of increment products dA dB per path; A, B are P x (N+1).
std::vector<double> discrete_covariation(std::span<const double> A,
                                         std::span<const double> B,
                                         std::size_t paths, std::size_t nodes);

// Columnar dump: path,step,t,M_1..M_d,N,C,q_11..q_dd.
void write_paths_csv(const PathBundle& bundle, const std::string& file,
                     const std::vector<double>* X = nullptr, std::size_t n_dim = 0,
                     const std::vector<double>* Y = nullptr,
                     const std::vector<double>* Z = nullptr,
                     const std::vector<double>* U = nullptr);

}  // namespace qfbsde
