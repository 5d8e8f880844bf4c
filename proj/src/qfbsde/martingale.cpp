#include "qfbsde/martingale.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <mutex>

#include "qfbsde/csv.hpp"
#include "qfbsde/linalg.hpp"
#include "qfbsde/parallel.hpp"
#include "qfbsde/rng.hpp"

namespace qfbsde {

namespace {
int g_threads = 1;
std::size_t g_budget = 450'000'000;  // ~3.6 GB of doubles
}  // namespace

int thread_count() { return g_threads; }
void set_thread_count(int n) { g_threads = n < 1 ? 1 : n; }

std::size_t memory_budget_doubles() { return g_budget; }
void set_memory_budget_doubles(std::size_t n) { g_budget = n; }

void MartingaleModel::validate() const {
  if (d == 0) throw config_error("martingale dimension must be positive");
  if (!m0.empty() && m0.size() != d)
    throw config_error("martingale initial value has wrong dimension");
  if (kind == Kind::diffusion_martingale && !volatility)
    throw config_error("diffusion_martingale requires a volatility function");
  if (!(bracket_bound > 0.0)) throw config_error("bracket bound Q must be positive");
}

namespace {

void checked_resize(std::vector<double>& v, std::size_t n, const char* what) {
  if (n > memory_budget_doubles())
    throw capacity_error(std::string("allocation for ") + what + " (" +
                         std::to_string(n) + " doubles) exceeds the memory budget");
  v.assign(n, 0.0);
}

}  // namespace

PathBundle generate_paths(const MartingaleModel& model, const TimeGrid& grid,
                          std::size_t paths, std::uint64_t seed,
                          const PathStart* start) {
  model.validate();
  grid.validate();
  if (paths == 0) throw config_error("path count must be positive");

  const std::size_t d = model.d;
  const std::size_t nodes = grid.points.size();
  const std::size_t i0 = start ? start->index : 0;
  if (i0 >= nodes) throw config_error("start index beyond the grid");

  PathBundle b;
  b.grid = grid;
  b.paths = paths;
  b.d = d;
  b.start_index = i0;
  b.seed = seed;
  checked_resize(b.M, paths * nodes * d, "martingale paths");
  checked_resize(b.bracketMM, paths * nodes * d * d, "brackets");
  checked_resize(b.C, paths * nodes, "clock");
  checked_resize(b.q, paths * nodes * d * d, "density");
  if (model.with_orthogonal) {
    checked_resize(b.N_orth, paths * nodes, "orthogonal paths");
    checked_resize(b.bracketNN, paths * nodes, "orthogonal bracket");
  }

  std::vector<double> m_init(d, 0.0);
  if (start && !start->m.empty()) {
    if (start->m.size() != d) throw config_error("start martingale value has wrong dimension");
    m_init = start->m;
  } else if (!model.m0.empty()) {
    m_init = model.m0;
  }
  std::vector<double> br_init(d * d, 0.0);
  if (start && !start->bracket0.empty()) {
    if (start->bracket0.size() != d * d)
      throw config_error("start bracket has wrong dimension");
    br_init = start->bracket0;
  }
  const double n_init = start ? start->n : model.n0;
  const double brnn_init = start ? start->bracket_nn0 : 0.0;

  std::atomic<bool> failed{false};
  std::string fail_what;
  std::mutex fail_mutex;

  for_blocks(paths, [&](std::size_t, std::size_t pa, std::size_t pe) {
    std::vector<double> a(d * d), dbr(d * d), dw(d);
    for (std::size_t p = pa; p < pe && !failed.load(std::memory_order_relaxed); ++p) {
      double* Mrow = &b.M[p * nodes * d];
      double* Brow = &b.bracketMM[(p * nodes) * d * d];
      double* Crow = &b.C[p * nodes];
      double* Qrow = &b.q[(p * nodes) * d * d];
      for (std::size_t i = 0; i <= i0; ++i) {
        for (std::size_t j = 0; j < d; ++j) Mrow[i * d + j] = m_init[j];
        for (std::size_t j = 0; j < d * d; ++j) Brow[i * d * d + j] = br_init[j];
      }
      double trace0 = 0.0;
      for (std::size_t j = 0; j < d; ++j) trace0 += br_init[j * d + j];
      double trace_nn = brnn_init;
      for (std::size_t i = 0; i <= i0; ++i)
        Crow[i] = std::atan(trace0);
      if (model.with_orthogonal)
        for (std::size_t i = 0; i <= i0; ++i) {
          b.N_orth[p * nodes + i] = n_init;
          b.bracketNN[p * nodes + i] = brnn_init;
        }

      for (std::size_t i = i0; i + 1 < nodes; ++i) {
        const double t = grid.points[i];
        const double dt = grid.dt(i);
        const double sdt = std::sqrt(dt);
        const double* m_cur = &Mrow[i * d];
        if (model.kind == MartingaleModel::Kind::brownian) {
          for (std::size_t r = 0; r < d; ++r)
            for (std::size_t c = 0; c < d; ++c) a[r * d + c] = (r == c) ? 1.0 : 0.0;
        } else {
          model.volatility(t, std::span<const double>(m_cur, d), a);
        }
        bool finite = true;
        for (double v : a) finite = finite && std::isfinite(v);
        if (!finite) {
          std::lock_guard<std::mutex> lock(fail_mutex);
          fail_what = "non-finite volatility at path " + std::to_string(p) +
                      ", step " + std::to_string(i);
          failed.store(true);
          break;
        }
        for (std::size_t j = 0; j < d; ++j)
          dw[j] = rng::normal(seed, p, i, j) * sdt;
        for (std::size_t r = 0; r < d; ++r) {
          double s = 0.0;
          for (std::size_t c = 0; c < d; ++c) s += a[r * d + c] * dw[c];
          Mrow[(i + 1) * d + r] = Mrow[i * d + r] + s;
        }
        // Analytic bracket increment a a^T dt; discrete covariation of the
        // generated increments is kept separate for verification.
        for (std::size_t r = 0; r < d; ++r)
          for (std::size_t c = 0; c < d; ++c) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) s += a[r * d + k] * a[c * d + k];
            dbr[r * d + c] = s * dt;
          }
        double trace1 = 0.0;
        for (std::size_t j = 0; j < d * d; ++j) {
          Brow[(i + 1) * d * d + j] = Brow[i * d * d + j] + dbr[j];
          if (std::fabs(Brow[(i + 1) * d * d + j]) > model.bracket_bound) {
            std::lock_guard<std::mutex> lock(fail_mutex);
            fail_what = "bracket bound Q=" + std::to_string(model.bracket_bound) +
                        " exceeded at path " + std::to_string(p) + ", step " +
                        std::to_string(i);
            failed.store(true);
          }
        }
        if (failed.load(std::memory_order_relaxed)) break;
        for (std::size_t j = 0; j < d; ++j) trace1 += Brow[(i + 1) * d * d + j * d + j];

        double dc_nn = 0.0;
        if (model.with_orthogonal) {
          const double n_cur = b.N_orth[p * nodes + i];
          const double an = model.orth_volatility ? model.orth_volatility(t, n_cur) : 1.0;
          if (!std::isfinite(an)) {
            std::lock_guard<std::mutex> lock(fail_mutex);
            fail_what = "non-finite orthogonal volatility at path " + std::to_string(p);
            failed.store(true);
            break;
          }
          const double dn = an * rng::normal(seed, p, i, d) * sdt;
          b.N_orth[p * nodes + i + 1] = n_cur + dn;
          dc_nn = an * an * dt;
          b.bracketNN[p * nodes + i + 1] = b.bracketNN[p * nodes + i] + dc_nn;
          trace_nn += dc_nn;
          if (std::fabs(b.bracketNN[p * nodes + i + 1]) > model.bracket_bound) {
            std::lock_guard<std::mutex> lock(fail_mutex);
            fail_what = "orthogonal bracket bound exceeded at path " + std::to_string(p);
            failed.store(true);
            break;
          }
        }
        (void)trace_nn;

        Crow[i + 1] = std::atan(trace1);
        const double dC = Crow[i + 1] - Crow[i];
        double* qi = &Qrow[i * d * d];
        if (dC > 0.0) {
          for (std::size_t j = 0; j < d * d; ++j) dbr[j] /= dC;
          linalg::sym_sqrt(dbr.data(), d, qi);
        }  // dC == 0 implies a zero bracket increment; q stays 0
      }
      // Hold the last step value at the terminal node.
      if (nodes >= 2)
        for (std::size_t j = 0; j < d * d; ++j)
          Qrow[(nodes - 1) * d * d + j] = Qrow[(nodes - 2) * d * d + j];
    }
  });
  if (failed.load()) throw solver_error(fail_what);
  return b;
}

std::vector<double> compute_clock(const PathBundle& bundle, bool augmented) {
  const std::size_t nodes = bundle.nodes();
  std::vector<double> out(bundle.paths * nodes, 0.0);
  if (augmented && !bundle.has_orthogonal())
    throw config_error("augmented clock needs an orthogonal component");
  for_blocks(bundle.paths, [&](std::size_t, std::size_t pa, std::size_t pe) {
    for (std::size_t p = pa; p < pe; ++p)
      for (std::size_t i = 0; i < nodes; ++i) {
        const double* br = bundle.bracket_at(p, i);
        double tr = 0.0;
        for (std::size_t j = 0; j < bundle.d; ++j) tr += br[j * bundle.d + j];
        if (augmented) tr += bundle.bracketNN[p * nodes + i];
        if (!std::isfinite(tr)) throw solver_error("non-finite bracket in clock");
        out[p * nodes + i] = std::atan(tr);
      }
  });
  return out;
}

std::vector<double> q_density(const PathBundle& bundle) {
  const std::size_t nodes = bundle.nodes();
  const std::size_t d = bundle.d;
  std::vector<double> out(bundle.paths * nodes * d * d, 0.0);
  std::atomic<bool> bad{false};
  for_blocks(bundle.paths, [&](std::size_t, std::size_t pa, std::size_t pe) {
    std::vector<double> dbr(d * d);
    for (std::size_t p = pa; p < pe; ++p)
      for (std::size_t i = 0; i + 1 < nodes; ++i) {
        const double dC = bundle.dC(p, i);
        const double* b0 = bundle.bracket_at(p, i);
        const double* b1 = bundle.bracket_at(p, i + 1);
        double norm = 0.0;
        for (std::size_t j = 0; j < d * d; ++j) {
          dbr[j] = b1[j] - b0[j];
          norm += std::fabs(dbr[j]);
        }
        if (dC <= 0.0) {
          if (norm > 1e-14) bad.store(true);
          continue;
        }
        for (std::size_t j = 0; j < d * d; ++j) dbr[j] /= dC;
        linalg::sym_sqrt(dbr.data(), d, &out[(p * nodes + i) * d * d]);
      }
    for (std::size_t p = pa; p < pe; ++p)
      if (nodes >= 2)
        for (std::size_t j = 0; j < d * d; ++j)
          out[(p * nodes + nodes - 1) * d * d + j] =
              out[(p * nodes + nodes - 2) * d * d + j];
  });
  if (bad.load())
    throw solver_error("bracket increment without clock increment: corrupted input");
  return out;
}

std::vector<double> discrete_covariation(std::span<const double> A,
                                         std::span<const double> B,
                                         std::size_t paths, std::size_t nodes) {
  if (A.size() != paths * nodes || B.size() != paths * nodes)
    throw config_error("covariation inputs must share the path grid");
  std::vector<double> out(paths * nodes, 0.0);
  for_blocks(paths, [&](std::size_t, std::size_t pa, std::size_t pe) {
    for (std::size_t p = pa; p < pe; ++p) {
      double acc = 0.0;
      out[p * nodes] = 0.0;
      for (std::size_t i = 0; i + 1 < nodes; ++i) {
        acc += (A[p * nodes + i + 1] - A[p * nodes + i]) *
               (B[p * nodes + i + 1] - B[p * nodes + i]);
        out[p * nodes + i + 1] = acc;
      }
    }
  });
  return out;
}

void write_paths_csv(const PathBundle& bundle, const std::string& file,
                     const std::vector<double>* X, std::size_t n_dim,
                     const std::vector<double>* Y, const std::vector<double>* Z,
                     const std::vector<double>* U) {
  const std::size_t nodes = bundle.nodes();
  const std::size_t d = bundle.d;
  csv::Writer w(file);
  std::string header = "path,step,t";
  for (std::size_t j = 0; j < d; ++j) header += ",M_" + std::to_string(j + 1);
  header += ",N,C";
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < d; ++c)
      header += ",q_" + std::to_string(r + 1) + std::to_string(c + 1);
  if (X)
    for (std::size_t j = 0; j < n_dim; ++j) header += ",X_" + std::to_string(j + 1);
  if (Y) header += ",Y";
  if (Z)
    for (std::size_t j = 0; j < d; ++j) header += ",Z_" + std::to_string(j + 1);
  if (U) header += ",U";
  w.line(header);
  for (std::size_t p = 0; p < bundle.paths; ++p)
    for (std::size_t i = bundle.start_index; i < nodes; ++i) {
      w.field(p);
      w.field(i);
      w.field(bundle.grid.points[i]);
      for (std::size_t j = 0; j < d; ++j) w.field(bundle.m_at(p, i)[j]);
      w.field(bundle.has_orthogonal() ? bundle.N_orth[p * nodes + i] : 0.0);
      w.field(bundle.clock_at(p, i));
      for (std::size_t j = 0; j < d * d; ++j) w.field(bundle.q_at(p, i)[j]);
      if (X)
        for (std::size_t j = 0; j < n_dim; ++j)
          w.field((*X)[(p * nodes + i) * n_dim + j]);
      if (Y) w.field((*Y)[p * nodes + i]);
      if (Z)
        for (std::size_t j = 0; j < d; ++j) w.field((*Z)[(p * nodes + i) * d + j]);
      if (U) w.field((*U)[p * nodes + i]);
      w.endline();
    }
}

}  // namespace qfbsde
