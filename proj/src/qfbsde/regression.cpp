#include "qfbsde/regression.hpp"

#include <cmath>
#include <string>

#include "qfbsde/linalg.hpp"
#include "qfbsde/parallel.hpp"

namespace qfbsde {

namespace {

// Multi-indices with total degree <= degree, graded order, constant first.
std::vector<std::uint8_t> enumerate_exponents(std::size_t vars, std::size_t degree,
                                              std::size_t& k_out) {
  std::vector<std::uint8_t> exps;
  std::vector<std::uint8_t> cur(vars, 0);
  std::function<void(std::size_t, std::size_t)> rec_exact = [&](std::size_t var,
                                                                std::size_t left) {
    if (var + 1 == vars) {
      cur[var] = static_cast<std::uint8_t>(left);
      exps.insert(exps.end(), cur.begin(), cur.end());
      cur[var] = 0;
      return;
    }
    for (std::size_t e = 0; e <= left; ++e) {
      cur[var] = static_cast<std::uint8_t>(e);
      rec_exact(var + 1, left - e);
    }
    cur[var] = 0;
  };
  for (std::size_t total = 0; total <= degree; ++total) rec_exact(0, total);
  k_out = exps.size() / vars;
  return exps;
}

}  // namespace

PolyFit::PolyFit(std::size_t vars, RegressionBasis basis)
    : vars_(vars), basis_(basis) {
  if (vars_ == 0 || vars_ > 8)
    throw config_error("regression supports 1 to 8 state variables");
  if (basis_.degree > 15) throw config_error("regression degree too large");
  exponents_ = enumerate_exponents(vars_, basis_.degree, k_);
  if (k_ > 256) throw config_error("regression basis too large");
  mean_.assign(vars_, 0.0);
  inv_std_.assign(vars_, 1.0);
}

void PolyFit::expand(const double* vals, double* phi) const {
  double zpow[8][16];
  for (std::size_t v = 0; v < vars_; ++v) {
    const double z = (vals[v] - mean_[v]) * inv_std_[v];
    zpow[v][0] = 1.0;
    for (std::size_t e = 1; e <= basis_.degree; ++e) zpow[v][e] = zpow[v][e - 1] * z;
  }
  for (std::size_t j = 0; j < k_; ++j) {
    double f = 1.0;
    for (std::size_t v = 0; v < vars_; ++v) f *= zpow[v][exponents_[j * vars_ + v]];
    phi[j] = f;
  }
}

void PolyFit::prepare(std::size_t samples, const RowFn& rows) {
  if (samples < k_ + 1)
    throw config_error("regression needs at least " + std::to_string(k_ + 1) +
                       " samples, got " + std::to_string(samples));
  samples_ = samples;
  const std::size_t nblocks = block_count(samples);

  // Pass 1: moments for standardization.
  std::vector<double> bsum(nblocks * vars_, 0.0), bsq(nblocks * vars_, 0.0);
  for_blocks(samples, [&](std::size_t b, std::size_t pa, std::size_t pe) {
    double vals[8];
    double* s = &bsum[b * vars_];
    double* s2 = &bsq[b * vars_];
    for (std::size_t p = pa; p < pe; ++p) {
      rows(p, vals);
      for (std::size_t v = 0; v < vars_; ++v) {
        s[v] += vals[v];
        s2[v] += vals[v] * vals[v];
      }
    }
  });
  for (std::size_t v = 0; v < vars_; ++v) {
    double s = 0.0, s2 = 0.0;
    for (std::size_t b = 0; b < nblocks; ++b) {
      s += bsum[b * vars_ + v];
      s2 += bsq[b * vars_ + v];
    }
    const double mean = s / static_cast<double>(samples);
    const double var = s2 / static_cast<double>(samples) - mean * mean;
    mean_[v] = mean;
    // A degenerate variable (all samples equal) maps to 0; the intercept
    // carries its contribution.
    inv_std_[v] = (var > 1e-24 * (1.0 + mean * mean)) ? 1.0 / std::sqrt(var) : 0.0;
  }

  // Pass 2: Gram, block partials reduced in index order.
  const std::size_t gsz = k_ * k_;
  std::vector<double> bgram(nblocks * gsz, 0.0);
  for_blocks(samples, [&](std::size_t b, std::size_t pa, std::size_t pe) {
    double vals[8];
    std::vector<double> phi(k_);
    double* G = &bgram[b * gsz];
    for (std::size_t p = pa; p < pe; ++p) {
      rows(p, vals);
      expand(vals, phi.data());
      for (std::size_t i = 0; i < k_; ++i) {
        const double fi = phi[i];
        for (std::size_t j = i; j < k_; ++j) G[i * k_ + j] += fi * phi[j];
      }
    }
  });
  std::vector<double> gram(gsz, 0.0);
  for (std::size_t b = 0; b < nblocks; ++b)
    for (std::size_t j = 0; j < gsz; ++j) gram[j] += bgram[b * gsz + j];
  for (std::size_t i = 0; i < k_; ++i)
    for (std::size_t j = 0; j < i; ++j) gram[i * k_ + j] = gram[j * k_ + i];

  double trace = 0.0;
  for (std::size_t i = 0; i < k_; ++i) trace += gram[i * k_ + i];
  const double lambda = basis_.ridge * trace / static_cast<double>(k_);
  for (std::size_t i = 1; i < k_; ++i) gram[i * k_ + i] += lambda;

  chol_ = gram;
  if (!linalg::cholesky_factor(chol_.data(), k_)) {
    double dmax = 0.0, dmin = 1e300;
    for (std::size_t i = 0; i < k_; ++i) {
      dmax = std::max(dmax, gram[i * k_ + i]);
      dmin = std::min(dmin, gram[i * k_ + i]);
    }
    throw solver_error(
        "regression design is rank deficient after ridge; diagonal spread " +
        std::to_string(dmax / std::max(dmin, 1e-300)));
  }
  double lmax = 0.0, lmin = 1e300;
  for (std::size_t i = 0; i < k_; ++i) {
    lmax = std::max(lmax, chol_[i * k_ + i]);
    lmin = std::min(lmin, chol_[i * k_ + i]);
  }
  condition_hint_ = (lmax / lmin) * (lmax / lmin);
  coeffs_.clear();
  residual_rms_.clear();
  prepared_ = true;
}

std::size_t PolyFit::solve_targets(std::size_t samples, const RowFn& rows,
                                   std::span<const double* const> targets) {
  if (!prepared_ || samples != samples_)
    throw solver_error("solve_targets without a matching prepare");
  const std::size_t nt = targets.size();
  const std::size_t nblocks = block_count(samples);
  std::vector<double> bxty(nblocks * k_ * nt, 0.0);
  for_blocks(samples, [&](std::size_t b, std::size_t pa, std::size_t pe) {
    double vals[8];
    std::vector<double> phi(k_);
    double* Xy = &bxty[b * k_ * nt];
    for (std::size_t p = pa; p < pe; ++p) {
      rows(p, vals);
      expand(vals, phi.data());
      for (std::size_t t = 0; t < nt; ++t) {
        const double y = targets[t][p];
        for (std::size_t i = 0; i < k_; ++i) Xy[t * k_ + i] += phi[i] * y;
      }
    }
  });
  std::vector<double> xty(k_ * nt, 0.0);
  for (std::size_t b = 0; b < nblocks; ++b)
    for (std::size_t j = 0; j < k_ * nt; ++j) xty[j] += bxty[b * k_ * nt + j];

  const std::size_t first = coeffs_.size();
  for (std::size_t t = 0; t < nt; ++t) {
    coeffs_.emplace_back(k_, 0.0);
    linalg::cholesky_solve(chol_.data(), k_, &xty[t * k_], coeffs_.back().data());
    residual_rms_.push_back(-1.0);
  }
  return first;
}

double PolyFit::fitted(const double* vals, std::size_t target) const {
  double phi[256];
  expand(vals, phi);
  const auto& c = coeffs_.at(target);
  double s = 0.0;
  for (std::size_t j = 0; j < k_; ++j) s += c[j] * phi[j];
  return s;
}

void PolyFit::fitted_all(const double* vals, double* out) const {
  double phi[256];
  expand(vals, phi);
  for (std::size_t t = 0; t < coeffs_.size(); ++t) {
    double s = 0.0;
    for (std::size_t j = 0; j < k_; ++j) s += coeffs_[t][j] * phi[j];
    out[t] = s;
  }
}

const std::vector<double>& PolyFit::coefficients(std::size_t target) const {
  return coeffs_.at(target);
}

double PolyFit::compute_residual_rms(std::size_t samples, const RowFn& rows,
                                     const double* target, std::size_t ti) {
  const std::size_t nblocks = block_count(samples);
  std::vector<double> bss(nblocks, 0.0);
  for_blocks(samples, [&](std::size_t b, std::size_t pa, std::size_t pe) {
    double vals[8];
    for (std::size_t p = pa; p < pe; ++p) {
      rows(p, vals);
      const double r = target[p] - fitted(vals, ti);
      bss[b] += r * r;
    }
  });
  double ss = 0.0;
  for (double v : bss) ss += v;
  residual_rms_.at(ti) = std::sqrt(ss / static_cast<double>(samples));
  return residual_rms_[ti];
}

double PolyFit::prediction_se(const double* vals, std::size_t target) const {
  if (residual_rms_.at(target) < 0.0)
    throw solver_error("prediction_se needs compute_residual_rms first");
  double phi[256], w[256];
  expand(vals, phi);
  linalg::cholesky_solve(chol_.data(), k_, phi, w);
  double quad = 0.0;
  for (std::size_t j = 0; j < k_; ++j) quad += phi[j] * w[j];
  return residual_rms_[target] * std::sqrt(std::max(quad, 0.0));
}

RegressOutput regress_conditional(std::span<const double> states, std::size_t vars,
                                  std::span<const double> targets,
                                  const RegressionBasis& basis) {
  if (vars == 0 || states.size() % vars != 0)
    throw config_error("state array size is not a multiple of the variable count");
  const std::size_t samples = states.size() / vars;
  if (targets.size() != samples)
    throw config_error("feature and target sample counts differ");
  PolyFit fit(vars, basis);
  RowFn rows = [&](std::size_t p, double* out) {
    for (std::size_t v = 0; v < vars; ++v) out[v] = states[p * vars + v];
  };
  fit.prepare(samples, rows);
  const double* tptr = targets.data();
  const double* const tlist[1] = {tptr};
  fit.solve_targets(samples, rows, std::span<const double* const>(tlist, 1));
  RegressOutput out;
  out.coefficients = fit.coefficients(0);
  out.fitted.resize(samples);
  double vals[8];
  for (std::size_t p = 0; p < samples; ++p) {
    rows(p, vals);
    out.fitted[p] = fit.fitted(vals, 0);
  }
  out.residual_rms = fit.compute_residual_rms(samples, rows, tptr, 0);
  return out;
}

}  // namespace qfbsde
