#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "qfbsde/errors.hpp"

namespace qfbsde::linalg {

// Dense row-major helpers for the small matrices of this library (state and
// martingale dimensions are single digits; regression bases a few dozen).

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// y = A x with A (rows x cols), row-major.
inline void matvec(const double* A, std::size_t rows, std::size_t cols,
                   const double* x, double* y) {
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += A[i * cols + j] * x[j];
    y[i] = s;
  }
}

// C = A B, A (n x k), B (k x m), row-major.
inline void matmul(const double* A, const double* B, std::size_t n,
                   std::size_t k, std::size_t m, double* C) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t l = 0; l < k; ++l) s += A[i * k + l] * B[l * m + j];
      C[i * m + j] = s;
    }
}

// Cyclic Jacobi eigendecomposition of a symmetric d x d matrix.
// On return eigvals holds the eigenvalues and V the eigenvectors by column.
inline void sym_eig(const double* A, std::size_t d, double* eigvals, double* V) {
  std::vector<double> M(A, A + d * d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) V[i * d + j] = (i == j) ? 1.0 : 0.0;
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i + 1; j < d; ++j) off += M[i * d + j] * M[i * d + j];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < d; ++p)
      for (std::size_t q = p + 1; q < d; ++q) {
        const double apq = M[p * d + q];
        if (std::fabs(apq) < 1e-30) continue;
        const double app = M[p * d + p], aqq = M[q * d + q];
        const double theta = 0.5 * (aqq - app) / apq;
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < d; ++k) {
          const double mkp = M[k * d + p], mkq = M[k * d + q];
          M[k * d + p] = c * mkp - s * mkq;
          M[k * d + q] = s * mkp + c * mkq;
        }
        for (std::size_t k = 0; k < d; ++k) {
          const double mpk = M[p * d + k], mqk = M[q * d + k];
          M[p * d + k] = c * mpk - s * mqk;
          M[q * d + k] = s * mpk + c * mqk;
        }
        for (std::size_t k = 0; k < d; ++k) {
          const double vkp = V[k * d + p], vkq = V[k * d + q];
          V[k * d + p] = c * vkp - s * vkq;
          V[k * d + q] = s * vkp + c * vkq;
        }
      }
  }
  for (std::size_t i = 0; i < d; ++i) eigvals[i] = M[i * d + i];
}

// Symmetric PSD square root; negative eigenvalues from roundoff clamp to 0.
inline void sym_sqrt(const double* A, std::size_t d, double* out) {
  if (d == 1) {
    out[0] = std::sqrt(A[0] < 0.0 ? 0.0 : A[0]);
    return;
  }
  std::vector<double> w(d), V(d * d);
  sym_eig(A, d, w.data(), V.data());
  for (std::size_t i = 0; i < d; ++i) w[i] = std::sqrt(w[i] < 0.0 ? 0.0 : w[i]);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += V[i * d + k] * w[k] * V[j * d + k];
      out[i * d + j] = s;
    }
}

// Solves the symmetric positive definite system in place via Cholesky.
// Returns false if a pivot collapses.
inline bool cholesky_factor(double* A, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) {
    double diag = A[j * n + j];
    for (std::size_t k = 0; k < j; ++k) diag -= A[j * n + k] * A[j * n + k];
    if (!(diag > 0.0)) return false;
    const double l = std::sqrt(diag);
    A[j * n + j] = l;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = A[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= A[i * n + k] * A[j * n + k];
      A[i * n + j] = s / l;
    }
  }
  return true;
}

inline void cholesky_solve(const double* L, std::size_t n, const double* b,
                           double* x) {
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= L[i * n + k] * x[k];
    x[i] = s / L[i * n + i];
  }
  for (std::size_t ii = n; ii-- > 0;) {
    double s = x[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= L[k * n + ii] * x[k];
    x[ii] = s / L[ii * n + ii];
  }
}

// General small dense solve (Gaussian elimination, partial pivoting).
inline bool solve_dense(std::vector<double> A, std::size_t n, double* b) {
  std::vector<std::size_t> piv(n);
  for (std::size_t i = 0; i < n; ++i) piv[i] = i;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t best = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::fabs(A[r * n + c]) > std::fabs(A[best * n + c])) best = r;
    if (std::fabs(A[best * n + c]) < 1e-300) return false;
    if (best != c) {
      for (std::size_t j = 0; j < n; ++j) std::swap(A[c * n + j], A[best * n + j]);
      std::swap(b[c], b[best]);
    }
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = A[r * n + c] / A[c * n + c];
      if (f == 0.0) continue;
      for (std::size_t j = c; j < n; ++j) A[r * n + j] -= f * A[c * n + j];
      b[r] -= f * b[c];
    }
  }
  for (std::size_t ii = n; ii-- > 0;) {
    double s = b[ii];
    for (std::size_t j = ii + 1; j < n; ++j) s -= A[ii * n + j] * b[j];
    b[ii] = s / A[ii * n + ii];
  }
  return true;
}

}  // namespace qfbsde::linalg
