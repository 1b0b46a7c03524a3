#pragma once

// Dense eigenvalues through LAPACK dgeev and bordered solves for singular
// generators.

#include <Eigen/Dense>

#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tamd/errors.hpp"

extern "C" void dgeev_(const char* jobvl, const char* jobvr, const int* n, double* a, const int* lda, double* wr,
                       double* wi, double* vl, const int* ldvl, double* vr, const int* ldvr, double* work,
                       const int* lwork, int* info, std::size_t jobvl_len, std::size_t jobvr_len);

namespace tamd {

/// All eigenvalues of a general real square matrix.
inline std::vector<std::complex<double>> eigenvalues(Eigen::MatrixXd a) {
  const int n = static_cast<int>(a.rows());
  if (a.cols() != n) throw SolverError("eigenvalues: matrix is not square");
  std::vector<double> wr(n), wi(n);
  double dummy = 0.0;
  const int one = 1;
  int info = 0, lwork = -1;
  double query = 0.0;
  dgeev_("N", "N", &n, a.data(), &n, wr.data(), wi.data(), &dummy, &one, &dummy, &one, &query, &lwork, &info, 1, 1);
  if (info != 0) throw SolverError("dgeev workspace query failed, info = " + std::to_string(info));
  lwork = static_cast<int>(query);
  std::vector<double> work(static_cast<std::size_t>(lwork));
  dgeev_("N", "N", &n, a.data(), &n, wr.data(), wi.data(), &dummy, &one, &dummy, &one, work.data(), &lwork, &info,
         1, 1);
  if (info != 0) throw SolverError("dgeev failed to converge, info = " + std::to_string(info));
  std::vector<std::complex<double>> ev(n);
  for (int i = 0; i < n; ++i) ev[i] = {wr[i], wi[i]};
  return ev;
}

/// Factorization of [M c; r^T 0] for a matrix M with a one-dimensional kernel.
/// solve(b) returns x with M x + mu c = b and r^T x = 0; mu is kept for
/// inspection (it vanishes when b lies in the range of M).
class BorderedSolver {
 public:
  BorderedSolver(const Eigen::MatrixXd& m, std::span<const double> column, std::span<const double> row)
      : n_(static_cast<int>(m.rows())) {
    Eigen::MatrixXd big(n_ + 1, n_ + 1);
    big.topLeftCorner(n_, n_) = m;
    for (int i = 0; i < n_; ++i) {
      big(i, n_) = column[i];
      big(n_, i) = row[i];
    }
    big(n_, n_) = 0.0;
    lu_.compute(big);
    const double rc = lu_.rcond();
    if (!(rc > 1e-15)) throw SolverError("bordered system is singular (rcond " + std::to_string(rc) + ")");
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& b, double side = 0.0) {
    Eigen::VectorXd rhs(n_ + 1);
    rhs.head(n_) = b;
    rhs(n_) = side;
    Eigen::VectorXd x = lu_.solve(rhs);
    multiplier_ = x(n_);
    return x.head(n_);
  }

  double multiplier() const { return multiplier_; }

 private:
  int n_;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
  double multiplier_ = 0.0;
};

}  // namespace tamd
