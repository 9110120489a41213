#pragma once

#include <string>

#include <Eigen/Sparse>

namespace ectwin {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

enum class Preconditioner { jacobi, incomplete_cholesky };

struct CgSettings {
  double tolerance = 1e-8;  ///< relative residual ||b - Ax|| / ||b||
  int max_iterations = 1000;
  Preconditioner preconditioner = Preconditioner::jacobi;
};

struct SolveStats {
  int iterations = 0;
  double relative_residual = 0.0;
};

/// Preconditioned conjugate gradient on a symmetric positive (semi-)definite matrix.
/// `x` carries the initial guess in and the solution out. Throws SolverError carrying
/// the achieved residual when the tolerance is not met within the iteration cap.
SolveStats solve_spd(const SparseMatrix& a, const Eigen::VectorXd& b, Eigen::VectorXd& x, const CgSettings& settings,
                     const std::string& context);

}  // namespace ectwin
