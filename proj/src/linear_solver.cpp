#include "ectwin/linear_solver.hpp"

#include <sstream>

#include <Eigen/IterativeLinearSolvers>

#include "ectwin/error.hpp"

namespace ectwin {

namespace {

template <typename Solver>
SolveStats run(Solver& cg, const SparseMatrix& a, const Eigen::VectorXd& b, Eigen::VectorXd& x,
               const CgSettings& settings, const std::string& context) {
  cg.setTolerance(settings.tolerance);
  cg.setMaxIterations(settings.max_iterations);
  cg.compute(a);
  if (cg.info() != Eigen::Success) throw SolverError(context + ": preconditioner setup failed", 0.0);
  Eigen::VectorXd guess = x;
  x = cg.solveWithGuess(b, guess);
  SolveStats stats{static_cast<int>(cg.iterations()), cg.error()};
  if (cg.info() != Eigen::Success || !(stats.relative_residual <= settings.tolerance)) {
    std::ostringstream msg;
    msg << context << ": conjugate gradient did not converge in " << stats.iterations
        << " iterations (relative residual " << stats.relative_residual << ", tolerance " << settings.tolerance << ")";
    throw SolverError(msg.str(), stats.relative_residual);
  }
  return stats;
}

}  // namespace

SolveStats solve_spd(const SparseMatrix& a, const Eigen::VectorXd& b, Eigen::VectorXd& x, const CgSettings& settings,
                     const std::string& context) {
  if (x.size() != b.size()) x = Eigen::VectorXd::Zero(b.size());
  if (settings.preconditioner == Preconditioner::incomplete_cholesky) {
    Eigen::ConjugateGradient<SparseMatrix, Eigen::Lower | Eigen::Upper, Eigen::IncompleteCholesky<double>> cg;
    return run(cg, a, b, x, settings, context);
  }
  Eigen::ConjugateGradient<SparseMatrix, Eigen::Lower | Eigen::Upper, Eigen::DiagonalPreconditioner<double>> cg;
  return run(cg, a, b, x, settings, context);
}

}  // namespace ectwin
