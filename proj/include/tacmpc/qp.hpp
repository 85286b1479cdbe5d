#pragma once

// Dense convex QP solver in the operator-splitting (OSQP) form:
//
//     minimize    0.5 x' P x + q' x
//     subject to  l <= A x <= u
//
// Problems here are small (a few dozen variables), so the normal-equations
// matrix P + sigma I + A' R A is factored densely; A is kept sparse for the
// per-iteration products because MPC constraint rows are mostly zeros.

#include <iosfwd>
#include <optional>
#include <vector>

#include "tacmpc/types.hpp"

namespace tacmpc::qp {

enum class Status { Solved, MaxIter, PrimalInfeasible, DualInfeasible };

const char* to_string(Status status);

struct QpProblem {
    MatX P;
    VecX q;
    MatX A;
    VecX l;
    VecX u;

    /// Validates dimensions, finiteness and l <= u, and symmetrizes P.
    /// Throws Error{DimensionMismatch | NonFinite | InvalidConfig}.
    static QpProblem make(MatX P, VecX q, MatX A, VecX l, VecX u);

    int num_vars() const { return static_cast<int>(q.size()); }
    int num_constraints() const { return static_cast<int>(l.size()); }

    double objective(const VecX& x) const { return 0.5 * x.dot(P * x) + q.dot(x); }

    /// Same checks as make() without modifying P. Bounds may be +-inf.
    void validate() const;
    /// Smallest eigenvalue of P (dense symmetric eigensolver).
    double min_eigenvalue() const;
};

struct SolverSettings {
    double eps_abs = 1e-6;
    double eps_rel = 1e-6;
    double eps_prim_inf = 1e-5;
    double eps_dual_inf = 1e-5;
    double rho = 0.1;
    double sigma = 1e-6;
    double alpha = 1.6;            // over-relaxation
    int max_iter = 4000;
    bool warm_start = true;
    bool adaptive_rho = true;
    int adaptive_rho_interval = 25;
    int scaling_iters = 10;        // Ruiz equilibration passes, 0 disables
    bool polish = true;
    int check_interval = 5;        // termination is also checked at iteration 1

    void validate() const;
};

struct QpSolution {
    VecX x;
    VecX y;
    Status status = Status::MaxIter;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    int iterations = 0;
    bool polished = false;

    bool solved() const { return status == Status::Solved; }
};

struct KktResiduals {
    double primal = 0.0;  // max distance of Ax from [l, u]
    double dual = 0.0;    // ||Px + q + A'y||_inf
    double comp = 0.0;    // complementary slackness on the box rows
};

/// Runs ADMM from zeros, or from `warm` when settings.warm_start is set and
/// the warm point has matching dimensions. Deterministic in its inputs.
/// Throws Error{NonFinite} for NaN/Inf input; infeasibility is reported via
/// status, never thrown.
QpSolution solve(const QpProblem& problem, const SolverSettings& settings,
                 const QpSolution* warm = nullptr);

KktResiduals kkt_residuals(const QpProblem& problem, const QpSolution& sol);

enum class Bound : signed char { Inactive = 0, Lower = -1, Upper = 1 };

/// Classifies each constraint row at the solution. A row is active when
/// Ax is within `tol` of a bound; rows touching both bounds (equalities or
/// near-equal bounds) follow the sign of the multiplier.
std::vector<Bound> active_set(const QpProblem& problem, const QpSolution& sol, double tol);

// Plain-text dump for failing-case triage: header `QP n m`, then P (n rows),
// q, A (m rows), l, u, each block separated by a blank line.
void write_dump(std::ostream& os, const QpProblem& problem);
QpProblem read_dump(std::istream& is);

}  // namespace tacmpc::qp
