#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

#include <Eigen/Eigenvalues>

#include "tacmpc/error.hpp"
#include "tacmpc/qp.hpp"

namespace tacmpc::qp {

namespace {

bool all_finite(const MatX& m) { return m.allFinite(); }

bool no_nan(const VecX& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (std::isnan(v[i])) return false;
    }
    return true;
}

}  // namespace

const char* to_string(Status status) {
    switch (status) {
        case Status::Solved: return "Solved";
        case Status::MaxIter: return "MaxIter";
        case Status::PrimalInfeasible: return "PrimalInfeasible";
        case Status::DualInfeasible: return "DualInfeasible";
    }
    return "Unknown";
}

void QpProblem::validate() const {
    const auto n = q.size();
    const auto m = l.size();
    if (P.rows() != n || P.cols() != n || A.cols() != n || A.rows() != m || u.size() != m) {
        throw Error(ErrorCode::DimensionMismatch, "QP blocks have inconsistent shapes");
    }
    if (!all_finite(P) || !q.allFinite() || !all_finite(A)) {
        throw Error(ErrorCode::NonFinite, "QP cost or constraint matrix contains NaN/Inf");
    }
    // Bounds may be infinite but never NaN, and l = +inf / u = -inf is meaningless.
    if (!no_nan(l) || !no_nan(u)) throw Error(ErrorCode::NonFinite, "QP bounds contain NaN");
    for (Eigen::Index i = 0; i < m; ++i) {
        if (l[i] == std::numeric_limits<double>::infinity() ||
            u[i] == -std::numeric_limits<double>::infinity()) {
            throw Error(ErrorCode::NonFinite, "QP bound row " + std::to_string(i) + " is unbounded the wrong way");
        }
        if (l[i] > u[i]) {
            throw Error(ErrorCode::InvalidConfig, "QP bound row " + std::to_string(i) + " has l > u");
        }
    }
}

QpProblem QpProblem::make(MatX P, VecX q, MatX A, VecX l, VecX u) {
    QpProblem p{std::move(P), std::move(q), std::move(A), std::move(l), std::move(u)};
    p.validate();
    p.P = 0.5 * (p.P + p.P.transpose()).eval();
    return p;
}

double QpProblem::min_eigenvalue() const {
    if (P.rows() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<MatX> es(P, Eigen::EigenvaluesOnly);
    return es.eigenvalues()[0];
}

void SolverSettings::validate() const {
    if (!(eps_abs > 0) || !(eps_rel >= 0) || !(rho > 0) || !(sigma > 0) || !(alpha > 0 && alpha < 2) ||
        max_iter < 1 || check_interval < 1 || adaptive_rho_interval < 1 || scaling_iters < 0 ||
        !(eps_prim_inf > 0) || !(eps_dual_inf > 0)) {
        throw Error(ErrorCode::InvalidConfig, "solver settings out of range");
    }
}

KktResiduals kkt_residuals(const QpProblem& problem, const QpSolution& sol) {
    const auto n = problem.num_vars();
    const auto m = problem.num_constraints();
    if (sol.x.size() != n || sol.y.size() != m) {
        throw Error(ErrorCode::DimensionMismatch, "solution does not match problem dimensions");
    }
    const VecX ax = problem.A * sol.x;
    KktResiduals r;
    r.dual = n == 0 ? 0.0 : (problem.P * sol.x + problem.q + problem.A.transpose() * sol.y).lpNorm<Eigen::Infinity>();
    for (int i = 0; i < m; ++i) {
        const double lo = problem.l[i];
        const double hi = problem.u[i];
        const double v = ax[i];
        r.primal = std::max(r.primal, std::max(lo - v, v - hi));
        const double yp = std::max(sol.y[i], 0.0);
        const double ym = std::max(-sol.y[i], 0.0);
        const double up_gap = std::isfinite(hi) ? std::abs(hi - v) : 1.0;
        const double lo_gap = std::isfinite(lo) ? std::abs(v - lo) : 1.0;
        r.comp = std::max(r.comp, yp * up_gap + ym * lo_gap);
    }
    r.primal = std::max(r.primal, 0.0);
    return r;
}

std::vector<Bound> active_set(const QpProblem& problem, const QpSolution& sol, double tol) {
    const int m = problem.num_constraints();
    const VecX ax = problem.A * sol.x;
    std::vector<Bound> out(static_cast<std::size_t>(m), Bound::Inactive);
    for (int i = 0; i < m; ++i) {
        const bool at_lo = std::isfinite(problem.l[i]) && std::abs(ax[i] - problem.l[i]) <= tol;
        const bool at_hi = std::isfinite(problem.u[i]) && std::abs(problem.u[i] - ax[i]) <= tol;
        if (at_lo && at_hi) {
            out[i] = sol.y[i] >= 0.0 ? Bound::Upper : Bound::Lower;
        } else if (at_lo) {
            out[i] = Bound::Lower;
        } else if (at_hi) {
            out[i] = Bound::Upper;
        }
    }
    return out;
}

// ─── Debug dump ─────────────────────────────────────────────────────────────

namespace {

void write_row(std::ostream& os, const auto& row) {
    for (Eigen::Index j = 0; j < row.size(); ++j) {
        if (j) os << ' ';
        os << row[j];
    }
    os << '\n';
}

VecX read_numbers(std::istream& is, Eigen::Index count, const char* what) {
    VecX out(count);
    for (Eigen::Index i = 0; i < count; ++i) {
        std::string tok;
        if (!(is >> tok)) throw Error(ErrorCode::Parse, std::string("truncated QP dump in block ") + what);
        char* end = nullptr;
        out[i] = std::strtod(tok.c_str(), &end);
        if (end == tok.c_str() || *end != '\0') {
            throw Error(ErrorCode::Parse, "bad number '" + tok + "' in block " + what);
        }
    }
    return out;
}

}  // namespace

void write_dump(std::ostream& os, const QpProblem& problem) {
    const auto n = problem.num_vars();
    const auto m = problem.num_constraints();
    const auto old_precision = os.precision(17);
    os << "QP " << n << ' ' << m << "\n\n";
    for (Eigen::Index i = 0; i < n; ++i) write_row(os, problem.P.row(i));
    os << '\n';
    write_row(os, problem.q);
    os << '\n';
    for (Eigen::Index i = 0; i < m; ++i) write_row(os, problem.A.row(i));
    os << '\n';
    write_row(os, problem.l);
    os << '\n';
    write_row(os, problem.u);
    os.precision(old_precision);
}

QpProblem read_dump(std::istream& is) {
    std::string tag;
    long n = -1;
    long m = -1;
    if (!(is >> tag >> n >> m) || tag != "QP" || n < 0 || m < 0) {
        throw Error(ErrorCode::Parse, "QP dump must start with 'QP n m'");
    }
    const VecX p = read_numbers(is, n * n, "P");
    VecX q = read_numbers(is, n, "q");
    const VecX a = read_numbers(is, m * n, "A");
    VecX l = read_numbers(is, m, "l");
    VecX u = read_numbers(is, m, "u");
    MatX P = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(p.data(), n, n);
    MatX A = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(a.data(), m, n);
    return QpProblem::make(std::move(P), std::move(q), std::move(A), std::move(l), std::move(u));
}

}  // namespace tacmpc::qp
