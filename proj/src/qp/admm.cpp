#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/SparseCore>

#include "tacmpc/error.hpp"
#include "tacmpc/qp.hpp"

namespace tacmpc::qp {

namespace {

using SpMat = Eigen::SparseMatrix<double>;

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kRhoMin = 1e-6;
constexpr double kRhoMax = 1e6;
constexpr double kRhoEqScale = 1e3;
constexpr double kRhoEqTol = 1e-4;
constexpr double kScaleMin = 1e-4;
constexpr double kScaleMax = 1e4;
constexpr double kPolishDelta = 1e-10;
constexpr int kPolishRefine = 4;
constexpr int kPolishExtraIters = 250;

double inf_norm(const VecX& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; }

double clamp_scale(double s) {
    if (s < kScaleMin) return 1.0;
    return std::min(s, kScaleMax);
}

// Ruiz equilibration of (P, q, A): Pbar = c D P D, qbar = c D q, Abar = E A D.
struct Scaling {
    VecX D;
    VecX E;
    double c = 1.0;
};

// A is sparse (column-major); only its nonzeros are visited.
Scaling equilibrate(MatX& P, VecX& q, SpMat& A, int iters) {
    const auto n = P.rows();
    const auto m = A.rows();
    Scaling s{VecX::Ones(n), VecX::Ones(m), 1.0};
    const auto inv_sqrt = [](double v) { return 1.0 / std::sqrt(clamp_scale(v)); };
    VecX cn(n), rn(m);
    for (int it = 0; it < iters; ++it) {
        cn = P.cwiseAbs().colwise().maxCoeff().transpose();
        rn.setZero();
        for (Eigen::Index j = 0; j < A.outerSize(); ++j) {
            for (SpMat::InnerIterator e(A, j); e; ++e) {
                const double v = std::abs(e.value());
                cn[j] = std::max(cn[j], v);
                rn[e.row()] = std::max(rn[e.row()], v);
            }
        }
        const VecX dcol = cn.unaryExpr(inv_sqrt);
        const VecX erow = rn.unaryExpr(inv_sqrt);
        P.array().colwise() *= dcol.array();
        P.array().rowwise() *= dcol.transpose().array();
        for (Eigen::Index j = 0; j < A.outerSize(); ++j) {
            for (SpMat::InnerIterator e(A, j); e; ++e) e.valueRef() *= erow[e.row()] * dcol[j];
        }
        q = dcol.cwiseProduct(q);
        s.D = s.D.cwiseProduct(dcol);
        s.E = s.E.cwiseProduct(erow);

        const double mean_col = n ? P.cwiseAbs().colwise().maxCoeff().mean() : 0.0;
        const double gamma = 1.0 / clamp_scale(std::max(mean_col, inf_norm(q)));
        P *= gamma;
        q *= gamma;
        s.c *= gamma;
    }
    return s;
}

VecX rho_vector(const VecX& l, const VecX& u, double rho) {
    VecX r(l.size());
    for (Eigen::Index i = 0; i < l.size(); ++i) {
        if (l[i] == -kInf && u[i] == kInf) {
            r[i] = kRhoMin;
        } else if (u[i] - l[i] < kRhoEqTol) {
            r[i] = kRhoEqScale * rho;
        } else {
            r[i] = rho;
        }
    }
    return r;
}

// OSQP's polish classification: lower-active when z - l < -y, upper-active
// when u - z < y.
std::vector<Bound> guess_active(const VecX& z, const VecX& y, const VecX& l, const VecX& u) {
    std::vector<Bound> act(static_cast<std::size_t>(z.size()), Bound::Inactive);
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        if (z[i] - l[i] < -y[i]) {
            act[i] = Bound::Lower;
        } else if (u[i] - z[i] < y[i]) {
            act[i] = Bound::Upper;
        }
    }
    return act;
}

struct Tolerances {
    double prim;
    double dual;
};

Tolerances tolerances(const SolverSettings& st, const VecX& ax, const VecX& z, const VecX& px,
                      const VecX& aty, const VecX& q) {
    return {st.eps_abs + st.eps_rel * std::max(inf_norm(ax), inf_norm(z)),
            st.eps_abs + st.eps_rel * std::max({inf_norm(px), inf_norm(aty), inf_norm(q)})};
}

// Solves the equality-constrained KKT system for a guessed active set in the
// original (unscaled) data, with regularization and iterative refinement.
// Returns true and fills `out` when the point satisfies primal feasibility,
// dual sign consistency and the dual tolerance.
bool polish(const QpProblem& pb, const SpMat& Asp, const SolverSettings& st, const std::vector<Bound>& act,
            QpSolution& out) {
    const int n = pb.num_vars();
    const int m = pb.num_constraints();
    std::vector<int> rows;
    for (int i = 0; i < m; ++i) {
        if (act[static_cast<std::size_t>(i)] != Bound::Inactive) rows.push_back(i);
    }
    const int na = static_cast<int>(rows.size());
    MatX K = MatX::Zero(n + na, n + na);
    K.topLeftCorner(n, n) = pb.P;
    VecX rhs(n + na);
    rhs.head(n) = -pb.q;
    for (int k = 0; k < na; ++k) {
        const int i = rows[static_cast<std::size_t>(k)];
        K.block(n + k, 0, 1, n) = pb.A.row(i);
        K.block(0, n + k, n, 1) = pb.A.row(i).transpose();
        rhs[n + k] = act[static_cast<std::size_t>(i)] == Bound::Lower ? pb.l[i] : pb.u[i];
    }
    MatX Kreg = K;
    Kreg.diagonal().head(n).array() += kPolishDelta;
    Kreg.diagonal().tail(na).array() -= kPolishDelta;
    Eigen::LDLT<MatX> ldlt(Kreg);
    if (ldlt.info() != Eigen::Success) return false;
    VecX sol = ldlt.solve(rhs);
    for (int r = 0; r < kPolishRefine; ++r) {
        const VecX res = rhs - K * sol;
        sol += ldlt.solve(res);
    }
    if (!sol.allFinite()) return false;

    QpSolution cand;
    cand.x = sol.head(n);
    cand.y = VecX::Zero(m);
    for (int k = 0; k < na; ++k) cand.y[rows[static_cast<std::size_t>(k)]] = sol[n + k];

    const VecX ax = Asp * cand.x;
    const VecX px = pb.P * cand.x;
    const VecX aty = Asp.transpose() * cand.y;
    VecX z = ax;
    for (int i = 0; i < m; ++i) z[i] = std::clamp(ax[i], pb.l[i], pb.u[i]);
    const Tolerances tol = tolerances(st, ax, z, px, aty, pb.q);

    const double prim = inf_norm(ax - z);
    const double dual = inf_norm(px + pb.q + aty);
    // The right active set gives an essentially exact point, so feasibility is
    // held to the absolute tolerance. A wrong guess can otherwise hide inside
    // the relative term when some rows carry large values.
    if (prim > st.eps_abs || dual > tol.dual) return false;
    const double ytol = tol.dual;
    for (int i = 0; i < m; ++i) {
        const Bound b = act[static_cast<std::size_t>(i)];
        if (b == Bound::Lower && cand.y[i] > ytol) return false;
        if (b == Bound::Upper && cand.y[i] < -ytol) return false;
    }
    cand.status = Status::Solved;
    cand.primal_residual = prim;
    cand.dual_residual = dual;
    cand.polished = true;
    out = std::move(cand);
    return true;
}

class AdmmWorkspace {
public:
    AdmmWorkspace(const QpProblem& pb, const SolverSettings& st) : pb_(pb), st_(st) {
        n_ = pb.num_vars();
        m_ = pb.num_constraints();
        Asp_orig_ = pb.A.sparseView();
        Asp_orig_.makeCompressed();
        P_ = pb.P;
        q_ = pb.q;
        A_ = Asp_orig_;
        scale_ = equilibrate(P_, q_, A_, st.scaling_iters);
        At_ = A_.transpose();
        l_ = scale_.E.cwiseProduct(pb.l);
        u_ = scale_.E.cwiseProduct(pb.u);
        // E * (+-inf) stays +-inf since E > 0.
        rho_ = st.rho;
        refactor();
    }

    QpSolution run(const QpSolution* warm) {
        VecX x = VecX::Zero(n_);
        VecX z = VecX::Zero(m_);
        VecX y = VecX::Zero(m_);
        if (warm && st_.warm_start && warm->x.size() == n_ && warm->y.size() == m_ && warm->x.allFinite() &&
            warm->y.allFinite()) {
            x = warm->x.cwiseQuotient(scale_.D);
            y = scale_.c * warm->y.cwiseQuotient(scale_.E);
            z = project(A_ * x);
        }

        QpSolution out;
        // Converged but unpolished point, kept while a few more iterations
        // try to sharpen the active-set guess.
        std::optional<QpSolution> fallback;
        int fallback_deadline = 0;
        std::vector<Bound> last_active;
        bool have_active = false;
        bool polish_failed_for_active = false;

        VecX x_prev(n_), z_prev(m_), y_prev(m_), rhs(n_), xt(n_), zt(m_), zr(m_);
        for (int k = 1; k <= st_.max_iter; ++k) {
            x_prev = x;
            z_prev = z;
            y_prev = y;

            rhs = st_.sigma * x - q_;
            if (m_) rhs.noalias() += At_ * (rho_vec_.cwiseProduct(z) - y);
            xt = llt_.solve(rhs);
            zt = A_ * xt;
            x = st_.alpha * xt + (1.0 - st_.alpha) * x_prev;
            zr = st_.alpha * zt + (1.0 - st_.alpha) * z_prev;
            z = project(zr + y.cwiseQuotient(rho_vec_));
            y += rho_vec_.cwiseProduct(zr - z);

            const bool check = k == 1 || k % st_.check_interval == 0 || k == st_.max_iter;
            if (!check) continue;

            const Unscaled cur = unscale(x, z, y);
            const VecX ax = Asp_orig_ * cur.x;
            const VecX px = pb_.P * cur.x;
            const VecX aty = Asp_orig_.transpose() * cur.y;
            const Tolerances tol = tolerances(st_, ax, cur.z, px, aty, pb_.q);
            out.primal_residual = inf_norm(ax - cur.z);
            out.dual_residual = inf_norm(px + pb_.q + aty);
            out.iterations = k;

            if (out.primal_residual <= tol.prim && out.dual_residual <= tol.dual) {
                out.x = cur.x;
                out.y = cur.y;
                out.status = Status::Solved;
                if (!st_.polish) return out;
                QpSolution polished;
                if (polish(pb_, Asp_orig_, st_, guess_active(cur.z, cur.y, pb_.l, pb_.u), polished)) {
                    polished.iterations = k;
                    return polished;
                }
                if (!fallback) fallback_deadline = k + kPolishExtraIters;
                fallback = out;
                if (k >= fallback_deadline) return *fallback;
                continue;
            }
            if (fallback && k >= fallback_deadline) return *fallback;

            // Early polish once the active-set guess has settled between checks.
            if (st_.polish) {
                auto act = guess_active(cur.z, cur.y, pb_.l, pb_.u);
                const bool stable = have_active && act == last_active;
                if (stable && !polish_failed_for_active) {
                    QpSolution polished;
                    if (polish(pb_, Asp_orig_, st_, act, polished)) {
                        polished.iterations = k;
                        return polished;
                    }
                    polish_failed_for_active = true;
                } else if (!stable) {
                    polish_failed_for_active = false;
                }
                last_active = std::move(act);
                have_active = true;
            }

            if (primal_infeasible(y - y_prev)) {
                out.x = cur.x;
                out.y = cur.y;
                out.status = Status::PrimalInfeasible;
                return out;
            }
            if (dual_infeasible(x - x_prev)) {
                out.x = cur.x;
                out.y = cur.y;
                out.status = Status::DualInfeasible;
                return out;
            }

            if (st_.adaptive_rho && k % st_.adaptive_rho_interval == 0) adapt_rho(x, z, y);
        }

        if (fallback) return *fallback;
        const Unscaled cur = unscale(x, z, y);
        out.x = cur.x;
        out.y = cur.y;
        out.status = Status::MaxIter;
        out.iterations = st_.max_iter;
        if (st_.polish) {
            QpSolution polished;
            if (polish(pb_, Asp_orig_, st_, guess_active(cur.z, cur.y, pb_.l, pb_.u), polished)) {
                polished.iterations = st_.max_iter;
                return polished;
            }
        }
        return out;
    }

private:
    struct Unscaled {
        VecX x;
        VecX z;
        VecX y;
    };

    Unscaled unscale(const VecX& x, const VecX& z, const VecX& y) const {
        return {scale_.D.cwiseProduct(x), z.cwiseQuotient(scale_.E), scale_.E.cwiseProduct(y) / scale_.c};
    }

    VecX project(const VecX& v) const {
        VecX out(v.size());
        for (Eigen::Index i = 0; i < v.size(); ++i) out[i] = std::clamp(v[i], l_[i], u_[i]);
        return out;
    }

    void refactor() {
        rho_vec_ = rho_vector(l_, u_, rho_);
        MatX K = P_;
        K.diagonal().array() += st_.sigma;
        if (m_) K += MatX(At_ * rho_vec_.asDiagonal() * A_);
        llt_.compute(K);
        if (llt_.info() != Eigen::Success) {
            throw Error(ErrorCode::SolverFailed, "normal-equations matrix is not positive definite (P not PSD?)");
        }
    }

    void adapt_rho(const VecX& x, const VecX& z, const VecX& y) {
        const VecX ax = A_ * x;
        const VecX px = P_ * x;
        const VecX aty = At_ * y;
        const double prim_den = std::max(inf_norm(ax), inf_norm(z));
        const double dual_den = std::max({inf_norm(px), inf_norm(aty), inf_norm(q_)});
        const double prim = inf_norm(ax - z) / (prim_den + 1e-30);
        const double dual = inf_norm(px + q_ + aty) / (dual_den + 1e-30);
        const double ratio = std::sqrt(prim / (dual + 1e-30));
        const double rho_new = std::clamp(rho_ * ratio, kRhoMin, kRhoMax);
        if (rho_new > 5.0 * rho_ || rho_new < 0.2 * rho_) {
            rho_ = rho_new;
            refactor();
        }
    }

    bool primal_infeasible(const VecX& dy_scaled) const {
        if (m_ == 0) return false;
        const VecX dy = scale_.E.cwiseProduct(dy_scaled) / scale_.c;
        const double norm = inf_norm(dy);
        if (norm < 1e-12) return false;
        const double eps = st_.eps_prim_inf * norm;
        if (inf_norm(pb_.A.transpose() * dy) > eps) return false;
        double support = 0.0;
        for (int i = 0; i < m_; ++i) {
            if (dy[i] > 0) {
                if (pb_.u[i] == kInf) return false;
                support += pb_.u[i] * dy[i];
            } else if (dy[i] < 0) {
                if (pb_.l[i] == -kInf) return false;
                support += pb_.l[i] * dy[i];
            }
        }
        return support < -eps;
    }

    bool dual_infeasible(const VecX& dx_scaled) const {
        const VecX dx = scale_.D.cwiseProduct(dx_scaled);
        const double norm = inf_norm(dx);
        if (norm < 1e-12) return false;
        const double eps = st_.eps_dual_inf * norm;
        if (inf_norm(pb_.P * dx) > eps) return false;
        if (pb_.q.dot(dx) > -eps) return false;
        const VecX adx = pb_.A * dx;
        for (int i = 0; i < m_; ++i) {
            const bool lo = pb_.l[i] > -kInf;
            const bool hi = pb_.u[i] < kInf;
            if (lo && hi && std::abs(adx[i]) > eps) return false;
            if (lo && !hi && adx[i] < -eps) return false;
            if (!lo && hi && adx[i] > eps) return false;
        }
        return true;
    }

    const QpProblem& pb_;
    const SolverSettings& st_;
    int n_ = 0;
    int m_ = 0;
    Scaling scale_;
    MatX P_;
    VecX q_;
    SpMat A_;
    SpMat At_;
    SpMat Asp_orig_;
    VecX l_;
    VecX u_;
    double rho_ = 0.1;
    VecX rho_vec_;
    Eigen::LLT<MatX> llt_;
};

}  // namespace

QpSolution solve(const QpProblem& problem, const SolverSettings& settings, const QpSolution* warm) {
    settings.validate();
    problem.validate();
    if (problem.num_vars() == 0) {
        QpSolution s;
        s.x = VecX::Zero(0);
        s.y = VecX::Zero(problem.num_constraints());
        s.status = Status::Solved;
        return s;
    }
    AdmmWorkspace ws(problem, settings);
    return ws.run(warm);
}

}  // namespace tacmpc::qp
