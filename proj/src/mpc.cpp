#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "tacmpc/error.hpp"
#include "tacmpc/mpc.hpp"

namespace tacmpc {

namespace {

MatX lower(const MatX& m) { return m.triangularView<Eigen::Lower>(); }

// Columns map each agent's accumulated velocity to the stacked embedding.
MatX coupling_matrix(const MpcParams& p) {
    const int M = p.embed_dim();
    MatX B(2 * M, 2);
    B.col(0) << p.A_f, p.C_f;
    B.col(1) << p.C_f, p.A_f;
    return B;
}

std::string solver_failure(const char* what, const qp::QpSolution& sol) {
    return std::string(what) + " QP ended with status " + qp::to_string(sol.status) + " after " +
           std::to_string(sol.iterations) + " iterations (primal residual " + std::to_string(sol.primal_residual) +
           ", dual residual " + std::to_string(sol.dual_residual) + ")";
}

}  // namespace

QfAssembly assemble_qf_detailed(const MpcParams& params, const MpcConfig& cfg) {
    const int M = cfg.embed_dim;
    params.validate(M);
    const MatX L1 = lower(params.Q1);
    const MatX L2 = lower(params.Q2);
    MatX Q(2 * M, 2 * M);
    Q.topLeftCorner(M, M) = L1 * L1.transpose();
    Q.bottomRightCorner(M, M) = L2 * L2.transpose();
    Q.topRightCorner(M, M) = params.alpha * params.Qc;
    Q.bottomLeftCorner(M, M) = params.alpha * params.Qc.transpose();
    Q = 0.5 * (Q + Q.transpose()).eval();

    Eigen::SelfAdjointEigenSolver<MatX> es(Q);
    if (es.info() != Eigen::Success) throw Error(ErrorCode::NonFinite, "tactile penalty eigen-decomposition failed");
    QfAssembly out;
    out.min_eig_raw = es.eigenvalues()[0];
    out.min_eigvec = es.eigenvectors().col(0);
    out.shift = std::max(0.0, cfg.eps - out.min_eig_raw);
    Q.diagonal().array() += out.shift;
    // Rounding in the decomposition can leave the floor a hair short.
    const double after = Eigen::SelfAdjointEigenSolver<MatX>(Q, Eigen::EigenvaluesOnly).eigenvalues()[0];
    if (after < cfg.eps) {
        Q.diagonal().array() += cfg.eps - after;
        out.shift += cfg.eps - after;
    }
    out.Qf = std::move(Q);
    return out;
}

MatX assemble_qf(const MpcParams& params, const MpcConfig& cfg) { return assemble_qf_detailed(params, cfg).Qf; }

std::pair<MatX, MatX> decoupled_blocks(const MpcParams& params, const MpcConfig& cfg) {
    const MatX Q = assemble_qf(params.decoupled(), cfg);
    const int M = cfg.embed_dim;
    return {Q.topLeftCorner(M, M), Q.bottomRightCorner(M, M)};
}

MpcLayer::MpcLayer(MpcConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const int N = cfg_.horizon;
    maps_ = HorizonMaps::build(N, cfg_.dt);
    pos_ = maps_.pos.bottomRows(N);
    vel_ = maps_.vel.bottomRows(N);
    w_ = VecX::Ones(N + 1);
    w_[0] = 0.0;
    w_[N] = cfg_.p_q;

    V_tac_ = MatX::Zero(N, N);
    V_vel_ = MatX::Zero(N, N);
    u_tac1_ = VecX::Zero(N);
    u_tac2_ = VecX::Zero(N);
    u_vel_ = VecX::Zero(N);
    for (int k = 1; k <= N; ++k) {
        const VecX vs = maps_.vsum.row(k).transpose();
        const VecX ve = maps_.vel.row(k).transpose();
        V_tac_ += w_[k] * vs * vs.transpose();
        V_vel_ += w_[k] * ve * ve.transpose();
        u_tac1_ += w_[k] * vs;
        u_tac2_ += w_[k] * k * vs;
        u_vel_ += w_[k] * ve;
    }
}

PreparedParams MpcLayer::prepare(const MpcParams& params) const {
    PreparedParams pp;
    pp.qf = assemble_qf_detailed(params, cfg_);
    pp.params = params;
    pp.B = coupling_matrix(params);
    return pp;
}

void MpcLayer::check_inputs(const MpcInputs& in) const {
    const int M = cfg_.embed_dim;
    if (in.f1.size() != M || in.f2.size() != M) {
        throw Error(ErrorCode::DimensionMismatch, "input embeddings must have length " + std::to_string(M));
    }
    if (!in.f1.allFinite() || !in.f2.allFinite() || !std::isfinite(in.s1.p) || !std::isfinite(in.s1.v) ||
        !std::isfinite(in.s2.p) || !std::isfinite(in.s2.v)) {
        throw Error(ErrorCode::NonFinite, "MPC inputs contain NaN/Inf");
    }
}

// Rows: positions (agent blocks), velocities (agent blocks), accelerations.
void MpcLayer::add_box_constraints(qp::QpProblem& prob, std::span<const GripperState> states) const {
    const int N = cfg_.horizon;
    const int na = static_cast<int>(states.size());
    const int n = na * N;
    prob.A = MatX::Zero(3 * n, n);
    prob.l.resize(3 * n);
    prob.u.resize(3 * n);
    for (int i = 0; i < na; ++i) {
        const GripperState& s = states[i];
        prob.A.block(i * N, i * N, N, N) = pos_;
        prob.A.block(n + i * N, i * N, N, N) = vel_;
        for (int k = 1; k <= N; ++k) {
            const double p_free = s.p + k * cfg_.dt * s.v;
            prob.l[i * N + k - 1] = cfg_.p_min - p_free;
            prob.u[i * N + k - 1] = cfg_.p_max - p_free;
            prob.l[n + i * N + k - 1] = cfg_.v_min - s.v;
            prob.u[n + i * N + k - 1] = cfg_.v_max - s.v;
        }
    }
    prob.A.bottomRows(n).setIdentity();
    prob.l.tail(n).setConstant(cfg_.a_min);
    prob.u.tail(n).setConstant(cfg_.a_max);
}

qp::QpProblem MpcLayer::build_qp(const MpcParams& params, const MpcInputs& in) const {
    return build_qp(prepare(params), in);
}

qp::QpProblem MpcLayer::build_qp(const PreparedParams& pp, const MpcInputs& in) const {
    check_inputs(in);
    const int N = cfg_.horizon;
    const MatX& Q = pp.qf.Qf;
    const MatX& B = pp.B;
    VecX F0(2 * cfg_.embed_dim);
    F0 << in.f1, in.f2;
    // The embedding cost only sees x through B s_k, so it reduces to 2x2 data.
    const Eigen::Matrix2d G = B.transpose() * Q * B;
    const Eigen::Vector2d h0 = B.transpose() * (Q * F0);
    const Eigen::Vector2d v0(in.s1.v, in.s2.v);
    const Eigen::Vector2d Gv = G * v0;

    qp::QpProblem prob;
    prob.P.resize(2 * N, 2 * N);
    prob.q.resize(2 * N);
    for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) prob.P.block(a * N, b * N, N, N) = 2.0 * G(a, b) * V_tac_;
        prob.P.block(a * N, a * N, N, N) += 2.0 * cfg_.q_v * V_vel_;
        prob.q.segment(a * N, N) = 2.0 * (h0[a] * u_tac1_ + Gv[a] * u_tac2_ + cfg_.q_v * v0[a] * u_vel_);
    }
    prob.P.diagonal().array() += 2.0 * cfg_.q_a;
    const GripperState st[2] = {in.s1, in.s2};
    add_box_constraints(prob, st);
    return prob;
}

qp::QpProblem MpcLayer::build_qp_reference(const MpcParams& params, const MpcInputs& in) const {
    params.validate(cfg_.embed_dim);
    check_inputs(in);
    const int N = cfg_.horizon;
    const int M = cfg_.embed_dim;
    const MatX Q = assemble_qf(params, cfg_);
    const LiftedSystem L = build_lifted(params, cfg_, in.s1, in.s2, in.f1, in.f2);

    MatX P = MatX::Zero(2 * N, 2 * N);
    VecX q = VecX::Zero(2 * N);
    for (int k = 1; k <= N; ++k) {
        const auto Sk = L.Sf.middleRows(2 * M * k, 2 * M);
        const auto ok = L.f_offset.segment(2 * M * k, 2 * M);
        P += w_[k] * Sk.transpose() * Q * Sk;
        q += w_[k] * Sk.transpose() * (Q * ok);
    }
    VecX wv(2 * N);
    wv << w_.tail(N), w_.tail(N);
    P += cfg_.q_v * L.Sv.transpose() * wv.asDiagonal() * L.Sv;
    q += cfg_.q_v * L.Sv.transpose() * wv.asDiagonal() * L.v_offset;
    P.diagonal().array() += cfg_.q_a;

    MatX A(6 * N, 2 * N);
    A << L.Sp, L.Sv, MatX::Identity(2 * N, 2 * N);
    VecX l(6 * N), u(6 * N);
    l << VecX::Constant(2 * N, cfg_.p_min) - L.p_offset, VecX::Constant(2 * N, cfg_.v_min) - L.v_offset,
        VecX::Constant(2 * N, cfg_.a_min);
    u << VecX::Constant(2 * N, cfg_.p_max) - L.p_offset, VecX::Constant(2 * N, cfg_.v_max) - L.v_offset,
        VecX::Constant(2 * N, cfg_.a_max);
    return qp::QpProblem::make(2.0 * P, 2.0 * q, std::move(A), std::move(l), std::move(u));
}

MpcOutput MpcLayer::forward(const MpcParams& params, const MpcInputs& in, const qp::QpSolution* warm) const {
    return forward(prepare(params), in, warm);
}

MpcOutput MpcLayer::forward(const PreparedParams& pp, const MpcInputs& in, const qp::QpSolution* warm) const {
    const int N = cfg_.horizon;
    const qp::QpProblem prob = build_qp(pp, in);
    MpcOutput out;
    out.qp = qp::solve(prob, cfg_.solver, warm);
    if (!out.qp.solved()) throw Error(ErrorCode::SolverFailed, solver_failure("MPC", out.qp));
    const VecX& x = out.qp.x;
    out.a_star = Eigen::Vector2d(x[0], x[N]);
    out.predicted_openings.resize(2, N);
    const GripperState st[2] = {in.s1, in.s2};
    for (int i = 0; i < 2; ++i) {
        const VecX p = pos_ * x.segment(i * N, N);
        for (int k = 1; k <= N; ++k) out.predicted_openings(i, k - 1) = st[i].p + k * cfg_.dt * st[i].v + p[k - 1];
    }
    out.cost = prob.objective(x);
    const auto act = qp::active_set(prob, out.qp, 10.0 * cfg_.solver.eps_abs);
    out.active_constraints =
        static_cast<int>(std::count_if(act.begin(), act.end(), [](qp::Bound b) { return b != qp::Bound::Inactive; }));
    return out;
}

BackwardResult MpcLayer::backward(const MpcParams& params, const MpcInputs& in, const MpcOutput& out,
                                  const MatX& grad_openings, const Eigen::Vector2d& grad_a_star) const {
    return backward(prepare(params), in, out, grad_openings, grad_a_star);
}

BackwardResult MpcLayer::backward(const PreparedParams& pp, const MpcInputs& in, const MpcOutput& out,
                                  const MatX& grad_openings, const Eigen::Vector2d& grad_a_star) const {
    const MpcParams& params = pp.params;
    const int N = cfg_.horizon;
    const int M = cfg_.embed_dim;
    const int n = 2 * N;
    if (grad_openings.rows() != 2 || grad_openings.cols() != N || out.qp.x.size() != n) {
        throw Error(ErrorCode::DimensionMismatch, "backward expects a 2 x N opening gradient and a matching forward");
    }
    const qp::QpProblem prob = build_qp(pp, in);
    const VecX& x = out.qp.x;
    const VecX& y = out.qp.y;

    VecX gx(n);
    for (int i = 0; i < 2; ++i) gx.segment(i * N, N) = pos_.transpose() * grad_openings.row(i).transpose();
    gx[0] += grad_a_star[0];
    gx[N] += grad_a_star[1];

    // Active rows (ties within the tolerance count as active).
    BackwardResult res;
    const auto act = qp::active_set(prob, out.qp, 10.0 * cfg_.solver.eps_abs);
    const VecX z = prob.A * x;
    const double y_scale = std::max(1.0, y.lpNorm<Eigen::Infinity>());
    std::vector<int> rows;
    for (int r = 0; r < static_cast<int>(act.size()); ++r) {
        if (act[r] != qp::Bound::Inactive) {
            rows.push_back(r);
            if (std::abs(y[r]) <= 1e-6 * y_scale) res.degenerate = true;
        } else {
            const double margin = std::min(z[r] - prob.l[r], prob.u[r] - z[r]);
            if (margin <= 1e-4) res.degenerate = true;
        }
    }
    res.active_count = static_cast<int>(rows.size());

    // Adjoint on the null space of the active rows: dependent rows are harmless.
    VecX dx = VecX::Zero(n);
    MatX Z;
    if (rows.empty()) {
        Z = MatX::Identity(n, n);
    } else {
        MatX AaT(n, rows.size());
        for (std::size_t j = 0; j < rows.size(); ++j) AaT.col(j) = prob.A.row(rows[j]).transpose();
        Eigen::ColPivHouseholderQR<MatX> qr(AaT);
        qr.setThreshold(1e-10);
        const int rank = static_cast<int>(qr.rank());
        const MatX Qfull = qr.householderQ();
        Z = Qfull.rightCols(n - rank);
    }
    if (Z.cols() > 0) {
        const MatX H = Z.transpose() * prob.P * Z;
        dx = Z * H.llt().solve(Z.transpose() * gx);
    }

    // d loss / d theta = -d/dtheta [dx' grad_x J(x*, theta)].
    const QfAssembly& qa = pp.qf;
    const MatX& Q = qa.Qf;
    const MatX& B = pp.B;
    VecX F0(2 * M);
    F0 << in.f1, in.f2;
    const double v0[2] = {in.s1.v, in.s2.v};

    // f_k = F0 + B s_k is affine in the 2-vector s_k, so every sum over the
    // horizon collapses to 2-vector and 2x2 moments.
    const VecX QF0 = Q * F0;
    const MatX QB = Q * B;
    Eigen::Vector2d c = Eigen::Vector2d::Zero();
    Eigen::Matrix2d D = Eigen::Matrix2d::Zero();
    VecX gA = VecX::Zero(M);
    VecX gC = VecX::Zero(M);
    for (int k = 1; k <= N; ++k) {
        const auto vs = maps_.vsum.row(k);
        const Eigen::Vector2d s(k * v0[0] + vs.dot(x.head(N)), k * v0[1] + vs.dot(x.tail(N)));
        const Eigen::Vector2d ds(vs.dot(dx.head(N)), vs.dot(dx.tail(N)));
        const double w = w_[k];
        c += w * ds;
        D += w * ds * s.transpose();
        const VecX u = QF0 + QB * s;
        const VecX r = QB * ds;
        const auto u1 = u.head(M), u2 = u.tail(M), r1 = r.head(M), r2 = r.tail(M);
        gA += 2.0 * w * (ds[0] * u1 + ds[1] * u2 + s[0] * r1 + s[1] * r2);
        gC += 2.0 * w * (ds[1] * u1 + ds[0] * u2 + s[1] * r1 + s[0] * r2);
    }
    // sum_k w (df f' + f df') with df = B ds_k.
    const VecX Bc = B * c;
    MatX GQ = Bc * F0.transpose();
    GQ.noalias() += B * (D * B.transpose());
    GQ += MatX(GQ.transpose());
    const VecX gF = 2.0 * QB * c;
    if (qa.shift > 0.0) GQ -= GQ.trace() * qa.min_eigvec * qa.min_eigvec.transpose();

    const auto G11 = GQ.topLeftCorner(M, M);
    const auto G22 = GQ.bottomRightCorner(M, M);
    const auto G12 = GQ.topRightCorner(M, M);
    const auto G21 = GQ.bottomLeftCorner(M, M);
    MpcParamGrads& g = res.grads;
    g.A_f = -gA;
    g.C_f = -gC;
    g.Q1 = -lower((G11 + G11.transpose()) * lower(params.Q1));
    g.Q2 = -lower((G22 + G22.transpose()) * lower(params.Q2));
    g.Qc = -params.alpha * (G12 + G21.transpose());
    g.alpha = -((G12.array() * params.Qc.array()).sum() + (G21.array() * params.Qc.transpose().array()).sum());
    g.f1 = -gF.head(M);
    g.f2 = -gF.tail(M);
    return res;
}

qp::QpProblem MpcLayer::build_single_qp(const VecX& A_f, const MatX& q_block, const GripperState& s,
                                        const VecX& f) const {
    const int M = cfg_.embed_dim;
    if (A_f.size() != M || f.size() != M || q_block.rows() != M || q_block.cols() != M) {
        throw Error(ErrorCode::DimensionMismatch, "single-agent inputs must have embedding dimension " +
                                                      std::to_string(M));
    }
    if (!A_f.allFinite() || !f.allFinite() || !q_block.allFinite() || !std::isfinite(s.p) || !std::isfinite(s.v)) {
        throw Error(ErrorCode::NonFinite, "single-agent inputs contain NaN/Inf");
    }
    const double g = A_f.dot(q_block * A_f);
    const double h0 = A_f.dot(q_block * f);
    qp::QpProblem prob;
    prob.P = 2.0 * g * V_tac_ + 2.0 * cfg_.q_v * V_vel_;
    prob.P.diagonal().array() += 2.0 * cfg_.q_a;
    prob.q = 2.0 * (h0 * u_tac1_ + g * s.v * u_tac2_ + cfg_.q_v * s.v * u_vel_);
    add_box_constraints(prob, std::span<const GripperState>(&s, 1));
    return prob;
}

SingleAgentOutput MpcLayer::forward_single(const VecX& A_f, const MatX& q_block, const GripperState& s,
                                           const VecX& f, const qp::QpSolution* warm) const {
    const int N = cfg_.horizon;
    const qp::QpProblem prob = build_single_qp(A_f, q_block, s, f);
    SingleAgentOutput out;
    out.qp = qp::solve(prob, cfg_.solver, warm);
    if (!out.qp.solved()) throw Error(ErrorCode::SolverFailed, solver_failure("single-agent MPC", out.qp));
    out.a_star = out.qp.x[0];
    out.predicted_openings = pos_ * out.qp.x;
    for (int k = 1; k <= N; ++k) out.predicted_openings[k - 1] += s.p + k * cfg_.dt * s.v;
    return out;
}

qp::QpProblem build_qp(const MpcParams& params, const MpcConfig& cfg, const MpcInputs& in) {
    return MpcLayer(cfg).build_qp(params, in);
}

MpcOutput forward(const MpcParams& params, const MpcConfig& cfg, const MpcInputs& in, const qp::QpSolution* warm) {
    return MpcLayer(cfg).forward(params, in, warm);
}

BackwardResult backward(const MpcParams& params, const MpcConfig& cfg, const MpcInputs& in, const MpcOutput& out,
                        const MatX& grad_openings, const Eigen::Vector2d& grad_a_star) {
    return MpcLayer(cfg).backward(params, in, out, grad_openings, grad_a_star);
}

std::vector<BatchItem> forward_batch(const MpcLayer& layer, const MpcParams& params, std::span<const MpcInputs> batch,
                                     Execution exec, std::span<const qp::QpSolution* const> warm) {
    if (!warm.empty() && warm.size() != batch.size()) {
        throw Error(ErrorCode::DimensionMismatch, "warm-start list must match the batch size");
    }
    const PreparedParams pp = layer.prepare(params);
    const auto count = static_cast<std::ptrdiff_t>(batch.size());
    std::vector<BatchItem> out(batch.size());
    auto one = [&](std::ptrdiff_t i) {
        try {
            out[i].out = layer.forward(pp, batch[i], warm.empty() ? nullptr : warm[i]);
        } catch (const Error&) {
            out[i].out.reset();
        }
    };
    if (exec == Execution::Parallel) {
#pragma omp parallel for schedule(dynamic, 4)
        for (std::ptrdiff_t i = 0; i < count; ++i) one(i);
    } else {
        for (std::ptrdiff_t i = 0; i < count; ++i) one(i);
    }
    return out;
}

std::vector<SingleBatchItem> forward_single_batch(const MpcLayer& layer, const MpcParams& params,
                                                  std::span<const MpcInputs> batch, Execution exec) {
    const auto [Q1, Q2] = decoupled_blocks(params, layer.config());
    const auto count = static_cast<std::ptrdiff_t>(batch.size());
    std::vector<SingleBatchItem> out(batch.size());
    auto one = [&](std::ptrdiff_t i) {
        const MpcInputs& in = batch[i];
        try {
            out[i].agent[0] = layer.forward_single(params.A_f, Q1, in.s1, in.f1);
        } catch (const Error&) {
        }
        try {
            out[i].agent[1] = layer.forward_single(params.A_f, Q2, in.s2, in.f2);
        } catch (const Error&) {
        }
    };
    if (exec == Execution::Parallel) {
#pragma omp parallel for schedule(dynamic, 4)
        for (std::ptrdiff_t i = 0; i < count; ++i) one(i);
    } else {
        for (std::ptrdiff_t i = 0; i < count; ++i) one(i);
    }
    return out;
}

}  // namespace tacmpc
