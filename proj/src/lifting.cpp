#include <string>

#include "tacmpc/error.hpp"
#include "tacmpc/lifting.hpp"

namespace tacmpc {

DoubleIntegrator make_double_integrator(double dt) {
    if (!(dt > 0)) throw Error(ErrorCode::NonPositiveDt, "dt must be positive, got " + std::to_string(dt));
    DoubleIntegrator d;
    d.dt = dt;
    d.A_g << 1.0, dt, 0.0, 1.0;
    d.B_g << 0.5 * dt * dt, dt;
    return d;
}

GripperState step(const DoubleIntegrator& dyn, const GripperState& s, double a) {
    const double dt = dyn.dt;
    return {s.p + dt * s.v + 0.5 * dt * dt * a, s.v + dt * a};
}

VecX step_embedding(const MpcParams& params, const VecX& f_own, double v_own, double v_other) {
    if (f_own.size() != params.A_f.size() || params.C_f.size() != params.A_f.size()) {
        throw Error(ErrorCode::DimensionMismatch, "embedding length does not match A_f / C_f");
    }
    return f_own + params.A_f * v_own + params.C_f * v_other;
}

VecX ActionSequence::stacked() const {
    const auto n = a.cols();
    VecX x(2 * n);
    x.head(n) = a.row(0).transpose();
    x.tail(n) = a.row(1).transpose();
    return x;
}

ActionSequence ActionSequence::from_stacked(const VecX& x) {
    if (x.size() % 2 != 0) throw Error(ErrorCode::DimensionMismatch, "stacked action vector has odd length");
    const auto n = x.size() / 2;
    ActionSequence s;
    s.a.resize(2, n);
    s.a.row(0) = x.head(n).transpose();
    s.a.row(1) = x.tail(n).transpose();
    return s;
}

HorizonMaps HorizonMaps::build(int N, double dt) {
    HorizonMaps h;
    h.N = N;
    h.dt = dt;
    h.vel = MatX::Zero(N + 1, N);
    h.vsum = MatX::Zero(N + 1, N);
    h.pos = MatX::Zero(N + 1, N);
    for (int k = 1; k <= N; ++k) {
        for (int j = 0; j < k; ++j) {
            h.vel(k, j) = dt;
            h.vsum(k, j) = dt * (k - 1 - j);
            h.pos(k, j) = dt * dt * (k - j - 0.5);
        }
    }
    return h;
}

Trajectories LiftedSystem::evaluate(const VecX& x) const {
    if (x.size() != 2 * N) throw Error(ErrorCode::DimensionMismatch, "action vector length must be 2N");
    Trajectories t;
    const VecX p = Sp * x + p_offset;
    const VecX v = Sv * x + v_offset;
    const VecX f = Sf * x + f_offset;
    t.p.resize(2, N);
    t.v.resize(2, N);
    t.p.row(0) = p.head(N).transpose();
    t.p.row(1) = p.tail(N).transpose();
    t.v.row(0) = v.head(N).transpose();
    t.v.row(1) = v.tail(N).transpose();
    t.f = Eigen::Map<const MatX>(f.data(), 2 * M, N + 1);
    return t;
}

LiftedSystem build_lifted(const MpcParams& params, const MpcConfig& cfg, const GripperState& s1,
                          const GripperState& s2, const VecX& f1, const VecX& f2) {
    const int N = cfg.horizon;
    const int M = cfg.embed_dim;
    if (N < 1) throw Error(ErrorCode::InvalidConfig, "horizon must be >= 1");
    params.validate(M);
    if (f1.size() != M || f2.size() != M) {
        throw Error(ErrorCode::DimensionMismatch, "input embeddings must have length M");
    }
    const HorizonMaps h = HorizonMaps::build(N, cfg.dt);
    const GripperState s[2] = {s1, s2};

    LiftedSystem L;
    L.N = N;
    L.M = M;
    L.Sv = MatX::Zero(2 * N, 2 * N);
    L.Sp = MatX::Zero(2 * N, 2 * N);
    L.v_offset.resize(2 * N);
    L.p_offset.resize(2 * N);
    for (int i = 0; i < 2; ++i) {
        L.Sv.block(i * N, i * N, N, N) = h.vel.bottomRows(N);
        L.Sp.block(i * N, i * N, N, N) = h.pos.bottomRows(N);
        for (int k = 1; k <= N; ++k) {
            L.v_offset[i * N + k - 1] = s[i].v;
            L.p_offset[i * N + k - 1] = s[i].p + k * cfg.dt * s[i].v;
        }
    }

    // f^(i)_k = f_i + A_f s^(i)_k + C_f s^(-i)_k, with s^(i)_k = sum_{j<k} v^(i)_j.
    L.Sf = MatX::Zero(2 * M * (N + 1), 2 * N);
    L.f_offset.resize(2 * M * (N + 1));
    for (int k = 0; k <= N; ++k) {
        const int r = 2 * M * k;
        const double c1 = k * s1.v;
        const double c2 = k * s2.v;
        L.f_offset.segment(r, M) = f1 + params.A_f * c1 + params.C_f * c2;
        L.f_offset.segment(r + M, M) = f2 + params.A_f * c2 + params.C_f * c1;
        const auto row = h.vsum.row(k);
        L.Sf.block(r, 0, M, N) = params.A_f * row;
        L.Sf.block(r, N, M, N) = params.C_f * row;
        L.Sf.block(r + M, 0, M, N) = params.C_f * row;
        L.Sf.block(r + M, N, M, N) = params.A_f * row;
    }
    return L;
}

}  // namespace tacmpc
