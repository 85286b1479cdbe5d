#pragma once

// Step-by-step rollout of the two-agent gripper and tactile dynamics, written
// with plain loops so it shares no code with the condensed construction.

#include <random>
#include <vector>

#include "tacmpc/mpc.hpp"

namespace oracle {

struct Rollout {
    // Index [agent][k], k = 0..N.
    std::vector<double> p[2], v[2];
    std::vector<std::vector<double>> f[2];
};

inline Rollout rollout(const tacmpc::MpcParams& prm, double dt, const tacmpc::GripperState& s1,
                       const tacmpc::GripperState& s2, const tacmpc::VecX& f1, const tacmpc::VecX& f2,
                       const tacmpc::VecX& x) {
    const int N = static_cast<int>(x.size() / 2);
    const int M = static_cast<int>(f1.size());
    Rollout r;
    const tacmpc::GripperState s[2] = {s1, s2};
    const tacmpc::VecX* f0[2] = {&f1, &f2};
    for (int i = 0; i < 2; ++i) {
        r.p[i].assign(N + 1, 0.0);
        r.v[i].assign(N + 1, 0.0);
        r.f[i].assign(N + 1, std::vector<double>(M, 0.0));
        r.p[i][0] = s[i].p;
        r.v[i][0] = s[i].v;
        for (int m = 0; m < M; ++m) r.f[i][0][m] = (*f0[i])[m];
    }
    for (int k = 0; k < N; ++k) {
        for (int i = 0; i < 2; ++i) {
            const int o = 1 - i;
            const double a = x[i * N + k];
            r.p[i][k + 1] = r.p[i][k] + dt * r.v[i][k] + 0.5 * dt * dt * a;
            r.v[i][k + 1] = r.v[i][k] + dt * a;
            for (int m = 0; m < M; ++m) {
                r.f[i][k + 1][m] = r.f[i][k][m] + prm.A_f[m] * r.v[i][k] + prm.C_f[m] * r.v[o][k];
            }
        }
    }
    return r;
}

/// Literal horizon cost: stage terms k = 0..N-1 (f and velocity), terminal
/// f and velocity terms at k = N scaled by p_q, acceleration penalty on all
/// N actions. Includes the x-independent k = 0 terms.
inline double horizon_cost(const tacmpc::MpcParams& prm, const tacmpc::MpcConfig& cfg, const tacmpc::MatX& Qf,
                           const tacmpc::GripperState& s1, const tacmpc::GripperState& s2, const tacmpc::VecX& f1,
                           const tacmpc::VecX& f2, const tacmpc::VecX& x) {
    const int N = cfg.horizon;
    const int M = cfg.embed_dim;
    const Rollout r = rollout(prm, cfg.dt, s1, s2, f1, f2, x);
    double total = 0.0;
    for (int k = 0; k <= N; ++k) {
        const double w = (k == N) ? cfg.p_q : 1.0;
        double fq = 0.0;
        for (int a = 0; a < 2 * M; ++a) {
            const double fa = r.f[a / M][k][a % M];
            for (int b = 0; b < 2 * M; ++b) fq += fa * Qf(a, b) * r.f[b / M][k][b % M];
        }
        total += w * (fq + cfg.q_v * (r.v[0][k] * r.v[0][k] + r.v[1][k] * r.v[1][k]));
    }
    for (int j = 0; j < 2 * N; ++j) total += cfg.q_a * x[j] * x[j];
    return total;
}

/// Random but well-scaled parameters for tests.
inline tacmpc::MpcParams random_params(std::mt19937_64& rng, int M, double q_scale = 3.0, double sens = 1.0) {
    std::normal_distribution<double> n01(0.0, 1.0);
    tacmpc::MpcParams p;
    p.A_f.resize(M);
    p.C_f.resize(M);
    p.Q1 = tacmpc::MatX::Zero(M, M);
    p.Q2 = tacmpc::MatX::Zero(M, M);
    p.Qc.resize(M, M);
    for (int i = 0; i < M; ++i) {
        p.A_f[i] = sens * n01(rng);
        p.C_f[i] = 0.5 * sens * n01(rng);
        for (int j = 0; j <= i; ++j) {
            p.Q1(i, j) = q_scale * (i == j ? 1.0 + 0.3 * std::abs(n01(rng)) : 0.3 * n01(rng));
            p.Q2(i, j) = q_scale * (i == j ? 1.0 + 0.3 * std::abs(n01(rng)) : 0.3 * n01(rng));
        }
        for (int j = 0; j < M; ++j) p.Qc(i, j) = q_scale * q_scale * 0.3 * n01(rng);
    }
    p.alpha = 0.5 + 0.5 * std::abs(n01(rng));
    return p;
}

inline tacmpc::MpcInputs random_inputs(std::mt19937_64& rng, int M) {
    std::normal_distribution<double> n01(0.0, 1.0);
    std::uniform_real_distribution<double> pos(15.0, 70.0), vel(-40.0, 40.0);
    tacmpc::MpcInputs in;
    in.s1 = {pos(rng), vel(rng)};
    in.s2 = {pos(rng), vel(rng)};
    in.f1.resize(M);
    in.f2.resize(M);
    for (int i = 0; i < M; ++i) {
        in.f1[i] = n01(rng);
        in.f2[i] = n01(rng);
    }
    return in;
}

}  // namespace oracle
