#pragma once

// Double-integrator gripper dynamics and the horizon-condensed maps from the
// stacked acceleration vector x = [a^(1)_0..a^(1)_{N-1}, a^(2)_0..a^(2)_{N-1}]
// to positions, velocities and tactile embeddings of both agents.

#include <Eigen/Dense>

#include "tacmpc/params.hpp"
#include "tacmpc/types.hpp"

namespace tacmpc {

struct GripperState {
    double p = 0.0;  // opening, mm
    double v = 0.0;  // opening velocity, mm/s
};

struct DoubleIntegrator {
    double dt = 0.0;
    Eigen::Matrix2d A_g;
    Eigen::Vector2d B_g;
};

/// Throws Error{NonPositiveDt}.
DoubleIntegrator make_double_integrator(double dt);

GripperState step(const DoubleIntegrator& dyn, const GripperState& s, double a);

/// One tactile transition: f' = f_own + A_f v_own + C_f v_other.
/// Throws Error{DimensionMismatch}.
VecX step_embedding(const MpcParams& params, const VecX& f_own, double v_own, double v_other);

/// Per-agent accelerations over the horizon (row i = agent i+1), mm/s^2.
struct ActionSequence {
    Eigen::Matrix<double, 2, Eigen::Dynamic> a;

    VecX stacked() const;
    static ActionSequence from_stacked(const VecX& x);
};

/// Scalar single-agent maps shared by the lifted system and the QP assembly.
/// For k = 0..N (row k), with a the agent's N accelerations:
///   v_k   = v0 + vel.row(k) a
///   s_k   = sum_{j<k} v_j = k v0 + vsum.row(k) a
///   p_k   = p0 + k dt v0 + pos.row(k) a
struct HorizonMaps {
    int N = 0;
    double dt = 0.0;
    MatX vel;   // (N+1) x N
    MatX vsum;  // (N+1) x N
    MatX pos;   // (N+1) x N

    static HorizonMaps build(int N, double dt);
};

struct Trajectories {
    MatX p;  // 2 x N, steps 1..N
    MatX v;  // 2 x N, steps 1..N
    MatX f;  // 2M x (N+1), column k = [f^(1)_k; f^(2)_k], k = 0..N
};

struct LiftedSystem {
    int N = 0;
    int M = 0;
    MatX Sv;         // 2N x 2N, rows [agent 1 steps 1..N; agent 2 steps 1..N]
    MatX Sp;         // 2N x 2N
    MatX Sf;         // 2M(N+1) x 2N, row block k = [f^(1)_k; f^(2)_k]
    VecX v_offset;   // 2N
    VecX p_offset;   // 2N
    VecX f_offset;   // 2M(N+1)

    Trajectories evaluate(const VecX& x) const;
};

/// Throws Error{DimensionMismatch}.
LiftedSystem build_lifted(const MpcParams& params, const MpcConfig& cfg, const GripperState& s1,
                          const GripperState& s2, const VecX& f1, const VecX& f2);

}  // namespace tacmpc
