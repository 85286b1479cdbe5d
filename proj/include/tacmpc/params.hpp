#pragma once

#include <cstdint>

#include "tacmpc/qp.hpp"
#include "tacmpc/types.hpp"

namespace tacmpc {

/// Fixed (non-learned) constants of the layer. Units: mm, mm/s, mm/s^2, s.
struct MpcConfig {
    int horizon = 15;          // N
    int embed_dim = 20;        // M
    double dt = 0.01;
    double q_v = 200.0;        // velocity penalty
    double q_a = 1.0;          // acceleration penalty
    double p_q = 5.0;          // terminal amplification
    double eps = 1e-4;         // PSD floor for the tactile penalty
    double p_min = 0.0;
    double p_max = 85.0;
    double v_min = -150.0;
    double v_max = 150.0;
    double a_min = -5000.0;
    double a_max = 5000.0;
    qp::SolverSettings solver{};

    /// Throws Error{InvalidConfig}.
    void validate() const;
};

/// Learnable quantities, shared by both agents.
///
/// The tactile penalty is assembled as
///   Q_f = [[Q1 Q1',  alpha Qc], [alpha Qc',  Q2 Q2']] + shift I
/// with Q1, Q2 lower triangular, so the diagonal blocks stay PSD under
/// arbitrary gradient steps and the shift restores lambda_min >= eps.
struct MpcParams {
    VecX A_f;   // own-velocity embedding sensitivity (M)
    VecX C_f;   // cross-agent velocity coupling (M)
    MatX Q1;    // M x M, lower triangular
    MatX Q2;    // M x M, lower triangular
    MatX Qc;    // M x M
    double alpha = 0.0;

    int embed_dim() const { return static_cast<int>(A_f.size()); }

    /// Throws Error{DimensionMismatch | NonFinite}.
    void validate(int embed_dim) const;

    /// Deterministic initialization used by training and the tools.
    static MpcParams init(int embed_dim, std::uint64_t seed, double q_scale = 300.0, double sens_scale = 0.01);

    /// Copy with the inter-agent terms removed (alpha = 0, C_f = 0).
    MpcParams decoupled() const;

    // Flat layout used by optimizers and finite differences:
    // [A_f | C_f | lower(Q1) row-major | lower(Q2) | Qc row-major | alpha].
    static int flat_size(int embed_dim);
    VecX flatten() const;
    static MpcParams unflatten(const VecX& flat, int embed_dim);
};

struct MpcParamGrads {
    VecX A_f;
    VecX C_f;
    MatX Q1;  // only the lower triangle is meaningful
    MatX Q2;
    MatX Qc;
    double alpha = 0.0;
    VecX f1;  // gradients w.r.t. the input embeddings
    VecX f2;

    static MpcParamGrads zeros(int embed_dim);
    /// Parameter part only, in MpcParams::flatten order.
    VecX flatten_params() const;
    MpcParamGrads& operator+=(const MpcParamGrads& o);
    MpcParamGrads& operator*=(double s);
};

}  // namespace tacmpc
