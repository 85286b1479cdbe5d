#pragma once

// Differentiable two-agent tactile MPC layer.
//
// Decision vector x = stacked accelerations [a^(1)_0..N-1, a^(2)_0..N-1].
// Cost over steps k = 1..N (weights 1, terminal step weighted by p_q):
//     f_k' Q_f f_k + sum_i q_v (v^(i)_k)^2      plus  q_a sum_i sum_{k<N} (a^(i)_k)^2
// Terms at k = 0 do not depend on x and are dropped. Constraints box the
// predicted positions and velocities (steps 1..N) and the accelerations.

#include <optional>
#include <span>
#include <vector>

#include "tacmpc/lifting.hpp"
#include "tacmpc/params.hpp"
#include "tacmpc/qp.hpp"

namespace tacmpc {

struct MpcInputs {
    GripperState s1;
    GripperState s2;
    VecX f1;
    VecX f2;
};

struct MpcOutput {
    Eigen::Vector2d a_star = Eigen::Vector2d::Zero();  // first-step accelerations
    MatX predicted_openings;                          // 2 x N, steps 1..N
    qp::QpSolution qp;
    double cost = 0.0;                                // QP objective at the solution
    int active_constraints = 0;
};

struct SingleAgentOutput {
    double a_star = 0.0;
    VecX predicted_openings;  // N
    qp::QpSolution qp;
};

struct BackwardResult {
    MpcParamGrads grads;
    /// A constraint is weakly active (active with ~zero multiplier, or
    /// inactive within the margin threshold). Gradients are still computed
    /// with the row treated as active but should not be trusted.
    bool degenerate = false;
    int active_count = 0;
};

struct QfAssembly {
    MatX Qf;
    double shift = 0.0;       // added to the diagonal, >= 0
    double min_eig_raw = 0.0; // before the shift
    VecX min_eigvec;          // eigenvector of the smallest raw eigenvalue
};

/// Q_f = [[Q1 Q1', alpha Qc], [alpha Qc', Q2 Q2']], symmetrized, shifted so
/// that lambda_min >= eps. Throws Error{NonFinite | DimensionMismatch}.
MatX assemble_qf(const MpcParams& params, const MpcConfig& cfg);
QfAssembly assemble_qf_detailed(const MpcParams& params, const MpcConfig& cfg);

/// Parameters with their validated, eigen-shifted penalty assembled once.
/// Reuse across a batch; rebuild after every parameter update.
struct PreparedParams {
    MpcParams params;
    QfAssembly qf;
    MatX B;  // 2M x 2 velocity-to-embedding map
};

/// Precomputes the horizon structure for one configuration and evaluates the
/// layer. Stateless after construction; safe to share across threads.
class MpcLayer {
public:
    explicit MpcLayer(MpcConfig cfg);

    const MpcConfig& config() const { return cfg_; }

    /// Throws Error{DimensionMismatch | NonFinite}.
    PreparedParams prepare(const MpcParams& params) const;

    qp::QpProblem build_qp(const MpcParams& params, const MpcInputs& in) const;
    qp::QpProblem build_qp(const PreparedParams& pp, const MpcInputs& in) const;
    /// Same problem assembled through the explicit lifted matrices. Slower;
    /// kept as the reference the structured path is tested against.
    qp::QpProblem build_qp_reference(const MpcParams& params, const MpcInputs& in) const;

    /// Throws Error{SolverFailed} when the QP does not reach Solved.
    MpcOutput forward(const MpcParams& params, const MpcInputs& in, const qp::QpSolution* warm = nullptr) const;
    MpcOutput forward(const PreparedParams& pp, const MpcInputs& in, const qp::QpSolution* warm = nullptr) const;

    /// grad_openings is 2 x N (d loss / d predicted opening), grad_a_star the
    /// gradient w.r.t. the two first-step accelerations.
    BackwardResult backward(const MpcParams& params, const MpcInputs& in, const MpcOutput& out,
                            const MatX& grad_openings, const Eigen::Vector2d& grad_a_star) const;
    BackwardResult backward(const PreparedParams& pp, const MpcInputs& in, const MpcOutput& out,
                            const MatX& grad_openings, const Eigen::Vector2d& grad_a_star) const;

    // Single-agent (decoupled) layer: N decision variables, the agent's own
    // M x M penalty block and A_f only.
    qp::QpProblem build_single_qp(const VecX& A_f, const MatX& q_block, const GripperState& s, const VecX& f) const;
    SingleAgentOutput forward_single(const VecX& A_f, const MatX& q_block, const GripperState& s, const VecX& f,
                                     const qp::QpSolution* warm = nullptr) const;

private:
    void check_inputs(const MpcInputs& in) const;
    void add_box_constraints(qp::QpProblem& prob, std::span<const GripperState> states) const;

    MpcConfig cfg_;
    HorizonMaps maps_;
    VecX w_;          // step weights, k = 0..N (w_0 = 0)
    MatX pos_;        // maps_.pos rows 1..N
    MatX vel_;        // maps_.vel rows 1..N
    MatX V_tac_;      // sum_k w_k vsum_k' vsum_k
    VecX u_tac1_;     // sum_k w_k vsum_k'
    VecX u_tac2_;     // sum_k w_k k vsum_k'
    MatX V_vel_;      // sum_k w_k vel_k' vel_k
    VecX u_vel_;      // sum_k w_k vel_k'
};

/// Decoupled per-agent penalty blocks: the diagonal blocks of the Q_f that
/// assemble_qf produces for params.decoupled().
std::pair<MatX, MatX> decoupled_blocks(const MpcParams& params, const MpcConfig& cfg);

// Convenience wrappers over a temporary MpcLayer.
qp::QpProblem build_qp(const MpcParams& params, const MpcConfig& cfg, const MpcInputs& in);
MpcOutput forward(const MpcParams& params, const MpcConfig& cfg, const MpcInputs& in,
                  const qp::QpSolution* warm = nullptr);
BackwardResult backward(const MpcParams& params, const MpcConfig& cfg, const MpcInputs& in, const MpcOutput& out,
                        const MatX& grad_openings, const Eigen::Vector2d& grad_a_star);

// ─── Batched evaluation ─────────────────────────────────────────────────────

enum class Execution { Serial, Parallel };

struct BatchItem {
    std::optional<MpcOutput> out;  // empty when the solve failed
};

/// Independent forwards over a batch. Parallel distributes samples over
/// OpenMP threads; Serial is the reference loop. Results are identical.
std::vector<BatchItem> forward_batch(const MpcLayer& layer, const MpcParams& params, std::span<const MpcInputs> batch,
                                     Execution exec = Execution::Parallel,
                                     std::span<const qp::QpSolution* const> warm = {});

/// The decoupled baseline over a batch: two single-agent solves per sample.
struct SingleBatchItem {
    std::optional<SingleAgentOutput> agent[2];
};
std::vector<SingleBatchItem> forward_single_batch(const MpcLayer& layer, const MpcParams& params,
                                                  std::span<const MpcInputs> batch,
                                                  Execution exec = Execution::Parallel);

}  // namespace tacmpc
