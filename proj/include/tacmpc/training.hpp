#pragma once

// End-to-end training of the shared MPC parameters on trial datasets.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tacmpc/mpc.hpp"
#include "tacmpc/tactile.hpp"

namespace tacmpc {

struct TrainConfig {
    double S = 3.0;                // terminal scaling, enters squared
    int epochs = 200;
    int batch_size = 32;
    double learning_rate = 1e-3;
    std::string optimizer = "adagrad";  // adagrad | rmsprop
    double rms_decay = 0.99;       // RMSprop smoothing constant
    double rms_eps = 1e-8;         // denominator guard for both optimizers
    std::uint64_t seed = 0;
    double label_margin = 1.0;     // target opening = slippage opening - margin, mm
    double val_fraction = 0.1;     // held-out trials
    int frame_stride = 1;          // use every k-th frame of each sub-trial
    double max_fail_fraction = 0.1;
    bool decoupled = false;        // pin alpha, C_f and Qc at zero (single-agent baseline)
    double init_q_scale = 1e4;       // tactile cost must dominate the velocity penalty
    double init_sens_scale = 3e-4;   // embedding change per mm/s of opening velocity
    std::filesystem::path checkpoint_dir;  // empty: no checkpoints
    int checkpoint_every = 0;      // keep every k-th epoch in addition to the latest; 0 keeps only the latest

    /// Throws Error{InvalidConfig}.
    void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
/// Missing keys keep their defaults. Throws Error{Parse | InvalidConfig}.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct Sample {
    MpcInputs in;
    Eigen::Vector2d target;  // per-agent opening target, expanded over the horizon
    int trial_id = 0;
};

struct SampleSplit {
    std::vector<Sample> train;
    std::vector<Sample> val;
};

/// One sample per (kept) frame; input velocities are zero because the
/// protocol records quasi-static openings. The split is by trial.
SampleSplit make_samples(const Dataset& ds, const TrainConfig& cfg);

struct LossEval {
    double value = 0.0;
    double trajectory = 0.0;  // MSE terms
    double terminal = 0.0;    // S-scaled terminal terms
    MatX grad;                // d value / d pred, 2 x N
};

/// MSE(pred_i, y_i) over the horizon for each agent plus
/// (S pred_i[N] - S y_i)^2. pred is 2 x N. Throws Error{DimensionMismatch}.
LossEval trajectory_loss(const MatX& pred, const Eigen::Vector2d& target, double S);

/// Momentum-free adaptive steps over the flattened parameters. Adagrad
/// accumulates squared gradients, so its per-coordinate step decays; RMSprop
/// keeps an exponential average and a step of roughly lr throughout.
class AdaptiveOptimizer {
public:
    enum class Kind { Adagrad, RmsProp };
    /// Throws Error{InvalidConfig} for unknown names.
    static Kind parse(const std::string& name);

    AdaptiveOptimizer(Kind kind, double lr, double decay, double eps)
        : kind_(kind), lr_(lr), decay_(decay), eps_(eps) {}
    void step(VecX& theta, const VecX& grad);

private:
    Kind kind_;
    double lr_, decay_, eps_;
    VecX sq_;
};

struct EpochStats {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    int failures = 0;
    int degenerate = 0;
    double seconds = 0.0;
};

struct TrainResult {
    MpcParams params;
    std::vector<EpochStats> history;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Throws Error{InvalidConfig} for an empty split and Error{SolverFailed}
/// when more than max_fail_fraction of a batch fails.
TrainResult train(const MpcConfig& mcfg, const TrainConfig& cfg, const SampleSplit& data, const MpcParams& init,
                  const EpochCallback& on_epoch = {});

struct EvalResult {
    double loss = 0.0;
    double terminal_median = 0.0;  // median |pred_N - target| over samples and agents, mm
    double terminal_mean = 0.0;
    double trajectory = 0.0;
    double terminal = 0.0;
    int failures = 0;
};

EvalResult evaluate(const MpcConfig& mcfg, const MpcParams& params, const std::vector<Sample>& samples, double S);

/// Moving average with a trailing window (shorter at the start).
std::vector<double> smooth(const std::vector<double>& v, int window);

void write_history_csv(std::ostream& os, const std::vector<EpochStats>& h);

struct GradCheckGroup {
    std::string name;
    double max_abs_error = 0.0;
    double max_abs_fd = 0.0;
    double rel_error = 0.0;  // max_abs_error / max(max_abs_fd, 1e-2)
};

struct GradCheckReport {
    std::vector<GradCheckGroup> groups;
    double worst = 0.0;
    bool pass(double tol = 1e-4) const { return worst <= tol; }
};

/// Central differences of the training loss against the analytic gradient
/// for every parameter group and both input embeddings. Coordinate x of a
/// group is perturbed by h * max(|x|, rms(group)), or h for an all-zero group.
/// Throws Error{DegenerateActiveSet} when the sample's active set is
/// degenerate and Error{SolverFailed} when a solve fails.
GradCheckReport grad_check(const MpcConfig& mcfg, const MpcParams& params, const Sample& sample, double S,
                           double h = 1e-5);

}  // namespace tacmpc
