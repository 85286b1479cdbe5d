#pragma once

// Closed-loop two-gripper grasp simulation and the controllers under study.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tacmpc/mpc.hpp"
#include "tacmpc/tactile.hpp"

namespace tacmpc::sim {

enum class Status { Holding, Slipped, Damaged };
const char* to_string(Status s);

struct ObjectModel {
    std::string name;
    std::array<double, 2> width{40.0, 40.0};  // undeformed width at each site, mm
    double stiffness = 1.0;                   // N/mm
    double load = 0.6;                        // N
    double friction = 1.0;
    std::array<double, 2> slip_margin{};      // opening above which the grasp slips
    std::array<double, 2> damage_margin{};    // opening below which the object is crushed
    double mass = 1.0;                        // disturbance impulses scale with 1/mass
    double drift_amplitude = 0.0;             // site-width drift (granular contents), mm
    double drift_period = 8.0;                // s

    /// Margins from the contact physics: slip at width - load / (mu kappa),
    /// damage `band` mm below that. Throws Error{InvalidConfig}.
    static ObjectModel make(std::string name, std::array<double, 2> width, double stiffness, double band,
                            double mass = 1.0, double load = 0.6, double friction = 1.0);

    /// Throws Error{InvalidConfig} unless damage < slip <= width at both sites.
    void validate() const;
};

/// Rigid tube, compliant cylinder, crushable can, stiff pipe, granular bag.
std::vector<ObjectModel> object_menu();
/// Throws Error{InvalidConfig} for unknown names.
ObjectModel find_object(const std::string& name);
/// Objects where the soft-contact stability comparison is made.
bool is_compliant(const ObjectModel& o);

struct Disturbance {
    int tick = 0;
    int agent = 0;      // 0 or 1
    double dv = 0.0;    // velocity impulse, mm/s
};

struct WorldConfig {
    ObjectModel object = object_menu().front();
    double dt = 0.01;
    // Initial openings: damage + U(lo, hi) * (slip - damage) per site unless set.
    std::optional<std::array<double, 2>> initial_opening;
    double init_band_lo = 0.3;
    double init_band_hi = 0.7;
    int disturbances = 2;
    double disturbance_dv = 20.0;      // mm/s before mass scaling
    double disturbance_t_min = 3.0;    // s
    double disturbance_t_max = 12.0;   // s
    double a_limit = 5000.0;           // actuator saturation, mm/s^2
    double p_min = 0.0;
    double p_max = 85.0;
    int embed_dim = 20;
    std::uint64_t encoder_seed = 1234;
    double noise_sigma = 0.01;

    void validate() const;
};

struct GraspWorld {
    ObjectModel object;
    std::array<GripperState, 2> grippers{};
    double t = 0.0;
    int tick = 0;
    std::vector<Disturbance> disturbances;  // sorted by tick
    Status status = Status::Holding;

    std::array<double, 2> site_width() const;
    std::array<double, 2> slip_margin() const;
    std::array<double, 2> damage_margin() const;
    std::array<ContactState, 2> contacts() const;
};

/// Seeded disturbance schedule and initial openings.
GraspWorld make_world(const WorldConfig& cfg, std::uint64_t seed);

/// Applies impulses scheduled for the current tick, advances both grippers
/// one double-integrator step and updates the (absorbing) status.
/// Throws Error{EpisodeOver} unless the world is Holding.
void world_step(GraspWorld& world, const std::array<double, 2>& accel, double dt);

// ─── Controllers ────────────────────────────────────────────────────────────

/// All a controller may see: gripper states and tactile embeddings.
struct Observation {
    std::array<GripperState, 2> grippers;
    std::array<VecX, 2> embeddings;
};

class Controller {
public:
    virtual ~Controller() = default;
    virtual std::string name() const = 0;
    virtual void reset() {}
    virtual std::array<double, 2> act(const Observation& obs) = 0;
    /// Solves that failed since reset (the controller then brakes).
    int failures() const { return failures_; }

protected:
    int failures_ = 0;
};

enum class ControllerKind { MultiMpc, SingleMpc, Pd };
const char* to_string(ControllerKind k);
/// Accepts multi, single, pd. Throws Error{InvalidConfig}.
ControllerKind parse_controller(const std::string& s);

class MultiMpcController : public Controller {
public:
    MultiMpcController(MpcConfig cfg, const MpcParams& params);
    std::string name() const override { return "multi"; }
    void reset() override;
    std::array<double, 2> act(const Observation& obs) override;

private:
    MpcLayer layer_;
    PreparedParams pp_;
    std::optional<qp::QpSolution> warm_;
};

/// Two independent single-agent layers. Coupling terms of `params` are
/// ignored (alpha = 0, C_f = 0, block-diagonal penalty).
class SingleMpcController : public Controller {
public:
    SingleMpcController(MpcConfig cfg, const MpcParams& params);
    std::string name() const override { return "single"; }
    void reset() override;
    std::array<double, 2> act(const Observation& obs) override;

private:
    MpcLayer layer_;
    VecX A_f_;
    std::array<MatX, 2> q_;
    std::array<std::optional<qp::QpSolution>, 2> warm_;
};

/// Tracks an embedding-norm setpoint. Closing (negative acceleration) raises
/// the norm, so a weak signal commands closing.
class PdController : public Controller {
public:
    PdController(double kp = 400.0, double kd = 40.0, double target_norm = 0.6);
    std::string name() const override { return "pd"; }
    std::array<double, 2> act(const Observation& obs) override;

private:
    double kp_, kd_, target_;
};

/// Embedding norm the PD baseline tracks by default: the norm observed at the
/// training label opening (slip - margin) on a unit-stiffness reference
/// object, read through the same encoder the episodes use.
double calibrated_pd_target(const WorldConfig& cfg = {}, double margin = 1.0);

struct ControllerSetup {
    MpcConfig mpc;
    MpcParams params;                         // multi-agent model
    std::optional<MpcParams> single_params;   // separately trained decoupled model; unset: params
    double kp = 400.0;
    double kd = 40.0;
    std::optional<double> pd_target_norm;  // unset: calibrated_pd_target()
};

std::unique_ptr<Controller> make_controller(ControllerKind kind, const ControllerSetup& setup);

// ─── Episodes ───────────────────────────────────────────────────────────────

struct TraceRow {
    double t = 0.0;
    std::array<double, 2> p{}, v{}, a{};
    Status status = Status::Holding;
};

struct RuntimeStats {
    double median = 0.0;  // s per tick
    double p95 = 0.0;
    double max = 0.0;
};

struct EpisodeResult {
    bool success = false;
    double hold_duration = 0.0;  // s
    Status final_status = Status::Holding;
    std::vector<TraceRow> trace;  // row 0 is the initial state
    std::vector<double> tick_seconds;
    int solver_failures = 0;

    RuntimeStats runtime() const;
};

constexpr double kRequiredHold = 15.0;

/// Throws Error{InvalidConfig} for duration <= 0.
EpisodeResult run_episode(Controller& controller, const WorldConfig& cfg, double duration, std::uint64_t seed);

struct StabilityMetrics {
    double inter_agent_gap = 0.0;       // mean |p1 - p2| after settling, mm
    double settle_time = 0.0;           // s
    double post_settle_variance = 0.0;  // variance of p1 - p2 after settling, mm^2
};

/// Settled from the first sample after which both openings stay within
/// `band` of their final values. Throws Error{NeverSettled} when the episode
/// did not hold to the end or fewer than `min_samples` samples remain.
StabilityMetrics stability_metrics(const EpisodeResult& r, double band = 0.5, int min_samples = 100);

void write_trace_csv(std::ostream& os, const EpisodeResult& r);
/// Order-sensitive FNV-1a over the bit patterns of the trace.
std::uint64_t trace_hash(const EpisodeResult& r);

// ─── Suites ─────────────────────────────────────────────────────────────────

struct SuiteCell {
    std::string object;
    ControllerKind controller = ControllerKind::Pd;
    int episodes = 0;
    int successes = 0;
    double mean_variance = 0.0;   // over settled episodes
    int settled = 0;
    int solver_failures = 0;
};

struct SuiteResult {
    std::vector<SuiteCell> cells;  // object-major, controller minor
    double success_rate(ControllerKind k) const;
};

/// episodes x objects x controllers; episode e of every cell uses seed + e,
/// so controllers face identical worlds. Episodes run in parallel.
SuiteResult run_suite(const ControllerSetup& setup, const std::vector<ObjectModel>& objects,
                      const std::vector<ControllerKind>& kinds, int episodes, double duration, std::uint64_t seed,
                      const WorldConfig& base = {});

/// Success-rate table: object, then one column per controller.
void write_suite_csv(std::ostream& os, const SuiteResult& s);

}  // namespace tacmpc::sim
