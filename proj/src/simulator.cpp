#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numbers>
#include <ostream>
#include <random>

#include "tacmpc/error.hpp"
#include "tacmpc/simulator.hpp"

namespace tacmpc::sim {

namespace {

double drift(const ObjectModel& o, int site, double t) {
    if (o.drift_amplitude == 0.0) return 0.0;
    return o.drift_amplitude * std::sin(2.0 * std::numbers::pi * t / o.drift_period + site * std::numbers::pi / 2.0);
}

double percentile(std::vector<double> v, double q) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

MpcInputs to_inputs(const Observation& obs) {
    return {obs.grippers[0], obs.grippers[1], obs.embeddings[0], obs.embeddings[1]};
}

// Used when a solve fails: damp the current motion.
double brake(const GripperState& s) { return -40.0 * s.v; }

}  // namespace

const char* to_string(Status s) {
    switch (s) {
        case Status::Holding: return "holding";
        case Status::Slipped: return "slipped";
        case Status::Damaged: return "damaged";
    }
    return "?";
}

const char* to_string(ControllerKind k) {
    switch (k) {
        case ControllerKind::MultiMpc: return "multi";
        case ControllerKind::SingleMpc: return "single";
        case ControllerKind::Pd: return "pd";
    }
    return "?";
}

ControllerKind parse_controller(const std::string& s) {
    if (s == "multi") return ControllerKind::MultiMpc;
    if (s == "single") return ControllerKind::SingleMpc;
    if (s == "pd") return ControllerKind::Pd;
    throw Error(ErrorCode::InvalidConfig, "unknown controller '" + s + "' (expected multi, single or pd)");
}

ObjectModel ObjectModel::make(std::string name, std::array<double, 2> width, double stiffness, double band,
                              double mass, double load, double friction) {
    ObjectModel o;
    o.name = std::move(name);
    o.width = width;
    o.stiffness = stiffness;
    o.load = load;
    o.friction = friction;
    o.mass = mass;
    for (int i = 0; i < 2; ++i) {
        o.slip_margin[i] = width[i] - load / (friction * stiffness);
        o.damage_margin[i] = o.slip_margin[i] - band;
    }
    o.validate();
    return o;
}

void ObjectModel::validate() const {
    if (!(stiffness > 0) || !(load >= 0) || !(friction > 0) || !(mass > 0) || !(drift_period > 0) ||
        !(drift_amplitude >= 0)) {
        throw Error(ErrorCode::InvalidConfig, "object '" + name + "' has non-physical constants");
    }
    for (int i = 0; i < 2; ++i) {
        if (!(damage_margin[i] < slip_margin[i]) || !(slip_margin[i] <= width[i])) {
            throw Error(ErrorCode::InvalidConfig, "object '" + name + "' needs damage < slip <= width at each site");
        }
    }
}

std::vector<ObjectModel> object_menu() {
    std::vector<ObjectModel> m;
    m.push_back(ObjectModel::make("rigid_tube", {40.0, 40.0}, 1.4, 5.0, 1.0));
    m.push_back(ObjectModel::make("compliant_cylinder", {42.0, 40.0}, 0.7, 2.5, 1.0));
    m.push_back(ObjectModel::make("crushable_can", {40.0, 40.0}, 1.0, 1.8, 0.8));
    m.push_back(ObjectModel::make("stiff_pipe", {48.0, 47.0}, 1.4, 3.0, 1.5));
    ObjectModel bag = ObjectModel::make("granular_bag", {40.0, 40.0}, 0.5, 3.0, 1.2);
    bag.drift_amplitude = 0.4;
    bag.drift_period = 8.0;
    m.push_back(bag);
    return m;
}

ObjectModel find_object(const std::string& name) {
    for (auto& o : object_menu()) {
        if (o.name == name) return o;
    }
    std::string known;
    for (const auto& o : object_menu()) known += (known.empty() ? "" : ", ") + o.name;
    throw Error(ErrorCode::InvalidConfig, "unknown object '" + name + "' (known: " + known + ")");
}

bool is_compliant(const ObjectModel& o) { return o.stiffness < 1.0; }

void WorldConfig::validate() const {
    object.validate();
    if (!(dt > 0)) throw Error(ErrorCode::NonPositiveDt, "world dt must be > 0");
    if (!(0 <= init_band_lo && init_band_lo <= init_band_hi && init_band_hi <= 1)) {
        throw Error(ErrorCode::InvalidConfig, "initial band fractions must satisfy 0 <= lo <= hi <= 1");
    }
    if (disturbances < 0 || !(disturbance_t_min <= disturbance_t_max) || !(a_limit > 0) || embed_dim < 1) {
        throw Error(ErrorCode::InvalidConfig, "invalid world configuration");
    }
}

std::array<double, 2> GraspWorld::site_width() const {
    return {object.width[0] + drift(object, 0, t), object.width[1] + drift(object, 1, t)};
}

std::array<double, 2> GraspWorld::slip_margin() const {
    return {object.slip_margin[0] + drift(object, 0, t), object.slip_margin[1] + drift(object, 1, t)};
}

std::array<double, 2> GraspWorld::damage_margin() const {
    return {object.damage_margin[0] + drift(object, 0, t), object.damage_margin[1] + drift(object, 1, t)};
}

std::array<ContactState, 2> GraspWorld::contacts() const {
    GraspPhysics g;
    g.width = site_width();
    g.stiffness = object.stiffness;
    g.load = object.load;
    g.friction = object.friction;
    auto c = g.contacts(grippers[0].p, grippers[1].p);
    const auto slip = slip_margin();
    for (int i = 0; i < 2; ++i) c[i].slipping = grippers[i].p > slip[i];
    return c;
}

GraspWorld make_world(const WorldConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL);
    std::uniform_real_distribution<double> frac(cfg.init_band_lo, cfg.init_band_hi);
    GraspWorld w;
    w.object = cfg.object;
    for (int i = 0; i < 2; ++i) {
        const double f = frac(rng);
        w.grippers[i].p = cfg.initial_opening ? (*cfg.initial_opening)[i]
                                              : cfg.object.damage_margin[i] +
                                                    f * (cfg.object.slip_margin[i] - cfg.object.damage_margin[i]);
        w.grippers[i].v = 0.0;
    }
    const int lo = static_cast<int>(std::lround(cfg.disturbance_t_min / cfg.dt));
    const int hi = static_cast<int>(std::lround(cfg.disturbance_t_max / cfg.dt));
    std::uniform_int_distribution<int> tick(lo, hi), agent(0, 1), sign(0, 1);
    for (int k = 0; k < cfg.disturbances; ++k) {
        Disturbance d;
        d.tick = tick(rng);
        d.agent = agent(rng);
        d.dv = (sign(rng) ? 1.0 : -1.0) * cfg.disturbance_dv / cfg.object.mass;
        w.disturbances.push_back(d);
    }
    std::stable_sort(w.disturbances.begin(), w.disturbances.end(),
                     [](const Disturbance& a, const Disturbance& b) { return a.tick < b.tick; });
    const auto dmg = w.damage_margin();
    const auto slip = w.slip_margin();
    for (int i = 0; i < 2; ++i) {
        if (w.grippers[i].p < dmg[i]) w.status = Status::Damaged;
        else if (w.grippers[i].p > slip[i] && w.status == Status::Holding) w.status = Status::Slipped;
    }
    return w;
}

void world_step(GraspWorld& w, const std::array<double, 2>& accel, double dt) {
    if (w.status != Status::Holding) {
        throw Error(ErrorCode::EpisodeOver, std::string("world is ") + to_string(w.status));
    }
    if (!(dt > 0)) throw Error(ErrorCode::NonPositiveDt, "dt must be > 0");
    if (!std::isfinite(accel[0]) || !std::isfinite(accel[1])) {
        throw Error(ErrorCode::NonFinite, "gripper accelerations must be finite");
    }
    for (const Disturbance& d : w.disturbances) {
        if (d.tick == w.tick) w.grippers[d.agent].v += d.dv;
    }
    for (int i = 0; i < 2; ++i) {
        GripperState& g = w.grippers[i];
        g.p += dt * g.v + 0.5 * dt * dt * accel[i];
        g.v += dt * accel[i];
    }
    ++w.tick;
    w.t = w.tick * dt;
    const auto dmg = w.damage_margin();
    const auto slip = w.slip_margin();
    for (int i = 0; i < 2; ++i) {
        if (w.grippers[i].p < dmg[i]) {
            w.status = Status::Damaged;
            return;
        }
    }
    for (int i = 0; i < 2; ++i) {
        if (w.grippers[i].p > slip[i]) w.status = Status::Slipped;
    }
}

// ─── Controllers ────────────────────────────────────────────────────────────

MultiMpcController::MultiMpcController(MpcConfig cfg, const MpcParams& params)
    : layer_(std::move(cfg)), pp_(layer_.prepare(params)) {}

void MultiMpcController::reset() {
    warm_.reset();
    failures_ = 0;
}

std::array<double, 2> MultiMpcController::act(const Observation& obs) {
    try {
        MpcOutput out = layer_.forward(pp_, to_inputs(obs), warm_ ? &*warm_ : nullptr);
        warm_ = std::move(out.qp);
        return {out.a_star[0], out.a_star[1]};
    } catch (const Error& e) {
        if (e.code() != ErrorCode::SolverFailed) throw;
        ++failures_;
        warm_.reset();
        return {brake(obs.grippers[0]), brake(obs.grippers[1])};
    }
}

SingleMpcController::SingleMpcController(MpcConfig cfg, const MpcParams& params)
    : layer_(std::move(cfg)), A_f_(params.A_f) {
    auto [q1, q2] = decoupled_blocks(params, layer_.config());
    q_ = {std::move(q1), std::move(q2)};
}

void SingleMpcController::reset() {
    warm_ = {};
    failures_ = 0;
}

std::array<double, 2> SingleMpcController::act(const Observation& obs) {
    std::array<double, 2> a{};
    for (int i = 0; i < 2; ++i) {
        try {
            SingleAgentOutput out =
                layer_.forward_single(A_f_, q_[i], obs.grippers[i], obs.embeddings[i], warm_[i] ? &*warm_[i] : nullptr);
            a[i] = out.a_star;
            warm_[i] = std::move(out.qp);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::SolverFailed) throw;
            ++failures_;
            warm_[i].reset();
            a[i] = brake(obs.grippers[i]);
        }
    }
    return a;
}

PdController::PdController(double kp, double kd, double target_norm) : kp_(kp), kd_(kd), target_(target_norm) {
    if (!(kp >= 0) || !(kd >= 0) || !(target_norm >= 0)) {
        throw Error(ErrorCode::InvalidConfig, "PD gains and setpoint must be >= 0");
    }
}

std::array<double, 2> PdController::act(const Observation& obs) {
    std::array<double, 2> a{};
    for (int i = 0; i < 2; ++i) {
        const double err = target_ - obs.embeddings[i].norm();
        a[i] = -kp_ * err - kd_ * obs.grippers[i].v;
    }
    return a;
}

double calibrated_pd_target(const WorldConfig& cfg, double margin) {
    const ObjectModel ref = ObjectModel::make("reference", {40.0, 40.0}, 1.0, 2.0);
    GraspWorld w;
    w.object = ref;
    for (int i = 0; i < 2; ++i) w.grippers[i].p = ref.slip_margin[i] - margin;
    const SyntheticEncoder enc(cfg.embed_dim, cfg.encoder_seed, cfg.noise_sigma);
    return enc.encode(w.contacts()[0]).norm();
}

std::unique_ptr<Controller> make_controller(ControllerKind kind, const ControllerSetup& s) {
    switch (kind) {
        case ControllerKind::MultiMpc: return std::make_unique<MultiMpcController>(s.mpc, s.params);
        case ControllerKind::SingleMpc:
            return std::make_unique<SingleMpcController>(s.mpc, s.single_params.value_or(s.params));
        case ControllerKind::Pd:
            return std::make_unique<PdController>(s.kp, s.kd, s.pd_target_norm.value_or(calibrated_pd_target()));
    }
    throw Error(ErrorCode::InvalidConfig, "unknown controller kind");
}

// ─── Episodes ───────────────────────────────────────────────────────────────

RuntimeStats EpisodeResult::runtime() const {
    RuntimeStats s;
    s.median = percentile(tick_seconds, 0.5);
    s.p95 = percentile(tick_seconds, 0.95);
    s.max = tick_seconds.empty() ? 0.0 : *std::max_element(tick_seconds.begin(), tick_seconds.end());
    return s;
}

EpisodeResult run_episode(Controller& controller, const WorldConfig& cfg, double duration, std::uint64_t seed) {
    if (!(duration > 0)) throw Error(ErrorCode::InvalidConfig, "episode duration must be > 0");
    GraspWorld w = make_world(cfg, seed);
    const SyntheticEncoder enc(cfg.embed_dim, cfg.encoder_seed, cfg.noise_sigma);
    controller.reset();

    EpisodeResult r;
    const auto record = [&](const std::array<double, 2>& a) {
        TraceRow row;
        row.t = w.t;
        row.status = w.status;
        row.a = a;
        for (int i = 0; i < 2; ++i) {
            row.p[i] = w.grippers[i].p;
            row.v[i] = w.grippers[i].v;
        }
        r.trace.push_back(row);
    };
    record({0.0, 0.0});

    const long ticks = std::lround(duration / cfg.dt);
    r.tick_seconds.reserve(static_cast<std::size_t>(ticks));
    for (long k = 0; k < ticks && w.status == Status::Holding; ++k) {
        Observation obs;
        obs.grippers = w.grippers;
        const auto c = w.contacts();
        for (int i = 0; i < 2; ++i) obs.embeddings[i] = enc.encode(c[i]);
        const auto t0 = std::chrono::steady_clock::now();
        std::array<double, 2> a = controller.act(obs);
        r.tick_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        for (double& ai : a) ai = std::clamp(ai, -cfg.a_limit, cfg.a_limit);
        world_step(w, a, cfg.dt);
        record(a);
    }
    r.final_status = w.status;
    r.hold_duration = w.t;
    r.success = w.status == Status::Holding && r.hold_duration >= kRequiredHold - 1e-9;
    r.solver_failures = controller.failures();
    return r;
}

StabilityMetrics stability_metrics(const EpisodeResult& r, double band, int min_samples) {
    if (r.trace.empty()) throw Error(ErrorCode::NeverSettled, "empty trace");
    if (r.final_status != Status::Holding) {
        throw Error(ErrorCode::NeverSettled, std::string("episode ended ") + to_string(r.final_status));
    }
    const auto& last = r.trace.back();
    std::size_t s = r.trace.size();
    while (s > 0) {
        const auto& row = r.trace[s - 1];
        if (std::abs(row.p[0] - last.p[0]) > band || std::abs(row.p[1] - last.p[1]) > band) break;
        --s;
    }
    const std::size_t n = r.trace.size() - s;
    if (n < static_cast<std::size_t>(std::max(1, min_samples))) {
        throw Error(ErrorCode::NeverSettled, "openings settled for only " + std::to_string(n) + " samples");
    }
    StabilityMetrics m;
    m.settle_time = r.trace[s].t;
    double sum = 0.0, sum_abs = 0.0;
    for (std::size_t j = s; j < r.trace.size(); ++j) {
        const double d = r.trace[j].p[0] - r.trace[j].p[1];
        sum += d;
        sum_abs += std::abs(d);
    }
    const double mean = sum / static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = s; j < r.trace.size(); ++j) {
        const double d = r.trace[j].p[0] - r.trace[j].p[1] - mean;
        var += d * d;
    }
    m.inter_agent_gap = sum_abs / static_cast<double>(n);
    m.post_settle_variance = var / static_cast<double>(n);
    return m;
}

void write_trace_csv(std::ostream& os, const EpisodeResult& r) {
    os << "t,p1,v1,a1,p2,v2,a2,status\n";
    char buf[256];
    for (const auto& row : r.trace) {
        std::snprintf(buf, sizeof buf, "%.4f,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%s\n", row.t, row.p[0], row.v[0], row.a[0],
                      row.p[1], row.v[1], row.a[1], to_string(row.status));
        os << buf;
    }
}

std::uint64_t trace_hash(const EpisodeResult& r) {
    std::uint64_t h = 1469598103934665603ULL;
    const auto feed = [&](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& row : r.trace) {
        const double vals[7] = {row.t, row.p[0], row.v[0], row.a[0], row.p[1], row.v[1], row.a[1]};
        feed(vals, sizeof vals);
        const int st = static_cast<int>(row.status);
        feed(&st, sizeof st);
    }
    return h;
}

// ─── Suites ─────────────────────────────────────────────────────────────────

double SuiteResult::success_rate(ControllerKind k) const {
    int n = 0, s = 0;
    for (const auto& c : cells) {
        if (c.controller == k) {
            n += c.episodes;
            s += c.successes;
        }
    }
    return n ? static_cast<double>(s) / n : 0.0;
}

SuiteResult run_suite(const ControllerSetup& setup, const std::vector<ObjectModel>& objects,
                      const std::vector<ControllerKind>& kinds, int episodes, double duration, std::uint64_t seed,
                      const WorldConfig& base) {
    if (episodes < 1 || objects.empty() || kinds.empty()) {
        throw Error(ErrorCode::InvalidConfig, "suite needs >= 1 episode, object and controller");
    }
    const std::size_t cells = objects.size() * kinds.size();
    const auto jobs = static_cast<std::ptrdiff_t>(cells * static_cast<std::size_t>(episodes));
    struct Outcome {
        bool success = false;
        bool settled = false;
        double variance = 0.0;
        int failures = 0;
    };
    std::vector<Outcome> outcomes(static_cast<std::size_t>(jobs));
    std::vector<std::string> errors(static_cast<std::size_t>(jobs));
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t j = 0; j < jobs; ++j) {
        try {
            const std::size_t cell = static_cast<std::size_t>(j) / static_cast<std::size_t>(episodes);
            const int e = static_cast<int>(static_cast<std::size_t>(j) % static_cast<std::size_t>(episodes));
            WorldConfig cfg = base;
            cfg.object = objects[cell / kinds.size()];
            auto ctrl = make_controller(kinds[cell % kinds.size()], setup);
            const EpisodeResult r = run_episode(*ctrl, cfg, duration, seed + static_cast<std::uint64_t>(e));
            Outcome& o = outcomes[static_cast<std::size_t>(j)];
            o.success = r.success;
            o.failures = r.solver_failures;
            try {
                o.variance = stability_metrics(r).post_settle_variance;
                o.settled = true;
            } catch (const Error&) {
            }
        } catch (const std::exception& ex) {
            errors[static_cast<std::size_t>(j)] = ex.what();
        }
    }
    for (const auto& e : errors) {
        if (!e.empty()) throw Error(ErrorCode::InvalidConfig, "suite episode failed: " + e);
    }
    SuiteResult res;
    for (std::size_t c = 0; c < cells; ++c) {
        SuiteCell cell;
        cell.object = objects[c / kinds.size()].name;
        cell.controller = kinds[c % kinds.size()];
        cell.episodes = episodes;
        double var = 0.0;
        for (int e = 0; e < episodes; ++e) {
            const Outcome& o = outcomes[c * static_cast<std::size_t>(episodes) + static_cast<std::size_t>(e)];
            cell.successes += o.success;
            cell.solver_failures += o.failures;
            if (o.settled) {
                ++cell.settled;
                var += o.variance;
            }
        }
        cell.mean_variance = cell.settled ? var / cell.settled : 0.0;
        res.cells.push_back(cell);
    }
    return res;
}

void write_suite_csv(std::ostream& os, const SuiteResult& s) {
    std::vector<ControllerKind> kinds;
    std::vector<std::string> objects;
    for (const auto& c : s.cells) {
        if (std::find(kinds.begin(), kinds.end(), c.controller) == kinds.end()) kinds.push_back(c.controller);
        if (std::find(objects.begin(), objects.end(), c.object) == objects.end()) objects.push_back(c.object);
    }
    os << "object";
    for (auto k : kinds) os << ',' << to_string(k) << "_success," << to_string(k) << "_variance";
    os << '\n';
    char buf[64];
    for (const auto& o : objects) {
        os << o;
        for (auto k : kinds) {
            for (const auto& c : s.cells) {
                if (c.object == o && c.controller == k) {
                    std::snprintf(buf, sizeof buf, ",%d/%d,%.6g", c.successes, c.episodes, c.mean_variance);
                    os << buf;
                }
            }
        }
        os << '\n';
    }
    os << "all";
    for (auto k : kinds) {
        std::snprintf(buf, sizeof buf, ",%.3f,", s.success_rate(k));
        os << buf;
    }
    os << '\n';
}

}  // namespace tacmpc::sim
