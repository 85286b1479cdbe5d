#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "tacmpc/bench.hpp"
#include "tacmpc/checkpoint.hpp"
#include "tacmpc/error.hpp"
#include "tacmpc/simulator.hpp"
#include "tacmpc/tactile.hpp"
#include "tacmpc/training.hpp"

#ifndef TACMPC_VERSION
#define TACMPC_VERSION "unknown"
#endif

namespace tacmpc::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ─── Hashing ────────────────────────────────────────────────────────────────

namespace {

constexpr std::uint64_t kFnvBasis = 0xcbf29ce484222325ULL;

void fnv(std::uint64_t& h, const char* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(p[i]);
        h *= 0x100000001b3ULL;
    }
}

void fnv_file(std::uint64_t& h, const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw Error(ErrorCode::Io, "cannot read " + p.string());
    char buf[1 << 14];
    while (is) {
        is.read(buf, sizeof buf);
        fnv(h, buf, static_cast<std::size_t>(is.gcount()));
    }
}

std::string hex(std::uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace

std::uint64_t hash_file(const fs::path& p) {
    std::uint64_t h = kFnvBasis;
    fnv_file(h, p);
    return h;
}

std::uint64_t hash_tree(const fs::path& dir, const std::vector<std::string>& skip) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        if (std::find(skip.begin(), skip.end(), e.path().filename().string()) != skip.end()) continue;
        files.push_back(fs::relative(e.path(), dir));
    }
    std::sort(files.begin(), files.end());
    std::uint64_t h = kFnvBasis;
    for (const auto& rel : files) {
        const std::string name = rel.generic_string();
        fnv(h, name.data(), name.size() + 1);  // include the terminator as a separator
        fnv_file(h, dir / rel);
    }
    return h;
}

// ─── Config files ───────────────────────────────────────────────────────────

namespace {

int line_of(const std::string& text, std::size_t byte) {
    byte = std::min(byte, text.size());
    return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

int line_of_key(const std::string& text, const std::string& key) {
    const auto pos = text.find('"' + key + '"');
    return pos == std::string::npos ? 0 : line_of(text, pos);
}

std::string scalar_token(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    if (v.is_number_unsigned()) return std::to_string(v.get<unsigned long long>());
    if (v.is_number_float()) {
        std::ostringstream os;
        os.precision(17);
        os << v.get<double>();
        return os.str();
    }
    throw std::invalid_argument("unsupported value");
}

}  // namespace

std::vector<std::string> config_tokens(const fs::path& file, std::string* subcommand) {
    std::ifstream is(file);
    if (!is) throw Error(ErrorCode::Io, "cannot read config " + file.string());
    const std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::Parse, file.string() + ":" + std::to_string(line_of(text, e.byte)) + ": " + e.what());
    }
    if (!j.is_object()) throw Error(ErrorCode::Parse, file.string() + ":1: config must be a JSON object");
    if (j.contains("subcommand") && j.contains("config")) {
        if (subcommand) *subcommand = j["subcommand"].get<std::string>();
        j = j["config"];
    }
    std::vector<std::string> tokens;
    for (const auto& [key, v] : j.items()) {
        if (key == "config") continue;
        std::string value;
        try {
            if (v.is_array()) {
                for (const auto& x : v) value += (value.empty() ? "" : ",") + scalar_token(x);
            } else {
                value = scalar_token(v);
            }
        } catch (const std::exception&) {
            throw Error(ErrorCode::Parse, file.string() + ":" + std::to_string(line_of_key(text, key)) + ": key '" +
                                              key + "' must be a scalar or an array of scalars");
        }
        tokens.push_back("--" + key + "=" + value);
    }
    return tokens;
}

// ─── Subcommands ────────────────────────────────────────────────────────────

namespace {

/// Options of one subcommand, remembered so the resolved values can be
/// written back into run.json.
class Options {
public:
    explicit Options(CLI::App* app) : app_(app) {}

    template <class T>
    CLI::Option* add(const std::string& name, T& var, const std::string& help) {
        dumpers_.emplace_back(name, [&var] { return json(var); });
        return app_->add_option("--" + name, var, help)->capture_default_str();
    }
    CLI::Option* flag(const std::string& name, bool& var, const std::string& help) {
        dumpers_.emplace_back(name, [&var] { return json(var); });
        return app_->add_flag("--" + name, var, help);
    }
    json resolved() const {
        json j = json::object();
        for (const auto& [name, f] : dumpers_) j[name] = f();
        return j;
    }
    CLI::App* app() const { return app_; }

private:
    CLI::App* app_;
    std::vector<std::pair<std::string, std::function<json()>>> dumpers_;
};

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::vector<int> parse_ints(const std::string& s) {
    std::vector<int> out;
    for (const auto& t : split_csv(s)) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoi(t, &used));
            if (used != t.size()) throw std::invalid_argument(t);
        } catch (const std::exception&) {
            throw Error(ErrorCode::InvalidConfig, "not an integer list: " + s);
        }
    }
    return out;
}

/// Creates `dir`, refusing a non-empty one unless `force`.
void prepare_out(const fs::path& dir, bool force) {
    if (dir.empty()) throw Error(ErrorCode::InvalidConfig, "--out is required");
    if (fs::exists(dir) && !fs::is_directory(dir))
        throw Error(ErrorCode::Io, dir.string() + " exists and is not a directory");
    if (fs::exists(dir) && !fs::is_empty(dir)) {
        if (!force) throw Error(ErrorCode::InvalidConfig, dir.string() + " is not empty (use --force)");
        fs::remove_all(dir);
    }
    fs::create_directories(dir);
}

/// Inputs of one subcommand must not be written by another.
void check_disjoint(const fs::path& out, const fs::path& input) {
    if (input.empty() || !fs::exists(input)) return;
    const auto a = fs::weakly_canonical(out), b = fs::weakly_canonical(input);
    auto inside = [](const fs::path& p, const fs::path& root) {
        auto [ri, pi] = std::mismatch(root.begin(), root.end(), p.begin(), p.end());
        return ri == root.end();
    };
    if (inside(a, b) || inside(b, a))
        throw Error(ErrorCode::InvalidConfig, "output " + out.string() + " overlaps input " + input.string());
}

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw Error(ErrorCode::Io, "cannot write " + p.string());
    os << s;
}

struct Run {
    std::string subcommand;
    json config;
    std::uint64_t seed = 0;
    json outputs = json::object();  // file -> hash; timing files are listed without one
    json summary = json::object();

    void add_output(const fs::path& dir, const std::string& name, bool timing = false) {
        outputs[name] = timing ? json("timing") : json(hex(hash_file(dir / name)));
    }
    void write(const fs::path& dir) const {
        const json j = {{"tool", "tacmpc"},        {"version", TACMPC_VERSION}, {"subcommand", subcommand},
                        {"seed", seed},            {"config", config},           {"outputs", outputs},
                        {"summary", summary}};
        write_text(dir / "run.json", j.dump(2) + "\n");
    }
};

// gen-data ------------------------------------------------------------------

struct GenData {
    int trials = 200;
    std::uint64_t seed = 0;
    std::string out;
    int embed_dim = 20;
    std::uint64_t encoder_seed = 1234;
    double noise_sigma = 0.01;
    double init_jitter = 0.7;
    double slip_jitter = 0.35;
    double sweep_span = 1.5;
    bool force = false;

    void bind(Options& o) {
        o.add("trials", trials, "number of trials");
        o.add("seed", seed, "dataset seed");
        o.add("out", out, "dataset directory");
        o.add("embed-dim", embed_dim, "embedding dimension M");
        o.add("encoder-seed", encoder_seed, "encoder projection seed");
        o.add("noise-sigma", noise_sigma, "embedding noise");
        o.add("init-jitter", init_jitter, "initial opening half-width, mm");
        o.add("slip-jitter", slip_jitter, "slippage opening half-width, mm");
        o.add("sweep-span", sweep_span, "base slip minus base initial opening, mm");
        o.flag("force", force, "replace an existing directory");
    }

    int exec(Run& run, std::ostream& os) const {
        DatasetConfig dc;
        dc.trials = trials;
        dc.seed = seed;
        dc.embed_dim = embed_dim;
        dc.encoder_seed = encoder_seed;
        dc.noise_sigma = noise_sigma;
        dc.protocol.init_jitter = init_jitter;
        dc.protocol.slip_jitter = slip_jitter;
        dc.protocol.sweep_span = sweep_span;
        if (trials < 1) throw Error(ErrorCode::InvalidConfig, "--trials must be >= 1");
        const Dataset ds = generate_dataset(dc);
        if (out.empty()) throw Error(ErrorCode::InvalidConfig, "--out is required");
        if (!force && fs::exists(out) && (!fs::is_directory(out) || !fs::is_empty(out)))
            throw Error(ErrorCode::InvalidConfig, out + " is not empty (use --force)");
        write_dataset(out, ds, force);
        run.seed = seed;
        run.add_output(out, "dataset.json");
        const std::string tree = hex(hash_tree(out));
        run.outputs["tree"] = tree;
        run.summary = {{"trials", trials}, {"subtrials", ds.records.size()}, {"manifest_hash", run.outputs["dataset.json"]}};
        run.write(out);
        os << "wrote " << ds.records.size() << " sub-trials to " << out << "\nmanifest " << run.outputs["dataset.json"].get<std::string>()
           << "  tree " << tree << '\n';
        return kOk;
    }
};

// train ---------------------------------------------------------------------

struct Train {
    std::string data, out;
    TrainConfig tc;
    int solver_max_iter = 0;
    bool no_polish = false;
    bool force = false;
    bool quiet = false;

    void bind(Options& o) {
        o.add("data", data, "dataset directory")->required();
        o.add("out", out, "output directory")->required();
        o.add("epochs", tc.epochs, "training epochs");
        o.add("batch-size", tc.batch_size, "samples per update");
        o.add("lr", tc.learning_rate, "learning rate");
        o.add("optimizer", tc.optimizer, "adagrad or rmsprop");
        o.add("rms-decay", tc.rms_decay, "RMSprop smoothing constant");
        o.add("seed", tc.seed, "split, shuffling and init seed");
        o.add("terminal-scale", tc.S, "terminal scaling");
        o.add("label-margin", tc.label_margin, "target = slippage opening minus this, mm");
        o.add("val-fraction", tc.val_fraction, "held-out trial fraction");
        o.add("frame-stride", tc.frame_stride, "keep every k-th frame");
        o.add("max-fail-fraction", tc.max_fail_fraction, "abort above this per-batch solver failure rate");
        o.add("init-q-scale", tc.init_q_scale, "initial penalty factor scale");
        o.add("init-sens-scale", tc.init_sens_scale, "initial velocity sensitivity scale");
        o.add("checkpoint-every", tc.checkpoint_every, "keep every k-th epoch checkpoint");
        o.add("solver-max-iter", solver_max_iter, "QP iteration cap (0: solver default)");
        o.flag("no-polish", no_polish, "skip the active-set polish step");
        o.flag("decoupled", tc.decoupled, "train the single-agent baseline (no coupling terms)");
        o.flag("force", force, "replace an existing output directory");
        o.flag("quiet", quiet, "no per-epoch progress");
    }

    int exec(Run& run, std::ostream& os) {
        tc.validate();
        check_disjoint(out, data);
        const Dataset ds = load_dataset(data);
        prepare_out(out, force);
        tc.checkpoint_dir = fs::path(out) / "checkpoints";
        MpcConfig mc;
        mc.embed_dim = ds.config.embed_dim;
        if (solver_max_iter < 0) throw Error(ErrorCode::InvalidConfig, "--solver-max-iter must be >= 0");
        if (solver_max_iter > 0) mc.solver.max_iter = solver_max_iter;
        if (no_polish) mc.solver.polish = false;
        const SampleSplit split = make_samples(ds, tc);
        const MpcParams init = MpcParams::init(mc.embed_dim, tc.seed, tc.init_q_scale, tc.init_sens_scale);
        auto progress = [&](const EpochStats& e) {
            if (!quiet && (e.epoch == 1 || e.epoch % 10 == 0 || e.epoch == tc.epochs))
                os << "epoch " << e.epoch << "  train " << e.train_loss << "  val " << e.val_loss << "  ("
                   << e.seconds << " s)\n";
        };
        const TrainResult tr = train(mc, tc, split, init, progress);

        // Where it was written is not part of the model.
        json stored = to_json(tc);
        stored.erase("checkpoint_dir");
        save_checkpoint(fs::path(out) / "model.json",
                        {mc, tr.params,
                         {{"train_config", stored}, {"dataset", fs::absolute(data).string()},
                          {"encoder_seed", ds.config.encoder_seed}}});
        std::ostringstream hist;
        write_history_csv(hist, tr.history);
        write_text(fs::path(out) / "history.csv", hist.str());

        std::vector<double> losses;
        for (const auto& e : tr.history) losses.push_back(e.train_loss);
        const auto sm = smooth(losses, 10);
        const EvalResult ev = evaluate(mc, tr.params, split.val, tc.S);
        run.seed = tc.seed;
        run.summary = {{"epochs", tc.epochs},
                       {"train_samples", split.train.size()},
                       {"val_samples", split.val.size()},
                       {"epoch1_loss", losses.front()},
                       {"final_smoothed_loss", sm.back()},
                       {"loss_ratio", sm.back() / losses.front()},
                       {"val_terminal_median_mm", ev.terminal_median},
                       {"val_terminal_mean_mm", ev.terminal_mean}};
        write_text(fs::path(out) / "summary.json", run.summary.dump(2) + "\n");
        run.add_output(out, "model.json");
        run.add_output(out, "history.csv");
        run.add_output(out, "summary.json");
        run.write(out);
        os << "loss ratio " << sm.back() / losses.front() << "  held-out terminal median " << ev.terminal_median
           << " mm\n";
        return kOk;
    }
};

// gradcheck -----------------------------------------------------------------

struct GradCheck {
    std::string data, ckpt, out;
    int samples = 50;
    std::uint64_t seed = 0;
    double h = 1e-5;
    double tol = 1e-4;
    double S = 3.0;
    bool force = false;

    void bind(Options& o) {
        o.add("data", data, "dataset directory")->required();
        o.add("ckpt", ckpt, "model checkpoint (default: seeded initial parameters)");
        o.add("out", out, "output directory")->required();
        o.add("samples", samples, "non-degenerate samples to check");
        o.add("seed", seed, "sample selection seed");
        o.add("fd-step", h, "relative finite-difference step");
        o.add("tol", tol, "pass threshold on relative error");
        o.add("terminal-scale", S, "terminal scaling");
        o.flag("force", force, "replace an existing output directory");
    }

    int exec(Run& run, std::ostream& os) const {
        if (samples < 1) throw Error(ErrorCode::InvalidConfig, "--samples must be >= 1");
        check_disjoint(out, data);
        const Dataset ds = load_dataset(data);
        prepare_out(out, force);
        MpcConfig mc;
        mc.embed_dim = ds.config.embed_dim;
        MpcParams params = MpcParams::init(mc.embed_dim, seed, 1e4, 3e-4);
        if (!ckpt.empty()) {
            const Checkpoint ck = load_checkpoint(ckpt);
            mc = ck.config;
            params = ck.params;
        }
        TrainConfig tc;
        tc.val_fraction = 0.0;
        tc.seed = seed;
        const auto pool = make_samples(ds, tc).train;
        std::vector<std::size_t> order(pool.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::mt19937_64 rng(seed);
        std::shuffle(order.begin(), order.end(), rng);

        std::ostringstream csv;
        csv << "sample,group,max_abs_error,max_abs_fd,rel_error\n";
        int checked = 0, skipped = 0;
        double worst = 0.0;
        char buf[160];
        for (std::size_t idx : order) {
            if (checked == samples) break;
            GradCheckReport rep;
            try {
                rep = grad_check(mc, params, pool[idx], S, h);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::DegenerateActiveSet && e.code() != ErrorCode::SolverFailed) throw;
                ++skipped;
                continue;
            }
            for (const auto& g : rep.groups) {
                std::snprintf(buf, sizeof buf, "%zu,%s,%.6e,%.6e,%.6e\n", idx, g.name.c_str(), g.max_abs_error,
                              g.max_abs_fd, g.rel_error);
                csv << buf;
            }
            worst = std::max(worst, rep.worst);
            ++checked;
        }
        write_text(fs::path(out) / "gradcheck.csv", csv.str());
        const bool pass = checked == samples && worst <= tol;
        run.seed = seed;
        run.summary = {{"checked", checked}, {"skipped", skipped}, {"worst_rel_error", worst},
                       {"tol", tol},         {"pass", pass}};
        run.add_output(out, "gradcheck.csv");
        run.write(out);
        os << (pass ? "PASS" : "FAIL") << "  " << checked << " samples (" << skipped
           << " degenerate skipped), worst relative error " << worst << " vs " << tol << '\n';
        return pass ? kOk : kValidation;
    }
};

// simulate / suite ----------------------------------------------------------

struct ModelArgs {
    std::string ckpt, single_ckpt;
    double kp = 400.0, kd = 40.0;
    double pd_target = 0.0;  // 0: calibrated
    std::uint64_t encoder_seed = 1234;

    void bind(Options& o) {
        o.add("ckpt", ckpt, "trained multi-agent checkpoint");
        o.add("single-ckpt", single_ckpt, "trained single-agent checkpoint (default: --ckpt)");
        o.add("kp", kp, "PD proportional gain");
        o.add("kd", kd, "PD derivative gain");
        o.add("pd-target", pd_target, "PD embedding-norm setpoint (0: calibrated)");
        o.add("encoder-seed", encoder_seed, "tactile encoder seed (must match training data)");
    }

    sim::ControllerSetup setup(const std::vector<sim::ControllerKind>& kinds) const {
        sim::ControllerSetup s;
        const bool needs_model = std::any_of(kinds.begin(), kinds.end(),
                                             [](auto k) { return k != sim::ControllerKind::Pd; });
        if (needs_model && ckpt.empty()) throw Error(ErrorCode::InvalidConfig, "MPC controllers need --ckpt");
        if (!ckpt.empty()) {
            const Checkpoint ck = load_checkpoint(ckpt);
            s.mpc = ck.config;
            s.params = ck.params;
        } else {
            s.params = MpcParams::init(s.mpc.embed_dim, 0);
        }
        if (!single_ckpt.empty()) s.single_params = load_checkpoint(single_ckpt).params;
        s.kp = kp;
        s.kd = kd;
        if (pd_target > 0.0) s.pd_target_norm = pd_target;
        return s;
    }

    sim::WorldConfig world(const sim::ControllerSetup& s) const {
        sim::WorldConfig w;
        w.embed_dim = s.mpc.embed_dim;
        w.encoder_seed = encoder_seed;
        return w;
    }
};

struct Simulate {
    ModelArgs model;
    std::string controller = "multi", object = "compliant_cylinder", out;
    std::uint64_t seed = 0;
    double duration = 20.0;
    bool force = false;

    void bind(Options& o) {
        model.bind(o);
        o.add("controller", controller, "multi, single or pd");
        o.add("object", object, "object from the simulation menu");
        o.add("seed", seed, "episode seed");
        o.add("duration", duration, "episode length, s");
        o.add("out", out, "output directory")->required();
        o.flag("force", force, "replace an existing output directory");
    }

    int exec(Run& run, std::ostream& os) const {
        const auto kind = sim::parse_controller(controller);
        const auto setup = model.setup({kind});
        sim::WorldConfig w = model.world(setup);
        w.object = sim::find_object(object);
        prepare_out(out, force);
        auto ctl = sim::make_controller(kind, setup);
        const auto r = sim::run_episode(*ctl, w, duration, seed);

        std::ostringstream trace;
        sim::write_trace_csv(trace, r);
        write_text(fs::path(out) / "trace.csv", trace.str());
        const auto rt = r.runtime();
        json episode = {{"success", r.success},
                        {"hold_duration_s", r.hold_duration},
                        {"final_status", sim::to_string(r.final_status)},
                        {"solver_failures", r.solver_failures},
                        {"trace_hash", hex(sim::trace_hash(r))}};
        try {
            const auto m = sim::stability_metrics(r);
            episode["settle_time_s"] = m.settle_time;
            episode["inter_agent_gap_mm"] = m.inter_agent_gap;
            episode["post_settle_variance_mm2"] = m.post_settle_variance;
        } catch (const Error& e) {
            if (e.code() != ErrorCode::NeverSettled) throw;
            episode["settle_time_s"] = nullptr;
        }
        write_text(fs::path(out) / "episode.json", episode.dump(2) + "\n");
        write_text(fs::path(out) / "runtime.json",
                   json{{"median_s", rt.median}, {"p95_s", rt.p95}, {"max_s", rt.max}}.dump(2) + "\n");
        run.seed = seed;
        run.summary = episode;
        run.add_output(out, "trace.csv");
        run.add_output(out, "episode.json");
        run.add_output(out, "runtime.json", true);
        run.write(out);
        os << controller << " on " << object << ": " << (r.success ? "success" : "failure") << " ("
           << sim::to_string(r.final_status) << " after " << r.hold_duration << " s)\n";
        return kOk;
    }
};

struct Suite {
    ModelArgs model;
    std::string objects, controllers = "multi,single,pd", out;
    int episodes = 10;
    double duration = 20.0;
    std::uint64_t seed = 0;
    bool force = false;

    void bind(Options& o) {
        model.bind(o);
        o.add("objects", objects, "comma-separated objects (default: whole menu)");
        o.add("controllers", controllers, "comma-separated controllers");
        o.add("episodes", episodes, "episodes per object and controller");
        o.add("duration", duration, "episode length, s");
        o.add("seed", seed, "episode e uses seed + e");
        o.add("out", out, "output directory")->required();
        o.flag("force", force, "replace an existing output directory");
    }

    int exec(Run& run, std::ostream& os) const {
        std::vector<sim::ControllerKind> kinds;
        for (const auto& c : split_csv(controllers)) kinds.push_back(sim::parse_controller(c));
        if (kinds.empty()) throw Error(ErrorCode::InvalidConfig, "--controllers is empty");
        std::vector<sim::ObjectModel> objs;
        if (objects.empty()) {
            objs = sim::object_menu();
        } else {
            for (const auto& n : split_csv(objects)) objs.push_back(sim::find_object(n));
        }
        const auto setup = model.setup(kinds);
        prepare_out(out, force);
        const auto res = sim::run_suite(setup, objs, kinds, episodes, duration, seed, model.world(setup));

        std::ostringstream csv;
        sim::write_suite_csv(csv, res);
        write_text(fs::path(out) / "suite.csv", csv.str());
        json cells = json::array();
        for (const auto& c : res.cells)
            cells.push_back({{"object", c.object},
                             {"controller", sim::to_string(c.controller)},
                             {"episodes", c.episodes},
                             {"successes", c.successes},
                             {"settled", c.settled},
                             {"mean_variance_mm2", c.mean_variance},
                             {"solver_failures", c.solver_failures}});
        json rates = json::object();
        for (auto k : kinds) rates[sim::to_string(k)] = res.success_rate(k);
        write_text(fs::path(out) / "suite.json", json{{"cells", cells}, {"success_rate", rates}}.dump(2) + "\n");
        run.seed = seed;
        run.summary = {{"success_rate", rates}};
        run.add_output(out, "suite.csv");
        run.add_output(out, "suite.json");
        run.write(out);
        os << csv.str();
        return kOk;
    }
};

// bench ---------------------------------------------------------------------

struct Bench {
    std::string batches = "1,2,4,8,16,32,64,128", ckpt, out;
    int reps = 20, warmup = 3;
    std::uint64_t seed = 0;
    bool parallel = false, force = false;

    void bind(Options& o) {
        o.add("batches", batches, "comma-separated batch sizes");
        o.add("reps", reps, "timed repetitions per batch size");
        o.add("warmup", warmup, "untimed warmup runs");
        o.add("seed", seed, "input and parameter seed");
        o.add("ckpt", ckpt, "parameters to time (default: seeded initial parameters)");
        o.add("out", out, "output directory")->required();
        o.flag("parallel", parallel, "OpenMP batch kernels (not used for acceptance numbers)");
        o.flag("force", force, "replace an existing output directory");
    }

    int exec(Run& run, std::ostream& os) const {
        BenchConfig bc;
        bc.batch_sizes = parse_ints(batches);
        bc.repetitions = reps;
        bc.warmup = warmup;
        bc.seed = seed;
        bc.exec = parallel ? Execution::Parallel : Execution::Serial;
        bc.validate();
        MpcConfig mc;
        if (!ckpt.empty()) {
            const Checkpoint ck = load_checkpoint(ckpt);
            mc = ck.config;
            bc.params = ck.params;
        }
        prepare_out(out, force);
        const auto res = run_bench(mc, bc);
        std::ostringstream csv;
        write_bench_csv(csv, res);
        write_text(fs::path(out) / "bench.csv", csv.str());
        double worst = 0.0;
        json hashes = json::object();
        for (const auto& r : res) {
            if (r.batch_size >= 2) worst = std::max(worst, r.increase_pct);
            hashes[std::to_string(r.batch_size)] = hex(r.input_hash);
        }
        run.seed = seed;
        run.summary = {{"max_increase_pct_batch_ge_2", worst},
                       {"multi_monotone", multi_monotone(res)},
                       {"input_hashes", hashes}};
        run.add_output(out, "bench.csv", true);
        run.write(out);
        os << csv.str();
        return kOk;
    }
};

// export --------------------------------------------------------------------

struct Export {
    std::string ckpt, out;
    bool force = false;

    void bind(Options& o) {
        o.add("ckpt", ckpt, "checkpoint to export")->required();
        o.add("out", out, "output directory")->required();
        o.flag("force", force, "replace an existing output directory");
    }

    int exec(Run& run, std::ostream& os) const {
        const Checkpoint ck = load_checkpoint(ckpt);
        check_disjoint(out, fs::path(ckpt).parent_path());
        prepare_out(out, force);
        const auto qf = assemble_qf_detailed(ck.params, ck.config);
        std::ostringstream q, sens;
        q.precision(12);
        sens.precision(12);
        for (Eigen::Index i = 0; i < qf.Qf.rows(); ++i) {
            for (Eigen::Index j = 0; j < qf.Qf.cols(); ++j) q << (j ? "," : "") << qf.Qf(i, j);
            q << '\n';
        }
        sens << "index,A_f,C_f\n";
        for (Eigen::Index i = 0; i < ck.params.A_f.size(); ++i)
            sens << i << ',' << ck.params.A_f[i] << ',' << ck.params.C_f[i] << '\n';
        write_text(fs::path(out) / "qf.csv", q.str());
        write_text(fs::path(out) / "sensitivities.csv", sens.str());
        run.summary = {{"alpha", ck.params.alpha}, {"qf_min_eig_raw", qf.min_eig_raw}, {"qf_shift", qf.shift}};
        run.add_output(out, "qf.csv");
        run.add_output(out, "sensitivities.csv");
        run.write(out);
        os << "exported " << qf.Qf.rows() << "x" << qf.Qf.cols() << " penalty and sensitivities to " << out << '\n';
        return kOk;
    }
};

int exit_code(const Error& e) {
    switch (e.code()) {
        case ErrorCode::SolverFailed: return kSolverBudget;
        case ErrorCode::Io: return kUnexpected;
        default: return kValidation;
    }
}

}  // namespace

int run(const std::vector<std::string>& args_in, std::ostream& out, std::ostream& err) {
    CLI::App app{"Tactile multi-agent MPC: data, training, checks, simulation and benchmarks", "tacmpc"};
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(TACMPC_VERSION));

    GenData gen;
    Train tr;
    GradCheck gc;
    Simulate simc;
    Suite suite;
    Bench bench;
    Export exp;
    std::map<std::string, std::pair<std::unique_ptr<Options>, std::function<int(Run&)>>> subs;
    std::string config_file;
    auto add = [&](const std::string& name, const std::string& help, auto& cmd) {
        CLI::App* a = app.add_subcommand(name, help);
        a->add_option("--config", config_file, "JSON config or run.json; flags win");
        auto opts = std::make_unique<Options>(a);
        cmd.bind(*opts);
        subs[name] = {std::move(opts), [&cmd, &out](Run& r) { return cmd.exec(r, out); }};
    };
    add("gen-data", "generate a synthetic tactile dataset", gen);
    add("train", "train the MPC layer on a dataset", tr);
    add("gradcheck", "compare analytic and finite-difference gradients", gc);
    add("simulate", "run one closed-loop grasp episode", simc);
    add("suite", "run the grasp study across objects and controllers", suite);
    add("bench", "time coupled against single-agent batch forwards", bench);
    add("export", "write a checkpoint's penalty and sensitivities as CSV", exp);

    try {
        // A config file becomes leading tokens so explicit flags override it.
        std::vector<std::string> args = args_in;
        for (std::size_t i = 0; i < args.size(); ++i) {
            std::string path;
            if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
            else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
            if (path.empty()) continue;
            std::string recorded;
            auto tokens = config_tokens(path, &recorded);
            if (args.empty() || subs.find(args[0]) == subs.end())
                throw Error(ErrorCode::InvalidConfig, "--config must follow a subcommand");
            if (!recorded.empty() && recorded != args[0])
                throw Error(ErrorCode::InvalidConfig, path + " records subcommand '" + recorded + "', not '" + args[0] + "'");
            CLI::App* sub = subs[args[0]].first->app();
            for (const auto& t : tokens) {
                const std::string key = t.substr(0, t.find('='));
                if (!sub->get_option_no_throw(key))
                    throw Error(ErrorCode::InvalidConfig, path + ": unknown key '" + key.substr(2) + "' for " + args[0]);
            }
            args.insert(args.begin() + 1, tokens.begin(), tokens.end());
            break;
        }
        std::vector<std::string> rev(args.rbegin(), args.rend());
        try {
            app.parse(rev);
        } catch (const CLI::ParseError& e) {
            const int code = app.exit(e, out, err);
            return code == 0 ? kOk : kValidation;
        }
        for (auto& [name, entry] : subs) {
            if (!app.got_subcommand(name)) continue;
            Run r;
            r.subcommand = name;
            r.config = entry.first->resolved();
            return entry.second(r);
        }
        return kValidation;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return exit_code(e);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kUnexpected;
    }
}

}  // namespace tacmpc::cli
