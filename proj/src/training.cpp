#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>
#include <set>

#include "tacmpc/checkpoint.hpp"
#include "tacmpc/error.hpp"
#include "tacmpc/training.hpp"

namespace tacmpc {

using nlohmann::json;

void TrainConfig::validate() const {
    if (!(S > 0)) throw Error(ErrorCode::InvalidConfig, "terminal scaling S must be > 0");
    if (epochs < 1 || batch_size < 1 || frame_stride < 1) {
        throw Error(ErrorCode::InvalidConfig, "epochs, batch size and frame stride must be >= 1");
    }
    if (!(learning_rate > 0) || !(rms_decay > 0 && rms_decay < 1) || !(rms_eps > 0)) {
        throw Error(ErrorCode::InvalidConfig, "optimizer constants out of range");
    }
    if (!(val_fraction >= 0 && val_fraction < 1) || !(max_fail_fraction >= 0 && max_fail_fraction <= 1)) {
        throw Error(ErrorCode::InvalidConfig, "fractions must lie in [0, 1)");
    }
    AdaptiveOptimizer::parse(optimizer);
    if (!(label_margin >= 0) || !(init_q_scale > 0) || !(init_sens_scale > 0) || checkpoint_every < 0) {
        throw Error(ErrorCode::InvalidConfig, "invalid training constants");
    }
}

json to_json(const TrainConfig& c) {
    return {{"S", c.S},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"optimizer", c.optimizer},
            {"rms_decay", c.rms_decay},
            {"rms_eps", c.rms_eps},
            {"seed", c.seed},
            {"label_margin", c.label_margin},
            {"val_fraction", c.val_fraction},
            {"frame_stride", c.frame_stride},
            {"max_fail_fraction", c.max_fail_fraction},
            {"decoupled", c.decoupled},
            {"init_q_scale", c.init_q_scale},
            {"init_sens_scale", c.init_sens_scale},
            {"checkpoint_dir", c.checkpoint_dir.string()},
            {"checkpoint_every", c.checkpoint_every}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    try {
        c.S = j.value("S", c.S);
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.optimizer = j.value("optimizer", c.optimizer);
        c.rms_decay = j.value("rms_decay", c.rms_decay);
        c.rms_eps = j.value("rms_eps", c.rms_eps);
        c.seed = j.value("seed", c.seed);
        c.label_margin = j.value("label_margin", c.label_margin);
        c.val_fraction = j.value("val_fraction", c.val_fraction);
        c.frame_stride = j.value("frame_stride", c.frame_stride);
        c.max_fail_fraction = j.value("max_fail_fraction", c.max_fail_fraction);
        c.decoupled = j.value("decoupled", c.decoupled);
        c.init_q_scale = j.value("init_q_scale", c.init_q_scale);
        c.init_sens_scale = j.value("init_sens_scale", c.init_sens_scale);
        c.checkpoint_dir = j.value("checkpoint_dir", std::string());
        c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Parse, std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

SampleSplit make_samples(const Dataset& ds, const TrainConfig& cfg) {
    cfg.validate();
    std::set<int> ids;
    for (const auto& r : ds.records) ids.insert(r.trial_id);
    std::vector<int> order(ids.begin(), ids.end());
    std::mt19937_64 rng(cfg.seed ^ 0x5eed5711ULL);
    std::shuffle(order.begin(), order.end(), rng);
    auto n_val = static_cast<std::size_t>(std::lround(cfg.val_fraction * static_cast<double>(order.size())));
    if (cfg.val_fraction > 0 && n_val == 0 && order.size() > 1) n_val = 1;
    const std::set<int> val_ids(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));

    SampleSplit out;
    for (const auto& r : ds.records) {
        const double y = r.slippage_opening - cfg.label_margin;
        for (std::size_t k = 0; k < r.frames.size(); ++k) {
            if (k % static_cast<std::size_t>(cfg.frame_stride) != 0) continue;
            const TrialFrame& f = r.frames[k];
            Sample s;
            s.in.s1 = {f.opening[0], 0.0};
            s.in.s2 = {f.opening[1], 0.0};
            s.in.f1 = f.embedding[0].cast<double>();
            s.in.f2 = f.embedding[1].cast<double>();
            s.target = Eigen::Vector2d(y, y);
            s.trial_id = r.trial_id;
            (val_ids.count(r.trial_id) ? out.val : out.train).push_back(std::move(s));
        }
    }
    return out;
}

LossEval trajectory_loss(const MatX& pred, const Eigen::Vector2d& target, double S) {
    if (pred.rows() != 2 || pred.cols() < 1) {
        throw Error(ErrorCode::DimensionMismatch, "predictions must be 2 x N");
    }
    const auto N = pred.cols();
    LossEval e;
    e.grad = MatX::Zero(2, N);
    const double S2 = S * S;
    for (int i = 0; i < 2; ++i) {
        for (Eigen::Index k = 0; k < N; ++k) {
            const double d = pred(i, k) - target[i];
            e.trajectory += d * d / static_cast<double>(N);
            e.grad(i, k) += 2.0 * d / static_cast<double>(N);
        }
        const double dT = pred(i, N - 1) - target[i];
        e.terminal += S2 * dT * dT;
        e.grad(i, N - 1) += 2.0 * S2 * dT;
    }
    e.value = e.trajectory + e.terminal;
    return e;
}

AdaptiveOptimizer::Kind AdaptiveOptimizer::parse(const std::string& name) {
    if (name == "adagrad") return Kind::Adagrad;
    if (name == "rmsprop") return Kind::RmsProp;
    throw Error(ErrorCode::InvalidConfig, "unknown optimizer '" + name + "' (adagrad, rmsprop)");
}

void AdaptiveOptimizer::step(VecX& theta, const VecX& grad) {
    if (sq_.size() != theta.size()) sq_ = VecX::Zero(theta.size());
    if (kind_ == Kind::Adagrad) {
        sq_ += grad.cwiseAbs2();
    } else {
        sq_ = decay_ * sq_ + (1.0 - decay_) * grad.cwiseAbs2();
    }
    theta.array() -= lr_ * grad.array() / (sq_.array().sqrt() + eps_);
}

EvalResult evaluate(const MpcConfig& mcfg, const MpcParams& params, const std::vector<Sample>& samples, double S) {
    const MpcLayer layer(mcfg);
    const PreparedParams pp = layer.prepare(params);
    const auto n = static_cast<std::ptrdiff_t>(samples.size());
    std::vector<double> loss(samples.size()), traj(samples.size()), term(samples.size());
    std::vector<double> err(2 * samples.size());
    std::vector<char> ok(samples.size(), 0);
#pragma omp parallel for schedule(dynamic, 16)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const Sample& s = samples[static_cast<std::size_t>(i)];
        try {
            const MpcOutput out = layer.forward(pp, s.in);
            const LossEval le = trajectory_loss(out.predicted_openings, s.target, S);
            loss[i] = le.value;
            traj[i] = le.trajectory;
            term[i] = le.terminal;
            const auto N = out.predicted_openings.cols();
            for (int a = 0; a < 2; ++a) err[2 * i + a] = std::abs(out.predicted_openings(a, N - 1) - s.target[a]);
            ok[i] = 1;
        } catch (const Error& e) {
            if (e.code() != ErrorCode::SolverFailed) throw;
        }
    }
    EvalResult r;
    std::vector<double> errs;
    int good = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (!ok[i]) {
            ++r.failures;
            continue;
        }
        ++good;
        r.loss += loss[i];
        r.trajectory += traj[i];
        r.terminal += term[i];
        errs.push_back(err[2 * i]);
        errs.push_back(err[2 * i + 1]);
    }
    if (good) {
        r.loss /= good;
        r.trajectory /= good;
        r.terminal /= good;
        r.terminal_mean = std::accumulate(errs.begin(), errs.end(), 0.0) / static_cast<double>(errs.size());
        std::nth_element(errs.begin(), errs.begin() + static_cast<std::ptrdiff_t>(errs.size() / 2), errs.end());
        r.terminal_median = errs[errs.size() / 2];
        if (errs.size() % 2 == 0) {
            const double lo = *std::max_element(errs.begin(), errs.begin() + static_cast<std::ptrdiff_t>(errs.size() / 2));
            r.terminal_median = 0.5 * (r.terminal_median + lo);
        }
    }
    return r;
}

TrainResult train(const MpcConfig& mcfg, const TrainConfig& cfg, const SampleSplit& data, const MpcParams& init,
                  const EpochCallback& on_epoch) {
    cfg.validate();
    if (data.train.empty()) throw Error(ErrorCode::InvalidConfig, "training split is empty");
    const MpcLayer layer(mcfg);
    const int M = mcfg.embed_dim;
    layer.prepare(init);  // validates shapes and the penalty floor

    TrainResult res;
    res.params = init;
    if (cfg.decoupled) {
        res.params = init.decoupled();
        res.params.Qc.setZero();
    }
    VecX theta = res.params.flatten();
    // Coordinates the decoupled model never updates: C_f, Qc and alpha.
    VecX frozen = VecX::Zero(theta.size());
    if (cfg.decoupled) {
        MpcParams mask = MpcParams::unflatten(VecX::Zero(theta.size()), M);
        mask.C_f.setOnes();
        mask.Qc.setOnes();
        mask.alpha = 1.0;
        frozen = mask.flatten();
    }
    AdaptiveOptimizer opt(AdaptiveOptimizer::parse(cfg.optimizer), cfg.learning_rate, cfg.rms_decay, cfg.rms_eps);
    std::mt19937_64 rng(cfg.seed);
    const std::size_t n = data.train.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<std::optional<qp::QpSolution>> warm(n);

    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    std::vector<VecX> grads(bs);
    std::vector<double> losses(bs);
    std::vector<char> ok(bs), degen(bs);

    if (!cfg.checkpoint_dir.empty()) std::filesystem::create_directories(cfg.checkpoint_dir);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), rng);
        EpochStats st;
        st.epoch = epoch;
        double loss_sum = 0.0;
        std::size_t loss_count = 0;
        for (std::size_t b0 = 0; b0 < n; b0 += bs) {
            const std::size_t cnt = std::min(bs, n - b0);
            const PreparedParams pp = layer.prepare(res.params);
#pragma omp parallel for schedule(dynamic, 2)
            for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(cnt); ++j) {
                const std::size_t idx = order[b0 + static_cast<std::size_t>(j)];
                const Sample& s = data.train[idx];
                ok[j] = 0;
                try {
                    MpcOutput out = layer.forward(pp, s.in, warm[idx] ? &*warm[idx] : nullptr);
                    const LossEval le = trajectory_loss(out.predicted_openings, s.target, cfg.S);
                    const BackwardResult br = layer.backward(pp, s.in, out, le.grad, Eigen::Vector2d::Zero());
                    grads[j] = br.grads.flatten_params();
                    losses[j] = le.value;
                    degen[j] = br.degenerate;
                    warm[idx] = std::move(out.qp);
                    ok[j] = 1;
                } catch (const Error& e) {
                    if (e.code() != ErrorCode::SolverFailed) throw;
                    warm[idx].reset();
                }
            }
            // Fixed-order reduction keeps runs reproducible under any thread count.
            VecX g = VecX::Zero(theta.size());
            int good = 0;
            for (std::size_t j = 0; j < cnt; ++j) {
                if (!ok[j]) continue;
                g += grads[j];
                loss_sum += losses[j];
                st.degenerate += degen[j];
                ++good;
            }
            const int failed = static_cast<int>(cnt) - good;
            st.failures += failed;
            if (failed > cfg.max_fail_fraction * static_cast<double>(cnt)) {
                throw Error(ErrorCode::SolverFailed, std::to_string(failed) + " of " + std::to_string(cnt) +
                                                         " samples failed in one batch of epoch " +
                                                         std::to_string(epoch));
            }
            if (good == 0) continue;
            loss_count += static_cast<std::size_t>(good);
            g /= good;
            if (cfg.decoupled) g = (frozen.array() > 0).select(0.0, g);
            opt.step(theta, g);
            res.params = MpcParams::unflatten(theta, M);
        }
        st.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
        st.val_loss = data.val.empty() ? 0.0 : evaluate(mcfg, res.params, data.val, cfg.S).loss;
        st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        res.history.push_back(st);

        if (!cfg.checkpoint_dir.empty()) {
            Checkpoint ck{mcfg, res.params, {{"epoch", epoch}, {"train_loss", st.train_loss}, {"val_loss", st.val_loss},
                                             {"train_config", to_json(cfg)}}};
            save_checkpoint(cfg.checkpoint_dir / "checkpoint_latest.json", ck);
            if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
                char name[64];
                std::snprintf(name, sizeof name, "checkpoint_epoch%03d.json", epoch);
                save_checkpoint(cfg.checkpoint_dir / name, ck);
            }
        }
        if (on_epoch) on_epoch(st);
    }
    return res;
}

std::vector<double> smooth(const std::vector<double>& v, int window) {
    std::vector<double> out(v.size());
    const auto w = static_cast<std::size_t>(std::max(1, window));
    double acc = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        acc += v[i];
        if (i >= w) acc -= v[i - w];
        out[i] = acc / static_cast<double>(std::min(i + 1, w));
    }
    return out;
}

void write_history_csv(std::ostream& os, const std::vector<EpochStats>& h) {
    os << "epoch,train_loss,val_loss\n";
    char buf[128];
    for (const auto& e : h) {
        std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g\n", e.epoch, e.train_loss, e.val_loss);
        os << buf;
    }
}

namespace {

constexpr double kGradFloor = 1e-2;

double sample_loss(const MpcLayer& layer, const MpcParams& p, const MpcInputs& in, const Eigen::Vector2d& y,
                   double S) {
    return trajectory_loss(layer.forward(p, in).predicted_openings, y, S).value;
}

}  // namespace

GradCheckReport grad_check(const MpcConfig& mcfg, const MpcParams& params, const Sample& sample, double S, double h) {
    const MpcLayer layer(mcfg);
    const int M = mcfg.embed_dim;
    const MpcOutput out = layer.forward(params, sample.in);
    const LossEval le = trajectory_loss(out.predicted_openings, sample.target, S);
    const BackwardResult br = layer.backward(params, sample.in, out, le.grad, Eigen::Vector2d::Zero());
    if (br.degenerate) {
        throw Error(ErrorCode::DegenerateActiveSet, "sample sits on a degenerate active set; gradient check skipped");
    }

    const VecX theta = params.flatten();
    const VecX ana_theta = br.grads.flatten_params();
    std::vector<double> fd(static_cast<std::size_t>(theta.size()) + 2 * M), ana(fd.size()), step(fd.size());
    const auto n_theta = static_cast<std::ptrdiff_t>(theta.size());
    const auto total = static_cast<std::ptrdiff_t>(fd.size());

    const int tri = M * (M + 1) / 2;
    const std::pair<const char*, int> groups[] = {{"A_f", M}, {"C_f", M}, {"Q1", tri}, {"Q2", tri},
                                                  {"Qc", M * M}, {"alpha", 1}, {"f1", M}, {"f2", M}};
    VecX x(total);
    x << theta, sample.in.f1, sample.in.f2;
    // Steps follow each group's magnitude so that velocity sensitivities
    // (~1e-4) and penalty factors (~1e4) see comparable relative
    // perturbations; all-zero groups use h itself.
    {
        Eigen::Index at = 0;
        for (const auto& [name, size] : groups) {
            const double rms = x.segment(at, size).norm() / std::sqrt(static_cast<double>(size));
            for (int j = 0; j < size; ++j, ++at) {
                const double scale = std::max(std::abs(x[at]), rms);
                step[static_cast<std::size_t>(at)] = scale > 0 ? h * scale : h;
            }
        }
    }
#pragma omp parallel for schedule(dynamic, 8)
    for (std::ptrdiff_t i = 0; i < total; ++i) {
        double lp, lm;
        if (i < n_theta) {
            VecX tp = theta, tm = theta;
            tp[i] += step[i];
            tm[i] -= step[i];
            lp = sample_loss(layer, MpcParams::unflatten(tp, M), sample.in, sample.target, S);
            lm = sample_loss(layer, MpcParams::unflatten(tm, M), sample.in, sample.target, S);
            ana[i] = ana_theta[i];
        } else {
            const auto c = static_cast<int>(i - n_theta);
            MpcInputs ip = sample.in, im = sample.in;
            (c < M ? ip.f1 : ip.f2)[c % M] += step[i];
            (c < M ? im.f1 : im.f2)[c % M] -= step[i];
            lp = sample_loss(layer, params, ip, sample.target, S);
            lm = sample_loss(layer, params, im, sample.target, S);
            ana[i] = (c < M ? br.grads.f1 : br.grads.f2)[c % M];
        }
        fd[i] = (lp - lm) / (2.0 * step[i]);
    }

    GradCheckReport rep;
    std::size_t at = 0;
    for (const auto& [name, size] : groups) {
        GradCheckGroup g;
        g.name = name;
        for (int j = 0; j < size; ++j, ++at) {
            g.max_abs_error = std::max(g.max_abs_error, std::abs(fd[at] - ana[at]));
            g.max_abs_fd = std::max(g.max_abs_fd, std::abs(fd[at]));
        }
        // Relative to the tensor's gradient scale. Below the floor the
        // differences are round-off of a solve-based loss, so the error is
        // judged against the floor instead.
        g.rel_error = g.max_abs_error / std::max(g.max_abs_fd, kGradFloor);
        rep.worst = std::max(rep.worst, g.rel_error);
        rep.groups.push_back(g);
    }
    return rep;
}

}  // namespace tacmpc
