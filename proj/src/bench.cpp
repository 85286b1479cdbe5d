#include "tacmpc/bench.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstdio>
#include <ostream>
#include <random>

#include "tacmpc/error.hpp"
#include "tacmpc/tactile.hpp"

namespace tacmpc {

void BenchConfig::validate() const {
    if (batch_sizes.empty()) throw Error(ErrorCode::InvalidConfig, "bench: no batch sizes");
    for (int b : batch_sizes)
        if (b < 1) throw Error(ErrorCode::InvalidConfig, "bench: batch size must be >= 1");
    if (repetitions < 1) throw Error(ErrorCode::InvalidConfig, "bench: repetitions must be >= 1");
    if (warmup < 0) throw Error(ErrorCode::InvalidConfig, "bench: warmup must be >= 0");
}

std::vector<MpcInputs> bench_inputs(const MpcConfig& cfg, int count, std::uint64_t seed) {
    if (count < 0) throw Error(ErrorCode::InvalidConfig, "bench: negative input count");
    SyntheticEncoder enc(cfg.embed_dim, seed);
    std::mt19937_64 rng(seed ^ 0xbe7c4b1dULL);
    std::uniform_real_distribution<double> opening(20.0, 60.0), vel(-5.0, 5.0), depth(0.0, 2.0),
        shear(-0.5, 0.5), kappa(0.5, 3.0);
    std::vector<MpcInputs> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        MpcInputs in;
        in.s1 = {opening(rng), vel(rng)};
        in.s2 = {opening(rng), vel(rng)};
        const double k = kappa(rng);
        in.f1 = enc.encode({depth(rng), shear(rng), k, false});
        in.f2 = enc.encode({depth(rng), shear(rng), k, false});
        out.push_back(std::move(in));
    }
    return out;
}

std::uint64_t hash_inputs(std::span<const MpcInputs> batch) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&](double x) {
        auto bits = std::bit_cast<std::uint64_t>(x);
        for (int i = 0; i < 8; ++i) {
            h ^= (bits >> (8 * i)) & 0xffU;
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& in : batch) {
        mix(in.s1.p), mix(in.s1.v), mix(in.s2.p), mix(in.s2.v);
        for (double x : in.f1) mix(x);
        for (double x : in.f2) mix(x);
    }
    return h;
}

namespace {

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int outliers(const std::vector<double>& v, double med) {
    return static_cast<int>(std::count_if(v.begin(), v.end(), [&](double t) { return t > 3.0 * med; }));
}

template <class F>
double time_once(F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

std::vector<BenchResult> run_bench(const MpcConfig& cfg, const BenchConfig& bc) {
    cfg.validate();
    bc.validate();
    const MpcLayer layer(cfg);
    const MpcParams params = bc.params ? *bc.params : MpcParams::init(cfg.embed_dim, bc.seed, 1e4, 3e-4);
    params.validate(cfg.embed_dim);

    std::vector<BenchResult> results;
    for (int b : bc.batch_sizes) {
        // Each arm gets its own copy so a mutation in one cannot leak into the other.
        const auto multi_in = bench_inputs(cfg, b, bc.seed + static_cast<std::uint64_t>(b));
        const auto single_in = multi_in;
        BenchResult r;
        r.batch_size = b;
        r.repetitions = bc.repetitions;
        r.warmup = bc.warmup;
        r.input_hash = hash_inputs(multi_in);
        if (hash_inputs(single_in) != r.input_hash)
            throw Error(ErrorCode::InvalidConfig, "bench: arms received different inputs");

        int mf = 0, sf = 0;
        auto run_multi = [&] {
            auto res = forward_batch(layer, params, multi_in, bc.exec);
            mf = static_cast<int>(std::count_if(res.begin(), res.end(), [](const BatchItem& x) { return !x.out; }));
        };
        auto run_single = [&] {
            auto res = forward_single_batch(layer, params, single_in, bc.exec);
            sf = 0;
            for (const auto& x : res) sf += !x.agent[0] + !x.agent[1];
        };
        for (int w = 0; w < bc.warmup; ++w) run_multi(), run_single();

        // Interleaved so slow drift in machine load hits both arms alike.
        std::vector<double> tm, ts;
        for (int rep = 0; rep < bc.repetitions; ++rep) {
            tm.push_back(time_once(run_multi));
            r.multi_failures += mf;
            ts.push_back(time_once(run_single));
            r.single_failures += sf;
        }
        r.multi_rt = median(tm);
        r.single_rt = median(ts);
        r.multi_outliers = outliers(tm, r.multi_rt);
        r.single_outliers = outliers(ts, r.single_rt);
        r.increase_pct = 100.0 * (r.multi_rt - r.single_rt) / r.single_rt;
        results.push_back(r);
    }
    return results;
}

bool multi_monotone(const std::vector<BenchResult>& r, double slack) {
    for (std::size_t i = 1; i < r.size(); ++i)
        if (r[i].batch_size > r[i - 1].batch_size && r[i].multi_rt < (1.0 - slack) * r[i - 1].multi_rt) return false;
    return true;
}

void write_bench_csv(std::ostream& os, const std::vector<BenchResult>& r) {
    os << "batch_size,multi_rt_s,single_rt_s,increase_pct,repetitions,warmup,multi_outliers,single_outliers,"
          "multi_failures,single_failures,input_hash\n";
    char buf[320];
    for (const auto& x : r) {
        std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.4f,%d,%d,%d,%d,%d,%d,%016llx\n", x.batch_size, x.multi_rt,
                      x.single_rt, x.increase_pct, x.repetitions, x.warmup, x.multi_outliers, x.single_outliers,
                      x.multi_failures, x.single_failures, static_cast<unsigned long long>(x.input_hash));
        os << buf;
    }
}

}  // namespace tacmpc
