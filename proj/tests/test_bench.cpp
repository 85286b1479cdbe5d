#include <doctest.h>

#include <sstream>

#include "tacmpc/bench.hpp"
#include "tacmpc/error.hpp"

using namespace tacmpc;

TEST_CASE("bench inputs are seeded and hash stably") {
    const MpcConfig cfg;
    const auto a = bench_inputs(cfg, 5, 3);
    const auto b = bench_inputs(cfg, 5, 3);
    const auto c = bench_inputs(cfg, 5, 4);
    CHECK(hash_inputs(a) == hash_inputs(b));
    CHECK(hash_inputs(a) != hash_inputs(c));
    auto d = a;
    d[2].f1[0] = std::nextafter(d[2].f1[0], 1e9);
    CHECK(hash_inputs(d) != hash_inputs(a));
    // FNV-1a offset basis for the empty input
    CHECK(hash_inputs({}) == 0xcbf29ce484222325ULL);
    for (const auto& in : a) {
        CHECK(in.f1.size() == cfg.embed_dim);
        CHECK(in.s1.p >= 20.0);
        CHECK(in.s1.p <= 60.0);
    }
}

TEST_CASE("run_bench reports every batch size with sane timings") {
    const MpcConfig cfg;
    BenchConfig bc;
    bc.batch_sizes = {1, 2, 4};
    bc.repetitions = 5;
    bc.warmup = 1;
    const auto r = run_bench(cfg, bc);
    REQUIRE(r.size() == 3);
    for (std::size_t i = 0; i < r.size(); ++i) {
        CHECK(r[i].batch_size == bc.batch_sizes[i]);
        CHECK(r[i].multi_rt > 0.0);
        CHECK(r[i].single_rt > 0.0);
        CHECK(r[i].increase_pct == doctest::Approx(100.0 * (r[i].multi_rt / r[i].single_rt - 1.0)));
        CHECK(r[i].multi_failures == 0);
        CHECK(r[i].single_failures == 0);
        CHECK(r[i].repetitions == 5);
        CHECK(r[i].input_hash == hash_inputs(bench_inputs(cfg, r[i].batch_size, bc.seed + r[i].batch_size)));
    }
}

TEST_CASE("bench config validation") {
    const MpcConfig cfg;
    BenchConfig bc;
    bc.batch_sizes = {};
    CHECK_THROWS_AS(run_bench(cfg, bc), Error);
    bc.batch_sizes = {0};
    CHECK_THROWS_AS(run_bench(cfg, bc), Error);
    bc.batch_sizes = {1};
    bc.repetitions = 0;
    CHECK_THROWS_AS(run_bench(cfg, bc), Error);
}

TEST_CASE("monotonicity tolerates ten percent") {
    auto mk = [](int b, double t) {
        BenchResult r;
        r.batch_size = b;
        r.multi_rt = t;
        return r;
    };
    CHECK(multi_monotone({mk(1, 1.0), mk(2, 2.0), mk(4, 4.0)}));
    CHECK(multi_monotone({mk(1, 1.0), mk(2, 0.95)}));
    CHECK_FALSE(multi_monotone({mk(1, 1.0), mk(2, 0.85)}));
    CHECK(multi_monotone({}));
}

TEST_CASE("bench csv layout") {
    BenchResult r;
    r.batch_size = 8;
    r.multi_rt = 0.002;
    r.single_rt = 0.001;
    r.increase_pct = 100.0;
    r.input_hash = 0xabc;
    std::ostringstream os;
    write_bench_csv(os, {r});
    const auto s = os.str();
    CHECK(s.rfind("batch_size,multi_rt_s,single_rt_s,increase_pct,", 0) == 0);
    CHECK(s.find("\n8,0.002,0.001,100.0000,") != std::string::npos);
    CHECK(s.find("0000000000000abc") != std::string::npos);
}
