#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "tacmpc/checkpoint.hpp"
#include "tacmpc/error.hpp"

using namespace tacmpc;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const char* name) {
    const fs::path dir = fs::temp_directory_path() / "tacmpc_ckpt_test";
    fs::create_directories(dir);
    return dir / name;
}

ErrorCode load_error(const fs::path& p) {
    try {
        load_checkpoint(p);
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("load unexpectedly succeeded");
    return ErrorCode::Io;
}

}  // namespace

TEST_CASE("checkpoint round-trip is bit-exact") {
    Checkpoint ck;
    ck.config.embed_dim = 4;
    ck.config.horizon = 7;
    ck.config.q_v = 123.456;
    ck.config.solver.eps_abs = 3e-7;
    ck.params = MpcParams::init(4, 99);
    ck.params.Qc(1, 2) = 0.1 + 0.2;  // not exactly representable in short decimal
    ck.params.alpha = 1.0 / 3.0;
    ck.extra = {{"epoch", 12}};
    const auto path = scratch("a.json");
    save_checkpoint(path, ck);
    const Checkpoint back = load_checkpoint(path);
    CHECK(back.params.flatten() == ck.params.flatten());
    CHECK(back.params.Q1 == ck.params.Q1);
    CHECK(back.config.q_v == ck.config.q_v);
    CHECK(back.config.horizon == 7);
    CHECK(back.config.solver.eps_abs == 3e-7);
    CHECK(back.extra["epoch"] == 12);
}

TEST_CASE("checkpoint loading validates content") {
    Checkpoint ck;
    ck.config.embed_dim = 3;
    ck.params = MpcParams::init(3, 1);
    const auto path = scratch("b.json");
    save_checkpoint(path, ck);

    auto rewrite = [&](auto&& edit) {
        std::ifstream is(path);
        nlohmann::json j = nlohmann::json::parse(is);
        edit(j);
        const auto p2 = scratch("b_edit.json");
        std::ofstream(p2) << j.dump();
        return p2;
    };
    CHECK(load_error(rewrite([](auto& j) { j["version"] = 7; })) == ErrorCode::Parse);
    CHECK(load_error(rewrite([](auto& j) { j["params"]["Q1"].erase(0); })) == ErrorCode::DimensionMismatch);
    CHECK(load_error(rewrite([](auto& j) { j["config"]["embed_dim"] = 5; })) == ErrorCode::DimensionMismatch);
    CHECK(load_error(rewrite([](auto& j) { j["config"]["dt"] = -1.0; })) == ErrorCode::NonPositiveDt);
    CHECK(load_error(rewrite([](auto& j) { j["params"].erase("alpha"); })) == ErrorCode::Parse);
    CHECK(load_error(scratch("missing.json")) == ErrorCode::Io);
    std::ofstream(scratch("garbage.json")) << "{ not json";
    CHECK(load_error(scratch("garbage.json")) == ErrorCode::Parse);
}

TEST_CASE("config json keeps defaults for missing keys") {
    const MpcConfig c = config_from_json(nlohmann::json{{"horizon", 9}});
    CHECK(c.horizon == 9);
    CHECK(c.embed_dim == 20);
    CHECK(c.q_v == 200.0);
    CHECK_THROWS_AS(config_from_json(nlohmann::json{{"horizon", "x"}}), Error);
}
