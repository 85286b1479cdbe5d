#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cli.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tacmpc;

namespace {

fs::path workdir() {
    static const fs::path d = [] {
        auto p = fs::temp_directory_path() / "tacmpc_test_cli";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return d;
}

struct Out {
    int code;
    std::string out, err;
};

Out tool(std::vector<std::string> args) {
    std::ostringstream o, e;
    const int c = cli::run(args, o, e);
    return {c, o.str(), e.str()};
}

json read_json(const fs::path& p) {
    std::ifstream is(p);
    return json::parse(is);
}

std::string p(const char* name) { return (workdir() / name).string(); }

// One small dataset shared by the cases below.
const std::string& dataset() {
    static const std::string d = [] {
        const auto r = tool({"gen-data", "--trials", "2", "--seed", "7", "--out", p("data")});
        REQUIRE(r.code == 0);
        return p("data");
    }();
    return d;
}

}  // namespace

TEST_CASE("gen-data layout and reproducible manifest") {
    const auto& d = dataset();
    int dirs = 0;
    for (const auto& e : fs::directory_iterator(d)) {
        if (!e.is_directory()) continue;
        ++dirs;
        int files = 0;
        for ([[maybe_unused]] const auto& f : fs::directory_iterator(e.path())) ++files;
        CHECK(files == 50);  // 25 frame pairs
    }
    CHECK(dirs == 2 * 4);
    const json run = read_json(fs::path(d) / "run.json");
    CHECK(run["subcommand"] == "gen-data");
    CHECK(run["seed"] == 7);
    CHECK(run["config"]["init-jitter"] == 0.7);
    CHECK(run["config"]["slip-jitter"] == 0.35);

    REQUIRE(tool({"gen-data", "--trials", "2", "--seed", "7", "--out", p("data_again")}).code == 0);
    const json again = read_json(workdir() / "data_again" / "run.json");
    CHECK(again["outputs"] == run["outputs"]);
    REQUIRE(tool({"gen-data", "--trials", "2", "--seed", "8", "--out", p("data_other")}).code == 0);
    CHECK(read_json(workdir() / "data_other" / "run.json")["outputs"]["tree"] != run["outputs"]["tree"]);
}

TEST_CASE("existing output needs --force") {
    const auto& d = dataset();
    const auto r = tool({"gen-data", "--trials", "2", "--seed", "7", "--out", d});
    CHECK(r.code == cli::kValidation);
    CHECK(r.err.find("--force") != std::string::npos);
    REQUIRE(tool({"gen-data", "--trials", "1", "--out", p("forced")}).code == 0);
    CHECK(tool({"gen-data", "--trials", "1", "--out", p("forced"), "--force"}).code == 0);
}

TEST_CASE("run.json alone reproduces the outputs") {
    const auto& d = dataset();
    const auto r = tool({"gen-data", "--config", (fs::path(d) / "run.json").string(), "--out", p("replay")});
    REQUIRE(r.code == 0);
    CHECK(read_json(workdir() / "replay" / "run.json")["outputs"] == read_json(fs::path(d) / "run.json")["outputs"]);
}

TEST_CASE("config file with flag override") {
    {
        std::ofstream os(workdir() / "gen.json");
        os << R"({"trials": 1, "seed": 3, "slip-jitter": 0.2})";
    }
    REQUIRE(tool({"gen-data", "--config", p("gen.json"), "--seed", "4", "--out", p("cfg")}).code == 0);
    const json run = read_json(workdir() / "cfg" / "run.json");
    CHECK(run["seed"] == 4);
    CHECK(run["config"]["trials"] == 1);
    CHECK(run["config"]["slip-jitter"] == 0.2);
}

TEST_CASE("config errors carry file and line") {
    {
        std::ofstream os(workdir() / "bad.json");
        os << "{\n  \"epochs\": 2,\n  \"lr\": \n}\n";
    }
    auto r = tool({"train", "--config", p("bad.json"), "--data", dataset(), "--out", p("t_bad")});
    CHECK(r.code == cli::kValidation);
    CHECK(r.err.find("bad.json:4:") != std::string::npos);
    {
        std::ofstream os(workdir() / "unknown.json");
        os << R"({"epochs": 1, "bogus": 2})";
    }
    r = tool({"train", "--config", p("unknown.json"), "--data", dataset(), "--out", p("t_bad")});
    CHECK(r.code == cli::kValidation);
    CHECK(r.err.find("bogus") != std::string::npos);
    CHECK(tool({"train", "--data", dataset(), "--out", p("t_bad"), "--epochs", "0"}).code == cli::kValidation);
    CHECK(tool({"nonsense"}).code == cli::kValidation);
}

TEST_CASE("train, export and simulate chain") {
    const auto& d = dataset();
    const auto r = tool({"train", "--data", d, "--out", p("train"), "--epochs", "2", "--batch-size", "8", "--quiet"});
    REQUIRE(r.code == 0);
    for (const char* f : {"model.json", "history.csv", "summary.json", "run.json", "checkpoints/checkpoint_latest.json"})
        CHECK(fs::exists(workdir() / "train" / f));
    const json run = read_json(workdir() / "train" / "run.json");
    CHECK(run["config"]["epochs"] == 2);
    CHECK(run["summary"]["val_terminal_median_mm"].get<double>() >= 0.0);

    // same config, same model bytes
    REQUIRE(tool({"train", "--config", (workdir() / "train" / "run.json").string(), "--out", p("train2")}).code == 0);
    CHECK(read_json(workdir() / "train2" / "run.json")["outputs"]["model.json"] == run["outputs"]["model.json"]);

    const auto model = (workdir() / "train" / "model.json").string();
    REQUIRE(tool({"export", "--ckpt", model, "--out", p("export")}).code == 0);
    std::ifstream qf(workdir() / "export" / "qf.csv");
    int rows = 0;
    for (std::string line; std::getline(qf, line);) {
        ++rows;
        CHECK(std::count(line.begin(), line.end(), ',') == 39);
    }
    CHECK(rows == 40);

    const auto s = tool({"simulate", "--controller", "multi", "--object", "compliant_cylinder", "--seed", "1",
                         "--ckpt", model, "--duration", "1", "--out", p("sim")});
    REQUIRE(s.code == 0);
    const json ep = read_json(workdir() / "sim" / "episode.json");
    CHECK(ep.contains("success"));
    CHECK(fs::exists(workdir() / "sim" / "trace.csv"));
}

TEST_CASE("inputs are never outputs") {
    CHECK(tool({"train", "--data", dataset(), "--out", (fs::path(dataset()) / "sub").string()}).code ==
          cli::kValidation);
}

TEST_CASE("solver failure budget exits 3") {
    const auto r = tool({"train", "--data", dataset(), "--out", p("budget"), "--epochs", "1", "--solver-max-iter",
                         "1", "--no-polish", "--max-fail-fraction", "0", "--quiet"});
    CHECK(r.code == cli::kSolverBudget);
}

TEST_CASE("simulate pd is reproducible and mpc needs a model") {
    const std::vector<std::string> base{"simulate", "--controller", "pd", "--object", "rigid_tube", "--seed", "2",
                                        "--duration", "2"};
    auto a = base, b = base;
    a.insert(a.end(), {"--out", p("pd_a")});
    b.insert(b.end(), {"--out", p("pd_b")});
    REQUIRE(tool(a).code == 0);
    REQUIRE(tool(b).code == 0);
    const json ra = read_json(workdir() / "pd_a" / "run.json"), rb = read_json(workdir() / "pd_b" / "run.json");
    CHECK(ra["outputs"]["trace.csv"] == rb["outputs"]["trace.csv"]);
    CHECK(ra["outputs"]["runtime.json"] == "timing");
    CHECK(tool({"simulate", "--controller", "single", "--out", p("no_model")}).code == cli::kValidation);
    CHECK(tool({"simulate", "--controller", "pd", "--object", "anvil", "--out", p("bad_obj")}).code ==
          cli::kValidation);
}

TEST_CASE("suite and bench tables") {
    REQUIRE(tool({"suite", "--controllers", "pd", "--objects", "rigid_tube,stiff_pipe", "--episodes", "2",
                  "--duration", "1", "--out", p("suite")})
                .code == 0);
    std::ifstream is(workdir() / "suite" / "suite.csv");
    std::string header;
    std::getline(is, header);
    CHECK(header == "object,pd_success,pd_variance");

    const auto r = tool({"bench", "--batches", "1,2", "--reps", "2", "--warmup", "0", "--out", p("bench")});
    REQUIRE(r.code == 0);
    const json run = read_json(workdir() / "bench" / "run.json");
    CHECK(run["outputs"]["bench.csv"] == "timing");
    CHECK(run["summary"]["input_hashes"].size() == 2);
    CHECK(tool({"bench", "--batches", "1,x", "--out", p("bench_bad")}).code == cli::kValidation);
}

TEST_CASE("gradcheck report") {
    const auto r = tool({"gradcheck", "--data", dataset(), "--samples", "2", "--out", p("gc")});
    CHECK(r.code == 0);
    CHECK(r.out.rfind("PASS", 0) == 0);
    const json run = read_json(workdir() / "gc" / "run.json");
    CHECK(run["summary"]["checked"] == 2);
    CHECK(run["summary"]["pass"] == true);
}

TEST_CASE("tree hash ignores run.json and sees content") {
    const auto d = workdir() / "tree";
    fs::create_directories(d / "a");
    std::ofstream(d / "a" / "x.txt") << "1";
    std::ofstream(d / "run.json") << "{}";
    const auto h = cli::hash_tree(d);
    std::ofstream(d / "run.json") << "{\"changed\": 1}";
    CHECK(cli::hash_tree(d) == h);
    std::ofstream(d / "a" / "x.txt") << "2";
    CHECK(cli::hash_tree(d) != h);
    // FNV-1a of "a"
    std::ofstream(d / "one.txt") << "a";
    CHECK(cli::hash_file(d / "one.txt") == 0xaf63dc4c8601ec8cULL);
}
