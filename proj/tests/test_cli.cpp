#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include <json.hpp>

#include "lcnet/fixture.hpp"
#include "lcnet/network.hpp"
#include "lcnet/rng.hpp"
#include "schema_check.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunResult {
    int exit_code;
    std::string out;
    std::string err;
};

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

RunResult run_cli(const std::string& args) {
    const std::string out = (fs::temp_directory_path() / "lcnet_cli_out.txt").string();
    const std::string err = (fs::temp_directory_path() / "lcnet_cli_err.txt").string();
    const std::string cmd = std::string(LCNET_CLI_PATH) + " " + args + " > " + out + " 2> " + err;
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

json load_schema(const std::string& name) {
    return json::parse(slurp(std::string(LCNET_SOURCE_DIR) + "/schemas/" + name));
}

std::string write_tmp(const std::string& name, const std::string& content) {
    const std::string path = (fs::temp_directory_path() / name).string();
    std::ofstream(path) << content;
    return path;
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
    CHECK(run_cli("definitely-not-a-command").exit_code == 2);
    CHECK(run_cli("").exit_code == 2);
    CHECK(run_cli("metrics").exit_code == 2);  // missing required options
}

TEST_CASE("analyze: default config passes, tables are golden-stable") {
    RunResult r = run_cli("analyze");
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("channel.params.ratio") != std::string::npos);
    CHECK(r.out.find("0.50") != std::string::npos);

    const std::string dir = (fs::temp_directory_path() / "lcnet_analyze_out").string();
    fs::remove_all(dir);
    RunResult r2 = run_cli("analyze --out " + dir);
    CHECK(r2.exit_code == 0);
    const std::string golden_dir = std::string(LCNET_SOURCE_DIR) + "/tests/golden/";
    CHECK(slurp(dir + "/attention_comparison.txt") == slurp(golden_dir + "attention_comparison.txt"));
    CHECK(slurp(dir + "/block_costs.txt") == slurp(golden_dir + "block_costs.txt"));
}

TEST_CASE("analyze: json output validates against the schema") {
    RunResult r = run_cli("analyze --format json");
    CHECK(r.exit_code == 0);
    json parsed = json::parse(r.out);
    auto errs = schema::errors(load_schema("analyze_report.schema.json"), parsed);
    for (const auto& e : errs) MESSAGE(e);
    CHECK(errs.empty());
    CHECK(parsed["unexpected_discrepancies"].empty());
}

TEST_CASE("analyze: divisibility violation exits 2; stripped allowlist exits 1") {
    const std::string bad = write_tmp("lcnet_bad_cfg.json", R"({"C":63,"r":16})");
    RunResult r = run_cli("analyze --config " + bad);
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("divisible") != std::string::npos);

    const std::string strict = write_tmp("lcnet_strict_cfg.json", R"({"allowlist":[]})");
    CHECK(run_cli("analyze --config " + strict).exit_code == 1);
}

TEST_CASE("analyze: serial backend produces identical output") {
    RunResult par = run_cli("analyze --format json");
    RunResult ser = run_cli("--serial analyze --format json");
    CHECK(par.exit_code == 0);
    CHECK(ser.exit_code == 0);
    CHECK(par.out == ser.out);
}

TEST_CASE("gradcheck: single-target filter, fault injection, report schema") {
    RunResult r = run_cli("gradcheck --only lcbam");
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("[pass] lcbam") != std::string::npos);

    CHECK(run_cli("gradcheck --only no_such_block").exit_code == 2);
    CHECK(run_cli("gradcheck --only conv_pointwise --inject-fault").exit_code == 1);

    const std::string report_path = (fs::temp_directory_path() / "lcnet_grad_report.json").string();
    RunResult rep = run_cli("gradcheck --only conv_pointwise --out " + report_path);
    CHECK(rep.exit_code == 0);
    json parsed = json::parse(slurp(report_path));
    auto errs = schema::errors(load_schema("gradcheck_report.schema.json"), parsed);
    for (const auto& e : errs) MESSAGE(e);
    CHECK(errs.empty());
}

TEST_CASE("shapes: default chain matches the golden file") {
    RunResult r = run_cli("shapes");
    CHECK(r.exit_code == 0);
    CHECK(r.out == slurp(std::string(LCNET_SOURCE_DIR) + "/tests/golden/shapes_default.txt"));
}

TEST_CASE("metrics: identity and empty-mask flags") {
    using namespace lcnet;
    Tensor labels({8, 8, 8});
    Rng rng(4);
    for (int64_t i = 0; i < labels.numel(); ++i) labels[i] = static_cast<double>(rng.below(2));
    const std::string a = (fs::temp_directory_path() / "lcnet_gt.bin").string();
    save_fixture(labels, a);

    RunResult r = run_cli("metrics --pred " + a + " --gt " + a + " --format json");
    CHECK(r.exit_code == 0);
    json parsed = json::parse(r.out);
    auto errs = schema::errors(load_schema("metrics_report.schema.json"), parsed);
    for (const auto& e : errs) MESSAGE(e);
    CHECK(errs.empty());
    for (const auto& entry : parsed["per_class"]) {
        CHECK(entry["dsc"].get<double>() == 1.0);
        CHECK(entry["hd95"].get<double>() == 0.0);
    }

    // prediction missing class 1 entirely -> flagged, not silently zero
    Tensor zeros({8, 8, 8});
    const std::string b = (fs::temp_directory_path() / "lcnet_pred.bin").string();
    save_fixture(zeros, b);
    RunResult r2 = run_cli("metrics --pred " + b + " --gt " + a + " --format json");
    CHECK(r2.exit_code == 0);
    json parsed2 = json::parse(r2.out);
    bool flagged = false;
    for (const auto& entry : parsed2["per_class"])
        if (entry["class_id"].get<int>() == 1) {
            CHECK(entry["hd95"].is_null());
            flagged = !entry["flags"].empty();
        }
    CHECK(flagged);
}

TEST_CASE("demo-train: --steps 0 emits initial metrics only; runs are byte-identical") {
    const std::string cfg = write_tmp("lcnet_demo_cfg.json",
                                      R"({"input":[8,8,8],"patch":[1,1,1],"channels":[2,4,4,4],)"
                                      R"("blocks_per_stage":1,"classes":2,"reduction":2,)"
                                      R"("spatial_kernel":3,"msdc_kernels":[3]})");

    RunResult zero = run_cli("demo-train --config " + cfg + " --steps 0 --seed 42");
    CHECK(zero.exit_code == 0);
    CHECK(std::count(zero.out.begin(), zero.out.end(), '\n') == 1);

    const std::string out1 = (fs::temp_directory_path() / "lcnet_demo1").string();
    const std::string out2 = (fs::temp_directory_path() / "lcnet_demo2").string();
    fs::remove_all(out1);
    fs::remove_all(out2);
    RunResult a = run_cli("demo-train --config " + cfg + " --steps 5 --seed 42 --out " + out1);
    RunResult b = run_cli("demo-train --config " + cfg + " --steps 5 --seed 42 --out " + out2);
    CHECK(a.exit_code == 0);
    CHECK(b.exit_code == 0);
    CHECK(slurp(out1 + "/trace.jsonl") == slurp(out2 + "/trace.jsonl"));
    CHECK_FALSE(slurp(out1 + "/trace.jsonl").empty());

    // every trace line and the checkpoint manifest validate
    json line_schema = load_schema("trace_line.schema.json");
    std::istringstream lines(slurp(out1 + "/trace.jsonl"));
    std::string line;
    int n = 0;
    while (std::getline(lines, line)) {
        CHECK(schema::valid(line_schema, json::parse(line)));
        ++n;
    }
    CHECK(n == 6);
    CHECK(schema::valid(load_schema("checkpoint_manifest.schema.json"),
                        json::parse(slurp(out1 + "/checkpoint/manifest.json"))));
}

TEST_CASE("net config JSON round-trips and validates against its schema") {
    using namespace lcnet;
    NetCfg cfg;
    cfg.input = {16, 16, 8};
    cfg.patch = {1, 1, 1};
    cfg.channels = {4, 8, 16, 32};
    cfg.reduction = 4;
    const std::string text = net_cfg_json(cfg);
    CHECK(schema::valid(load_schema("net_config.schema.json"), json::parse(text)));
    NetCfg back = parse_net_cfg(text);
    CHECK(back.channels == cfg.channels);
    CHECK(back.reduction == 4);

    CHECK_THROWS_AS(parse_net_cfg(R"({"bogus_key":1})"), ConfigError);
}

TEST_CASE("fixtures: valid file round-trips, truncation exits 2") {
    using namespace lcnet;
    Rng rng(5);
    Tensor t = uniform_tensor({2, 3}, "", rng);
    const std::string path = (fs::temp_directory_path() / "lcnet_fixture_ok.bin").string();
    save_fixture(t, path);
    RunResult r = run_cli("fixtures " + path);
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("bit-exact") != std::string::npos);

    std::string bytes = slurp(path);
    const std::string broken = (fs::temp_directory_path() / "lcnet_fixture_broken.bin").string();
    std::ofstream(broken, std::ios::binary) << bytes.substr(0, bytes.size() - 5);
    CHECK(run_cli("fixtures " + broken).exit_code == 2);
}
