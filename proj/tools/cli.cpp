// command-line front end: cost analysis, gradient checks, shape chains,
// metrics, the demo training loop, and fixture validation.
// exit codes: 0 success, 1 check failure, 2 usage/config error.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "lcnet/costmodel.hpp"
#include "lcnet/fixture.hpp"
#include "lcnet/gradcheck.hpp"
#include "lcnet/network.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw lcnet::ConfigError("cannot open config file '" + path + "'");
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

lcnet::NetCfg demo_net_cfg() {
    lcnet::NetCfg cfg;
    cfg.input = {16, 16, 8};
    cfg.patch = {1, 1, 1};
    cfg.channels = {4, 8, 16, 32};
    cfg.blocks_per_stage = 1;
    cfg.classes = 3;
    cfg.reduction = 4;
    cfg.spatial_kernel = 7;
    return cfg;
}

int cmd_analyze(const std::string& config_path, const std::string& format, const std::string& out_dir) {
    lcnet::AnalyzeCfg cfg =
        config_path.empty() ? lcnet::default_analyze_cfg() : lcnet::parse_analyze_cfg(read_file(config_path));
    lcnet::AnalyzeResult result = lcnet::run_analyze(cfg);

    const std::string table_text =
        lcnet::report_table(result.attention) + "\n" + lcnet::report_table(result.blocks);
    const std::string json_text = lcnet::analyze_json(cfg, result);
    std::cout << (format == "json" ? json_text : table_text) << "\n";

    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream(fs::path(out_dir) / "attention_comparison.txt") << lcnet::report_table(result.attention);
        std::ofstream(fs::path(out_dir) / "block_costs.txt") << lcnet::report_table(result.blocks);
        std::ofstream(fs::path(out_dir) / "analyze.json") << json_text << "\n";
    }

    if (!result.unexpected_discrepancies.empty()) {
        std::cerr << "discrepancies outside the allowlist:";
        for (const auto& id : result.unexpected_discrepancies) std::cerr << " " << id;
        std::cerr << "\n";
        return 1;
    }
    return 0;
}

int cmd_gradcheck(const std::string& only, uint64_t seed, const std::string& out_path, bool inject_fault) {
    std::vector<lcnet::GradCheckReport> reports;
    bool all_pass = true;
    bool matched = false;
    for (const lcnet::GradCheckTarget& target : lcnet::standard_targets()) {
        if (!only.empty() && target.name != only) continue;
        matched = true;
        lcnet::GradCheckReport report = lcnet::run_grad_check(target, seed, inject_fault);
        all_pass = all_pass && report.pass;
        double worst = 0.0;
        std::string worst_tensor;
        for (const auto& c : report.cases)
            if (c.rel_err >= worst) {
                worst = c.rel_err;
                worst_tensor = c.tensor;
            }
        std::cout << (report.pass ? "[pass] " : "[FAIL] ") << report.node << "  worst rel err "
                  << worst << " (" << worst_tensor << ")\n";
        reports.push_back(std::move(report));
    }
    if (!matched) {
        std::cerr << "no grad-check target named '" << only << "'\n";
        return 2;
    }
    if (!out_path.empty()) std::ofstream(out_path) << lcnet::grad_reports_json(reports) << "\n";
    if (!all_pass) {
        for (const auto& r : reports)
            if (!r.pass) std::cerr << "gradient check failed: " << r.node << "\n";
        return 1;
    }
    return 0;
}

int cmd_shapes(const std::string& config_path) {
    lcnet::NetCfg cfg = config_path.empty() ? demo_net_cfg() : lcnet::parse_net_cfg(read_file(config_path));
    lcnet::SegNetwork net(cfg, 0);
    for (const auto& [label, shape] : net.shape_chain(1)) {
        std::cout << label << ": [";
        for (size_t i = 0; i < shape.size(); ++i) std::cout << (i ? "," : "") << shape[i];
        std::cout << "]\n";
    }
    return 0;
}

lcnet::LabelVolume label_volume_from_fixture(const std::string& path) {
    lcnet::Tensor t = lcnet::load_fixture(path);
    if (t.dim() != 3) throw lcnet::FormatError("label fixture must be a rank-3 volume");
    lcnet::LabelVolume lv;
    lv.extents = {t.shape()[0], t.shape()[1], t.shape()[2]};
    lv.ids.resize(static_cast<size_t>(t.numel()));
    int32_t max_id = 0;
    for (int64_t i = 0; i < t.numel(); ++i) {
        const double v = t[i];
        if (v < 0.0 || v != std::floor(v)) throw lcnet::FormatError("label fixture holds non-integer ids");
        lv.ids[static_cast<size_t>(i)] = static_cast<int32_t>(v);
        max_id = std::max(max_id, lv.ids[static_cast<size_t>(i)]);
    }
    lv.classes = max_id + 1;
    return lv;
}

int cmd_metrics(const std::string& pred_path, const std::string& gt_path, const std::string& format) {
    lcnet::LabelVolume pred = label_volume_from_fixture(pred_path);
    lcnet::LabelVolume gt = label_volume_from_fixture(gt_path);
    const int64_t classes = std::max(pred.classes, gt.classes);
    pred.classes = gt.classes = classes;

    json per_class = json::array();
    for (int32_t c = 0; c < classes; ++c) {
        json entry;
        entry["class_id"] = c;
        entry["dsc"] = lcnet::dsc(gt, pred, c);
        json flags = json::array();
        try {
            entry["hd95"] = lcnet::hd95(gt, pred, c);
        } catch (const lcnet::MetricError&) {
            entry["hd95"] = nullptr;
            flags.push_back("empty_mask");
        }
        entry["flags"] = flags;
        per_class.push_back(entry);
    }
    json report;
    report["classes"] = classes;
    report["per_class"] = per_class;

    if (format == "json") {
        std::cout << report.dump(2) << "\n";
    } else {
        std::cout << "class  dsc        hd95\n";
        for (const auto& e : per_class) {
            char line[128];
            if (e["hd95"].is_null())
                std::snprintf(line, sizeof(line), "%-6d %-10.6f (empty mask)", e["class_id"].get<int>(),
                              e["dsc"].get<double>());
            else
                std::snprintf(line, sizeof(line), "%-6d %-10.6f %.6f", e["class_id"].get<int>(),
                              e["dsc"].get<double>(), e["hd95"].get<double>());
            std::cout << line << "\n";
        }
    }
    return 0;
}

int cmd_demo_train(const std::string& config_path, int64_t steps, uint64_t seed, int64_t batch,
                   double lr, const std::string& out_dir) {
    lcnet::TrainCfg cfg;
    cfg.net = config_path.empty() ? demo_net_cfg() : lcnet::parse_net_cfg(read_file(config_path));
    cfg.steps = steps;
    cfg.seed = seed;
    cfg.batch = batch;
    cfg.sgd.lr = lr;

    lcnet::SegNetwork net(cfg.net, cfg.seed);
    lcnet::TrainResult result = lcnet::train_on_blobs(net, cfg);

    std::ostringstream trace;
    for (const auto& e : result.trace)
        trace << json{{"step", e.step}, {"loss", e.loss}, {"dice", e.dice}, {"lr", e.lr}}.dump() << "\n";
    std::cout << trace.str();

    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream(fs::path(out_dir) / "trace.jsonl") << trace.str();
        lcnet::save_checkpoint(net, (fs::path(out_dir) / "checkpoint").string());
    }
    if (result.diverged) {
        std::cerr << "training diverged (non-finite loss) at step " << result.diverged_step << "\n";
        return 1;
    }
    std::cerr << "final train dice " << result.final_dice << "\n";
    return 0;
}

int cmd_fixtures(const std::string& path) {
    lcnet::Tensor t = lcnet::load_fixture(path);

    const std::string tmp = (fs::temp_directory_path() / "lcnet_fixture_roundtrip.bin").string();
    lcnet::save_fixture(t, tmp);
    lcnet::Tensor back = lcnet::load_fixture(tmp);
    fs::remove(tmp);
    if (!back.bitwise_equal(t)) {
        std::cerr << "round trip mismatch for '" << path << "'\n";
        return 1;
    }
    std::cout << "ok: shape [";
    for (size_t i = 0; i < t.shape().size(); ++i) std::cout << (i ? "," : "") << t.shape()[i];
    std::cout << "] layout '" << t.layout() << "' " << t.numel() << " elements, round trip bit-exact\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale attention/multiscale segmentation blocks with cost accounting"};
    app.require_subcommand(1);

    std::string config_path, format = "table", out_path, only, pred_path, gt_path, fixture_path;
    uint64_t seed = 0;
    int64_t steps = 300, batch = 2;
    double lr = 0.01;
    bool inject_fault = false;
    bool serial = false;

    app.add_flag("--serial", serial, "run kernels on the serial reference backend");

    CLI::App* analyze = app.add_subcommand("analyze", "emit cost comparison tables");
    analyze->add_option("--config", config_path, "analyze config JSON file");
    analyze->add_option("--format", format, "json|table")->check(CLI::IsMember({"json", "table"}));
    analyze->add_option("--out", out_path, "directory for table/json files");

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    gradcheck->add_option("--only", only, "run a single named target");
    gradcheck->add_option("--seed", seed, "rng seed");
    gradcheck->add_option("--out", out_path, "write the JSON report here");
    gradcheck->add_flag("--inject-fault", inject_fault, "corrupt one vjp (testing aid)")
        ->group("");  // hidden

    CLI::App* shapes = app.add_subcommand("shapes", "print the forward shape chain");
    shapes->add_option("--config", config_path, "net config JSON file");

    CLI::App* metrics = app.add_subcommand("metrics", "dsc/hd95 between two label fixtures");
    metrics->add_option("--pred", pred_path, "prediction label fixture")->required();
    metrics->add_option("--gt", gt_path, "ground-truth label fixture")->required();
    metrics->add_option("--format", format, "json|table")->check(CLI::IsMember({"json", "table"}));

    CLI::App* demo = app.add_subcommand("demo-train", "overfit the tiny net on the blob task");
    demo->add_option("--config", config_path, "net config JSON file");
    demo->add_option("--steps", steps, "training steps");
    demo->add_option("--seed", seed, "rng seed")->default_val(42);
    demo->add_option("--batch", batch, "batch size");
    demo->add_option("--lr", lr, "sgd learning rate");
    demo->add_option("--out", out_path, "directory for trace.jsonl and checkpoint/");

    CLI::App* fixtures = app.add_subcommand("fixtures", "validate and round-trip a fixture file");
    fixtures->add_option("path", fixture_path, "fixture file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    if (serial) lcnet::kern::set_backend(lcnet::kern::Backend::Serial);

    try {
        if (analyze->parsed()) return cmd_analyze(config_path, format, out_path);
        if (gradcheck->parsed()) return cmd_gradcheck(only, seed, out_path, inject_fault);
        if (shapes->parsed()) return cmd_shapes(config_path);
        if (metrics->parsed()) return cmd_metrics(pred_path, gt_path, format);
        if (demo->parsed()) return cmd_demo_train(config_path, steps, seed, batch, lr, out_path);
        if (fixtures->parsed()) return cmd_fixtures(fixture_path);
    } catch (const lcnet::MetricError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const lcnet::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
