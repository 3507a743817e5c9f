#include <doctest.h>

#include <fstream>
#include <sstream>

#include "lcnet/attention.hpp"
#include "lcnet/costmodel.hpp"
#include "lcnet/multiscale.hpp"

using namespace lcnet;

namespace {

const CostCell& cell(const AnalyzeResult& r, const std::string& id) {
    for (const CostReport* rep : {&r.attention, &r.blocks})
        for (const CostCell& c : rep->cells)
            if (c.id == id) return c;
    static CostCell missing;
    FAIL("missing cell ", id);
    return missing;
}

}  // namespace

TEST_CASE("formula evaluation") {
    Bindings b{{"C", 64}, {"r", 16}, {"H", 32}, {"W", 32}, {"N", 1024}, {"k", 7}};
    CHECK(eval_formula(formula("lcbam_channel_params"), b) == 512);
    CHECK(eval_formula(formula("cbam_channel_params"), b) == 1024);
    CHECK(eval_formula(formula("spatial_conv_flops"), b) == 100352);
    CHECK(eval_formula(formula("vit_params"), b) == 16384);
    CHECK(eval_formula(formula("cbam_total_params"), b) == 610);
    CHECK(eval_formula(formula("lcbam_total_params"), b) == 3648);
    CHECK(eval_formula(formula("mscb_params"), b) == 4288);

    Bindings missing{{"C", 64}};
    CHECK_THROWS_AS(eval_formula(formula("lcbam_channel_params"), missing), ConfigError);

    Bindings indivisible{{"C", 63}, {"r", 16}};
    CHECK_THROWS_AS(eval_formula(formula("lcbam_channel_params"), indivisible), ConfigError);
}

TEST_CASE("counting oracle equals the closed forms") {
    Rng rng(1);
    ChannelAttention lc("lc", 2, ChannelAttentionCfg{64, 16, false}, rng);
    CHECK(count_params(lc, CountMode::Unique, true) ==
          eval_formula(formula("lcbam_channel_params"), {{"C", 64}, {"r", 16}}));

    CbamRef cb("cb", 2, 64, 16, 7, rng);
    ParamBreakdown pb = param_breakdown(cb);
    int64_t channel = 0;
    for (const auto& it : pb.items)
        if (it.name.rfind("mlp", 0) == 0) channel += it.count * it.uses;
    CHECK(channel == 1024);  // published accounting charges both branches

    Dwcb dw("dw", 2, 8, 3, rng);
    CHECK(count_params(dw) == 96);

    // breakdown is sorted by name and separates weights from bias/norm
    ParamBreakdown dpb = param_breakdown(dw);
    REQUIRE(dpb.items.size() == 4);
    CHECK(std::is_sorted(dpb.items.begin(), dpb.items.end(),
                         [](const auto& a, const auto& b) { return a.name < b.name; }));
    CHECK(dpb.total(CountMode::Unique, true) == 72);
    CHECK(dpb.total(CountMode::Unique, false) == 96);
}

TEST_CASE("mac measurement") {
    // spatial attention convs at H=W=32
    for (auto [k, expected] : std::vector<std::pair<int64_t, uint64_t>>{{7, 100352}, {3, 18432}}) {
        Rng rng(2);
        SpatialAttention sp("sp", 2, SpatialAttentionCfg{k}, rng);
        const uint64_t macs = measure_block_macs(sp, [&](const ad::Var& x) { return sp.forward(x); },
                                                 {1, 64, 32, 32}, "BCHW");
        CHECK(macs == expected);
    }

    // pointwise conv, hand-enumerated: 4 * 2 * 25
    {
        Rng rng(3);
        Conv pw("pw", pointwise_spec(2, 4, 2), false, rng);
        const uint64_t macs = measure_block_macs(pw, [&](const ad::Var& x) { return pw.forward(x); },
                                                 {1, 4, 5, 5}, "BCHW");
        CHECK(macs == 200);
    }

    // input-value independence
    {
        Rng rng(4);
        Lcbam block("b", 2, ChannelAttentionCfg{16, 4, true}, SpatialAttentionCfg{7}, rng);
        const uint64_t a = measure_block_macs(block, [&](const ad::Var& x) { return block.forward(x); },
                                              {1, 16, 12, 12}, "BCHW", /*seed=*/1);
        const uint64_t b = measure_block_macs(block, [&](const ad::Var& x) { return block.forward(x); },
                                              {1, 16, 12, 12}, "BCHW", /*seed=*/999);
        CHECK(a == b);
    }

    // measured conv MACs equal the closed form over a small grid
    for (int64_t C : {4, 8})
        for (int64_t k : {1, 3, 5}) {
            Rng rng(5);
            Conv conv("c", dense_same_spec(2, C, C, k), true, rng);
            const uint64_t macs = measure_block_macs(
                conv, [&](const ad::Var& x) { return conv.forward(x); }, {1, C, 6, 6}, "BCHW");
            CHECK(macs == static_cast<uint64_t>(k * k * C * C * 36));
        }
}

TEST_CASE("token-attention cost") {
    VitCost c = vit_attention_cost(64, 1024);
    CHECK(c.params == 16384);
    CHECK(c.quadratic_term == 134217728);
    CHECK(c.flops == 150994944);

    VitCost degenerate = vit_attention_cost(64, 1);
    CHECK(degenerate.quadratic_term == 2 * 64);

    VitCost doubled = vit_attention_cost(64, 1024, true);
    CHECK(doubled.flops == 2 * 150994944);
}

TEST_CASE("analyze covers every published cell with a verdict") {
    AnalyzeCfg cfg = default_analyze_cfg();
    AnalyzeResult result = run_analyze(cfg);

    CHECK(cell(result, "channel.params.cbam").verdict == "match");
    CHECK(cell(result, "channel.params.cbam").analytic == 1024);
    CHECK(cell(result, "channel.params.cbam").counted == 1024);
    CHECK(cell(result, "channel.params.lcbam").analytic == 512);
    CHECK(cell(result, "channel.params.lcbam").counted == 512);
    CHECK(cell(result, "channel.params.ratio").computed == "0.50");
    CHECK(cell(result, "channel.params.ratio").verdict == "match");

    CHECK(cell(result, "spatial.flops.k7").analytic == 100352);
    CHECK(cell(result, "spatial.flops.k7").counted == 100352);
    CHECK(cell(result, "spatial.flops.k3").analytic == 18432);
    CHECK(cell(result, "spatial.flops.k3").counted == 18432);
    CHECK(cell(result, "spatial.flops.k1").analytic == 2048);
    CHECK(cell(result, "spatial.flops.reduction").computed == "81.6%");
    CHECK(cell(result, "spatial.flops.reduction").verdict == "discrepancy");
    CHECK_FALSE(cell(result, "spatial.flops.reduction").note.empty());

    CHECK(cell(result, "vit.params").analytic == 16384);
    CHECK(cell(result, "vit.params").verdict == "match");
    CHECK(cell(result, "vit.flops").analytic == 150994944);
    CHECK(cell(result, "vit.flops").verdict == "approx");

    CHECK(cell(result, "cbam.params").analytic == 610);
    CHECK(cell(result, "cbam.params").counted == 1122);
    CHECK_FALSE(cell(result, "cbam.params").note.empty());
    CHECK(cell(result, "cbam.flops").counted == 101376);
    CHECK(cell(result, "cbam.flops").verdict == "discrepancy");

    CHECK(cell(result, "lcbam.params").analytic == 3648);
    CHECK(cell(result, "lcbam.params").counted == 610);
    CHECK(cell(result, "lcbam.params").verdict == "discrepancy");
    CHECK(cell(result, "lcbam.flops").counted == 100864);

    CHECK(cell(result, "mslcbam.params").analytic == 7936);
    CHECK(cell(result, "mslcbam.params").counted == 610 + 27008);
    CHECK(cell(result, "mslcbam.flops").counted == 100864 + 27656192);

    // the alternative kernel set quoted by the parameter derivation
    CHECK(cell(result, "mscb.k135").counted == 2 * 64 * 128 + (1 + 9 + 25) * 128);
    CHECK(cell(result, "mscb.k135").verdict == "info");

    // every discrepancy is allowlisted in the default config
    CHECK(result.unexpected_discrepancies.empty());

    // dropping the allowlist surfaces them
    AnalyzeCfg strict = cfg;
    strict.allowlist.clear();
    AnalyzeResult flagged = run_analyze(strict);
    CHECK(flagged.unexpected_discrepancies.size() >= 5);
}

TEST_CASE("analyze tables are byte-stable against the golden files") {
    AnalyzeCfg cfg = default_analyze_cfg();
    AnalyzeResult result = run_analyze(cfg);
    for (auto [name, report] :
         std::vector<std::pair<std::string, const CostReport*>>{{"attention_comparison.txt", &result.attention},
                                                                {"block_costs.txt", &result.blocks}}) {
        std::ifstream is(std::string(LCNET_SOURCE_DIR) + "/tests/golden/" + name, std::ios::binary);
        REQUIRE_MESSAGE(is.good(), "missing golden file ", name);
        std::ostringstream os;
        os << is.rdbuf();
        CHECK(report_table(*report) == os.str());
    }
}

TEST_CASE("block factory parses the serialized config form") {
    BlockInstance inst = make_block(R"({"type":"lcbam","C":32,"r":8,"k":7,"with_bn":true})", 16, 16);
    CHECK(count_params(*inst.module, CountMode::Unique, true) == 2 * 32 * 32 / 8 + 98);

    CHECK_THROWS_AS(make_block(R"({"type":"nope"})", 16, 16), ConfigError);
    CHECK_THROWS_AS(make_block(R"(not json)", 16, 16), ConfigError);
    CHECK_THROWS_AS(make_block(R"({"type":"lcbam","C":63,"r":16})", 16, 16), ConfigError);
}
