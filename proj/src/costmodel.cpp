#include "lcnet/costmodel.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "lcnet/attention.hpp"
#include "lcnet/multiscale.hpp"

namespace lcnet {

using nlohmann::json;

// ---------------------------------------------------------------------------
// formulas

static int64_t bound(const Bindings& b, const std::string& sym) {
    auto it = b.find(sym);
    if (it == b.end()) throw ConfigError("formula binding missing symbol '" + sym + "'");
    return it->second;
}

static int64_t reduced_sq(const Bindings& b) {
    const int64_t c = bound(b, "C"), r = bound(b, "r");
    if (r < 1 || c % r != 0)
        throw ConfigError("C=" + std::to_string(c) + " not divisible by r=" + std::to_string(r));
    return c * (c / r);
}

const std::vector<CostFormula>& formula_registry() {
    static const std::vector<CostFormula> formulas = {
        {"cbam_channel_params", "4*C^2/r", {"C", "r"}, [](const Bindings& b) { return 4 * reduced_sq(b); }},
        {"lcbam_channel_params", "2*C^2/r", {"C", "r"}, [](const Bindings& b) { return 2 * reduced_sq(b); }},
        {"spatial_conv_flops", "k^2*2*H*W", {"k", "H", "W"},
         [](const Bindings& b) {
             const int64_t k = bound(b, "k");
             return k * k * 2 * bound(b, "H") * bound(b, "W");
         }},
        {"cbam_total_params", "2*C^2/r + 98", {"C", "r"},
         [](const Bindings& b) { return 2 * reduced_sq(b) + 98; }},
        {"lcbam_total_params", "2*C^2/r + 49*C", {"C", "r"},
         [](const Bindings& b) { return 2 * reduced_sq(b) + 49 * bound(b, "C"); }},
        {"mscb_params", "C^2 + 3*C", {"C"},
         [](const Bindings& b) {
             const int64_t c = bound(b, "C");
             return c * c + 3 * c;
         }},
        {"vit_params", "4*C^2", {"C"},
         [](const Bindings& b) {
             const int64_t c = bound(b, "C");
             return 4 * c * c;
         }},
        {"vit_flops", "4*N*C^2 + 2*N^2*C", {"C", "N"},
         [](const Bindings& b) {
             const int64_t c = bound(b, "C"), n = bound(b, "N");
             return 4 * n * c * c + 2 * n * n * c;
         }},
    };
    return formulas;
}

const CostFormula& formula(const std::string& name) {
    for (const auto& f : formula_registry())
        if (f.name == name) return f;
    throw ConfigError("unknown cost formula '" + name + "'");
}

int64_t eval_formula(const CostFormula& f, const Bindings& bindings) {
    for (const auto& sym : f.symbols) bound(bindings, sym);
    const int64_t v = f.fn(bindings);
    if (v < 0) throw ValueError("cost formula '" + f.name + "' evaluated negative");
    return v;
}

// ---------------------------------------------------------------------------
// counting oracle

ParamBreakdown param_breakdown(Module& m) {
    ParamBreakdown b;
    for (const NamedParam& np : m.named_params())
        b.items.push_back({np.name, np.rec->kind, np.rec->uses, np.rec->count(), np.rec->shape()});
    std::sort(b.items.begin(), b.items.end(),
              [](const ParamBreakdown::Item& a, const ParamBreakdown::Item& c) { return a.name < c.name; });
    return b;
}

int64_t ParamBreakdown::total(CountMode mode, bool weights_only) const {
    int64_t sum = 0;
    for (const auto& it : items) {
        if (weights_only && it.kind != ParamKind::Weight) continue;
        sum += it.count * (mode == CountMode::Convention ? it.uses : 1);
    }
    return sum;
}

int64_t count_params(Module& m, CountMode mode, bool weights_only) {
    return param_breakdown(m).total(mode, weights_only);
}

static int64_t count_matching(const ParamBreakdown& b, const std::string& prefix, CountMode mode,
                              bool weights_only) {
    int64_t sum = 0;
    for (const auto& it : b.items) {
        if (it.name.rfind(prefix, 0) != 0) continue;
        if (weights_only && it.kind != ParamKind::Weight) continue;
        sum += it.count * (mode == CountMode::Convention ? it.uses : 1);
    }
    return sum;
}

uint64_t measure_macs(const std::function<void()>& fn) {
    uint64_t macs = 0;
    kern::set_mac_counter(&macs);
    try {
        fn();
    } catch (...) {
        kern::set_mac_counter(nullptr);
        throw;
    }
    kern::set_mac_counter(nullptr);
    return macs;
}

uint64_t measure_block_macs(Module& block, const std::function<ad::Var(const ad::Var&)>& fwd,
                            const std::vector<int64_t>& input_shape, const std::string& layout,
                            uint64_t seed) {
    Rng rng(seed);
    Tensor t(input_shape, layout);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-1.0, 1.0);
    block.set_mode(ad::Mode::Eval);  // measurement never trains; keeps B=1 valid
    ad::Var x = ad::Var::constant(std::move(t));
    return measure_macs([&] { fwd(x); });
}

VitCost vit_attention_cost(int64_t channels, int64_t tokens, bool flops_double) {
    if (channels < 1 || tokens < 1) throw ConfigError("vit cost needs C >= 1 and N >= 1");
    VitCost c;
    c.params = 4 * channels * channels;
    c.quadratic_term = 2 * tokens * tokens * channels;
    c.flops = 4 * tokens * channels * channels + c.quadratic_term;
    if (flops_double) {
        c.flops *= 2;
        c.quadratic_term *= 2;
    }
    return c;
}

// ---------------------------------------------------------------------------
// block factory

BlockInstance make_block(const std::string& config_json, int64_t height, int64_t width, uint64_t seed) {
    json j = json::parse(config_json, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw ConfigError("block config is not a JSON object");
    const std::string type = j.value("type", "");
    const int64_t C = j.value("C", int64_t{64});
    const int64_t r = j.value("r", int64_t{16});
    const int64_t k = j.value("k", int64_t{7});
    const bool with_bn = j.value("with_bn", true);

    Rng rng(seed);
    BlockInstance inst;
    inst.input_shape = {1, C, height, width};
    inst.layout = "BCHW";

    if (type == "lcbam") {
        auto m = std::make_unique<Lcbam>("lcbam", 2, ChannelAttentionCfg{C, r, with_bn},
                                         SpatialAttentionCfg{k}, rng);
        auto* p = m.get();
        inst.forward = [p](const ad::Var& x) { return p->forward(x); };
        inst.module = std::move(m);
        inst.summary = "lcbam C=" + std::to_string(C) + " r=" + std::to_string(r) + " k=" + std::to_string(k);
    } else if (type == "cbam") {
        auto m = std::make_unique<CbamRef>("cbam", 2, C, r, k, rng);
        auto* p = m.get();
        inst.forward = [p](const ad::Var& x) { return p->forward(x); };
        inst.module = std::move(m);
        inst.summary = "cbam C=" + std::to_string(C) + " r=" + std::to_string(r) + " k=" + std::to_string(k);
    } else if (type == "channel") {
        auto m = std::make_unique<ChannelAttention>("channel", 2, ChannelAttentionCfg{C, r, with_bn}, rng);
        auto* p = m.get();
        inst.forward = [p](const ad::Var& x) { return p->forward(x); };
        inst.module = std::move(m);
        inst.summary = "channel attention C=" + std::to_string(C) + " r=" + std::to_string(r);
    } else if (type == "spatial") {
        auto m = std::make_unique<SpatialAttention>("spatial", 2, SpatialAttentionCfg{k}, rng);
        auto* p = m.get();
        inst.forward = [p](const ad::Var& x) { return p->forward(x); };
        inst.module = std::move(m);
        inst.summary = "spatial attention k=" + std::to_string(k);
    } else if (type == "dwcb") {
        auto m = std::make_unique<Dwcb>("dwcb", 2, C, k, rng);
        auto* p = m.get();
        inst.forward = [p](const ad::Var& x) { return p->forward(x); };
        inst.module = std::move(m);
        inst.summary = "dwcb C=" + std::to_string(C) + " k=" + std::to_string(k);
    } else if (type == "msdc") {
        MsdcCfg cfg{C, j.value("K", std::vector<int64_t>{3, 5, 7})};
        auto m = std::make_unique<Msdc>("msdc", 2, cfg, rng);
        auto* p = m.get();
        inst.forward = [p](const ad::Var& x) { return p->forward(x); };
        inst.module = std::move(m);
        inst.summary = "msdc C=" + std::to_string(C);
    } else if (type == "m2b") {
        M2bCfg cfg{C, j.value("out", int64_t{0}), j.value("t", 2.0), j.value("groups", int64_t{2}),
                   j.value("K", std::vector<int64_t>{3, 5, 7})};
        auto m = std::make_unique<M2b>("m2b", 2, cfg, rng);
        auto* p = m.get();
        inst.forward = [p](const ad::Var& x) { return p->forward(x); };
        inst.module = std::move(m);
        char tbuf[16];
        std::snprintf(tbuf, sizeof(tbuf), "%g", cfg.expansion);
        inst.summary = "m2b C=" + std::to_string(C) + " t=" + tbuf;
    } else {
        throw ConfigError("unknown block type '" + type + "'");
    }
    return inst;
}

// ---------------------------------------------------------------------------
// analyze

void AnalyzeCfg::validate() const {
    if (channels < 1 || reduction < 1) throw ConfigError("analyze needs C >= 1 and r >= 1");
    if (channels % reduction != 0)
        throw ConfigError("C=" + std::to_string(channels) + " not divisible by r=" +
                          std::to_string(reduction));
    if (height < 1 || width < 1) throw ConfigError("analyze needs H, W >= 1");
    SpatialAttentionCfg{spatial_kernel}.validate();
    M2bCfg{channels, 0, expansion, groups, msdc_kernels}.validate();
}

AnalyzeCfg default_analyze_cfg() {
    AnalyzeCfg cfg;
    cfg.allowlist = {"spatial.flops.table9hw", "spatial.flops.reduction", "cbam.flops",
                     "lcbam.params",           "lcbam.flops",             "mslcbam.params",
                     "mslcbam.flops"};
    return cfg;
}

AnalyzeCfg parse_analyze_cfg(const std::string& json_text) {
    json j = json::parse(json_text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw ConfigError("analyze config is not a JSON object");
    static const std::vector<std::string> known = {"C",         "r",          "H",
                                                   "W",         "spatial_kernel", "spatial_variants",
                                                   "msdc_kernels", "expansion", "groups",
                                                   "with_bn",   "flops_double",  "allowlist",
                                                   "blocks"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw ConfigError("unknown analyze config key '" + it.key() + "'");
    AnalyzeCfg cfg = default_analyze_cfg();
    try {
        if (j.contains("C")) cfg.channels = j["C"].get<int64_t>();
        if (j.contains("r")) cfg.reduction = j["r"].get<int64_t>();
        if (j.contains("H")) cfg.height = j["H"].get<int64_t>();
        if (j.contains("W")) cfg.width = j["W"].get<int64_t>();
        if (j.contains("spatial_kernel")) cfg.spatial_kernel = j["spatial_kernel"].get<int64_t>();
        if (j.contains("spatial_variants")) cfg.spatial_variants = j["spatial_variants"].get<std::vector<int64_t>>();
        if (j.contains("msdc_kernels")) cfg.msdc_kernels = j["msdc_kernels"].get<std::vector<int64_t>>();
        if (j.contains("expansion")) cfg.expansion = j["expansion"].get<double>();
        if (j.contains("groups")) cfg.groups = j["groups"].get<int64_t>();
        if (j.contains("with_bn")) cfg.with_bn = j["with_bn"].get<bool>();
        if (j.contains("flops_double")) cfg.flops_double = j["flops_double"].get<bool>();
        if (j.contains("allowlist")) cfg.allowlist = j["allowlist"].get<std::vector<std::string>>();
        if (j.contains("blocks"))
            for (const auto& b : j["blocks"]) cfg.extra_blocks.push_back(b.dump());
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad analyze config value: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

namespace {

double claimed_number(const std::string& text) {
    // parses "~16K", "~270M", "600", "~3.5M"
    std::string s = text;
    if (!s.empty() && s.front() == '~') s.erase(s.begin());
    double mult = 1.0;
    if (!s.empty() && (s.back() == 'K' || s.back() == 'k')) {
        mult = 1e3;
        s.pop_back();
    } else if (!s.empty() && s.back() == 'M') {
        mult = 1e6;
        s.pop_back();
    }
    return std::stod(s) * mult;
}

std::string verdict_against(double value, const std::string& claimed_text) {
    const double claimed = claimed_number(claimed_text);
    if (claimed <= 0.0) return "discrepancy";
    const double ratio = value / claimed;
    if (std::abs(ratio - 1.0) <= 0.05) return "match";
    if (ratio >= 0.5 && ratio <= 2.0) return "approx";
    return "discrepancy";
}

std::string fmt_pct(double frac) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f%%", 100.0 * frac);
    return buf;
}

}  // namespace

AnalyzeResult run_analyze(const AnalyzeCfg& cfg) {
    cfg.validate();
    AnalyzeResult result;
    const int64_t C = cfg.channels, r = cfg.reduction, H = cfg.height, W = cfg.width;
    const Bindings base{{"C", C}, {"r", r}, {"H", H}, {"W", W}, {"N", cfg.tokens()}};
    const int64_t flop_scale = cfg.flops_double ? 2 : 1;

    // instantiated blocks backing the counted columns
    Rng rng(11);
    Lcbam lcbam("lcbam", 2, ChannelAttentionCfg{C, r, cfg.with_bn}, SpatialAttentionCfg{cfg.spatial_kernel},
                rng);
    CbamRef cbam("cbam", 2, C, r, cfg.spatial_kernel, rng);
    M2b m2b("m2b", 2, M2bCfg{C, 0, cfg.expansion, cfg.groups, cfg.msdc_kernels}, rng);
    const ParamBreakdown lcbam_pb = param_breakdown(lcbam);
    const ParamBreakdown cbam_pb = param_breakdown(cbam);

    // --- attention comparison ----------------------------------------------
    CostReport& att = result.attention;
    att.title = "attention comparison (channel params / spatial flops)";
    att.context = "C=" + std::to_string(C) + " r=" + std::to_string(r) + " H=" + std::to_string(H) +
                  " W=" + std::to_string(W);

    const int64_t cbam_ch = eval_formula(formula("cbam_channel_params"), base);
    const int64_t lcbam_ch = eval_formula(formula("lcbam_channel_params"), base);
    const int64_t cbam_ch_counted = count_matching(cbam_pb, "mlp", CountMode::Convention, true);
    const int64_t lcbam_ch_counted = count_matching(lcbam_pb, "channel.", CountMode::Unique, true);

    att.cells.push_back({"channel.params.cbam", "channel attention parameters (shared MLP, both branches)",
                         cbam_ch, cbam_ch_counted, "4C^2/r", "",
                         cbam_ch == cbam_ch_counted ? "match" : "discrepancy", ""});
    {
        std::string note;
        if (cfg.with_bn)
            note = "plus " + std::to_string(count_matching(lcbam_pb, "channel.", CountMode::Unique, false) -
                                            lcbam_ch_counted) +
                   " norm params, excluded from the weight-count comparison";
        att.cells.push_back({"channel.params.lcbam", "channel attention parameters (two pointwise convs)",
                             lcbam_ch, lcbam_ch_counted, "2C^2/r", "",
                             lcbam_ch == lcbam_ch_counted ? "match" : "discrepancy", note});
    }
    {
        const double ratio = static_cast<double>(lcbam_ch_counted) / static_cast<double>(cbam_ch_counted);
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%.2f", ratio);
        att.cells.push_back({"channel.params.ratio", "lcbam/cbam channel parameter ratio", std::nullopt,
                             std::nullopt, "50% fewer params", buf,
                             ratio == 0.5 ? "match" : "discrepancy", ""});
    }

    // spatial attention at each kernel variant; k=1 is analytic only (the
    // block requires k >= 3)
    std::map<int64_t, int64_t> spatial_measured;
    for (int64_t k : cfg.spatial_variants) {
        Bindings b = base;
        b["k"] = k;
        const int64_t analytic = flop_scale * eval_formula(formula("spatial_conv_flops"), b);
        std::optional<int64_t> measured;
        if (k >= 3) {
            Rng block_rng(17);
            SpatialAttention sp("sp", 2, SpatialAttentionCfg{k}, block_rng);
            measured = static_cast<int64_t>(flop_scale *
                                            measure_block_macs(sp, [&](const ad::Var& x) { return sp.forward(x); },
                                                               {1, C, H, W}, "BCHW"));
            spatial_measured[k] = *measured;
        }
        const std::string id = "spatial.flops.k" + std::to_string(k);
        std::string claimed = std::to_string(2 * k * k) + "*H*W";
        std::string verdict = measured ? (*measured == analytic ? "match" : "discrepancy") : "info";
        att.cells.push_back({id, "spatial attention MACs, " + std::to_string(k) + "x" + std::to_string(k) +
                                     " over 2 stats channels",
                             analytic, measured, claimed, "", verdict, ""});
    }
    att.cells.push_back({"spatial.flops.table9hw", "summary-table spatial cost", flop_scale * 9 * H * W,
                         std::nullopt, "9*H*W", "", "discrepancy",
                         "9*H*W is not constructible from the two-channel statistics map (minimum is "
                         "2*H*W at k=1); the text variant gives 18*H*W and the 7x7 default 98*H*W"});
    {
        const double reduction_frac = 1.0 - 18.0 / 98.0;
        att.cells.push_back(
            {"spatial.flops.reduction", "spatial FLOP reduction, 3x3 variant vs 7x7", std::nullopt,
             std::nullopt, "~90% fewer FLOPs", fmt_pct(reduction_frac), "discrepancy",
             "18/98 gives 81.6%; the quoted ~90% matches the 9*H*W summary value, which has no "
             "2-channel construction; the 7x7 default keeps the full 98*H*W"});
    }

    // --- block cost comparison ----------------------------------------------
    CostReport& blk = result.blocks;
    blk.title = "block cost comparison (params / flops)";
    {
        std::ostringstream os;
        os << "C=" << C << " r=" << r << " H=" << H << " W=" << W << " N=" << cfg.tokens()
           << " t=" << cfg.expansion << " K={";
        for (size_t i = 0; i < cfg.msdc_kernels.size(); ++i)
            os << (i ? "," : "") << cfg.msdc_kernels[i];
        os << "}";
        blk.context = os.str();
    }

    const VitCost vit = vit_attention_cost(C, cfg.tokens(), cfg.flops_double);
    blk.cells.push_back({"vit.params", "token self-attention parameters", vit.params, std::nullopt, "~16K",
                         "", verdict_against(static_cast<double>(vit.params), "~16K"),
                         "4C^2 projection weights; analytic only, no forward implementation"});
    blk.cells.push_back({"vit.flops", "token self-attention MACs", vit.flops, std::nullopt, "~270M", "",
                         verdict_against(static_cast<double>(vit.flops), "~270M"),
                         "projection 4NC^2 plus score/value 2N^2C = " + std::to_string(vit.quadratic_term) +
                             "; with the multiply+add (x2) convention the total doubles"});

    const int64_t cbam_total_analytic = eval_formula(formula("cbam_total_params"), base);
    const int64_t cbam_total_counted = cbam_pb.total(CountMode::Convention, true);
    blk.cells.push_back({"cbam.params", "cbam parameters", cbam_total_analytic, cbam_total_counted, "~0.6K",
                         "", verdict_against(static_cast<double>(cbam_total_analytic), "~0.6K"),
                         "published total charges the shared channel MLP once (2C^2/r + 98); the "
                         "per-branch accounting gives 4C^2/r + 98"});
    {
        const int64_t measured = static_cast<int64_t>(
            flop_scale * measure_block_macs(cbam, [&](const ad::Var& x) { return cbam.forward(x); },
                                            {1, C, H, W}, "BCHW"));
        blk.cells.push_back({"cbam.flops", "cbam MACs", std::nullopt, measured, "~1.2M", "",
                             verdict_against(static_cast<double>(measured), "~1.2M"),
                             "channel MLP on pooled descriptors (4C^2/r) plus 98*H*W spatial conv"});
    }

    const int64_t lcbam_claim = eval_formula(formula("lcbam_total_params"), base);
    const int64_t lcbam_counted = lcbam_pb.total(CountMode::Unique, true);
    blk.cells.push_back(
        {"lcbam.params", "lcbam parameters", lcbam_claim, lcbam_counted, "~12K", "",
         verdict_against(static_cast<double>(lcbam_claim), "~12K"),
         "published 2C^2/r + 49C assumes a per-channel depthwise 7x7 (49C = " +
             std::to_string(49 * C) +
             " at this C); the 2-channel statistics construction counts 98 spatial weights, giving " +
             std::to_string(lcbam_counted) + "; neither reaches the quoted value"});
    int64_t lcbam_macs = 0;
    {
        lcbam_macs = static_cast<int64_t>(
            flop_scale * measure_block_macs(lcbam, [&](const ad::Var& x) { return lcbam.forward(x); },
                                            {1, C, H, W}, "BCHW"));
        blk.cells.push_back({"lcbam.flops", "lcbam MACs", std::nullopt, lcbam_macs, "~0.3M", "",
                             verdict_against(static_cast<double>(lcbam_macs), "~0.3M"),
                             "2C^2/r channel MACs on the pooled map plus 98*H*W spatial conv"});
    }

    {
        Bindings b = base;
        const int64_t mscb_claim = eval_formula(formula("mscb_params"), b);
        const int64_t total_claim = lcbam_claim + mscb_claim;
        const int64_t m2b_counted = count_params(m2b, CountMode::Unique, true);
        const int64_t total_counted = lcbam_counted + m2b_counted;
        char tbuf[16];
        std::snprintf(tbuf, sizeof(tbuf), "%g", cfg.expansion);
        blk.cells.push_back(
            {"mslcbam.params", "multiscale lcbam (lcbam + m2b) parameters", total_claim, total_counted,
             "~16K", "", verdict_against(static_cast<double>(total_claim), "~16K"),
             "published C^2 + 3C = " + std::to_string(mscb_claim) +
                 " does not match any assembly of the block: the two pointwise convs alone hold " +
                 std::to_string(2 * m2b.cfg().expanded() * C) + " weights at t=" + tbuf +
                 "; exact block count is " + std::to_string(m2b_counted)});
        const int64_t m2b_macs = static_cast<int64_t>(
            flop_scale * measure_block_macs(m2b, [&](const ad::Var& x) { return m2b.forward(x); },
                                            {1, C, H, W}, "BCHW"));
        blk.cells.push_back({"mslcbam.flops", "multiscale lcbam MACs", std::nullopt, lcbam_macs + m2b_macs,
                             "~3.5M", "",
                             verdict_against(static_cast<double>(lcbam_macs + m2b_macs), "~3.5M"),
                             "pointwise expand/project dominate: 2*t*C^2*H*W MACs"});
    }

    {
        // the published parameter derivation quotes the alternative kernel set
        // {1,3,5}; evaluate that assembly alongside the default
        Rng alt_rng(19);
        M2b alt("m2b135", 2, M2bCfg{C, 0, cfg.expansion, cfg.groups, {1, 3, 5}}, alt_rng);
        const int64_t counted = count_params(alt, CountMode::Unique, true);
        const int64_t macs = static_cast<int64_t>(
            flop_scale * measure_block_macs(alt, [&](const ad::Var& x) { return alt.forward(x); },
                                            {1, C, H, W}, "BCHW"));
        blk.cells.push_back({"mscb.k135", "m2b with kernel set {1,3,5}", std::nullopt, counted,
                             "K={1,3,5} variant", "macs=" + std::to_string(macs), "info",
                             "kernel set quoted by the parameter derivation; default follows {3,5,7}"});
    }

    for (const std::string& cfg_json : cfg.extra_blocks) {
        BlockInstance inst = make_block(cfg_json, H, W);
        const int64_t counted = count_params(*inst.module, CountMode::Unique, true);
        const int64_t macs = static_cast<int64_t>(
            flop_scale * measure_block_macs(*inst.module, inst.forward, inst.input_shape, inst.layout));
        blk.cells.push_back({"extra." + inst.summary, inst.summary, std::nullopt, counted,
                             "macs=" + std::to_string(macs), "", "info", ""});
    }

    for (const CostReport* rep : {&result.attention, &result.blocks})
        for (const CostCell& cell : rep->cells)
            if (cell.verdict == "discrepancy" &&
                std::find(cfg.allowlist.begin(), cfg.allowlist.end(), cell.id) == cfg.allowlist.end())
                result.unexpected_discrepancies.push_back(cell.id);
    return result;
}

// ---------------------------------------------------------------------------
// rendering

std::string report_table(const CostReport& report) {
    std::ostringstream os;
    os << "== " << report.title << " ==\n";
    os << report.context << "\n\n";
    os << std::left;
    auto pad = [&](const std::string& s, size_t w) {
        std::string out = s;
        if (out.size() < w)
            out.append(w - out.size(), ' ');
        else
            out += ' ';
        return out;
    };
    auto num = [](const std::optional<int64_t>& v) { return v ? std::to_string(*v) : std::string("-"); };
    os << pad("cell", 26) << pad("analytic", 12) << pad("counted", 12) << pad("claimed", 20)
       << pad("computed", 10) << pad("verdict", 13) << "note\n";
    for (const CostCell& c : report.cells)
        os << pad(c.id, 26) << pad(num(c.analytic), 12) << pad(num(c.counted), 12) << pad(c.claimed, 20)
           << pad(c.computed, 10) << pad(c.verdict, 13) << c.note << "\n";
    return os.str();
}

static json cell_json(const CostCell& c) {
    json j;
    j["id"] = c.id;
    j["label"] = c.label;
    if (c.analytic) j["analytic"] = *c.analytic;
    if (c.counted) j["counted"] = *c.counted;
    j["claimed"] = c.claimed;
    if (!c.computed.empty()) j["computed"] = c.computed;
    j["verdict"] = c.verdict;
    j["note"] = c.note;
    return j;
}

std::string analyze_json(const AnalyzeCfg& cfg, const AnalyzeResult& result) {
    json j;
    j["config"] = {{"C", cfg.channels},
                   {"r", cfg.reduction},
                   {"H", cfg.height},
                   {"W", cfg.width},
                   {"spatial_kernel", cfg.spatial_kernel},
                   {"spatial_variants", cfg.spatial_variants},
                   {"msdc_kernels", cfg.msdc_kernels},
                   {"expansion", cfg.expansion},
                   {"groups", cfg.groups},
                   {"with_bn", cfg.with_bn},
                   {"flops_double", cfg.flops_double},
                   {"allowlist", cfg.allowlist}};
    for (const auto& [key, rep] : {std::pair<const char*, const CostReport*>{"attention", &result.attention},
                                   {"blocks", &result.blocks}}) {
        json rj;
        rj["title"] = rep->title;
        rj["context"] = rep->context;
        rj["cells"] = json::array();
        for (const CostCell& c : rep->cells) rj["cells"].push_back(cell_json(c));
        j[key] = rj;
    }
    j["unexpected_discrepancies"] = result.unexpected_discrepancies;
    return j.dump(2);
}

}  // namespace lcnet
