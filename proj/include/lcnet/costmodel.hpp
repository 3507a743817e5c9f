#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>

#include "lcnet/modules.hpp"

namespace lcnet {

using Bindings = std::map<std::string, int64_t>;

// closed-form cost expression with a human-readable rendering
struct CostFormula {
    std::string name;
    std::string expr;
    std::vector<std::string> symbols;
    std::function<int64_t(const Bindings&)> fn;
};

// exact integer evaluation; unbound symbol -> ConfigError
int64_t eval_formula(const CostFormula& f, const Bindings& bindings);
const std::vector<CostFormula>& formula_registry();
const CostFormula& formula(const std::string& name);

enum class CountMode { Unique, Convention };

struct ParamBreakdown {
    struct Item {
        std::string name;
        ParamKind kind;
        int uses;
        int64_t count;
        std::vector<int64_t> shape;
    };
    std::vector<Item> items;  // sorted by name

    int64_t total(CountMode mode = CountMode::Unique, bool weights_only = false) const;
};

ParamBreakdown param_breakdown(Module& m);
int64_t count_params(Module& m, CountMode mode = CountMode::Unique, bool weights_only = false);

// runs fn with the MAC accumulator installed; convolution ops charge one unit
// per multiply-accumulate (padding taps included, bias adds and pooling and
// activations excluded)
uint64_t measure_macs(const std::function<void()>& fn);

// instantiates a block, feeds it a seeded uniform input, returns the MAC count
uint64_t measure_block_macs(Module& block, const std::function<ad::Var(const ad::Var&)>& fwd,
                            const std::vector<int64_t>& input_shape, const std::string& layout,
                            uint64_t seed = 1);

// analytic attention-token cost; no forward implementation backs this
struct VitCost {
    int64_t params;
    int64_t flops;           // projection + score/value MACs
    int64_t quadratic_term;  // the 2*N^2*C share
};
VitCost vit_attention_cost(int64_t channels, int64_t tokens, bool flops_double = false);

// ---------------------------------------------------------------------------
// comparison tables

struct AnalyzeCfg {
    int64_t channels = 64;
    int64_t reduction = 16;
    int64_t height = 32;
    int64_t width = 32;
    int64_t spatial_kernel = 7;
    std::vector<int64_t> spatial_variants{1, 3, 7};
    std::vector<int64_t> msdc_kernels{3, 5, 7};
    double expansion = 2.0;
    int64_t groups = 2;
    bool with_bn = true;
    bool flops_double = false;  // count multiply and add separately (x2)
    std::vector<std::string> allowlist;      // cell ids allowed to stay "discrepancy"
    std::vector<std::string> extra_blocks;   // block-config JSON strings, reported informationally

    int64_t tokens() const { return height * width; }
    void validate() const;
};

AnalyzeCfg default_analyze_cfg();
AnalyzeCfg parse_analyze_cfg(const std::string& json_text);

struct CostCell {
    std::string id;
    std::string label;
    std::optional<int64_t> analytic;  // published formula value
    std::optional<int64_t> counted;   // enumeration / measured MACs
    std::string claimed;              // published cell as text
    std::string computed;             // derived quantity (ratios etc.)
    std::string verdict;              // match | approx | discrepancy | info
    std::string note;
};

struct CostReport {
    std::string title;
    std::string context;
    std::vector<CostCell> cells;
};

struct AnalyzeResult {
    CostReport attention;  // channel/spatial attention comparison
    CostReport blocks;     // per-block parameter/FLOP comparison
    std::vector<std::string> unexpected_discrepancies;  // outside the allowlist
};

AnalyzeResult run_analyze(const AnalyzeCfg& cfg);

std::string report_table(const CostReport& report);
std::string analyze_json(const AnalyzeCfg& cfg, const AnalyzeResult& result);

// block factory for the serialized config form
// {"type":"lcbam","C":64,"r":16,"k":7,"with_bn":true}
struct BlockInstance {
    std::string summary;
    std::unique_ptr<Module> module;
    std::function<ad::Var(const ad::Var&)> forward;
    std::vector<int64_t> input_shape;
    std::string layout;
};
BlockInstance make_block(const std::string& config_json, int64_t height, int64_t width, uint64_t seed = 3);

}  // namespace lcnet
