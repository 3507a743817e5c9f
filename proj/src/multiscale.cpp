#include "lcnet/multiscale.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace lcnet {

void MsdcCfg::validate() const {
    if (channels < 1) throw ConfigError("msdc needs channels >= 1");
    if (kernels.empty()) throw ConfigError("msdc kernel set must be non-empty");
    std::unordered_set<int64_t> seen;
    for (int64_t k : kernels) {
        if (k % 2 == 0) throw ConfigError("msdc kernels must be odd, got " + std::to_string(k));
        if (!seen.insert(k).second) throw ConfigError("duplicate msdc kernel " + std::to_string(k));
    }
}

int64_t M2bCfg::expanded() const { return std::llround(expansion * static_cast<double>(in_channels)); }

void M2bCfg::validate() const {
    if (in_channels < 1 || out() < 1) throw ConfigError("m2b channel counts must be >= 1");
    if (expansion <= 0.0) throw ConfigError("m2b expansion ratio must be positive");
    if (groups < 1) throw ConfigError("m2b shuffle groups must be >= 1");
    if (expanded() % groups != 0)
        throw ConfigError("m2b expanded channels " + std::to_string(expanded()) +
                          " not divisible by shuffle groups " + std::to_string(groups));
    MsdcCfg{expanded(), kernels}.validate();
}

Dwcb::Dwcb(std::string name, int sdims, int64_t channels, int64_t kernel, Rng& rng)
    : Module(std::move(name)),
      conv_(make_child<Conv>("dw", depthwise_spec(sdims, channels, kernel), /*bias=*/true, rng)),
      bn_(make_child<BatchNorm>("bn", channels)) {}

ad::Var Dwcb::forward(const ad::Var& x) { return ad::relu6(bn_.forward(conv_.forward(x))); }

Msdc::Msdc(std::string name, int sdims, MsdcCfg cfg, Rng& rng) : Module(std::move(name)), cfg_(std::move(cfg)) {
    cfg_.validate();
    std::sort(cfg_.kernels.begin(), cfg_.kernels.end());
    for (int64_t k : cfg_.kernels)
        branches_.push_back(&make_child<Dwcb>("dwcb" + std::to_string(k), sdims, cfg_.channels, k, rng));
}

ad::Var Msdc::forward(const ad::Var& x) {
    if (x.value().channels() != cfg_.channels) throw ShapeError("msdc channel count mismatch");
    ad::Var acc = x;  // residual
    for (Dwcb* branch : branches_) acc = ad::add(acc, branch->forward(x));
    return acc;
}

M2b::M2b(std::string name, int sdims, M2bCfg cfg, Rng& rng)
    : Module(std::move(name)),
      cfg_((cfg.validate(), cfg)),
      bn_in_(make_child<BatchNorm>("bn_in", cfg_.in_channels)),
      pw_expand_(make_child<Conv>("pw_expand", pointwise_spec(sdims, cfg_.in_channels, cfg_.expanded()),
                                  /*bias=*/true, rng)),
      msdc_(make_child<Msdc>("msdc", sdims, MsdcCfg{cfg_.expanded(), cfg_.kernels}, rng)),
      bn_mid_(make_child<BatchNorm>("bn_mid", cfg_.expanded())),
      pw_project_(make_child<Conv>("pw_project", pointwise_spec(sdims, cfg_.expanded(), cfg_.out()),
                                   /*bias=*/true, rng)) {}

ad::Var M2b::forward(const ad::Var& x) {
    ad::Var h = pw_expand_.forward(bn_in_.forward(x));
    h = ad::channel_shuffle(h, cfg_.groups);
    h = msdc_.forward(h);
    h = bn_mid_.forward(ad::relu6(h));
    return pw_project_.forward(h);
}

}  // namespace lcnet
