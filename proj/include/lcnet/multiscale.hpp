#pragma once

#include "lcnet/modules.hpp"

namespace lcnet {

struct MsdcCfg {
    int64_t channels = 64;
    std::vector<int64_t> kernels{3, 5, 7};

    void validate() const;
};

struct M2bCfg {
    int64_t in_channels = 64;
    int64_t out_channels = 0;  // 0: same as in_channels
    double expansion = 2.0;
    int64_t groups = 2;
    std::vector<int64_t> kernels{3, 5, 7};

    int64_t expanded() const;
    int64_t out() const { return out_channels > 0 ? out_channels : in_channels; }
    void validate() const;
};

// depthwise conv -> batch norm -> relu6
class Dwcb : public Module {
public:
    Dwcb(std::string name, int sdims, int64_t channels, int64_t kernel, Rng& rng);
    ad::Var forward(const ad::Var& x);
    Conv& conv() { return conv_; }

private:
    Conv& conv_;
    BatchNorm& bn_;
};

// x + sum of parallel depthwise branches, summed in ascending kernel order
class Msdc : public Module {
public:
    Msdc(std::string name, int sdims, MsdcCfg cfg, Rng& rng);
    ad::Var forward(const ad::Var& x);
    std::vector<Dwcb*>& branches() { return branches_; }

private:
    MsdcCfg cfg_;
    std::vector<Dwcb*> branches_;
};

// inverted-residual multiscale block:
// bn -> pointwise expand -> channel shuffle -> msdc -> relu6 -> bn -> pointwise project
class M2b : public Module {
public:
    M2b(std::string name, int sdims, M2bCfg cfg, Rng& rng);
    ad::Var forward(const ad::Var& x);
    const M2bCfg& cfg() const { return cfg_; }
    Conv& pw_expand() { return pw_expand_; }
    Conv& pw_project() { return pw_project_; }
    Msdc& msdc() { return msdc_; }
    BatchNorm& bn_in() { return bn_in_; }
    BatchNorm& bn_mid() { return bn_mid_; }

private:
    M2bCfg cfg_;
    BatchNorm& bn_in_;
    Conv& pw_expand_;
    Msdc& msdc_;
    BatchNorm& bn_mid_;
    Conv& pw_project_;
};

}  // namespace lcnet
