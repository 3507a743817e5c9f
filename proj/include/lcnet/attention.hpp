#pragma once

#include "lcnet/modules.hpp"

namespace lcnet {

struct ChannelAttentionCfg {
    int64_t channels = 64;
    int64_t reduction = 16;
    bool with_bn = true;  // normalization between the two pointwise convs

    void validate() const;
};

struct SpatialAttentionCfg {
    int64_t kernel = 7;

    void validate() const;
};

// per-channel gate: sigmoid(w2 * relu(bn(w1 * avgpool(x))))
// the two pointwise convs carry no bias, so the weight count is exactly
// 2*C*C/r (+ 2*C/r norm params when with_bn)
class ChannelAttention : public Module {
public:
    ChannelAttention(std::string name, int sdims, ChannelAttentionCfg cfg, Rng& rng);
    ad::Var forward(const ad::Var& x);  // [B,C,1...]
    const ChannelAttentionCfg& cfg() const { return cfg_; }

private:
    ChannelAttentionCfg cfg_;
    Conv& squeeze_;
    Conv& expand_;
    BatchNorm* bn_ = nullptr;
};

// per-position gate: sigmoid(conv_k([mean_c(x); max_c(x)]))
// the conv mixes the two statistics channels densely: k^d * 2 weights, no bias
class SpatialAttention : public Module {
public:
    SpatialAttention(std::string name, int sdims, SpatialAttentionCfg cfg, Rng& rng);
    ad::Var forward(const ad::Var& x);  // [B,1,spatial...]

private:
    Conv& conv_;
};

// sequential gating: out = beta(alpha*x) * (alpha*x)
class Lcbam : public Module {
public:
    Lcbam(std::string name, int sdims, ChannelAttentionCfg ch, SpatialAttentionCfg sp, Rng& rng);
    ad::Var forward(const ad::Var& x);
    ChannelAttention& channel() { return channel_; }
    SpatialAttention& spatial() { return spatial_; }

private:
    ChannelAttention& channel_;
    SpatialAttention& spatial_;
};

// original-style block kept for cost comparisons: the channel gate applies a
// shared two-layer MLP (as pointwise convs) to both avg- and max-pooled
// descriptors; spatial gate matches the lightweight one
class CbamRef : public Module {
public:
    CbamRef(std::string name, int sdims, int64_t channels, int64_t reduction, int64_t spatial_kernel,
            Rng& rng);
    ad::Var forward(const ad::Var& x);
    ad::Var channel_gate(const ad::Var& x);
    Conv& mlp0() { return mlp0_; }
    Conv& mlp1() { return mlp1_; }

private:
    int64_t channels_;
    Conv& mlp0_;
    Conv& mlp1_;
    SpatialAttention& spatial_;
};

}  // namespace lcnet
