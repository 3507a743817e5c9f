#include "lcnet/attention.hpp"

namespace lcnet {

void ChannelAttentionCfg::validate() const {
    if (channels < 1 || reduction < 1) throw ConfigError("channel attention needs C >= 1, r >= 1");
    if (channels % reduction != 0)
        throw ConfigError("channel attention needs C divisible by r, got C=" + std::to_string(channels) +
                          " r=" + std::to_string(reduction));
}

void SpatialAttentionCfg::validate() const {
    if (kernel < 3 || kernel % 2 == 0)
        throw ConfigError("spatial attention kernel must be odd and >= 3, got " + std::to_string(kernel));
}

ChannelAttention::ChannelAttention(std::string name, int sdims, ChannelAttentionCfg cfg, Rng& rng)
    : Module(std::move(name)),
      cfg_(cfg),
      squeeze_((cfg.validate(),
                make_child<Conv>("squeeze", pointwise_spec(sdims, cfg.channels, cfg.channels / cfg.reduction),
                                 /*bias=*/false, rng))),
      expand_(make_child<Conv>("expand", pointwise_spec(sdims, cfg.channels / cfg.reduction, cfg.channels),
                               /*bias=*/false, rng)) {
    if (cfg_.with_bn) bn_ = &make_child<BatchNorm>("bn", cfg.channels / cfg.reduction);
}

ad::Var ChannelAttention::forward(const ad::Var& x) {
    if (x.value().channels() != cfg_.channels)
        throw ShapeError("channel attention expects " + std::to_string(cfg_.channels) + " channels, got " +
                         std::to_string(x.value().channels()));
    ad::Var h = squeeze_.forward(ad::global_avg_pool(x));
    if (bn_) h = bn_->forward(h);
    return ad::sigmoid(expand_.forward(ad::relu(h)));
}

SpatialAttention::SpatialAttention(std::string name, int sdims, SpatialAttentionCfg cfg, Rng& rng)
    : Module(std::move(name)),
      conv_((cfg.validate(), make_child<Conv>("conv", dense_same_spec(sdims, 2, 1, cfg.kernel),
                                              /*bias=*/false, rng))) {}

ad::Var SpatialAttention::forward(const ad::Var& x) {
    return ad::sigmoid(conv_.forward(ad::channel_stats(x)));
}

Lcbam::Lcbam(std::string name, int sdims, ChannelAttentionCfg ch, SpatialAttentionCfg sp, Rng& rng)
    : Module(std::move(name)),
      channel_(make_child<ChannelAttention>("channel", sdims, ch, rng)),
      spatial_(make_child<SpatialAttention>("spatial", sdims, sp, rng)) {}

ad::Var Lcbam::forward(const ad::Var& x) {
    ad::Var alpha = channel_.forward(x);
    ad::Var refined = ad::mul_broadcast(x, alpha);
    ad::Var beta = spatial_.forward(refined);  // spatial gate sees the channel-refined map
    return ad::mul_broadcast(refined, beta);
}

CbamRef::CbamRef(std::string name, int sdims, int64_t channels, int64_t reduction, int64_t spatial_kernel,
                 Rng& rng)
    : Module(std::move(name)),
      channels_(channels),
      mlp0_([&]() -> Conv& {
          ChannelAttentionCfg chk{channels, reduction, false};
          chk.validate();
          return make_child<Conv>("mlp0", pointwise_spec(sdims, channels, channels / reduction),
                                  /*bias=*/false, rng);
      }()),
      mlp1_(make_child<Conv>("mlp1", pointwise_spec(sdims, channels / reduction, channels),
                             /*bias=*/false, rng)),
      spatial_(make_child<SpatialAttention>("spatial", sdims, SpatialAttentionCfg{spatial_kernel}, rng)) {
    // the shared MLP is applied once per pooling branch; published accounting
    // charges it twice
    mlp0_.weight().uses = 2;
    mlp1_.weight().uses = 2;
}

ad::Var CbamRef::channel_gate(const ad::Var& x) {
    ad::Var avg_branch = mlp1_.forward(ad::relu(mlp0_.forward(ad::global_avg_pool(x))));
    ad::Var max_branch = mlp1_.forward(ad::relu(mlp0_.forward(ad::global_max_pool(x))));
    return ad::sigmoid(ad::add(avg_branch, max_branch));
}

ad::Var CbamRef::forward(const ad::Var& x) {
    if (x.value().channels() != channels_) throw ShapeError("cbam channel count mismatch");
    ad::Var refined = ad::mul_broadcast(x, channel_gate(x));
    ad::Var beta = spatial_.forward(refined);
    return ad::mul_broadcast(refined, beta);
}

}  // namespace lcnet
