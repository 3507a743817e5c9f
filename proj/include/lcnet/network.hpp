#pragma once

#include <array>
#include <unordered_map>

#include "lcnet/attention.hpp"
#include "lcnet/metrics.hpp"
#include "lcnet/multiscale.hpp"

namespace lcnet {

struct NetCfg {
    std::vector<int64_t> input{32, 32, 16};  // spatial extents
    int64_t in_channels = 1;
    std::vector<int64_t> patch{4, 4, 4};
    std::vector<int64_t> channels{32, 64, 128, 256};
    int64_t blocks_per_stage = 3;
    int64_t classes = 2;
    std::vector<double> ds_weights{0.57, 0.29, 0.14};
    int64_t reduction = 16;
    bool attn_bn = true;
    int64_t spatial_kernel = 7;
    std::vector<int64_t> msdc_kernels{3, 5, 7};
    double expansion = 2.0;
    int64_t shuffle_groups = 2;
    // full-resolution final stage: plain conv block by default, or another
    // attention + multiscale pair
    bool final_stage_attention = false;

    void validate() const;
};

NetCfg parse_net_cfg(const std::string& json_text);
std::string net_cfg_json(const NetCfg& cfg);

// static stage geometry derived from the config: extents after patch
// embedding and after each encoder stage, plus the per-axis stage strides.
// An axis of extent 1 keeps stride 1; an odd extent > 1 cannot be halved.
struct StagePlan {
    std::array<int64_t, 3> embed_extents;
    std::vector<std::array<int64_t, 3>> stage_extents;  // one per encoder stage
    std::vector<std::array<int64_t, 3>> stage_strides;  // stage 1 is all-ones
};

StagePlan plan_stages(const NetCfg& cfg);

// dense conv (same padding) -> batch norm -> relu
class ConvBlock : public Module {
public:
    ConvBlock(std::string name, int sdims, int64_t cin, int64_t cout, int64_t kernel, Rng& rng);
    ad::Var forward(const ad::Var& x);

private:
    Conv& conv_;
    BatchNorm& bn_;
};

// optional strided downsample, then `blocks` repetitions of
// x + lcbam(convblock(x))
class EncoderStage : public Module {
public:
    EncoderStage(std::string name, const NetCfg& cfg, int64_t cin, int64_t cout,
                 std::array<int64_t, 3> stride, Rng& rng);
    ad::Var forward(const ad::Var& x);

private:
    Conv* down_ = nullptr;
    std::vector<ConvBlock*> conv_blocks_;
    std::vector<Lcbam*> attn_blocks_;
};

// transposed-conv upsample -> add projected skip -> lcbam -> m2b
class DecoderStage : public Module {
public:
    DecoderStage(std::string name, const NetCfg& cfg, int64_t cin, int64_t cout,
                 std::array<int64_t, 3> stride, Rng& rng);
    ad::Var forward(const ad::Var& x, const ad::Var& skip);

private:
    Conv& up_;
    Conv& skip_proj_;
    Lcbam& attn_;
    M2b& m2b_;
};

struct NetOutput {
    ad::Var logits;               // [B, classes, embed extents]
    std::vector<ad::Var> aux;     // coarse -> fine, matches ds_weights order
};

class SegNetwork : public Module {
public:
    SegNetwork(const NetCfg& cfg, uint64_t seed);

    NetOutput forward(const ad::Var& x);
    const NetCfg& cfg() const { return cfg_; }
    const StagePlan& plan() const { return plan_; }

    // (label, shape) pairs of the full forward chain at the given batch size
    std::vector<std::pair<std::string, std::vector<int64_t>>> shape_chain(int64_t batch) const;

private:
    NetCfg cfg_;
    StagePlan plan_;
    Conv* embed_ = nullptr;
    std::vector<EncoderStage*> encoder_;
    std::vector<DecoderStage*> decoder_;
    ConvBlock* refine_ = nullptr;  // full-resolution final decoder stage (default)
    Lcbam* refine_attn_ = nullptr;
    M2b* refine_m2b_ = nullptr;
    Conv* head_conv_ = nullptr;
    Conv* head_proj_ = nullptr;
    std::vector<Conv*> aux_heads_;
};

// total = main + sum_i w_i * aux_i; aux targets are nearest-downsampled from
// `target`, which lives at the logits resolution
ad::Var supervised_loss(const NetOutput& out, const std::vector<LabelVolume>& target,
                        const std::vector<double>& ds_weights, bool verbatim = false);

struct SgdCfg {
    double lr = 0.01;
    double momentum = 0.99;
    double weight_decay = 3e-5;
    bool nesterov = true;
};

class Sgd {
public:
    explicit Sgd(SgdCfg cfg) : cfg_(cfg) {}
    void step(const std::vector<ParamRecord*>& params);
    const SgdCfg& cfg() const { return cfg_; }

private:
    SgdCfg cfg_;
    std::unordered_map<ParamRecord*, Tensor> velocity_;
};

void save_checkpoint(SegNetwork& net, const std::string& dir);
void load_checkpoint(SegNetwork& net, const std::string& dir);

struct TrainCfg {
    NetCfg net;
    SgdCfg sgd;
    int64_t steps = 300;
    int64_t batch = 2;
    uint64_t seed = 42;
};

struct TraceEntry {
    int64_t step;
    double loss;
    double dice;
    double lr;
};

struct TrainResult {
    std::vector<TraceEntry> trace;  // steps + 1 entries; entry k = state before update k
    bool diverged = false;
    int64_t diverged_step = -1;
    double final_dice = 0.0;
};

// overfit demo on the synthetic blob task; deterministic for a fixed config
TrainResult train_on_blobs(SegNetwork& net, const TrainCfg& cfg);

}  // namespace lcnet
