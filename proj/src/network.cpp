#include "lcnet/network.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "lcnet/fixture.hpp"

namespace lcnet {

using nlohmann::json;

void NetCfg::validate() const {
    if (input.size() != 3 || patch.size() != 3) throw ConfigError("net config needs 3 spatial axes");
    for (int i = 0; i < 3; ++i) {
        if (input[static_cast<size_t>(i)] < 1 || patch[static_cast<size_t>(i)] < 1)
            throw ConfigError("input/patch extents must be >= 1");
        if (input[static_cast<size_t>(i)] % patch[static_cast<size_t>(i)] != 0)
            throw ShapeError("input extent " + std::to_string(input[static_cast<size_t>(i)]) +
                             " not divisible by patch " + std::to_string(patch[static_cast<size_t>(i)]));
    }
    if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
    if (channels.size() != 4) throw ConfigError("net config needs 4 stage channel counts");
    for (int64_t c : channels) {
        if (c < 1) throw ConfigError("stage channels must be >= 1");
        if (c % reduction != 0)
            throw ConfigError("stage channels " + std::to_string(c) + " not divisible by reduction " +
                              std::to_string(reduction));
    }
    if (blocks_per_stage < 1) throw ConfigError("blocks_per_stage must be >= 1");
    if (classes < 2) throw ConfigError("classes must be >= 2");
    if (ds_weights.size() != 3) throw ConfigError("exactly 3 deep-supervision weights expected");
    for (double w : ds_weights)
        if (w < 0.0) throw ConfigError("deep-supervision weights must be non-negative");
    SpatialAttentionCfg{spatial_kernel}.validate();
    for (size_t i = 0; i < 3; ++i) {
        M2bCfg m2b{channels[2 - i], 0, expansion, shuffle_groups, msdc_kernels};
        m2b.validate();
    }
}

StagePlan plan_stages(const NetCfg& cfg) {
    cfg.validate();
    StagePlan plan;
    for (int i = 0; i < 3; ++i)
        plan.embed_extents[static_cast<size_t>(i)] =
            cfg.input[static_cast<size_t>(i)] / cfg.patch[static_cast<size_t>(i)];

    std::array<int64_t, 3> ext = plan.embed_extents;
    plan.stage_extents.push_back(ext);               // stage 1 keeps the embedding resolution
    plan.stage_strides.push_back({1, 1, 1});
    for (int stage = 2; stage <= 4; ++stage) {
        std::array<int64_t, 3> stride{};
        for (int a = 0; a < 3; ++a) {
            const int64_t e = ext[static_cast<size_t>(a)];
            if (e == 1) {
                stride[static_cast<size_t>(a)] = 1;
            } else if (e % 2 == 0) {
                stride[static_cast<size_t>(a)] = 2;
            } else {
                throw ShapeError("odd spatial extent " + std::to_string(e) +
                                 " before halving at stage " + std::to_string(stage));
            }
            ext[static_cast<size_t>(a)] = e / stride[static_cast<size_t>(a)];
        }
        plan.stage_extents.push_back(ext);
        plan.stage_strides.push_back(stride);
    }
    return plan;
}

ConvBlock::ConvBlock(std::string name, int sdims, int64_t cin, int64_t cout, int64_t kernel, Rng& rng)
    : Module(std::move(name)),
      conv_(make_child<Conv>("conv", dense_same_spec(sdims, cin, cout, kernel), /*bias=*/true, rng)),
      bn_(make_child<BatchNorm>("bn", cout)) {}

ad::Var ConvBlock::forward(const ad::Var& x) { return ad::relu(bn_.forward(conv_.forward(x))); }

static ad::ConvSpec strided_spec(int64_t cin, int64_t cout, const std::array<int64_t, 3>& stride,
                                 bool transposed) {
    ad::ConvSpec s;
    s.kind = ad::ConvKind::Dense;
    s.sdims = 3;
    s.in_channels = cin;
    s.out_channels = cout;
    s.kernel.assign(stride.begin(), stride.end());  // non-overlapping: kernel == stride
    s.stride.assign(stride.begin(), stride.end());
    s.pad.assign(3, 0);
    s.transposed = transposed;
    return s;
}

EncoderStage::EncoderStage(std::string name, const NetCfg& cfg, int64_t cin, int64_t cout,
                           std::array<int64_t, 3> stride, Rng& rng)
    : Module(std::move(name)) {
    const bool unit_stride = stride == std::array<int64_t, 3>{1, 1, 1};
    if (!unit_stride || cin != cout)
        down_ = &make_child<Conv>("down", strided_spec(cin, cout, stride, false), /*bias=*/true, rng);
    for (int64_t b = 0; b < cfg.blocks_per_stage; ++b) {
        conv_blocks_.push_back(&make_child<ConvBlock>("block" + std::to_string(b), 3, cout, cout, 3, rng));
        attn_blocks_.push_back(&make_child<Lcbam>(
            "attn" + std::to_string(b), 3, ChannelAttentionCfg{cout, cfg.reduction, cfg.attn_bn},
            SpatialAttentionCfg{cfg.spatial_kernel}, rng));
    }
}

ad::Var EncoderStage::forward(const ad::Var& x) {
    ad::Var h = down_ ? down_->forward(x) : x;
    for (size_t b = 0; b < conv_blocks_.size(); ++b)
        h = ad::add(h, attn_blocks_[b]->forward(conv_blocks_[b]->forward(h)));
    return h;
}

DecoderStage::DecoderStage(std::string name, const NetCfg& cfg, int64_t cin, int64_t cout,
                           std::array<int64_t, 3> stride, Rng& rng)
    : Module(std::move(name)),
      up_(make_child<Conv>("up", strided_spec(cin, cout, stride, true), /*bias=*/true, rng)),
      skip_proj_(make_child<Conv>("skip_proj", pointwise_spec(3, cout, cout), /*bias=*/true, rng)),
      attn_(make_child<Lcbam>("attn", 3, ChannelAttentionCfg{cout, cfg.reduction, cfg.attn_bn},
                              SpatialAttentionCfg{cfg.spatial_kernel}, rng)),
      m2b_(make_child<M2b>("m2b", 3, M2bCfg{cout, 0, cfg.expansion, cfg.shuffle_groups, cfg.msdc_kernels},
                           rng)) {}

ad::Var DecoderStage::forward(const ad::Var& x, const ad::Var& skip) {
    ad::Var up = up_.forward(x);
    if (!up.value().same_shape(skip.value()))
        throw ShapeError("decoder skip shape mismatch: upsampled and skip tensors disagree");
    ad::Var h = ad::add(up, skip_proj_.forward(skip));
    return m2b_.forward(attn_.forward(h));
}

SegNetwork::SegNetwork(const NetCfg& cfg, uint64_t seed)
    : Module("net"), cfg_((cfg.validate(), cfg)), plan_(plan_stages(cfg)) {
    Rng rng(seed);
    const auto& ch = cfg_.channels;

    ad::ConvSpec embed_spec;
    embed_spec.kind = ad::ConvKind::Dense;
    embed_spec.sdims = 3;
    embed_spec.in_channels = cfg_.in_channels;
    embed_spec.out_channels = ch[0];
    embed_spec.kernel.assign(cfg_.patch.begin(), cfg_.patch.end());
    embed_spec.stride.assign(cfg_.patch.begin(), cfg_.patch.end());
    embed_spec.pad.assign(3, 0);
    embed_ = &make_child<Conv>("embed", embed_spec, /*bias=*/true, rng);

    encoder_.push_back(&make_child<EncoderStage>("enc1", cfg_, ch[0], ch[0], plan_.stage_strides[0], rng));
    encoder_.push_back(&make_child<EncoderStage>("enc2", cfg_, ch[0], ch[1], plan_.stage_strides[1], rng));
    encoder_.push_back(&make_child<EncoderStage>("enc3", cfg_, ch[1], ch[2], plan_.stage_strides[2], rng));
    encoder_.push_back(&make_child<EncoderStage>("enc4", cfg_, ch[2], ch[3], plan_.stage_strides[3], rng));
    decoder_.push_back(&make_child<DecoderStage>("dec1", cfg_, ch[3], ch[2], plan_.stage_strides[3], rng));
    decoder_.push_back(&make_child<DecoderStage>("dec2", cfg_, ch[2], ch[1], plan_.stage_strides[2], rng));
    decoder_.push_back(&make_child<DecoderStage>("dec3", cfg_, ch[1], ch[0], plan_.stage_strides[1], rng));
    if (cfg_.final_stage_attention) {
        refine_attn_ = &make_child<Lcbam>("refine_attn", 3,
                                          ChannelAttentionCfg{ch[0], cfg_.reduction, cfg_.attn_bn},
                                          SpatialAttentionCfg{cfg_.spatial_kernel}, rng);
        refine_m2b_ = &make_child<M2b>(
            "refine_m2b", 3, M2bCfg{ch[0], 0, cfg_.expansion, cfg_.shuffle_groups, cfg_.msdc_kernels}, rng);
    } else {
        refine_ = &make_child<ConvBlock>("refine", 3, ch[0], ch[0], 3, rng);
    }
    head_conv_ = &make_child<Conv>("head_conv", dense_same_spec(3, ch[0], ch[0], 3), /*bias=*/true, rng);
    head_proj_ = &make_child<Conv>("head_proj", pointwise_spec(3, ch[0], cfg_.classes), /*bias=*/true, rng);
    aux_heads_.push_back(&make_child<Conv>("aux1", pointwise_spec(3, ch[2], cfg_.classes), /*bias=*/true, rng));
    aux_heads_.push_back(&make_child<Conv>("aux2", pointwise_spec(3, ch[1], cfg_.classes), /*bias=*/true, rng));
    aux_heads_.push_back(&make_child<Conv>("aux3", pointwise_spec(3, ch[0], cfg_.classes), /*bias=*/true, rng));
}

NetOutput SegNetwork::forward(const ad::Var& x) {
    const Tensor& xv = x.value();
    require_feature_layout(xv);
    if (xv.spatial_dims() != 3 || xv.channels() != cfg_.in_channels)
        throw ShapeError("network input must be [B, " + std::to_string(cfg_.in_channels) + ", D, H, W]");
    for (int a = 0; a < 3; ++a)
        if (xv.spatial(a) != cfg_.input[static_cast<size_t>(a)])
            throw ShapeError("network input extents do not match the configured geometry");

    ad::Var h = embed_->forward(x);
    std::vector<ad::Var> skips;
    for (EncoderStage* stage : encoder_) {
        h = stage->forward(h);
        skips.push_back(h);
    }
    NetOutput out;
    ad::Var d = skips[3];
    d = decoder_[0]->forward(d, skips[2]);
    out.aux.push_back(aux_heads_[0]->forward(d));
    d = decoder_[1]->forward(d, skips[1]);
    out.aux.push_back(aux_heads_[1]->forward(d));
    d = decoder_[2]->forward(d, skips[0]);
    out.aux.push_back(aux_heads_[2]->forward(d));
    d = refine_ ? refine_->forward(d) : refine_m2b_->forward(refine_attn_->forward(d));
    out.logits = head_proj_->forward(ad::relu(head_conv_->forward(d)));
    return out;
}

std::vector<std::pair<std::string, std::vector<int64_t>>> SegNetwork::shape_chain(int64_t batch) const {
    std::vector<std::pair<std::string, std::vector<int64_t>>> chain;
    auto entry = [&](const std::string& label, int64_t c, const std::array<int64_t, 3>& ext) {
        chain.emplace_back(label, std::vector<int64_t>{batch, c, ext[0], ext[1], ext[2]});
    };
    entry("input", cfg_.in_channels, {cfg_.input[0], cfg_.input[1], cfg_.input[2]});
    entry("patch_embed", cfg_.channels[0], plan_.embed_extents);
    for (int i = 0; i < 4; ++i)
        entry("enc" + std::to_string(i + 1), cfg_.channels[static_cast<size_t>(i)],
              plan_.stage_extents[static_cast<size_t>(i)]);
    for (int j = 0; j < 3; ++j)
        entry("dec" + std::to_string(j + 1), cfg_.channels[static_cast<size_t>(2 - j)],
              plan_.stage_extents[static_cast<size_t>(2 - j)]);
    entry("refine", cfg_.channels[0], plan_.stage_extents[0]);
    entry("logits", cfg_.classes, plan_.embed_extents);
    for (int j = 0; j < 3; ++j)
        entry("aux" + std::to_string(j + 1), cfg_.classes, plan_.stage_extents[static_cast<size_t>(2 - j)]);
    return chain;
}

ad::Var supervised_loss(const NetOutput& out, const std::vector<LabelVolume>& target,
                        const std::vector<double>& ds_weights, bool verbatim) {
    if (ds_weights.size() != out.aux.size()) throw ShapeError("deep-supervision weight count mismatch");
    const Tensor& lv = out.logits.value();
    const auto& ext = target.front().extents;
    for (int a = 0; a < 3; ++a)
        if (lv.spatial(a) != ext[static_cast<size_t>(a)])
            throw ShapeError("loss target must live at the logits resolution");

    ad::Var total = seg_loss(out.logits, one_hot(target), verbatim);
    for (size_t i = 0; i < out.aux.size(); ++i) {
        const Tensor& av = out.aux[i].value();
        std::array<int64_t, 3> factors{};
        for (int a = 0; a < 3; ++a) {
            if (ext[static_cast<size_t>(a)] % av.spatial(a) != 0)
                throw ShapeError("aux resolution does not divide the target resolution");
            factors[static_cast<size_t>(a)] = ext[static_cast<size_t>(a)] / av.spatial(a);
        }
        std::vector<LabelVolume> ds_target;
        ds_target.reserve(target.size());
        for (const auto& t : target) ds_target.push_back(downsample_nearest(t, factors));
        total = ad::add(total, ad::scale(seg_loss(out.aux[i], one_hot(ds_target), verbatim), ds_weights[i]));
    }
    return total;
}

void Sgd::step(const std::vector<ParamRecord*>& params) {
    for (ParamRecord* p : params) {
        Tensor& w = p->value();
        const Tensor& g = p->grad();
        auto [it, fresh] = velocity_.try_emplace(p, Tensor::zeros(w.shape()));
        Tensor& v = it->second;
        for (int64_t i = 0; i < w.numel(); ++i) {
            const double grad = g[i] + cfg_.weight_decay * w[i];
            v[i] = cfg_.momentum * v[i] + grad;
            const double step = cfg_.nesterov ? grad + cfg_.momentum * v[i] : v[i];
            w[i] -= cfg_.lr * step;
        }
    }
}

// ---------------------------------------------------------------------------
// checkpoints

void save_checkpoint(SegNetwork& net, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    json manifest;
    manifest["version"] = 1;
    manifest["params"] = json::array();
    int index = 0;
    for (const NamedParam& np : net.named_params()) {
        char file[32];
        std::snprintf(file, sizeof(file), "param_%04d.bin", index++);
        save_fixture(np.rec->value(), (fs::path(dir) / file).string());
        manifest["params"].push_back(
            {{"name", np.name}, {"file", file}, {"shape", np.rec->shape()}, {"count", np.rec->count()}});
    }
    std::ofstream os(fs::path(dir) / "manifest.json");
    os << manifest.dump(2) << '\n';
}

void load_checkpoint(SegNetwork& net, const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream is(fs::path(dir) / "manifest.json");
    if (!is) throw FormatError("missing checkpoint manifest in '" + dir + "'");
    json manifest = json::parse(is, nullptr, /*allow_exceptions=*/false);
    if (manifest.is_discarded()) throw FormatError("bad checkpoint manifest in '" + dir + "'");

    std::unordered_map<std::string, ParamRecord*> by_name;
    for (const NamedParam& np : net.named_params()) by_name[np.name] = np.rec;
    for (const auto& entry : manifest["params"]) {
        const std::string name = entry["name"];
        auto it = by_name.find(name);
        if (it == by_name.end()) throw FormatError("checkpoint parameter '" + name + "' not in network");
        Tensor t = load_fixture((fs::path(dir) / entry["file"].get<std::string>()).string());
        if (t.shape() != it->second->shape())
            throw FormatError("checkpoint shape mismatch for '" + name + "'");
        it->second->value() = std::move(t);
    }
}

// ---------------------------------------------------------------------------
// demo training

TrainResult train_on_blobs(SegNetwork& net, const TrainCfg& cfg) {
    const NetCfg& nc = net.cfg();
    std::array<int64_t, 3> ext{nc.input[0], nc.input[1], nc.input[2]};
    std::array<int64_t, 3> patch{nc.patch[0], nc.patch[1], nc.patch[2]};

    Tensor batch({cfg.batch, 1, ext[0], ext[1], ext[2]}, "BCDHW");
    std::vector<LabelVolume> targets;
    const int64_t sp = ext[0] * ext[1] * ext[2];
    for (int64_t b = 0; b < cfg.batch; ++b) {
        BlobTask task = make_blob_task(ext, nc.classes, cfg.seed + static_cast<uint64_t>(b));
        for (int64_t s = 0; s < sp; ++s) batch[b * sp + s] = task.volume[s];
        targets.push_back(downsample_nearest(task.labels, patch));  // target at logits resolution
    }

    ad::Var x = ad::Var::constant(batch);
    std::vector<ParamRecord*> params = net.params();
    Sgd opt(cfg.sgd);
    net.set_mode(ad::Mode::Train);

    TrainResult result;
    Tensor seed_grad({1});
    seed_grad[0] = 1.0;
    for (int64_t step = 0; step <= cfg.steps; ++step) {
        NetOutput out = net.forward(x);
        ad::Var loss = supervised_loss(out, targets, nc.ds_weights);
        const double loss_value = loss.value()[0];
        const double dice = mean_foreground_dice(out.logits.value(), targets);
        result.trace.push_back({step, loss_value, dice, cfg.sgd.lr});
        if (!std::isfinite(loss_value)) {
            result.diverged = true;
            result.diverged_step = step;
            break;
        }
        if (step == cfg.steps) break;
        net.zero_grad();
        ad::backward(loss, seed_grad);
        opt.step(params);
    }
    if (!result.trace.empty()) result.final_dice = result.trace.back().dice;
    return result;
}

// ---------------------------------------------------------------------------
// config parsing

NetCfg parse_net_cfg(const std::string& json_text) {
    json j = json::parse(json_text, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded() || !j.is_object()) throw ConfigError("net config is not a JSON object");
    static const std::unordered_map<std::string, int> known = {
        {"input", 0},       {"in_channels", 0}, {"patch", 0},          {"channels", 0},
        {"blocks_per_stage", 0}, {"classes", 0}, {"ds_weights", 0},    {"reduction", 0},
        {"attn_bn", 0},     {"spatial_kernel", 0}, {"msdc_kernels", 0}, {"expansion", 0},
        {"shuffle_groups", 0}, {"final_stage_attention", 0}};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key())) throw ConfigError("unknown net config key '" + it.key() + "'");

    NetCfg cfg;
    try {
        if (j.contains("input")) cfg.input = j["input"].get<std::vector<int64_t>>();
        if (j.contains("in_channels")) cfg.in_channels = j["in_channels"].get<int64_t>();
        if (j.contains("patch")) cfg.patch = j["patch"].get<std::vector<int64_t>>();
        if (j.contains("channels")) cfg.channels = j["channels"].get<std::vector<int64_t>>();
        if (j.contains("blocks_per_stage")) cfg.blocks_per_stage = j["blocks_per_stage"].get<int64_t>();
        if (j.contains("classes")) cfg.classes = j["classes"].get<int64_t>();
        if (j.contains("ds_weights")) cfg.ds_weights = j["ds_weights"].get<std::vector<double>>();
        if (j.contains("reduction")) cfg.reduction = j["reduction"].get<int64_t>();
        if (j.contains("attn_bn")) cfg.attn_bn = j["attn_bn"].get<bool>();
        if (j.contains("spatial_kernel")) cfg.spatial_kernel = j["spatial_kernel"].get<int64_t>();
        if (j.contains("msdc_kernels")) cfg.msdc_kernels = j["msdc_kernels"].get<std::vector<int64_t>>();
        if (j.contains("expansion")) cfg.expansion = j["expansion"].get<double>();
        if (j.contains("shuffle_groups")) cfg.shuffle_groups = j["shuffle_groups"].get<int64_t>();
        if (j.contains("final_stage_attention"))
            cfg.final_stage_attention = j["final_stage_attention"].get<bool>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad net config value: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

std::string net_cfg_json(const NetCfg& cfg) {
    json j;
    j["input"] = cfg.input;
    j["in_channels"] = cfg.in_channels;
    j["patch"] = cfg.patch;
    j["channels"] = cfg.channels;
    j["blocks_per_stage"] = cfg.blocks_per_stage;
    j["classes"] = cfg.classes;
    j["ds_weights"] = cfg.ds_weights;
    j["reduction"] = cfg.reduction;
    j["attn_bn"] = cfg.attn_bn;
    j["spatial_kernel"] = cfg.spatial_kernel;
    j["msdc_kernels"] = cfg.msdc_kernels;
    j["expansion"] = cfg.expansion;
    j["shuffle_groups"] = cfg.shuffle_groups;
    j["final_stage_attention"] = cfg.final_stage_attention;
    return j.dump(2);
}

}  // namespace lcnet
