#include "lcnet/gradcheck.hpp"

#include <cmath>

#include <json.hpp>

#include "lcnet/attention.hpp"
#include "lcnet/multiscale.hpp"
#include "lcnet/network.hpp"

namespace lcnet {

namespace {

struct TapeGuard {
    explicit TapeGuard(ad::DecisionTape* t) { ad::set_decision_tape(t); }
    ~TapeGuard() { ad::set_decision_tape(nullptr); }
};

double project(const Tensor& cotangent, const Tensor& value) {
    double acc = 0.0;
    for (int64_t i = 0; i < value.numel(); ++i) acc += cotangent[i] * value[i];
    return acc;
}

}  // namespace

GradCheckReport run_grad_check(const GradCheckTarget& target, uint64_t seed, bool inject_fault) {
    if (target.h < 1e-7 || target.h > 1e-3)
        throw ValueError("grad check step h must lie in [1e-7, 1e-3]");

    GradCheckReport report;
    report.node = target.name;
    report.h = target.h;
    report.tol = target.tol;

    Rng rng(seed);
    std::unique_ptr<Module> module;
    if (target.make_module) {
        module = target.make_module(rng);
        module->set_mode(target.mode);
        if (target.randomize_bn_stats)
            module->visit([&rng](Module& m) {
                if (auto* bn = dynamic_cast<BatchNorm*>(&m)) {
                    for (int64_t i = 0; i < bn->state().running_mean.numel(); ++i) {
                        bn->state().running_mean[i] = rng.uniform(-0.5, 0.5);
                        bn->state().running_var[i] = rng.uniform(0.5, 1.5);
                    }
                }
            });
    }

    std::vector<ad::Var> inputs;
    for (size_t i = 0; i < target.input_shapes.size(); ++i) {
        Tensor t(target.input_shapes[i], target.input_layouts[i]);
        for (int64_t j = 0; j < t.numel(); ++j) t[j] = rng.uniform(-1.0, 1.0);
        inputs.push_back(ad::Var::leaf(std::move(t), true));
    }

    ad::DecisionTape tape;
    TapeGuard guard(&tape);

    ad::Var base = target.apply(module.get(), inputs);
    Tensor cotangent(base.value().shape(), base.value().layout());
    for (int64_t i = 0; i < cotangent.numel(); ++i) cotangent[i] = rng.uniform(-1.0, 1.0);

    if (module) module->zero_grad();
    ad::backward(base, cotangent);

    struct Checked {
        std::string name;
        Tensor* value;
        Tensor analytic;
    };
    std::vector<Checked> checked;
    for (size_t i = 0; i < inputs.size(); ++i)
        checked.push_back({"input" + std::to_string(i), &inputs[i].value(), inputs[i].grad()});
    std::vector<NamedParam> named;
    if (module) named = module->named_params();
    for (const NamedParam& np : named) checked.push_back({np.name, &np.rec->value(), np.rec->grad()});

    if (inject_fault && !checked.empty())
        for (int64_t i = 0; i < checked.front().analytic.numel(); ++i) checked.front().analytic[i] *= -1.0;

    tape.phase = ad::DecisionTape::Phase::Replay;
    auto phi = [&]() {
        tape.rewind();
        return project(cotangent, target.apply(module.get(), inputs).value());
    };

    for (Checked& c : checked) {
        GradTensorReport tr;
        tr.tensor = c.name;
        Tensor& v = *c.value;
        for (int64_t i = 0; i < v.numel(); ++i) {
            const double saved = v[i];
            v[i] = saved + target.h;
            const double up = phi();
            v[i] = saved - target.h;
            const double down = phi();
            v[i] = saved;
            const double numeric = (up - down) / (2.0 * target.h);
            const double analytic = c.analytic[i];
            const double rel = std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
            if (tr.worst_index < 0 || rel > tr.rel_err) {
                tr.worst_index = i;
                tr.analytic = analytic;
                tr.numeric = numeric;
                tr.rel_err = rel;
            }
        }
        tr.pass = tr.rel_err <= target.tol;
        report.pass = report.pass && tr.pass;
        report.cases.push_back(tr);
    }
    return report;
}

std::string grad_reports_json(const std::vector<GradCheckReport>& reports) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : reports) {
        nlohmann::json cases = nlohmann::json::array();
        for (const auto& c : r.cases)
            cases.push_back({{"tensor", c.tensor},
                             {"worst_index", c.worst_index},
                             {"analytic", c.analytic},
                             {"numeric", c.numeric},
                             {"rel_err", c.rel_err},
                             {"pass", c.pass}});
        out.push_back({{"node", r.node}, {"h", r.h}, {"tol", r.tol}, {"pass", r.pass}, {"cases", cases}});
    }
    return out.dump(2);
}

// ---------------------------------------------------------------------------
// registered suite

namespace {

GradCheckTarget op_target(std::string name, std::vector<std::vector<int64_t>> shapes,
                          std::vector<std::string> layouts,
                          std::function<ad::Var(Module*, const std::vector<ad::Var>&)> apply) {
    GradCheckTarget t;
    t.name = std::move(name);
    t.input_shapes = std::move(shapes);
    t.input_layouts = std::move(layouts);
    t.apply = std::move(apply);
    return t;
}

// single-layer wrapper so conv-style ops carry their parameters
template <class L>
struct Holder : Module {
    L* layer = nullptr;
    Holder() : Module("holder") {}
    template <class... Args>
    void init(Args&&... args) {
        layer = &make_child<L>(std::forward<Args>(args)...);
    }
};

GradCheckTarget conv_target(std::string name, ad::ConvSpec spec, bool bias,
                            std::vector<int64_t> shape, std::string layout) {
    GradCheckTarget t = op_target(std::move(name), {std::move(shape)}, {std::move(layout)}, nullptr);
    t.make_module = [spec, bias](Rng& rng) -> std::unique_ptr<Module> {
        auto holder = std::make_unique<Holder<Conv>>();
        holder->init("conv", spec, bias, rng);
        return holder;
    };
    t.apply = [](Module* m, const std::vector<ad::Var>& in) {
        return static_cast<Holder<Conv>*>(m)->layer->forward(in[0]);
    };
    return t;
}

NetCfg tiny_net_cfg() {
    NetCfg cfg;
    cfg.input = {8, 8, 4};
    cfg.patch = {2, 2, 2};
    cfg.channels = {2, 4, 4, 4};
    cfg.blocks_per_stage = 1;
    cfg.classes = 2;
    cfg.reduction = 2;
    cfg.spatial_kernel = 3;
    cfg.msdc_kernels = {3};
    cfg.expansion = 2.0;
    cfg.shuffle_groups = 2;
    return cfg;
}

}  // namespace

std::vector<GradCheckTarget> standard_targets() {
    std::vector<GradCheckTarget> targets;

    // primitives at tol 1e-6
    {
        auto spec = dense_same_spec(2, 3, 2, 3);
        targets.push_back(conv_target("conv_dense", spec, true, {1, 3, 6, 6}, "BCHW"));
    }
    targets.push_back(conv_target("conv_depthwise", depthwise_spec(2, 4, 3), true, {1, 4, 5, 5}, "BCHW"));
    targets.push_back(conv_target("conv_pointwise", pointwise_spec(2, 4, 3), true, {1, 4, 5, 5}, "BCHW"));
    {
        ad::ConvSpec spec;
        spec.kind = ad::ConvKind::Dense;
        spec.sdims = 3;
        spec.in_channels = 2;
        spec.out_channels = 3;
        spec.kernel = {2, 2, 2};
        spec.stride = {2, 2, 2};
        spec.pad = {0, 0, 0};
        spec.transposed = true;
        targets.push_back(conv_target("transposed_conv", spec, true, {1, 2, 3, 3, 3}, "BCDHW"));
    }
    targets.push_back(op_target("adaptive_avg_pool", {{2, 3, 4, 4}}, {"BCHW"},
                                [](Module*, const std::vector<ad::Var>& in) { return ad::global_avg_pool(in[0]); }));
    targets.push_back(op_target("global_max_pool", {{2, 3, 4, 4}}, {"BCHW"},
                                [](Module*, const std::vector<ad::Var>& in) { return ad::global_max_pool(in[0]); }));
    targets.push_back(op_target("channel_stats_pool", {{2, 5, 4, 4}}, {"BCHW"},
                                [](Module*, const std::vector<ad::Var>& in) { return ad::channel_stats(in[0]); }));
    {
        GradCheckTarget t = op_target("batch_norm", {{2, 3, 4, 4}}, {"BCHW"}, nullptr);
        t.make_module = [](Rng& rng) -> std::unique_ptr<Module> {
            (void)rng;
            auto holder = std::make_unique<Holder<BatchNorm>>();
            holder->init("bn", 3);
            return holder;
        };
        t.apply = [](Module* m, const std::vector<ad::Var>& in) {
            return static_cast<Holder<BatchNorm>*>(m)->layer->forward(in[0]);
        };
        targets.push_back(t);
    }
    targets.push_back(op_target("relu", {{2, 3, 5, 5}}, {"BCHW"},
                                [](Module*, const std::vector<ad::Var>& in) { return ad::relu(in[0]); }));
    targets.push_back(op_target("relu6", {{2, 3, 5, 5}}, {"BCHW"},
                                [](Module*, const std::vector<ad::Var>& in) {
                                    return ad::relu6(ad::scale(in[0], 7.0));  // reach both clamps
                                }));
    targets.push_back(op_target("sigmoid", {{2, 3, 5, 5}}, {"BCHW"},
                                [](Module*, const std::vector<ad::Var>& in) { return ad::sigmoid(in[0]); }));
    targets.push_back(op_target("channel_shuffle", {{1, 6, 4, 4}}, {"BCHW"},
                                [](Module*, const std::vector<ad::Var>& in) {
                                    return ad::channel_shuffle(in[0], 3);
                                }));
    targets.push_back(op_target("elementwise_add", {{2, 3, 4, 4}, {2, 3, 4, 4}}, {"BCHW", "BCHW"},
                                [](Module*, const std::vector<ad::Var>& in) { return ad::add(in[0], in[1]); }));
    targets.push_back(op_target("mul_broadcast_channel", {{2, 3, 4, 4}, {2, 3, 1, 1}}, {"BCHW", "BCHW"},
                                [](Module*, const std::vector<ad::Var>& in) {
                                    return ad::mul_broadcast(in[0], in[1]);
                                }));
    targets.push_back(op_target("mul_broadcast_spatial", {{2, 3, 4, 4}, {2, 1, 4, 4}}, {"BCHW", "BCHW"},
                                [](Module*, const std::vector<ad::Var>& in) {
                                    return ad::mul_broadcast(in[0], in[1]);
                                }));

    // composed blocks at tol 1e-5; B=1 blocks run eval-mode normalization with
    // randomized running stats (train-mode normalization needs batch >= 2 and
    // is covered by the stage and full-net targets)
    auto block = [&](std::string name, std::vector<std::vector<int64_t>> shapes,
                     std::vector<std::string> layouts,
                     std::function<std::unique_ptr<Module>(Rng&)> make,
                     std::function<ad::Var(Module*, const std::vector<ad::Var>&)> apply,
                     ad::Mode mode, bool rand_bn) {
        GradCheckTarget t;
        t.name = std::move(name);
        t.h = 1e-5;
        t.tol = 1e-5;
        t.input_shapes = std::move(shapes);
        t.input_layouts = std::move(layouts);
        t.mode = mode;
        t.randomize_bn_stats = rand_bn;
        t.make_module = std::move(make);
        t.apply = std::move(apply);
        targets.push_back(std::move(t));
    };

    block("lcbam_channel", {{1, 8, 6, 6}}, {"BCHW"},
          [](Rng& rng) -> std::unique_ptr<Module> {
              return std::make_unique<ChannelAttention>("ch", 2, ChannelAttentionCfg{8, 4, true}, rng);
          },
          [](Module* m, const std::vector<ad::Var>& in) {
              return static_cast<ChannelAttention*>(m)->forward(in[0]);
          },
          ad::Mode::Eval, true);
    block("lcbam_spatial", {{1, 8, 6, 6}}, {"BCHW"},
          [](Rng& rng) -> std::unique_ptr<Module> {
              return std::make_unique<SpatialAttention>("sp", 2, SpatialAttentionCfg{7}, rng);
          },
          [](Module* m, const std::vector<ad::Var>& in) {
              return static_cast<SpatialAttention*>(m)->forward(in[0]);
          },
          ad::Mode::Eval, false);
    block("lcbam", {{1, 8, 6, 6}}, {"BCHW"},
          [](Rng& rng) -> std::unique_ptr<Module> {
              return std::make_unique<Lcbam>("lcbam", 2, ChannelAttentionCfg{8, 4, true},
                                             SpatialAttentionCfg{7}, rng);
          },
          [](Module* m, const std::vector<ad::Var>& in) { return static_cast<Lcbam*>(m)->forward(in[0]); },
          ad::Mode::Eval, true);
    block("cbam", {{1, 8, 6, 6}}, {"BCHW"},
          [](Rng& rng) -> std::unique_ptr<Module> {
              return std::make_unique<CbamRef>("cbam", 2, 8, 4, 7, rng);
          },
          [](Module* m, const std::vector<ad::Var>& in) { return static_cast<CbamRef*>(m)->forward(in[0]); },
          ad::Mode::Eval, false);
    block("dwcb", {{1, 4, 5, 5}}, {"BCHW"},
          [](Rng& rng) -> std::unique_ptr<Module> { return std::make_unique<Dwcb>("dwcb", 2, 4, 3, rng); },
          [](Module* m, const std::vector<ad::Var>& in) { return static_cast<Dwcb*>(m)->forward(in[0]); },
          ad::Mode::Train, false);
    block("msdc", {{1, 4, 5, 5}}, {"BCHW"},
          [](Rng& rng) -> std::unique_ptr<Module> {
              return std::make_unique<Msdc>("msdc", 2, MsdcCfg{4, {3, 5}}, rng);
          },
          [](Module* m, const std::vector<ad::Var>& in) { return static_cast<Msdc*>(m)->forward(in[0]); },
          ad::Mode::Train, false);
    block("m2b", {{1, 4, 5, 5}}, {"BCHW"},
          [](Rng& rng) -> std::unique_ptr<Module> {
              return std::make_unique<M2b>("m2b", 2, M2bCfg{4, 0, 2.0, 2, {3, 5}}, rng);
          },
          [](Module* m, const std::vector<ad::Var>& in) { return static_cast<M2b*>(m)->forward(in[0]); },
          ad::Mode::Train, false);
    {
        ad::ConvSpec spec;
        spec.kind = ad::ConvKind::Dense;
        spec.sdims = 3;
        spec.in_channels = 1;
        spec.out_channels = 4;
        spec.kernel = {4, 4, 4};
        spec.stride = {4, 4, 4};
        spec.pad = {0, 0, 0};
        GradCheckTarget t = conv_target("patch_embed", spec, true, {1, 1, 8, 8, 8}, "BCDHW");
        targets.push_back(t);
    }
    {
        NetCfg cfg = tiny_net_cfg();
        block("encoder_stage", {{2, 2, 4, 4, 4}}, {"BCDHW"},
              [cfg](Rng& rng) -> std::unique_ptr<Module> {
                  return std::make_unique<EncoderStage>("enc", cfg, 2, 4, std::array<int64_t, 3>{2, 2, 2},
                                                        rng);
              },
              [](Module* m, const std::vector<ad::Var>& in) {
                  return static_cast<EncoderStage*>(m)->forward(in[0]);
              },
              ad::Mode::Train, false);
        block("decoder_stage", {{2, 8, 2, 2, 2}, {2, 4, 4, 4, 4}}, {"BCDHW", "BCDHW"},
              [cfg](Rng& rng) -> std::unique_ptr<Module> {
                  NetCfg c = cfg;
                  c.reduction = 2;
                  return std::make_unique<DecoderStage>("dec", c, 8, 4, std::array<int64_t, 3>{2, 2, 2},
                                                        rng);
              },
              [](Module* m, const std::vector<ad::Var>& in) {
                  return static_cast<DecoderStage*>(m)->forward(in[0], in[1]);
              },
              ad::Mode::Train, false);
    }
    {
        // composite loss w.r.t. logits only
        GradCheckTarget t = op_target("seg_loss", {{1, 3, 4, 4, 2}}, {"BCDHW"}, nullptr);
        t.tol = 1e-6;
        t.apply = [](Module*, const std::vector<ad::Var>& in) {
            LabelVolume lv;
            lv.extents = {4, 4, 2};
            lv.classes = 3;
            Rng label_rng(99);
            lv.ids.resize(static_cast<size_t>(lv.numel()));
            for (auto& id : lv.ids) id = static_cast<int32_t>(label_rng.below(3));
            return seg_loss(in[0], one_hot({lv}));
        };
        targets.push_back(t);
    }
    {
        // end-to-end: network forward plus deep-supervised composite loss
        NetCfg cfg = tiny_net_cfg();
        GradCheckTarget t;
        t.name = "full_net_loss";
        t.h = 1e-5;
        t.tol = 1e-5;
        t.input_shapes = {{2, 1, 8, 8, 4}};
        t.input_layouts = {"BCDHW"};
        t.mode = ad::Mode::Train;
        t.make_module = [cfg](Rng& rng) -> std::unique_ptr<Module> {
            return std::make_unique<SegNetwork>(cfg, rng.next_u64());
        };
        t.apply = [cfg](Module* m, const std::vector<ad::Var>& in) {
            auto* net = static_cast<SegNetwork*>(m);
            NetOutput out = net->forward(in[0]);
            std::vector<LabelVolume> targets_lv;
            Rng label_rng(7);
            for (int b = 0; b < 2; ++b) {
                LabelVolume lv;
                lv.extents = {4, 4, 2};
                lv.classes = cfg.classes;
                lv.ids.resize(static_cast<size_t>(lv.numel()));
                for (auto& id : lv.ids) id = static_cast<int32_t>(label_rng.below(cfg.classes));
                targets_lv.push_back(lv);
            }
            return supervised_loss(out, targets_lv, cfg.ds_weights);
        };
        targets.push_back(t);
    }
    return targets;
}

}  // namespace lcnet
