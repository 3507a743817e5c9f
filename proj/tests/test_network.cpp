#include <doctest.h>

#include <cmath>

#include "lcnet/costmodel.hpp"
#include "lcnet/gradcheck.hpp"
#include "lcnet/network.hpp"

using namespace lcnet;
using ad::Var;

namespace {

NetCfg tiny_cfg() {
    NetCfg cfg;
    cfg.input = {8, 8, 8};
    cfg.patch = {2, 2, 2};
    cfg.channels = {2, 4, 4, 4};
    cfg.blocks_per_stage = 1;
    cfg.classes = 2;
    cfg.reduction = 2;
    cfg.spatial_kernel = 3;
    cfg.msdc_kernels = {3};
    return cfg;
}

void identity_bn_stats(Module& m) {
    m.visit([](Module& mod) {
        if (auto* bn = dynamic_cast<BatchNorm*>(&mod)) bn->state().running_var.fill(1.0);
    });
}

}  // namespace

TEST_CASE("patch count formula over five configurations") {
    struct Case {
        std::vector<int64_t> input, patch;
        int64_t expected;
    };
    const std::vector<Case> cases = {
        {{64, 64, 64}, {16, 16, 16}, 64},
        {{32, 32, 16}, {4, 4, 4}, 256},
        {{16, 16, 8}, {1, 1, 1}, 2048},
        {{8, 8, 8}, {2, 2, 2}, 64},
        {{16, 8, 4}, {2, 2, 1}, 128},
    };
    for (const Case& c : cases) {
        NetCfg cfg = tiny_cfg();
        cfg.input = c.input;
        cfg.patch = c.patch;
        StagePlan plan = plan_stages(cfg);
        const int64_t n = plan.embed_extents[0] * plan.embed_extents[1] * plan.embed_extents[2];
        CHECK(n == c.expected);
        CHECK(n == (c.input[0] / c.patch[0]) * (c.input[1] / c.patch[1]) * (c.input[2] / c.patch[2]));
    }

    NetCfg bad = tiny_cfg();
    bad.input = {10, 8, 8};
    bad.patch = {4, 4, 4};
    CHECK_THROWS_AS(plan_stages(bad), ShapeError);  // divisibility violated

    NetCfg odd = tiny_cfg();
    odd.input = {6, 8, 8};
    odd.patch = {1, 1, 1};
    CHECK_THROWS_AS(plan_stages(odd), ShapeError);  // 3 cannot be halved
}

TEST_CASE("forward geometry matches the frozen chain") {
    NetCfg cfg;
    cfg.input = {32, 32, 16};
    cfg.patch = {4, 4, 4};
    cfg.channels = {4, 8, 16, 32};
    cfg.blocks_per_stage = 1;
    cfg.classes = 3;
    cfg.reduction = 4;
    cfg.spatial_kernel = 3;
    cfg.msdc_kernels = {3};

    SegNetwork net(cfg, 1);
    net.set_mode(ad::Mode::Eval);
    identity_bn_stats(net);

    Rng rng(2);
    Tensor x = uniform_tensor({1, 1, 32, 32, 16}, "BCDHW", rng);
    NetOutput out = net.forward(Var::constant(x));
    CHECK(out.logits.value().shape() == std::vector<int64_t>{1, 3, 8, 8, 4});
    REQUIRE(out.aux.size() == 3);
    CHECK(out.aux[0].value().shape() == std::vector<int64_t>{1, 3, 2, 2, 1});
    CHECK(out.aux[1].value().shape() == std::vector<int64_t>{1, 3, 4, 4, 2});
    CHECK(out.aux[2].value().shape() == std::vector<int64_t>{1, 3, 8, 8, 4});

    // analytic chain agrees with the frozen geometry
    const auto chain = net.shape_chain(1);
    auto find = [&](const std::string& label) {
        for (const auto& [l, s] : chain)
            if (l == label) return s;
        FAIL("missing chain entry ", label);
        return std::vector<int64_t>{};
    };
    CHECK(find("patch_embed") == std::vector<int64_t>{1, 4, 8, 8, 4});
    CHECK(find("enc2") == std::vector<int64_t>{1, 8, 4, 4, 2});
    CHECK(find("enc3") == std::vector<int64_t>{1, 16, 2, 2, 1});
    CHECK(find("enc4") == std::vector<int64_t>{1, 32, 1, 1, 1});
    CHECK(find("logits") == std::vector<int64_t>{1, 3, 8, 8, 4});

    // decoder returns to the embedding resolution
    CHECK(find("dec3") == std::vector<int64_t>{1, 4, 8, 8, 4});
}

TEST_CASE("final stage variant: attention + multiscale pair preserves geometry") {
    NetCfg cfg = tiny_cfg();
    cfg.final_stage_attention = true;
    SegNetwork net(cfg, 21);
    net.set_mode(ad::Mode::Eval);
    identity_bn_stats(net);
    Rng rng(22);
    Tensor x = uniform_tensor({1, 1, 8, 8, 8}, "BCDHW", rng);
    NetOutput out = net.forward(ad::Var::constant(x));
    CHECK(out.logits.value().shape() == std::vector<int64_t>{1, 2, 4, 4, 4});

    bool has_refine_attn = false;
    for (const NamedParam& np : net.named_params())
        has_refine_attn = has_refine_attn || np.name.rfind("refine_attn.", 0) == 0;
    CHECK(has_refine_attn);

    // round-trips through the JSON config
    NetCfg parsed = parse_net_cfg(net_cfg_json(cfg));
    CHECK(parsed.final_stage_attention);
}

TEST_CASE("identical batch entries produce identical logits") {
    NetCfg cfg = tiny_cfg();
    SegNetwork net(cfg, 7);
    Rng rng(8);
    Tensor single = uniform_tensor({1, 1, 8, 8, 8}, "BCDHW", rng);
    Tensor dup({2, 1, 8, 8, 8}, "BCDHW");
    for (int64_t i = 0; i < single.numel(); ++i) {
        dup[i] = single[i];
        dup[single.numel() + i] = single[i];
    }
    NetOutput out = net.forward(Var::constant(dup));
    const Tensor& logits = out.logits.value();
    const int64_t half = logits.numel() / 2;
    for (int64_t i = 0; i < half; ++i) CHECK(logits[i] == logits[half + i]);
}

TEST_CASE("residual attention block: zero logits gate the conv branch by 0.25") {
    Rng rng(9);
    ConvBlock cb("cb", 2, 4, 4, 3, rng);
    Lcbam attn("attn", 2, ChannelAttentionCfg{4, 2, true}, SpatialAttentionCfg{3}, rng);
    attn.visit([](Module& m) {
        if (auto* conv = dynamic_cast<Conv*>(&m)) conv->zero_init();
    });
    cb.set_mode(ad::Mode::Eval);
    attn.set_mode(ad::Mode::Eval);
    identity_bn_stats(cb);

    Rng rng2(10);
    Tensor x = uniform_tensor({1, 4, 6, 6}, "BCHW", rng2);
    Var xv = Var::constant(x);
    Tensor conv_out = cb.forward(xv).value();
    Tensor y = ad::add(xv, attn.forward(cb.forward(xv))).value();
    for (int64_t i = 0; i < x.numel(); ++i)
        CHECK(y[i] == doctest::Approx(x[i] + 0.25 * conv_out[i]).epsilon(1e-12));
}

TEST_CASE("stage parameter totals increase with depth") {
    NetCfg cfg;
    cfg.input = {16, 16, 16};
    cfg.patch = {2, 2, 2};
    cfg.channels = {4, 8, 16, 32};
    cfg.blocks_per_stage = 1;
    cfg.classes = 2;
    cfg.reduction = 4;
    cfg.spatial_kernel = 3;
    cfg.msdc_kernels = {3};
    SegNetwork net(cfg, 3);

    auto stage_total = [&](const std::string& prefix) {
        int64_t sum = 0;
        for (const NamedParam& np : net.named_params())
            if (np.name.rfind(prefix, 0) == 0) sum += np.rec->count();
        return sum;
    };
    const int64_t e1 = stage_total("enc1.");
    const int64_t e2 = stage_total("enc2.");
    const int64_t e3 = stage_total("enc3.");
    const int64_t e4 = stage_total("enc4.");
    CHECK(e1 < e2);
    CHECK(e2 < e3);
    CHECK(e3 < e4);
}

TEST_CASE("decoder stage: zero weights and zero skip give zero output") {
    NetCfg cfg = tiny_cfg();
    Rng rng(11);
    DecoderStage dec("dec", cfg, 4, 2, {2, 2, 2}, rng);
    dec.visit([](Module& m) {
        if (auto* conv = dynamic_cast<Conv*>(&m)) conv->zero_init();
    });
    dec.set_mode(ad::Mode::Eval);

    Rng rng2(12);
    Tensor x = uniform_tensor({1, 4, 2, 2, 2}, "BCDHW", rng2);
    Tensor skip = Tensor::zeros({1, 2, 4, 4, 4}, "BCDHW");
    Tensor y = dec.forward(Var::constant(x), Var::constant(skip)).value();
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] == 0.0);

    // mismatched skip resolution is rejected
    Tensor bad_skip = Tensor::zeros({1, 2, 8, 8, 8}, "BCDHW");
    CHECK_THROWS_AS(dec.forward(Var::constant(x), Var::constant(bad_skip)), ShapeError);
}

TEST_CASE("deep supervision composes the loss exactly") {
    NetCfg cfg = tiny_cfg();
    SegNetwork net(cfg, 13);
    Rng rng(14);
    Tensor x = uniform_tensor({2, 1, 8, 8, 8}, "BCDHW", rng);
    NetOutput out = net.forward(Var::constant(x));

    std::vector<LabelVolume> targets;
    Rng lrng(15);
    for (int b = 0; b < 2; ++b) {
        LabelVolume lv;
        lv.extents = {4, 4, 4};
        lv.classes = cfg.classes;
        lv.ids.resize(static_cast<size_t>(lv.numel()));
        for (auto& id : lv.ids) id = static_cast<int32_t>(lrng.below(cfg.classes));
        targets.push_back(lv);
    }

    const double main_only = seg_loss(out.logits, one_hot(targets)).value()[0];
    const double zero_w = supervised_loss(out, targets, {0.0, 0.0, 0.0}).value()[0];
    CHECK(zero_w == main_only);

    std::vector<double> w{0.57, 0.29, 0.14};
    double assembled = main_only;
    for (size_t i = 0; i < 3; ++i) {
        const Tensor& av = out.aux[i].value();
        std::array<int64_t, 3> factors{4 / av.spatial(0), 4 / av.spatial(1), 4 / av.spatial(2)};
        std::vector<LabelVolume> ds;
        for (const auto& t : targets) ds.push_back(downsample_nearest(t, factors));
        assembled += w[i] * seg_loss(out.aux[i], one_hot(ds)).value()[0];
    }
    const double total = supervised_loss(out, targets, w).value()[0];
    CHECK(total == doctest::Approx(assembled).epsilon(1e-15));
}

TEST_CASE("sgd update arithmetic") {
    // fixed point: zero gradient, zero weight decay
    {
        Rng rng(16);
        Conv conv("c", pointwise_spec(2, 2, 2), true, rng);
        Tensor before = conv.weight().value();
        Sgd opt({0.1, 0.9, 0.0, true});
        conv.zero_grad();
        std::vector<ParamRecord*> params{&conv.weight(), conv.bias()};
        opt.step(params);
        CHECK(conv.weight().value().bitwise_equal(before));
    }

    // vanilla step: w=1, g=1, lr=0.1 -> 0.9
    {
        ParamRecord rec;
        rec.name = "w";
        rec.var = Var::leaf(Tensor::full({1}, 1.0), true);
        rec.grad()[0] = 1.0;
        Sgd opt({0.1, 0.0, 0.0, false});
        std::vector<ParamRecord*> params{&rec};
        opt.step(params);
        CHECK(rec.value()[0] == doctest::Approx(0.9).epsilon(1e-15));
    }

    // quadratic bowl with the published hyperparameters: oscillation decays
    {
        ParamRecord rec;
        rec.name = "w";
        rec.var = Var::leaf(Tensor::full({1}, 1.0), true);
        Sgd opt({0.01, 0.99, 3e-5, true});
        std::vector<ParamRecord*> params{&rec};
        double first_window_peak = 0.0, second_window_peak = 0.0;
        for (int step = 0; step < 50; ++step) {
            rec.grad().fill(0.0);
            rec.grad()[0] = 2.0 * rec.value()[0];  // d/dw w^2
            opt.step(params);
            const double mag = std::abs(rec.value()[0]);
            (step < 25 ? first_window_peak : second_window_peak) =
                std::max(step < 25 ? first_window_peak : second_window_peak, mag);
        }
        CHECK(second_window_peak < first_window_peak);  // momentum envelope decays
        CHECK(std::abs(rec.value()[0]) < 1.0);
    }
}

TEST_CASE("training is bitwise deterministic for a fixed seed") {
    TrainCfg tc;
    tc.net = tiny_cfg();
    tc.steps = 3;
    tc.batch = 2;
    tc.seed = 42;

    SegNetwork a(tc.net, tc.seed), b(tc.net, tc.seed);
    TrainResult ra = train_on_blobs(a, tc);
    TrainResult rb = train_on_blobs(b, tc);
    REQUIRE(ra.trace.size() == rb.trace.size());
    for (size_t i = 0; i < ra.trace.size(); ++i) {
        CHECK(ra.trace[i].loss == rb.trace[i].loss);
        CHECK(ra.trace[i].dice == rb.trace[i].dice);
    }
    auto pa = a.named_params();
    auto pb = b.named_params();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].rec->value().bitwise_equal(pb[i].rec->value()));
}

TEST_CASE("checkpoint round trip restores every parameter") {
    NetCfg cfg = tiny_cfg();
    SegNetwork net(cfg, 99);
    const std::string dir = "/tmp/lcnet_test_checkpoint";
    save_checkpoint(net, dir);

    SegNetwork other(cfg, 100);  // different init
    load_checkpoint(other, dir);
    auto pa = net.named_params();
    auto pb = other.named_params();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].rec->value().bitwise_equal(pb[i].rec->value()));
}

TEST_CASE("network-level gradient checks") {
    for (const GradCheckTarget& t : standard_targets())
        if (t.name == "patch_embed" || t.name == "encoder_stage" || t.name == "decoder_stage") {
            GradCheckReport report = run_grad_check(t, 1618);
            INFO(t.name);
            CHECK(report.pass);
        }
}
