#include <doctest.h>

#include <cmath>

#include "lcnet/gradcheck.hpp"
#include "lcnet/modules.hpp"

using namespace lcnet;
using ad::Var;

namespace {

Var leaf_from(const Tensor& t, bool grad = true) { return Var::leaf(t, grad); }

Tensor ones_like(std::vector<int64_t> shape, std::string layout) {
    return Tensor::full(std::move(shape), 1.0, std::move(layout));
}

}  // namespace

TEST_CASE("pointwise conv with identity weights is the identity") {
    Rng rng(5);
    Tensor x = uniform_tensor({1, 3, 4, 4}, "BCHW", rng);
    ad::ConvSpec spec = pointwise_spec(2, 3, 3);
    Tensor w({3, 3, 1, 1});
    for (int64_t c = 0; c < 3; ++c) w[c * 3 + c] = 1.0;
    Tensor b = Tensor::zeros({3});
    Var y = ad::conv(leaf_from(x), leaf_from(w), leaf_from(b), spec);
    CHECK(y.value().bitwise_equal(x));
}

TEST_CASE("transposed conv geometry and zero propagation") {
    ad::ConvSpec spec;
    spec.kind = ad::ConvKind::Dense;
    spec.sdims = 3;
    spec.in_channels = 2;
    spec.out_channels = 2;
    spec.kernel = {2, 2, 2};
    spec.stride = {2, 2, 2};
    spec.pad = {0, 0, 0};
    spec.transposed = true;

    Rng rng(9);
    Tensor w = uniform_tensor(spec.weight_shape(), "", rng);
    Tensor zero = Tensor::zeros({1, 2, 4, 4, 4}, "BCDHW");
    Var y = ad::conv(leaf_from(zero), leaf_from(w), Var(), spec);
    CHECK(y.value().shape() == std::vector<int64_t>{1, 2, 8, 8, 8});
    for (int64_t i = 0; i < y.value().numel(); ++i) CHECK(y.value()[i] == 0.0);
}

TEST_CASE("global average pool") {
    Tensor c7 = Tensor::full({2, 3, 4, 4}, 7.0, "BCHW");
    Var y = ad::global_avg_pool(leaf_from(c7));
    CHECK(y.value().shape() == std::vector<int64_t>{2, 3, 1, 1});
    for (int64_t i = 0; i < y.value().numel(); ++i) CHECK(y.value()[i] == 7.0);

    Tensor q = Tensor::zeros({1, 1, 2, 2}, "BCHW");
    q[0] = 1.0;
    q[1] = 2.0;
    q[2] = 3.0;
    q[3] = 4.0;
    CHECK(ad::global_avg_pool(leaf_from(q)).value()[0] == 2.5);
}

TEST_CASE("channel stats pool") {
    // C=1: both output channels equal the input
    Rng rng(2);
    Tensor single = uniform_tensor({1, 1, 3, 3}, "BCHW", rng);
    Var s = ad::channel_stats(leaf_from(single));
    CHECK(s.value().shape() == std::vector<int64_t>{1, 2, 3, 3});
    for (int64_t i = 0; i < 9; ++i) {
        CHECK(s.value()[i] == single[i]);
        CHECK(s.value()[9 + i] == single[i]);
    }

    // channels (-1, 3) at one position -> (1, 3)
    Tensor two = Tensor::zeros({1, 2, 1, 1}, "BCHW");
    two[0] = -1.0;
    two[1] = 3.0;
    Var st = ad::channel_stats(leaf_from(two));
    CHECK(st.value()[0] == 1.0);
    CHECK(st.value()[1] == 3.0);

    // tied max routes the gradient to the lowest channel index
    Tensor tied = Tensor::full({1, 2, 1, 1}, 5.0, "BCHW");
    Var xin = leaf_from(tied);
    Var out = ad::channel_stats(xin);
    Tensor g = Tensor::zeros({1, 2, 1, 1}, "BCHW");
    g[1] = 1.0;  // only the max channel
    ad::backward(out, g);
    CHECK(xin.grad()[0] == 1.0);
    CHECK(xin.grad()[1] == 0.0);
}

TEST_CASE("batch norm identity and constant cases") {
    BatchNorm bn("bn", 3);
    bn.state().running_var.fill(1.0);  // eval identity: mean 0, var 1, gamma 1, beta 0
    bn.set_mode(ad::Mode::Eval);
    Rng rng(4);
    Tensor x = uniform_tensor({2, 3, 4, 4}, "BCHW", rng);
    Var y = bn.forward(leaf_from(x));
    for (int64_t i = 0; i < x.numel(); ++i)
        CHECK(y.value()[i] == doctest::Approx(x[i]).epsilon(1e-5));  // 1/sqrt(1+eps) scaling

    BatchNorm bn2("bn2", 2);
    bn2.beta().value()[0] = 0.25;
    bn2.beta().value()[1] = -0.5;
    bn2.set_mode(ad::Mode::Train);
    Tensor c = Tensor::full({1, 2, 3, 3}, 4.0, "BCHW");
    Var z = bn2.forward(leaf_from(c));
    for (int64_t i = 0; i < 9; ++i) {
        CHECK(z.value()[i] == 0.25);       // constant input: zero variance, output = beta
        CHECK(z.value()[9 + i] == -0.5);
    }

    BatchNorm bn3("bn3", 1);
    Tensor tiny = Tensor::zeros({1, 1, 1, 1}, "BCHW");
    bn3.set_mode(ad::Mode::Train);
    CHECK_THROWS_AS(bn3.forward(leaf_from(tiny)), ValueError);
}

TEST_CASE("activations") {
    Tensor x = Tensor::zeros({1, 1, 1, 3}, "BCHW");
    x[0] = 7.0;
    x[1] = -1.0;
    x[2] = 0.0;
    Var r6 = ad::relu6(leaf_from(x));
    CHECK(r6.value()[0] == 6.0);
    CHECK(r6.value()[1] == 0.0);
    CHECK(r6.value()[2] == 0.0);

    Tensor zero = Tensor::zeros({1, 1, 1, 1}, "BCHW");
    CHECK(ad::sigmoid(leaf_from(zero)).value()[0] == 0.5);

    // derivative exactly 0 at the relu kink
    Var xz = leaf_from(zero);
    Var yr = ad::relu(xz);
    Tensor g = Tensor::full({1, 1, 1, 1}, 1.0, "BCHW");
    ad::backward(yr, g);
    CHECK(xz.grad()[0] == 0.0);

    Rng rng(6);
    Tensor s = uniform_tensor({1, 2, 3, 3}, "BCHW", rng);
    Var sv = ad::sigmoid(leaf_from(s));
    for (int64_t i = 0; i < s.numel(); ++i) {
        CHECK(sv.value()[i] > 0.0);
        CHECK(sv.value()[i] < 1.0);
    }
}

TEST_CASE("channel shuffle permutation") {
    // brute-force oracle: write channel ids into a (groups, C/groups) matrix,
    // transpose, flatten
    auto oracle = [](int64_t C, int64_t groups) {
        std::vector<int64_t> perm;
        const int64_t rows = C / groups;
        for (int64_t j = 0; j < rows; ++j)
            for (int64_t i = 0; i < groups; ++i) perm.push_back(i * rows + j);
        return perm;
    };
    for (int64_t C : {4, 6, 8, 12})
        for (int64_t g : {1, 2, 4}) {
            if (C % g) continue;
            CHECK(ad::shuffle_permutation(C, g) == oracle(C, g));
        }
    CHECK(ad::shuffle_permutation(4, 2) == std::vector<int64_t>{0, 2, 1, 3});
    CHECK(ad::shuffle_permutation(4, 1) == std::vector<int64_t>{0, 1, 2, 3});
    CHECK_THROWS_AS(ad::shuffle_permutation(5, 2), ShapeError);

    Rng rng(8);
    Tensor x = uniform_tensor({2, 6, 3, 3}, "BCHW", rng);
    Var shuffled = ad::channel_shuffle(leaf_from(x), 3);
    Var back = ad::channel_shuffle(shuffled, 2);  // inverse: groups -> C/groups
    CHECK(back.value().bitwise_equal(x));

    Var idp = ad::channel_shuffle(leaf_from(x), 1);
    CHECK(idp.value().bitwise_equal(x));
}

TEST_CASE("elementwise identities") {
    Rng rng(10);
    Tensor x = uniform_tensor({2, 3, 4, 4}, "BCHW", rng);
    Var xs = leaf_from(x);
    CHECK(ad::add(xs, leaf_from(Tensor::zeros({2, 3, 4, 4}, "BCHW"))).value().bitwise_equal(x));
    CHECK(ad::mul_broadcast(xs, leaf_from(ones_like({2, 3, 1, 1}, "BCHW"))).value().bitwise_equal(x));
    CHECK(ad::mul_broadcast(xs, leaf_from(ones_like({2, 1, 4, 4}, "BCHW"))).value().bitwise_equal(x));
    CHECK_THROWS_AS(ad::add(xs, leaf_from(Tensor::zeros({2, 3, 4, 5}, "BCHW"))), ShapeError);
    CHECK_THROWS_AS(ad::mul_broadcast(xs, leaf_from(Tensor::zeros({2, 2, 1, 1}, "BCHW"))), ShapeError);
}

TEST_CASE("gradient accumulates through shared nodes") {
    Tensor x = Tensor::full({1, 1, 1, 1}, 3.0, "BCHW");
    Var xv = leaf_from(x);
    Var y = ad::add(xv, xv);
    Tensor g = Tensor::full({1, 1, 1, 1}, 1.0, "BCHW");
    ad::backward(y, g);
    CHECK(xv.grad()[0] == 2.0);
}

TEST_CASE("conv linearity") {
    Rng rng(12);
    ad::ConvSpec spec = dense_same_spec(2, 3, 2, 3);
    Conv conv("c", spec, /*bias=*/false, rng);
    Tensor x = uniform_tensor({1, 3, 5, 5}, "BCHW", rng);
    Tensor y = uniform_tensor({1, 3, 5, 5}, "BCHW", rng);
    const double a = 1.7, b = -0.4;

    Tensor mix(x.shape(), x.layout());
    for (int64_t i = 0; i < mix.numel(); ++i) mix[i] = a * x[i] + b * y[i];
    const Tensor lhs = conv.forward(leaf_from(mix)).value();
    const Tensor fx = conv.forward(leaf_from(x)).value();
    const Tensor fy = conv.forward(leaf_from(y)).value();
    for (int64_t i = 0; i < lhs.numel(); ++i)
        CHECK(std::abs(lhs[i] - (a * fx[i] + b * fy[i])) < 1e-10);
}

TEST_CASE("parameter counts match the closed forms") {
    Rng rng(14);
    for (int64_t C : {4, 8, 16, 64})
        for (int64_t k : {1, 3, 5, 7}) {
            Conv dense("d", dense_same_spec(2, C, C, k), true, rng);
            CHECK(dense.weight().count() == k * k * C * C);
            CHECK(dense.bias()->count() == C);

            Conv dw("dw", depthwise_spec(2, C, k), true, rng);
            CHECK(dw.weight().count() == k * k * C);

            Conv pw("pw", pointwise_spec(2, C, C / 2), true, rng);
            CHECK(pw.weight().count() == C * (C / 2));
        }
}

TEST_CASE("conv spec validation") {
    ad::ConvSpec pw = pointwise_spec(2, 4, 4);
    pw.kernel = {3, 3};
    CHECK_THROWS_AS(pw.validate(), ShapeError);

    CHECK_THROWS_AS(ad::same_padding({4}), ValueError);  // even kernel

    ad::ConvSpec dwbad = depthwise_spec(2, 4, 3);
    dwbad.out_channels = 8;
    CHECK_THROWS_AS(dwbad.validate(), ShapeError);
}

TEST_CASE("grad check: pointwise conv passes, corrupted vjp fails") {
    GradCheckTarget target;
    for (const GradCheckTarget& t : standard_targets())
        if (t.name == "conv_pointwise") target = t;
    REQUIRE(target.name == "conv_pointwise");

    GradCheckReport ok = run_grad_check(target, 42);
    CHECK(ok.pass);
    for (const auto& c : ok.cases) CHECK(c.rel_err <= 1e-6);

    GradCheckReport corrupted = run_grad_check(target, 42, /*inject_fault=*/true);
    CHECK_FALSE(corrupted.pass);

    GradCheckTarget bad_h = target;
    bad_h.h = 1e-2;
    CHECK_THROWS_AS(run_grad_check(bad_h, 1), ValueError);
}
