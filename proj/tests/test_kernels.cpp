#include <doctest.h>

#include "lcnet/kernels.hpp"
#include "lcnet/rng.hpp"

using namespace lcnet;
using kern::ConvGeom;

namespace {

// random but valid geometry; exercises 1-3 spatial dims, strides, padding,
// and grouping (dense / depthwise)
ConvGeom random_geom(Rng& rng, bool transposed) {
    ConvGeom g;
    g.sdims = 1 + static_cast<int>(rng.below(3));
    g.batch = 1 + rng.below(2);
    g.transposed = transposed;
    const int off = 3 - g.sdims;
    for (int d = 0; d < g.sdims; ++d) {
        g.k[off + d] = 1 + rng.below(3);
        g.stride[off + d] = 1 + rng.below(2);
        g.pad[off + d] = transposed ? 0 : rng.below(2);
        g.in[off + d] = g.k[off + d] + rng.below(5);
    }
    if (!transposed && rng.below(2) == 0) {
        g.cin = g.cout = g.groups = 1 + rng.below(4);  // depthwise
    } else {
        g.cin = 1 + rng.below(4);
        g.cout = 1 + rng.below(4);
        g.groups = 1;
    }
    for (int d = 0; d < 3; ++d)
        g.out[d] = transposed ? kern::tconv_out_extent(g.in[d], g.k[d], g.stride[d], g.pad[d])
                              : kern::conv_out_extent(g.in[d], g.k[d], g.stride[d], g.pad[d]);
    return g;
}

std::vector<double> random_buf(Rng& rng, int64_t n) {
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

}  // namespace

TEST_CASE("output extent arithmetic") {
    CHECK(kern::conv_out_extent(8, 3, 1, 1) == 8);   // same padding
    CHECK(kern::conv_out_extent(8, 2, 2, 0) == 4);   // halving
    CHECK(kern::tconv_out_extent(4, 2, 2, 0) == 8);  // exact doubling
    CHECK_THROWS_AS(kern::conv_out_extent(2, 5, 1, 0), ShapeError);
}

TEST_CASE("serial and parallel kernels agree bitwise") {
    Rng rng(1234);
    for (int round = 0; round < 60; ++round) {
        const bool transposed = round % 3 == 2;
        ConvGeom g = random_geom(rng, transposed);
        const auto x = random_buf(rng, g.in_numel());
        const auto w = random_buf(rng, g.weight_numel());
        const auto b = random_buf(rng, g.cout);
        const auto gy = random_buf(rng, g.out_numel());

        std::vector<double> ys(static_cast<size_t>(g.out_numel()));
        std::vector<double> yp(ys);
        std::vector<double> gxs(static_cast<size_t>(g.in_numel())), gxp(gxs);
        std::vector<double> gws(static_cast<size_t>(g.weight_numel())), gwp(gws);
        std::vector<double> gbs(static_cast<size_t>(g.cout)), gbp(gbs);

        if (!transposed) {
            kern::serial::conv_forward(g, x.data(), w.data(), b.data(), ys.data());
            kern::par::conv_forward(g, x.data(), w.data(), b.data(), yp.data());
            kern::serial::conv_grad_input(g, gy.data(), w.data(), gxs.data());
            kern::par::conv_grad_input(g, gy.data(), w.data(), gxp.data());
            kern::serial::conv_grad_weight(g, gy.data(), x.data(), gws.data());
            kern::par::conv_grad_weight(g, gy.data(), x.data(), gwp.data());
            kern::serial::conv_grad_bias(g, gy.data(), gbs.data());
            kern::par::conv_grad_bias(g, gy.data(), gbp.data());
        } else {
            kern::serial::tconv_forward(g, x.data(), w.data(), b.data(), ys.data());
            kern::par::tconv_forward(g, x.data(), w.data(), b.data(), yp.data());
            kern::serial::tconv_grad_input(g, gy.data(), w.data(), gxs.data());
            kern::par::tconv_grad_input(g, gy.data(), w.data(), gxp.data());
            kern::serial::tconv_grad_weight(g, gy.data(), x.data(), gws.data());
            kern::par::tconv_grad_weight(g, gy.data(), x.data(), gwp.data());
        }
        CHECK(ys == yp);
        CHECK(gxs == gxp);
        CHECK(gws == gwp);
        CHECK(gbs == gbp);
    }
}

TEST_CASE("mac enumeration equals the closed form") {
    Rng rng(77);
    for (int round = 0; round < 30; ++round) {
        const bool transposed = round % 4 == 3;
        ConvGeom g = random_geom(rng, transposed);
        const uint64_t counted = kern::count_conv_macs(g);
        uint64_t closed;
        if (!transposed)
            closed = static_cast<uint64_t>(g.batch * g.cout * g.out[0] * g.out[1] * g.out[2] *
                                           g.cin_per_group() * g.kernel_numel());
        else
            closed = static_cast<uint64_t>(g.batch * g.cin * g.in[0] * g.in[1] * g.in[2] *
                                           g.cout_per_group() * g.kernel_numel());
        CHECK(counted == closed);
    }
}
