// serial reference vs OpenMP kernels on medium conv shapes
// run: ./bench_kernels [--benchmark_filter=...]

#include <benchmark/benchmark.h>

#include "lcnet/kernels.hpp"
#include "lcnet/rng.hpp"

using namespace lcnet;
using kern::ConvGeom;

namespace {

ConvGeom conv2d_geom(int64_t C, int64_t hw, int64_t k) {
    ConvGeom g;
    g.sdims = 2;
    g.batch = 1;
    g.cin = g.cout = C;
    g.groups = 1;
    g.in[1] = g.in[2] = hw;
    g.k[1] = g.k[2] = k;
    g.pad[1] = g.pad[2] = (k - 1) / 2;
    for (int d = 0; d < 3; ++d) g.out[d] = kern::conv_out_extent(g.in[d], g.k[d], g.stride[d], g.pad[d]);
    return g;
}

ConvGeom conv3d_geom(int64_t C, int64_t ext, int64_t k) {
    ConvGeom g;
    g.sdims = 3;
    g.batch = 1;
    g.cin = g.cout = C;
    g.groups = 1;
    for (int d = 0; d < 3; ++d) {
        g.in[d] = ext;
        g.k[d] = k;
        g.pad[d] = (k - 1) / 2;
        g.out[d] = kern::conv_out_extent(g.in[d], g.k[d], g.stride[d], g.pad[d]);
    }
    return g;
}

struct Buffers {
    std::vector<double> x, w, b, y, gy, gx, gw;
    explicit Buffers(const ConvGeom& g) {
        Rng rng(1);
        auto fill = [&](std::vector<double>& v, int64_t n) {
            v.resize(static_cast<size_t>(n));
            for (auto& e : v) e = rng.uniform(-1.0, 1.0);
        };
        fill(x, g.in_numel());
        fill(w, g.weight_numel());
        fill(b, g.cout);
        fill(gy, g.out_numel());
        y.resize(static_cast<size_t>(g.out_numel()));
        gx.resize(static_cast<size_t>(g.in_numel()));
        gw.resize(static_cast<size_t>(g.weight_numel()));
    }
};

void bm_conv2d_forward(benchmark::State& state) {
    const ConvGeom g = conv2d_geom(32, 64, 3);
    Buffers buf(g);
    const bool parallel = state.range(0) != 0;
    for (auto _ : state) {
        if (parallel)
            kern::par::conv_forward(g, buf.x.data(), buf.w.data(), buf.b.data(), buf.y.data());
        else
            kern::serial::conv_forward(g, buf.x.data(), buf.w.data(), buf.b.data(), buf.y.data());
        benchmark::ClobberMemory();
    }
    state.SetLabel(parallel ? "openmp" : "serial");
}

void bm_conv3d_forward(benchmark::State& state) {
    const ConvGeom g = conv3d_geom(16, 24, 3);
    Buffers buf(g);
    const bool parallel = state.range(0) != 0;
    for (auto _ : state) {
        if (parallel)
            kern::par::conv_forward(g, buf.x.data(), buf.w.data(), buf.b.data(), buf.y.data());
        else
            kern::serial::conv_forward(g, buf.x.data(), buf.w.data(), buf.b.data(), buf.y.data());
        benchmark::ClobberMemory();
    }
    state.SetLabel(parallel ? "openmp" : "serial");
}

void bm_conv2d_grad_weight(benchmark::State& state) {
    const ConvGeom g = conv2d_geom(32, 64, 3);
    Buffers buf(g);
    const bool parallel = state.range(0) != 0;
    for (auto _ : state) {
        if (parallel)
            kern::par::conv_grad_weight(g, buf.gy.data(), buf.x.data(), buf.gw.data());
        else
            kern::serial::conv_grad_weight(g, buf.gy.data(), buf.x.data(), buf.gw.data());
        benchmark::ClobberMemory();
    }
    state.SetLabel(parallel ? "openmp" : "serial");
}

void bm_tconv3d_forward(benchmark::State& state) {
    ConvGeom g;
    g.sdims = 3;
    g.batch = 1;
    g.cin = 32;
    g.cout = 16;
    g.groups = 1;
    g.transposed = true;
    for (int d = 0; d < 3; ++d) {
        g.in[d] = 12;
        g.k[d] = 2;
        g.stride[d] = 2;
        g.out[d] = kern::tconv_out_extent(g.in[d], g.k[d], g.stride[d], g.pad[d]);
    }
    Buffers buf(g);
    const bool parallel = state.range(0) != 0;
    for (auto _ : state) {
        if (parallel)
            kern::par::tconv_forward(g, buf.x.data(), buf.w.data(), buf.b.data(), buf.y.data());
        else
            kern::serial::tconv_forward(g, buf.x.data(), buf.w.data(), buf.b.data(), buf.y.data());
        benchmark::ClobberMemory();
    }
    state.SetLabel(parallel ? "openmp" : "serial");
}

}  // namespace

BENCHMARK(bm_conv2d_forward)->Arg(0)->Arg(1);
BENCHMARK(bm_conv3d_forward)->Arg(0)->Arg(1);
BENCHMARK(bm_conv2d_grad_weight)->Arg(0)->Arg(1);
BENCHMARK(bm_tconv3d_forward)->Arg(0)->Arg(1);

BENCHMARK_MAIN();
