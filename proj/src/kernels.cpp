#include "lcnet/kernels.hpp"

#include <atomic>

namespace lcnet::kern {

int64_t conv_out_extent(int64_t in, int64_t k, int64_t stride, int64_t pad) {
    int64_t padded = in + 2 * pad;
    if (k > padded) throw ShapeError("kernel " + std::to_string(k) + " larger than padded input " +
                                     std::to_string(padded));
    return (padded - k) / stride + 1;
}

int64_t tconv_out_extent(int64_t in, int64_t k, int64_t stride, int64_t pad) {
    int64_t out = (in - 1) * stride + k - 2 * pad;
    if (out < 1) throw ShapeError("transposed conv geometry yields empty output");
    return out;
}

static std::atomic<Backend> g_backend{Backend::Parallel};

Backend backend() { return g_backend.load(std::memory_order_relaxed); }
void set_backend(Backend b) { g_backend.store(b, std::memory_order_relaxed); }

#define LCNET_DISPATCH(fn, ...)                    \
    if (backend() == Backend::Parallel)            \
        par::fn(__VA_ARGS__);                      \
    else                                           \
        serial::fn(__VA_ARGS__)

void conv_forward(const ConvGeom& g, const double* x, const double* w, const double* bias, double* y) {
    LCNET_DISPATCH(conv_forward, g, x, w, bias, y);
}
void conv_grad_input(const ConvGeom& g, const double* gy, const double* w, double* gx) {
    LCNET_DISPATCH(conv_grad_input, g, gy, w, gx);
}
void conv_grad_weight(const ConvGeom& g, const double* gy, const double* x, double* gw) {
    LCNET_DISPATCH(conv_grad_weight, g, gy, x, gw);
}
void conv_grad_bias(const ConvGeom& g, const double* gy, double* gb) {
    LCNET_DISPATCH(conv_grad_bias, g, gy, gb);
}
void tconv_forward(const ConvGeom& g, const double* x, const double* w, const double* bias, double* y) {
    LCNET_DISPATCH(tconv_forward, g, x, w, bias, y);
}
void tconv_grad_input(const ConvGeom& g, const double* gy, const double* w, double* gx) {
    LCNET_DISPATCH(tconv_grad_input, g, gy, w, gx);
}
void tconv_grad_weight(const ConvGeom& g, const double* gy, const double* x, double* gw) {
    LCNET_DISPATCH(tconv_grad_weight, g, gy, x, gw);
}

#undef LCNET_DISPATCH

uint64_t count_conv_macs(const ConvGeom& g) {
    uint64_t n = 0;
    if (!g.transposed) {
        for (int64_t b = 0; b < g.batch; ++b)
            for (int64_t co = 0; co < g.cout; ++co)
                for (int64_t p0 = 0; p0 < g.out[0]; ++p0)
                    for (int64_t p1 = 0; p1 < g.out[1]; ++p1)
                        for (int64_t p2 = 0; p2 < g.out[2]; ++p2)
                            for (int64_t ci = 0; ci < g.cin_per_group(); ++ci)
                                for (int64_t t = 0; t < g.kernel_numel(); ++t) ++n;
    } else {
        for (int64_t b = 0; b < g.batch; ++b)
            for (int64_t ci = 0; ci < g.cin; ++ci)
                for (int64_t p0 = 0; p0 < g.in[0]; ++p0)
                    for (int64_t p1 = 0; p1 < g.in[1]; ++p1)
                        for (int64_t p2 = 0; p2 < g.in[2]; ++p2)
                            for (int64_t co = 0; co < g.cout_per_group(); ++co)
                                for (int64_t t = 0; t < g.kernel_numel(); ++t) ++n;
    }
    return n;
}

static thread_local uint64_t* g_mac_counter = nullptr;

void set_mac_counter(uint64_t* counter) { g_mac_counter = counter; }
uint64_t* mac_counter() { return g_mac_counter; }

}  // namespace lcnet::kern
