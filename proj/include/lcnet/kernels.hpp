#pragma once

#include <cstdint>

#include "lcnet/tensor.hpp"

namespace lcnet::kern {

// Resolved convolution geometry. Spatial axes are padded to 3 entries;
// unused leading axes get extent 1, kernel 1, stride 1, pad 0, so every
// kernel can loop over exactly three spatial levels.
struct ConvGeom {
    int sdims = 2;
    int64_t batch = 1;
    int64_t cin = 1;
    int64_t cout = 1;
    int64_t groups = 1;
    int64_t in[3] = {1, 1, 1};
    int64_t out[3] = {1, 1, 1};
    int64_t k[3] = {1, 1, 1};
    int64_t stride[3] = {1, 1, 1};
    int64_t pad[3] = {0, 0, 0};
    bool transposed = false;

    int64_t cin_per_group() const { return cin / groups; }
    int64_t cout_per_group() const { return cout / groups; }
    int64_t in_numel() const { return batch * cin * in[0] * in[1] * in[2]; }
    int64_t out_numel() const { return batch * cout * out[0] * out[1] * out[2]; }
    int64_t kernel_numel() const { return k[0] * k[1] * k[2]; }
    int64_t weight_numel() const {
        return transposed ? cin * cout_per_group() * kernel_numel()
                          : cout * cin_per_group() * kernel_numel();
    }
};

int64_t conv_out_extent(int64_t in, int64_t k, int64_t stride, int64_t pad);
int64_t tconv_out_extent(int64_t in, int64_t k, int64_t stride, int64_t pad);

enum class Backend { Serial, Parallel };
Backend backend();
void set_backend(Backend b);

// Dispatching entry points. Both backends accumulate every output element in
// the same order, so results are bitwise identical.
// conv weight layout: [cout][cin/groups][k...]; tconv: [cin][cout/groups][k...]
void conv_forward(const ConvGeom& g, const double* x, const double* w, const double* bias, double* y);
void conv_grad_input(const ConvGeom& g, const double* gy, const double* w, double* gx);
void conv_grad_weight(const ConvGeom& g, const double* gy, const double* x, double* gw);
void conv_grad_bias(const ConvGeom& g, const double* gy, double* gb);

void tconv_forward(const ConvGeom& g, const double* x, const double* w, const double* bias, double* y);
void tconv_grad_input(const ConvGeom& g, const double* gy, const double* w, double* gx);
void tconv_grad_weight(const ConvGeom& g, const double* gy, const double* x, double* gw);

namespace serial {
void conv_forward(const ConvGeom& g, const double* x, const double* w, const double* bias, double* y);
void conv_grad_input(const ConvGeom& g, const double* gy, const double* w, double* gx);
void conv_grad_weight(const ConvGeom& g, const double* gy, const double* x, double* gw);
void conv_grad_bias(const ConvGeom& g, const double* gy, double* gb);
void tconv_forward(const ConvGeom& g, const double* x, const double* w, const double* bias, double* y);
void tconv_grad_input(const ConvGeom& g, const double* gy, const double* w, double* gx);
void tconv_grad_weight(const ConvGeom& g, const double* gy, const double* x, double* gw);
}  // namespace serial

namespace par {
void conv_forward(const ConvGeom& g, const double* x, const double* w, const double* bias, double* y);
void conv_grad_input(const ConvGeom& g, const double* gy, const double* w, double* gx);
void conv_grad_weight(const ConvGeom& g, const double* gy, const double* x, double* gw);
void conv_grad_bias(const ConvGeom& g, const double* gy, double* gb);
void tconv_forward(const ConvGeom& g, const double* x, const double* w, const double* bias, double* y);
void tconv_grad_input(const ConvGeom& g, const double* gy, const double* w, double* gx);
void tconv_grad_weight(const ConvGeom& g, const double* gy, const double* x, double* gw);
}  // namespace par

// MAC instrumentation: one unit per multiply-accumulate, counted by walking
// the loop structure (padding taps included, bias adds excluded). Convention:
// a conv charges its output elements, a transposed conv its input elements.
uint64_t count_conv_macs(const ConvGeom& g);

// thread-local accumulator installed by cost-model measurement runs
void set_mac_counter(uint64_t* counter);
uint64_t* mac_counter();

}  // namespace lcnet::kern
