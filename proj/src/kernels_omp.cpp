// OpenMP kernels. Work is split so each flattened output element is produced
// by exactly one thread with the same inner accumulation order as the serial
// reference, keeping results bitwise identical for any thread count.

#include "lcnet/kernels.hpp"

namespace lcnet::kern::par {

namespace {

constexpr int64_t kMinParallelWork = 1 << 10;

inline int64_t idx5(int64_t a, int64_t b, int64_t c, int64_t d, int64_t e,
                    int64_t nb, int64_t nc, int64_t nd, int64_t ne) {
    return (((a * nb + b) * nc + c) * nd + d) * ne + e;
}

}  // namespace

void conv_forward(const ConvGeom& g, const double* x, const double* w, const double* bias, double* y) {
    const int64_t cin_pg = g.cin_per_group();
    const int64_t cout_pg = g.cout_per_group();
    const int64_t total = g.out_numel();
    const int64_t sp = g.out[0] * g.out[1] * g.out[2];
    const bool heavy = total * cin_pg * g.kernel_numel() > kMinParallelWork;
#pragma omp parallel for schedule(static) if (heavy)
    for (int64_t idx = 0; idx < total; ++idx) {
        const int64_t b = idx / (g.cout * sp);
        const int64_t co = (idx / sp) % g.cout;
        int64_t rem = idx % sp;
        const int64_t o0 = rem / (g.out[1] * g.out[2]);
        rem %= g.out[1] * g.out[2];
        const int64_t o1 = rem / g.out[2];
        const int64_t o2 = rem % g.out[2];
        const int64_t grp = co / cout_pg;
        double acc = bias ? bias[co] : 0.0;
        for (int64_t cl = 0; cl < cin_pg; ++cl) {
            const int64_t ci = grp * cin_pg + cl;
            for (int64_t k0 = 0; k0 < g.k[0]; ++k0) {
                const int64_t i0 = o0 * g.stride[0] - g.pad[0] + k0;
                if (i0 < 0 || i0 >= g.in[0]) continue;
                for (int64_t k1 = 0; k1 < g.k[1]; ++k1) {
                    const int64_t i1 = o1 * g.stride[1] - g.pad[1] + k1;
                    if (i1 < 0 || i1 >= g.in[1]) continue;
                    for (int64_t k2 = 0; k2 < g.k[2]; ++k2) {
                        const int64_t i2 = o2 * g.stride[2] - g.pad[2] + k2;
                        if (i2 < 0 || i2 >= g.in[2]) continue;
                        acc += x[idx5(b, ci, i0, i1, i2, g.cin, g.in[0], g.in[1], g.in[2])] *
                               w[idx5(co, cl, k0, k1, k2, cin_pg, g.k[0], g.k[1], g.k[2])];
                    }
                }
            }
        }
        y[idx] = acc;
    }
}

void conv_grad_input(const ConvGeom& g, const double* gy, const double* w, double* gx) {
    const int64_t cin_pg = g.cin_per_group();
    const int64_t cout_pg = g.cout_per_group();
    const int64_t total = g.in_numel();
    const int64_t sp = g.in[0] * g.in[1] * g.in[2];
    const bool heavy = total * cout_pg * g.kernel_numel() > kMinParallelWork;
#pragma omp parallel for schedule(static) if (heavy)
    for (int64_t idx = 0; idx < total; ++idx) {
        const int64_t b = idx / (g.cin * sp);
        const int64_t ci = (idx / sp) % g.cin;
        int64_t rem = idx % sp;
        const int64_t i0 = rem / (g.in[1] * g.in[2]);
        rem %= g.in[1] * g.in[2];
        const int64_t i1 = rem / g.in[2];
        const int64_t i2 = rem % g.in[2];
        const int64_t grp = ci / cin_pg;
        const int64_t cl = ci % cin_pg;
        double acc = 0.0;
        for (int64_t col = 0; col < cout_pg; ++col) {
            const int64_t co = grp * cout_pg + col;
            for (int64_t k0 = 0; k0 < g.k[0]; ++k0) {
                const int64_t n0 = i0 + g.pad[0] - k0;
                if (n0 < 0 || n0 % g.stride[0]) continue;
                const int64_t o0 = n0 / g.stride[0];
                if (o0 >= g.out[0]) continue;
                for (int64_t k1 = 0; k1 < g.k[1]; ++k1) {
                    const int64_t n1 = i1 + g.pad[1] - k1;
                    if (n1 < 0 || n1 % g.stride[1]) continue;
                    const int64_t o1 = n1 / g.stride[1];
                    if (o1 >= g.out[1]) continue;
                    for (int64_t k2 = 0; k2 < g.k[2]; ++k2) {
                        const int64_t n2 = i2 + g.pad[2] - k2;
                        if (n2 < 0 || n2 % g.stride[2]) continue;
                        const int64_t o2 = n2 / g.stride[2];
                        if (o2 >= g.out[2]) continue;
                        acc += gy[idx5(b, co, o0, o1, o2, g.cout, g.out[0], g.out[1], g.out[2])] *
                               w[idx5(co, cl, k0, k1, k2, cin_pg, g.k[0], g.k[1], g.k[2])];
                    }
                }
            }
        }
        gx[idx] = acc;
    }
}

void conv_grad_weight(const ConvGeom& g, const double* gy, const double* x, double* gw) {
    const int64_t cin_pg = g.cin_per_group();
    const int64_t cout_pg = g.cout_per_group();
    const int64_t total = g.weight_numel();
    const int64_t kv = g.kernel_numel();
    const bool heavy = total * g.batch * g.out[0] * g.out[1] * g.out[2] > kMinParallelWork;
#pragma omp parallel for schedule(static) if (heavy)
    for (int64_t idx = 0; idx < total; ++idx) {
        const int64_t co = idx / (cin_pg * kv);
        const int64_t cl = (idx / kv) % cin_pg;
        int64_t rem = idx % kv;
        const int64_t k0 = rem / (g.k[1] * g.k[2]);
        rem %= g.k[1] * g.k[2];
        const int64_t k1 = rem / g.k[2];
        const int64_t k2 = rem % g.k[2];
        const int64_t ci = (co / cout_pg) * cin_pg + cl;
        double acc = 0.0;
        for (int64_t b = 0; b < g.batch; ++b)
            for (int64_t o0 = 0; o0 < g.out[0]; ++o0) {
                const int64_t i0 = o0 * g.stride[0] - g.pad[0] + k0;
                if (i0 < 0 || i0 >= g.in[0]) continue;
                for (int64_t o1 = 0; o1 < g.out[1]; ++o1) {
                    const int64_t i1 = o1 * g.stride[1] - g.pad[1] + k1;
                    if (i1 < 0 || i1 >= g.in[1]) continue;
                    for (int64_t o2 = 0; o2 < g.out[2]; ++o2) {
                        const int64_t i2 = o2 * g.stride[2] - g.pad[2] + k2;
                        if (i2 < 0 || i2 >= g.in[2]) continue;
                        acc += gy[idx5(b, co, o0, o1, o2, g.cout, g.out[0], g.out[1], g.out[2])] *
                               x[idx5(b, ci, i0, i1, i2, g.cin, g.in[0], g.in[1], g.in[2])];
                    }
                }
            }
        gw[idx] = acc;
    }
}

void conv_grad_bias(const ConvGeom& g, const double* gy, double* gb) {
    const int64_t sp = g.out[0] * g.out[1] * g.out[2];
#pragma omp parallel for schedule(static) if (g.cout > 1 && g.batch * sp > 64)
    for (int64_t co = 0; co < g.cout; ++co) {
        double acc = 0.0;
        for (int64_t b = 0; b < g.batch; ++b) {
            const double* row = gy + (b * g.cout + co) * sp;
            for (int64_t s = 0; s < sp; ++s) acc += row[s];
        }
        gb[co] = acc;
    }
}

void tconv_forward(const ConvGeom& g, const double* x, const double* w, const double* bias, double* y) {
    const int64_t cin_pg = g.cin_per_group();
    const int64_t cout_pg = g.cout_per_group();
    const int64_t total = g.out_numel();
    const int64_t sp = g.out[0] * g.out[1] * g.out[2];
    const bool heavy = total * cin_pg * g.kernel_numel() > kMinParallelWork;
#pragma omp parallel for schedule(static) if (heavy)
    for (int64_t idx = 0; idx < total; ++idx) {
        const int64_t b = idx / (g.cout * sp);
        const int64_t co = (idx / sp) % g.cout;
        int64_t rem = idx % sp;
        const int64_t o0 = rem / (g.out[1] * g.out[2]);
        rem %= g.out[1] * g.out[2];
        const int64_t o1 = rem / g.out[2];
        const int64_t o2 = rem % g.out[2];
        const int64_t grp = co / cout_pg;
        const int64_t col = co % cout_pg;
        double acc = bias ? bias[co] : 0.0;
        for (int64_t cl = 0; cl < cin_pg; ++cl) {
            const int64_t ci = grp * cin_pg + cl;
            for (int64_t k0 = 0; k0 < g.k[0]; ++k0) {
                const int64_t n0 = o0 + g.pad[0] - k0;
                if (n0 < 0 || n0 % g.stride[0]) continue;
                const int64_t q0 = n0 / g.stride[0];
                if (q0 >= g.in[0]) continue;
                for (int64_t k1 = 0; k1 < g.k[1]; ++k1) {
                    const int64_t n1 = o1 + g.pad[1] - k1;
                    if (n1 < 0 || n1 % g.stride[1]) continue;
                    const int64_t q1 = n1 / g.stride[1];
                    if (q1 >= g.in[1]) continue;
                    for (int64_t k2 = 0; k2 < g.k[2]; ++k2) {
                        const int64_t n2 = o2 + g.pad[2] - k2;
                        if (n2 < 0 || n2 % g.stride[2]) continue;
                        const int64_t q2 = n2 / g.stride[2];
                        if (q2 >= g.in[2]) continue;
                        acc += x[idx5(b, ci, q0, q1, q2, g.cin, g.in[0], g.in[1], g.in[2])] *
                               w[idx5(ci, col, k0, k1, k2, cout_pg, g.k[0], g.k[1], g.k[2])];
                    }
                }
            }
        }
        y[idx] = acc;
    }
}

void tconv_grad_input(const ConvGeom& g, const double* gy, const double* w, double* gx) {
    const int64_t cin_pg = g.cin_per_group();
    const int64_t cout_pg = g.cout_per_group();
    const int64_t total = g.in_numel();
    const int64_t sp = g.in[0] * g.in[1] * g.in[2];
    const bool heavy = total * cout_pg * g.kernel_numel() > kMinParallelWork;
#pragma omp parallel for schedule(static) if (heavy)
    for (int64_t idx = 0; idx < total; ++idx) {
        const int64_t b = idx / (g.cin * sp);
        const int64_t ci = (idx / sp) % g.cin;
        int64_t rem = idx % sp;
        const int64_t q0 = rem / (g.in[1] * g.in[2]);
        rem %= g.in[1] * g.in[2];
        const int64_t q1 = rem / g.in[2];
        const int64_t q2 = rem % g.in[2];
        const int64_t grp = ci / cin_pg;
        double acc = 0.0;
        for (int64_t col = 0; col < cout_pg; ++col) {
            const int64_t co = grp * cout_pg + col;
            for (int64_t k0 = 0; k0 < g.k[0]; ++k0) {
                const int64_t o0 = q0 * g.stride[0] + k0 - g.pad[0];
                if (o0 < 0 || o0 >= g.out[0]) continue;
                for (int64_t k1 = 0; k1 < g.k[1]; ++k1) {
                    const int64_t o1 = q1 * g.stride[1] + k1 - g.pad[1];
                    if (o1 < 0 || o1 >= g.out[1]) continue;
                    for (int64_t k2 = 0; k2 < g.k[2]; ++k2) {
                        const int64_t o2 = q2 * g.stride[2] + k2 - g.pad[2];
                        if (o2 < 0 || o2 >= g.out[2]) continue;
                        acc += gy[idx5(b, co, o0, o1, o2, g.cout, g.out[0], g.out[1], g.out[2])] *
                               w[idx5(ci, col, k0, k1, k2, cout_pg, g.k[0], g.k[1], g.k[2])];
                    }
                }
            }
        }
        gx[idx] = acc;
    }
}

void tconv_grad_weight(const ConvGeom& g, const double* gy, const double* x, double* gw) {
    const int64_t cin_pg = g.cin_per_group();
    const int64_t cout_pg = g.cout_per_group();
    const int64_t total = g.weight_numel();
    const int64_t kv = g.kernel_numel();
    const bool heavy = total * g.batch * g.in[0] * g.in[1] * g.in[2] > kMinParallelWork;
#pragma omp parallel for schedule(static) if (heavy)
    for (int64_t idx = 0; idx < total; ++idx) {
        const int64_t ci = idx / (cout_pg * kv);
        const int64_t col = (idx / kv) % cout_pg;
        int64_t rem = idx % kv;
        const int64_t k0 = rem / (g.k[1] * g.k[2]);
        rem %= g.k[1] * g.k[2];
        const int64_t k1 = rem / g.k[2];
        const int64_t k2 = rem % g.k[2];
        const int64_t co = (ci / cin_pg) * cout_pg + col;
        double acc = 0.0;
        for (int64_t b = 0; b < g.batch; ++b)
            for (int64_t q0 = 0; q0 < g.in[0]; ++q0) {
                const int64_t o0 = q0 * g.stride[0] + k0 - g.pad[0];
                if (o0 < 0 || o0 >= g.out[0]) continue;
                for (int64_t q1 = 0; q1 < g.in[1]; ++q1) {
                    const int64_t o1 = q1 * g.stride[1] + k1 - g.pad[1];
                    if (o1 < 0 || o1 >= g.out[1]) continue;
                    for (int64_t q2 = 0; q2 < g.in[2]; ++q2) {
                        const int64_t o2 = q2 * g.stride[2] + k2 - g.pad[2];
                        if (o2 < 0 || o2 >= g.out[2]) continue;
                        acc += gy[idx5(b, co, o0, o1, o2, g.cout, g.out[0], g.out[1], g.out[2])] *
                               x[idx5(b, ci, q0, q1, q2, g.cin, g.in[0], g.in[1], g.in[2])];
                    }
                }
            }
        gw[idx] = acc;
    }
}

}  // namespace lcnet::kern::par
