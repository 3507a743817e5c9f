#include "lcnet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace lcnet::ad {

Tensor& GraphNode::ensure_grad() {
    if (!grad_alloc) {
        grad = Tensor::zeros(value.shape(), value.layout());
        grad_alloc = true;
    }
    return grad;
}

void GraphNode::accumulate(const Tensor& contribution) {
    Tensor& g = ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += contribution[i];
}

Var Var::leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<GraphNode>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
}

static Var make_op(const char* op, Tensor value, std::vector<NodeRef> parents,
                   std::function<void(GraphNode&)> backprop) {
    assert_finite(value, op);
    auto n = std::make_shared<GraphNode>();
    n->op = op;
    n->value = std::move(value);
    n->parents = std::move(parents);
    n->requires_grad = false;
    for (const auto& p : n->parents)
        if (p && p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backprop = std::move(backprop);
    return Var(std::move(n));
}

void backward(const Var& root, const Tensor& cotangent) {
    if (!root.defined()) throw ValueError("backward on undefined Var");
    if (!root.value().same_shape(cotangent)) throw ShapeError("cotangent shape mismatch");
    if (!root.requires_grad()) return;

    // iterative post-order DFS: parents precede consumers in `order`
    std::vector<GraphNode*> order;
    std::unordered_set<GraphNode*> seen;
    std::vector<std::pair<GraphNode*, size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        bool descended = false;
        while (next < node->parents.size()) {
            GraphNode* p = node->parents[next++].get();
            if (p && p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
                descended = true;
                break;
            }
        }
        if (!descended && (stack.back().second >= stack.back().first->parents.size())) {
            order.push_back(stack.back().first);
            stack.pop_back();
        }
    }

    root.node()->accumulate(cotangent);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        GraphNode* n = *it;
        if (n->backprop && n->grad_alloc) n->backprop(*n);
    }
}

// ---------------------------------------------------------------------------
// decision tape

static thread_local DecisionTape* g_tape = nullptr;

void set_decision_tape(DecisionTape* tape) { g_tape = tape; }
DecisionTape* decision_tape() { return g_tape; }

static std::vector<uint8_t> tape_mask(std::vector<uint8_t> computed) {
    if (!g_tape) return computed;
    if (g_tape->phase == DecisionTape::Phase::Record) {
        g_tape->masks.push_back(computed);
        return computed;
    }
    if (g_tape->mask_cursor >= g_tape->masks.size())
        throw ValueError("decision tape exhausted (graph structure changed between probes)");
    return g_tape->masks[g_tape->mask_cursor++];
}

static std::vector<int64_t> tape_witness(std::vector<int64_t> computed) {
    if (!g_tape) return computed;
    if (g_tape->phase == DecisionTape::Phase::Record) {
        g_tape->witnesses.push_back(computed);
        return computed;
    }
    if (g_tape->witness_cursor >= g_tape->witnesses.size())
        throw ValueError("decision tape exhausted (graph structure changed between probes)");
    return g_tape->witnesses[g_tape->witness_cursor++];
}

// ---------------------------------------------------------------------------
// convolution

std::vector<int64_t> same_padding(const std::vector<int64_t>& kernel) {
    std::vector<int64_t> pad(kernel.size());
    for (size_t i = 0; i < kernel.size(); ++i) {
        if (kernel[i] % 2 == 0)
            throw ValueError("\"same\" padding requires odd kernels, got " + std::to_string(kernel[i]));
        pad[i] = (kernel[i] - 1) / 2;
    }
    return pad;
}

void ConvSpec::validate() const {
    if (sdims < 1 || sdims > 3) throw ShapeError("conv supports 1-3 spatial axes");
    if (kernel.size() != static_cast<size_t>(sdims) || stride.size() != static_cast<size_t>(sdims) ||
        pad.size() != static_cast<size_t>(sdims))
        throw ShapeError("conv kernel/stride/pad must list one entry per spatial axis");
    for (int64_t k : kernel)
        if (k < 1) throw ShapeError("kernel extent must be >= 1");
    for (int64_t s : stride)
        if (s < 1) throw ShapeError("stride must be >= 1");
    if (kind == ConvKind::Pointwise)
        for (int64_t k : kernel)
            if (k != 1) throw ShapeError("pointwise conv requires kernel 1 on every axis");
    if (kind == ConvKind::Depthwise && in_channels != out_channels)
        throw ShapeError("depthwise conv requires out_channels == in_channels");
    if (transposed && kind != ConvKind::Dense)
        throw ShapeError("transposed conv is only supported for dense kind");
}

std::vector<int64_t> ConvSpec::weight_shape() const {
    std::vector<int64_t> s;
    if (transposed) {
        s = {in_channels, out_channels};
    } else {
        s = {out_channels, kind == ConvKind::Depthwise ? 1 : in_channels};
    }
    s.insert(s.end(), kernel.begin(), kernel.end());
    return s;
}

static kern::ConvGeom make_geom(const Tensor& x, const ConvSpec& spec) {
    require_feature_layout(x);
    if (x.spatial_dims() != spec.sdims)
        throw ShapeError("input has " + std::to_string(x.spatial_dims()) +
                         " spatial axes, conv expects " + std::to_string(spec.sdims));
    if (x.channels() != spec.in_channels)
        throw ShapeError("input channels " + std::to_string(x.channels()) + " != conv in_channels " +
                         std::to_string(spec.in_channels));
    kern::ConvGeom g;
    g.sdims = spec.sdims;
    g.batch = x.batch();
    g.cin = spec.in_channels;
    g.cout = spec.out_channels;
    g.groups = spec.groups();
    g.transposed = spec.transposed;
    const int off = 3 - spec.sdims;  // right-align spatial axes
    for (int d = 0; d < spec.sdims; ++d) {
        g.in[off + d] = x.spatial(d);
        g.k[off + d] = spec.kernel[d];
        g.stride[off + d] = spec.stride[d];
        g.pad[off + d] = spec.pad[d];
    }
    for (int d = 0; d < 3; ++d)
        g.out[d] = spec.transposed ? kern::tconv_out_extent(g.in[d], g.k[d], g.stride[d], g.pad[d])
                                   : kern::conv_out_extent(g.in[d], g.k[d], g.stride[d], g.pad[d]);
    return g;
}

Var conv(const Var& x, const Var& weight, const Var& bias, const ConvSpec& spec) {
    spec.validate();
    kern::ConvGeom geom = make_geom(x.value(), spec);
    if (weight.value().shape() != spec.weight_shape()) throw ShapeError("conv weight shape mismatch");
    if (bias.defined() && bias.value().numel() != spec.out_channels)
        throw ShapeError("conv bias length mismatch");

    std::vector<int64_t> out_shape = {geom.batch, geom.cout};
    const int off = 3 - spec.sdims;
    for (int d = 0; d < spec.sdims; ++d) out_shape.push_back(geom.out[off + d]);
    Tensor y(out_shape, x.value().layout());

    const double* bptr = bias.defined() ? bias.value().data() : nullptr;
    if (spec.transposed)
        kern::tconv_forward(geom, x.value().data(), weight.value().data(), bptr, y.data());
    else
        kern::conv_forward(geom, x.value().data(), weight.value().data(), bptr, y.data());
    if (uint64_t* counter = kern::mac_counter()) *counter += kern::count_conv_macs(geom);

    NodeRef xn = x.node(), wn = weight.node(), bn = bias.defined() ? bias.node() : nullptr;
    auto backprop = [geom, spec, xn, wn, bn](GraphNode& self) {
        const Tensor& gy = self.grad;
        if (xn->requires_grad) {
            Tensor gx(xn->value.shape(), xn->value.layout());
            if (spec.transposed)
                kern::tconv_grad_input(geom, gy.data(), wn->value.data(), gx.data());
            else
                kern::conv_grad_input(geom, gy.data(), wn->value.data(), gx.data());
            xn->accumulate(gx);
        }
        if (wn->requires_grad) {
            Tensor gw(wn->value.shape());
            if (spec.transposed)
                kern::tconv_grad_weight(geom, gy.data(), xn->value.data(), gw.data());
            else
                kern::conv_grad_weight(geom, gy.data(), xn->value.data(), gw.data());
            wn->accumulate(gw);
        }
        if (bn && bn->requires_grad) {
            Tensor gb(bn->value.shape());
            kern::conv_grad_bias(geom, gy.data(), gb.data());
            bn->accumulate(gb);
        }
    };

    std::vector<NodeRef> parents = {xn, wn};
    if (bn) parents.push_back(bn);
    return make_op(spec.transposed ? "tconv" : "conv", std::move(y), std::move(parents), backprop);
}

// ---------------------------------------------------------------------------
// pooling

Var global_avg_pool(const Var& x) {
    const Tensor& xv = x.value();
    require_feature_layout(xv);
    const int64_t B = xv.batch(), C = xv.channels(), SP = xv.spatial_numel();
    std::vector<int64_t> out_shape = {B, C};
    for (int d = 0; d < xv.spatial_dims(); ++d) out_shape.push_back(1);
    Tensor y(out_shape, xv.layout());
    for (int64_t bc = 0; bc < B * C; ++bc) {
        double acc = 0.0;
        const double* row = xv.data() + bc * SP;
        for (int64_t s = 0; s < SP; ++s) acc += row[s];
        y[bc] = acc / static_cast<double>(SP);
    }

    NodeRef xn = x.node();
    auto backprop = [xn, B, C, SP](GraphNode& self) {
        if (!xn->requires_grad) return;
        Tensor gx(xn->value.shape(), xn->value.layout());
        for (int64_t bc = 0; bc < B * C; ++bc) {
            const double gshare = self.grad[bc] / static_cast<double>(SP);
            double* row = gx.data() + bc * SP;
            for (int64_t s = 0; s < SP; ++s) row[s] = gshare;
        }
        xn->accumulate(gx);
    };
    return make_op("global_avg_pool", std::move(y), {xn}, backprop);
}

Var global_max_pool(const Var& x) {
    const Tensor& xv = x.value();
    require_feature_layout(xv);
    const int64_t B = xv.batch(), C = xv.channels(), SP = xv.spatial_numel();
    std::vector<int64_t> wit(static_cast<size_t>(B * C), 0);
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const double* row = xv.data() + bc * SP;
        int64_t best = 0;
        for (int64_t s = 1; s < SP; ++s)
            if (row[s] > row[best]) best = s;  // lowest index wins ties
        wit[static_cast<size_t>(bc)] = best;
    }
    wit = tape_witness(std::move(wit));

    std::vector<int64_t> out_shape = {B, C};
    for (int d = 0; d < xv.spatial_dims(); ++d) out_shape.push_back(1);
    Tensor y(out_shape, xv.layout());
    for (int64_t bc = 0; bc < B * C; ++bc) y[bc] = xv[bc * SP + wit[static_cast<size_t>(bc)]];

    NodeRef xn = x.node();
    auto backprop = [xn, wit, SP, B, C](GraphNode& self) {
        if (!xn->requires_grad) return;
        Tensor gx(xn->value.shape(), xn->value.layout());
        for (int64_t bc = 0; bc < B * C; ++bc)
            gx[bc * SP + wit[static_cast<size_t>(bc)]] = self.grad[bc];
        xn->accumulate(gx);
    };
    return make_op("global_max_pool", std::move(y), {xn}, backprop);
}

Var channel_stats(const Var& x) {
    const Tensor& xv = x.value();
    require_feature_layout(xv);
    const int64_t B = xv.batch(), C = xv.channels(), SP = xv.spatial_numel();

    std::vector<int64_t> wit(static_cast<size_t>(B * SP), 0);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t s = 0; s < SP; ++s) {
            int64_t best = 0;
            for (int64_t c = 1; c < C; ++c)
                if (xv[(b * C + c) * SP + s] > xv[(b * C + best) * SP + s]) best = c;
            wit[static_cast<size_t>(b * SP + s)] = best;
        }
    wit = tape_witness(std::move(wit));

    std::vector<int64_t> out_shape = xv.shape();
    out_shape[1] = 2;
    Tensor y(out_shape, xv.layout());
    for (int64_t b = 0; b < B; ++b)
        for (int64_t s = 0; s < SP; ++s) {
            double acc = 0.0;
            for (int64_t c = 0; c < C; ++c) acc += xv[(b * C + c) * SP + s];
            y[(b * 2 + 0) * SP + s] = acc / static_cast<double>(C);
            y[(b * 2 + 1) * SP + s] = xv[(b * C + wit[static_cast<size_t>(b * SP + s)]) * SP + s];
        }

    NodeRef xn = x.node();
    auto backprop = [xn, wit, B, C, SP](GraphNode& self) {
        if (!xn->requires_grad) return;
        Tensor gx(xn->value.shape(), xn->value.layout());
        for (int64_t b = 0; b < B; ++b)
            for (int64_t s = 0; s < SP; ++s) {
                const double gmean = self.grad[(b * 2 + 0) * SP + s] / static_cast<double>(C);
                for (int64_t c = 0; c < C; ++c) gx[(b * C + c) * SP + s] += gmean;
                gx[(b * C + wit[static_cast<size_t>(b * SP + s)]) * SP + s] +=
                    self.grad[(b * 2 + 1) * SP + s];
            }
        xn->accumulate(gx);
    };
    return make_op("channel_stats", std::move(y), {xn}, backprop);
}

// ---------------------------------------------------------------------------
// batch norm

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BnState& state, Mode mode) {
    const Tensor& xv = x.value();
    require_feature_layout(xv);
    const int64_t B = xv.batch(), C = xv.channels(), SP = xv.spatial_numel();
    if (gamma.value().numel() != C || beta.value().numel() != C)
        throw ShapeError("batch_norm gamma/beta length mismatch");
    if (state.running_mean.numel() != C || state.running_var.numel() != C)
        throw ShapeError("batch_norm running stats length mismatch");

    const int64_t m = B * SP;
    const bool train = mode == Mode::Train;
    if (train && m < 2)
        throw ValueError("batch_norm: batch*spatial size " + std::to_string(m) +
                         " < 2 gives degenerate statistics in train mode");

    std::vector<double> mean(static_cast<size_t>(C)), invstd(static_cast<size_t>(C));
    if (train) {
        for (int64_t c = 0; c < C; ++c) {
            double acc = 0.0;
            for (int64_t b = 0; b < B; ++b)
                for (int64_t s = 0; s < SP; ++s) acc += xv[(b * C + c) * SP + s];
            mean[static_cast<size_t>(c)] = acc / static_cast<double>(m);
        }
        for (int64_t c = 0; c < C; ++c) {
            double acc = 0.0;
            for (int64_t b = 0; b < B; ++b)
                for (int64_t s = 0; s < SP; ++s) {
                    const double d = xv[(b * C + c) * SP + s] - mean[static_cast<size_t>(c)];
                    acc += d * d;
                }
            const double var = acc / static_cast<double>(m);
            invstd[static_cast<size_t>(c)] = 1.0 / std::sqrt(var + state.eps);
            // running update uses the unbiased variance
            state.running_mean[c] =
                (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mean[static_cast<size_t>(c)];
            state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] +
                                   state.momentum * var * static_cast<double>(m) / static_cast<double>(m - 1);
        }
    } else {
        for (int64_t c = 0; c < C; ++c) {
            mean[static_cast<size_t>(c)] = state.running_mean[c];
            invstd[static_cast<size_t>(c)] = 1.0 / std::sqrt(state.running_var[c] + state.eps);
        }
    }

    auto xhat = std::make_shared<Tensor>(xv.shape(), xv.layout());
    Tensor y(xv.shape(), xv.layout());
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const double mu = mean[static_cast<size_t>(c)];
            const double is = invstd[static_cast<size_t>(c)];
            const double gm = gamma.value()[c], bt = beta.value()[c];
            for (int64_t s = 0; s < SP; ++s) {
                const int64_t i = (b * C + c) * SP + s;
                const double xh = (xv[i] - mu) * is;
                (*xhat)[i] = xh;
                y[i] = gm * xh + bt;
            }
        }

    NodeRef xn = x.node(), gn = gamma.node(), bn = beta.node();
    auto backprop = [xn, gn, bn, xhat, invstd, B, C, SP, m, train](GraphNode& self) {
        const Tensor& gy = self.grad;
        std::vector<double> gbeta(static_cast<size_t>(C), 0.0), ggamma(static_cast<size_t>(C), 0.0);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c)
                for (int64_t s = 0; s < SP; ++s) {
                    const int64_t i = (b * C + c) * SP + s;
                    gbeta[static_cast<size_t>(c)] += gy[i];
                    ggamma[static_cast<size_t>(c)] += gy[i] * (*xhat)[i];
                }
        if (gn->requires_grad) {
            Tensor gg(gn->value.shape());
            for (int64_t c = 0; c < C; ++c) gg[c] = ggamma[static_cast<size_t>(c)];
            gn->accumulate(gg);
        }
        if (bn->requires_grad) {
            Tensor gb(bn->value.shape());
            for (int64_t c = 0; c < C; ++c) gb[c] = gbeta[static_cast<size_t>(c)];
            bn->accumulate(gb);
        }
        if (xn->requires_grad) {
            Tensor gx(xn->value.shape(), xn->value.layout());
            for (int64_t b = 0; b < B; ++b)
                for (int64_t c = 0; c < C; ++c) {
                    const double gm = gn->value[c];
                    const double is = invstd[static_cast<size_t>(c)];
                    const double mg = gbeta[static_cast<size_t>(c)] / static_cast<double>(m);
                    const double mgx = ggamma[static_cast<size_t>(c)] / static_cast<double>(m);
                    for (int64_t s = 0; s < SP; ++s) {
                        const int64_t i = (b * C + c) * SP + s;
                        gx[i] = train ? gm * is * (gy[i] - mg - (*xhat)[i] * mgx) : gm * is * gy[i];
                    }
                }
            xn->accumulate(gx);
        }
    };
    return make_op("batch_norm", std::move(y), {xn, gn, bn}, backprop);
}

// ---------------------------------------------------------------------------
// activations

// branch codes: 0 = clamped low, 1 = linear, 2 = clamped high
static Var clamped_linear(const char* op, const Var& x, double hi, bool has_hi) {
    const Tensor& xv = x.value();
    const int64_t n = xv.numel();
    std::vector<uint8_t> code(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        if (xv[i] <= 0.0)
            code[static_cast<size_t>(i)] = 0;
        else if (has_hi && xv[i] >= hi)
            code[static_cast<size_t>(i)] = 2;
        else
            code[static_cast<size_t>(i)] = 1;
    }
    code = tape_mask(std::move(code));

    Tensor y(xv.shape(), xv.layout());
    for (int64_t i = 0; i < n; ++i) {
        switch (code[static_cast<size_t>(i)]) {
            case 0: y[i] = 0.0; break;
            case 1: y[i] = xv[i]; break;
            default: y[i] = hi; break;
        }
    }

    NodeRef xn = x.node();
    auto backprop = [xn, code, n](GraphNode& self) {
        if (!xn->requires_grad) return;
        Tensor gx(xn->value.shape(), xn->value.layout());
        for (int64_t i = 0; i < n; ++i)
            gx[i] = code[static_cast<size_t>(i)] == 1 ? self.grad[i] : 0.0;
        xn->accumulate(gx);
    };
    return make_op(op, std::move(y), {xn}, backprop);
}

Var relu(const Var& x) { return clamped_linear("relu", x, 0.0, false); }
Var relu6(const Var& x) { return clamped_linear("relu6", x, 6.0, true); }

Var sigmoid(const Var& x) {
    const Tensor& xv = x.value();
    auto yv = std::make_shared<Tensor>(xv.shape(), xv.layout());
    for (int64_t i = 0; i < xv.numel(); ++i) {
        const double v = xv[i];
        if (v >= 0.0) {
            (*yv)[i] = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            (*yv)[i] = e / (1.0 + e);
        }
    }
    Tensor out = *yv;
    NodeRef xn = x.node();
    auto backprop = [xn, yv](GraphNode& self) {
        if (!xn->requires_grad) return;
        Tensor gx(xn->value.shape(), xn->value.layout());
        for (int64_t i = 0; i < gx.numel(); ++i) {
            const double y = (*yv)[i];
            gx[i] = self.grad[i] * y * (1.0 - y);
        }
        xn->accumulate(gx);
    };
    return make_op("sigmoid", std::move(out), {xn}, backprop);
}

// ---------------------------------------------------------------------------
// shuffle / elementwise

std::vector<int64_t> shuffle_permutation(int64_t channels, int64_t groups) {
    if (groups < 1 || channels % groups != 0)
        throw ShapeError("channel_shuffle: channels " + std::to_string(channels) +
                         " not divisible by groups " + std::to_string(groups));
    const int64_t rows = channels / groups;
    std::vector<int64_t> perm(static_cast<size_t>(channels));
    for (int64_t p = 0; p < channels; ++p) perm[static_cast<size_t>(p)] = (p % groups) * rows + p / groups;
    return perm;
}

Var channel_shuffle(const Var& x, int64_t groups) {
    const Tensor& xv = x.value();
    require_feature_layout(xv);
    const int64_t B = xv.batch(), C = xv.channels(), SP = xv.spatial_numel();
    const std::vector<int64_t> perm = shuffle_permutation(C, groups);

    Tensor y(xv.shape(), xv.layout());
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const double* src = xv.data() + (b * C + perm[static_cast<size_t>(c)]) * SP;
            double* dst = y.data() + (b * C + c) * SP;
            std::copy(src, src + SP, dst);
        }

    NodeRef xn = x.node();
    auto backprop = [xn, perm, B, C, SP](GraphNode& self) {
        if (!xn->requires_grad) return;
        Tensor gx(xn->value.shape(), xn->value.layout());
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c) {
                const double* src = self.grad.data() + (b * C + c) * SP;
                double* dst = gx.data() + (b * C + perm[static_cast<size_t>(c)]) * SP;
                std::copy(src, src + SP, dst);
            }
        xn->accumulate(gx);
    };
    return make_op("channel_shuffle", std::move(y), {xn}, backprop);
}

Var add(const Var& x, const Var& y) {
    if (!x.value().same_shape(y.value())) throw ShapeError("add: shape mismatch");
    Tensor out(x.value().shape(), x.value().layout());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = x.value()[i] + y.value()[i];
    NodeRef xn = x.node(), yn = y.node();
    auto backprop = [xn, yn](GraphNode& self) {
        if (xn->requires_grad) xn->accumulate(self.grad);
        if (yn->requires_grad) yn->accumulate(self.grad);
    };
    return make_op("add", std::move(out), {xn, yn}, backprop);
}

Var scale(const Var& x, double factor) {
    Tensor out(x.value().shape(), x.value().layout());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = factor * x.value()[i];
    NodeRef xn = x.node();
    auto backprop = [xn, factor](GraphNode& self) {
        if (!xn->requires_grad) return;
        Tensor gx(xn->value.shape(), xn->value.layout());
        for (int64_t i = 0; i < gx.numel(); ++i) gx[i] = factor * self.grad[i];
        xn->accumulate(gx);
    };
    return make_op("scale", std::move(out), {xn}, backprop);
}

Var mul_broadcast(const Var& x, const Var& gate) {
    const Tensor& xv = x.value();
    const Tensor& gv = gate.value();
    require_feature_layout(xv);
    require_feature_layout(gv);
    const int64_t B = xv.batch(), C = xv.channels(), SP = xv.spatial_numel();
    if (gv.batch() != B || gv.dim() != xv.dim()) throw ShapeError("mul_broadcast: rank/batch mismatch");

    const bool channel_gate = gv.channels() == C && gv.spatial_numel() == 1;
    const bool spatial_gate = gv.channels() == 1 && gv.spatial_numel() == SP;
    if (channel_gate == spatial_gate)
        throw ShapeError("mul_broadcast: gate must be [B,C,1...] or [B,1,spatial...]");
    if (spatial_gate)
        for (int d = 0; d < xv.spatial_dims(); ++d)
            if (gv.spatial(d) != xv.spatial(d)) throw ShapeError("mul_broadcast: spatial gate extents mismatch");

    Tensor out(xv.shape(), xv.layout());
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t s = 0; s < SP; ++s) {
                const int64_t i = (b * C + c) * SP + s;
                const double a = channel_gate ? gv[b * C + c] : gv[b * SP + s];
                out[i] = xv[i] * a;
            }

    NodeRef xn = x.node(), gn = gate.node();
    auto backprop = [xn, gn, channel_gate, B, C, SP](GraphNode& self) {
        const Tensor& gy = self.grad;
        if (xn->requires_grad) {
            Tensor gx(xn->value.shape(), xn->value.layout());
            for (int64_t b = 0; b < B; ++b)
                for (int64_t c = 0; c < C; ++c)
                    for (int64_t s = 0; s < SP; ++s) {
                        const int64_t i = (b * C + c) * SP + s;
                        const double a = channel_gate ? gn->value[b * C + c] : gn->value[b * SP + s];
                        gx[i] = gy[i] * a;
                    }
            xn->accumulate(gx);
        }
        if (gn->requires_grad) {
            Tensor gg(gn->value.shape(), gn->value.layout());
            for (int64_t b = 0; b < B; ++b)
                for (int64_t c = 0; c < C; ++c)
                    for (int64_t s = 0; s < SP; ++s) {
                        const int64_t i = (b * C + c) * SP + s;
                        const int64_t j = channel_gate ? b * C + c : b * SP + s;
                        gg[j] += gy[i] * xn->value[i];
                    }
            gn->accumulate(gg);
        }
    };
    return make_op("mul_broadcast", std::move(out), {xn, gn}, backprop);
}

}  // namespace lcnet::ad
