#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lcnet/kernels.hpp"
#include "lcnet/tensor.hpp"

namespace lcnet::ad {

enum class Mode { Train, Eval };

struct GraphNode;
using NodeRef = std::shared_ptr<GraphNode>;

// One value in a dynamically built reverse-mode graph. Intermediates live as
// long as a Var referencing them (directly or through a descendant); leaves
// persist inside ParamRecords across forward passes, so their grads
// accumulate until zero_grad.
struct GraphNode {
    Tensor value;
    Tensor grad;
    bool grad_alloc = false;
    bool requires_grad = true;
    const char* op = "leaf";
    std::vector<NodeRef> parents;
    std::function<void(GraphNode&)> backprop;  // pulls this->grad into parents

    Tensor& ensure_grad();
    void accumulate(const Tensor& contribution);
};

class Var {
public:
    Var() = default;
    explicit Var(NodeRef n) : node_(std::move(n)) {}

    static Var leaf(Tensor value, bool requires_grad = true);
    static Var constant(Tensor value) { return leaf(std::move(value), false); }

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    Tensor& value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    Tensor& grad() { return node_->ensure_grad(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }

    const NodeRef& node() const { return node_; }

private:
    NodeRef node_;
};

// Seeds `root` with `cotangent` and runs the reverse sweep. Grad accumulation
// follows reverse topological order of the construction DAG, so repeated runs
// are bitwise reproducible.
void backward(const Var& root, const Tensor& cotangent);

// ---------------------------------------------------------------------------
// branch-decision tape
//
// Finite-difference probes must not step across relu/max kinks. The gradient
// checker records every branch decision (activation masks, argmax witnesses)
// on the base forward and replays them during probe forwards, so the
// difference quotient is taken on the branch the analytic gradient
// differentiates.
struct DecisionTape {
    enum class Phase { Record, Replay };
    Phase phase = Phase::Record;
    std::vector<std::vector<uint8_t>> masks;
    std::vector<std::vector<int64_t>> witnesses;
    size_t mask_cursor = 0;
    size_t witness_cursor = 0;

    void rewind() { mask_cursor = witness_cursor = 0; }
};

void set_decision_tape(DecisionTape* tape);  // thread-local
DecisionTape* decision_tape();

// ---------------------------------------------------------------------------
// ops

enum class ConvKind { Dense, Depthwise, Pointwise };

struct ConvSpec {
    ConvKind kind = ConvKind::Dense;
    int sdims = 2;
    int64_t in_channels = 1;
    int64_t out_channels = 1;
    std::vector<int64_t> kernel;  // per spatial axis
    std::vector<int64_t> stride;  // per spatial axis
    std::vector<int64_t> pad;     // per spatial axis, symmetric
    bool transposed = false;

    int64_t groups() const { return kind == ConvKind::Depthwise ? in_channels : 1; }
    std::vector<int64_t> weight_shape() const;
    void validate() const;
};

// symmetric "same" padding for odd kernels; even kernels are rejected
std::vector<int64_t> same_padding(const std::vector<int64_t>& kernel);

// bias may be an undefined Var
Var conv(const Var& x, const Var& weight, const Var& bias, const ConvSpec& spec);

Var global_avg_pool(const Var& x);
Var global_max_pool(const Var& x);

// per-position channel statistics: output [B,2,spatial], channel 0 = mean
// over C, channel 1 = max over C (ties resolved to the lowest channel index)
Var channel_stats(const Var& x);

struct BnState {
    Tensor running_mean;  // [C]
    Tensor running_var;   // [C]
    double eps = 1e-5;
    double momentum = 0.1;
};

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BnState& state, Mode mode);

Var relu(const Var& x);
Var relu6(const Var& x);
Var sigmoid(const Var& x);

Var channel_shuffle(const Var& x, int64_t groups);

// fixed (groups, C/groups) transpose permutation: result[i] = source channel
std::vector<int64_t> shuffle_permutation(int64_t channels, int64_t groups);

Var add(const Var& x, const Var& y);
Var scale(const Var& x, double factor);

// gate has shape [B,C,1,...] (channel gate) or [B,1,spatial...] (spatial gate)
Var mul_broadcast(const Var& x, const Var& gate);

}  // namespace lcnet::ad
