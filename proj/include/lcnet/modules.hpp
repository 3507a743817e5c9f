#pragma once

#include <memory>
#include <string>
#include <vector>

#include "lcnet/autodiff.hpp"
#include "lcnet/rng.hpp"
#include "lcnet/tensor.hpp"

namespace lcnet {

enum class ParamKind { Weight, Bias, Norm };

// One learnable tensor. `uses` records how many times the published
// accounting convention charges this tensor (CBAM counts its shared channel
// MLP once per pooling branch); the enumeration oracle reports both readings.
struct ParamRecord {
    std::string name;  // local name; module traversal produces dotted paths
    ParamKind kind = ParamKind::Weight;
    int uses = 1;
    ad::Var var;

    const Tensor& value() const { return var.value(); }
    Tensor& value() { return var.value(); }
    const std::vector<int64_t>& shape() const { return value().shape(); }
    int64_t count() const { return value().numel(); }
    Tensor& grad() { return var.grad(); }
};

struct NamedParam {
    std::string name;  // dotted path from the queried module
    ParamRecord* rec;
};

class Module {
public:
    explicit Module(std::string name) : name_(std::move(name)) {}
    virtual ~Module() = default;
    Module(const Module&) = delete;
    Module& operator=(const Module&) = delete;

    const std::string& name() const { return name_; }
    ad::Mode mode() const { return mode_; }
    void set_mode(ad::Mode m);
    void zero_grad();

    // depth-first, declaration order; names are unique within the tree
    std::vector<NamedParam> named_params();
    std::vector<ParamRecord*> params();

    // applies fn to this module and every descendant, declaration order
    void visit(const std::function<void(Module&)>& fn);

protected:
    ParamRecord& add_param(std::string name, Tensor init, ParamKind kind, int uses = 1);

    template <class M, class... Args>
    M& make_child(Args&&... args) {
        auto child = std::make_unique<M>(std::forward<Args>(args)...);
        M& ref = *child;
        children_.push_back(std::move(child));
        return ref;
    }

private:
    void collect(const std::string& prefix, std::vector<NamedParam>& out);

    std::string name_;
    ad::Mode mode_ = ad::Mode::Train;
    std::vector<std::unique_ptr<ParamRecord>> params_;
    std::vector<std::unique_ptr<Module>> children_;
};

// fan-in scaled uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in))
Tensor fan_in_uniform(const std::vector<int64_t>& shape, int64_t fan_in, Rng& rng);

class Conv : public Module {
public:
    // pad: explicit per-axis padding; `Conv::same(...)` helpers build specs
    Conv(std::string name, ad::ConvSpec spec, bool bias, Rng& rng);

    ad::Var forward(const ad::Var& x);
    const ad::ConvSpec& spec() const { return spec_; }
    ParamRecord& weight() { return weight_; }
    ParamRecord* bias() { return bias_; }
    void zero_init();

private:
    ad::ConvSpec spec_;
    ParamRecord& weight_;
    ParamRecord* bias_ = nullptr;
};

class BatchNorm : public Module {
public:
    BatchNorm(std::string name, int64_t channels);

    ad::Var forward(const ad::Var& x);
    ad::BnState& state() { return state_; }
    ParamRecord& gamma() { return gamma_; }
    ParamRecord& beta() { return beta_; }

private:
    ParamRecord& gamma_;
    ParamRecord& beta_;
    ad::BnState state_;
};

// convenience spec builders
ad::ConvSpec pointwise_spec(int sdims, int64_t cin, int64_t cout);
ad::ConvSpec depthwise_spec(int sdims, int64_t channels, int64_t kernel);  // same padding
ad::ConvSpec dense_same_spec(int sdims, int64_t cin, int64_t cout, int64_t kernel);

}  // namespace lcnet
