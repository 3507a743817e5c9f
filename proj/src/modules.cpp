#include "lcnet/modules.hpp"

#include <cmath>
#include <unordered_set>

namespace lcnet {

void Module::set_mode(ad::Mode m) {
    mode_ = m;
    for (auto& c : children_) c->set_mode(m);
}

void Module::zero_grad() {
    for (auto& p : params_) p->grad().fill(0.0);
    for (auto& c : children_) c->zero_grad();
}

ParamRecord& Module::add_param(std::string name, Tensor init, ParamKind kind, int uses) {
    auto rec = std::make_unique<ParamRecord>();
    rec->name = std::move(name);
    rec->kind = kind;
    rec->uses = uses;
    rec->var = ad::Var::leaf(std::move(init), true);
    params_.push_back(std::move(rec));
    return *params_.back();
}

void Module::collect(const std::string& prefix, std::vector<NamedParam>& out) {
    for (auto& p : params_) out.push_back({prefix + p->name, p.get()});
    for (auto& c : children_) c->collect(prefix + c->name() + ".", out);
}

std::vector<NamedParam> Module::named_params() {
    std::vector<NamedParam> out;
    collect("", out);
#ifndef NDEBUG
    std::unordered_set<std::string> names;
    for (const auto& np : out)
        if (!names.insert(np.name).second)
            throw ValueError("duplicate parameter name '" + np.name + "' in module tree");
#endif
    return out;
}

std::vector<ParamRecord*> Module::params() {
    std::vector<ParamRecord*> out;
    for (const auto& np : named_params()) out.push_back(np.rec);
    return out;
}

void Module::visit(const std::function<void(Module&)>& fn) {
    fn(*this);
    for (auto& c : children_) c->visit(fn);
}

Tensor fan_in_uniform(const std::vector<int64_t>& shape, int64_t fan_in, Rng& rng) {
    Tensor t(shape);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
}

Conv::Conv(std::string name, ad::ConvSpec spec, bool bias, Rng& rng)
    : Module(std::move(name)),
      spec_(std::move(spec)),
      weight_([&]() -> ParamRecord& {
          spec_.validate();
          int64_t fan_in = spec_.kind == ad::ConvKind::Depthwise ? 1 : spec_.in_channels;
          for (int64_t k : spec_.kernel) fan_in *= k;
          return add_param("w", fan_in_uniform(spec_.weight_shape(), fan_in, rng), ParamKind::Weight);
      }()) {
    if (bias) bias_ = &add_param("b", Tensor::zeros({spec_.out_channels}), ParamKind::Bias);
}

ad::Var Conv::forward(const ad::Var& x) {
    return ad::conv(x, weight_.var, bias_ ? bias_->var : ad::Var(), spec_);
}

void Conv::zero_init() {
    weight_.value().fill(0.0);
    if (bias_) bias_->value().fill(0.0);
}

BatchNorm::BatchNorm(std::string name, int64_t channels)
    : Module(std::move(name)),
      gamma_(add_param("gamma", Tensor::full({channels}, 1.0), ParamKind::Norm)),
      beta_(add_param("beta", Tensor::zeros({channels}), ParamKind::Norm)) {
    state_.running_mean = Tensor::zeros({channels});
    state_.running_var = Tensor::zeros({channels});
}

ad::Var BatchNorm::forward(const ad::Var& x) {
    return ad::batch_norm(x, gamma_.var, beta_.var, state_, mode());
}

ad::ConvSpec pointwise_spec(int sdims, int64_t cin, int64_t cout) {
    ad::ConvSpec s;
    s.kind = ad::ConvKind::Pointwise;
    s.sdims = sdims;
    s.in_channels = cin;
    s.out_channels = cout;
    s.kernel.assign(static_cast<size_t>(sdims), 1);
    s.stride.assign(static_cast<size_t>(sdims), 1);
    s.pad.assign(static_cast<size_t>(sdims), 0);
    return s;
}

ad::ConvSpec depthwise_spec(int sdims, int64_t channels, int64_t kernel) {
    ad::ConvSpec s;
    s.kind = ad::ConvKind::Depthwise;
    s.sdims = sdims;
    s.in_channels = channels;
    s.out_channels = channels;
    s.kernel.assign(static_cast<size_t>(sdims), kernel);
    s.stride.assign(static_cast<size_t>(sdims), 1);
    s.pad = ad::same_padding(s.kernel);
    return s;
}

ad::ConvSpec dense_same_spec(int sdims, int64_t cin, int64_t cout, int64_t kernel) {
    ad::ConvSpec s;
    s.kind = ad::ConvKind::Dense;
    s.sdims = sdims;
    s.in_channels = cin;
    s.out_channels = cout;
    s.kernel.assign(static_cast<size_t>(sdims), kernel);
    s.stride.assign(static_cast<size_t>(sdims), 1);
    s.pad = ad::same_padding(s.kernel);
    return s;
}

}  // namespace lcnet
