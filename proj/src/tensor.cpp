#include "lcnet/tensor.hpp"

#include <cassert>
#include <cmath>
#include <cstring>
#include <numeric>

namespace lcnet {

static int64_t checked_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t e : shape) {
        if (e < 1) throw ShapeError("tensor extent must be >= 1, got " + std::to_string(e));
        n *= e;
    }
    return n;
}

Tensor::Tensor(std::vector<int64_t> shape, std::string layout)
    : shape_(std::move(shape)), layout_(std::move(layout)) {
    int64_t n = checked_numel(shape_);
    if (!layout_.empty() && layout_.size() != shape_.size())
        throw ShapeError("layout '" + layout_ + "' does not match rank " + std::to_string(shape_.size()));
    data_.assign(static_cast<size_t>(n), 0.0);
}

Tensor Tensor::zeros(std::vector<int64_t> shape, std::string layout) {
    return Tensor(std::move(shape), std::move(layout));
}

Tensor Tensor::full(std::vector<int64_t> shape, double value, std::string layout) {
    Tensor t(std::move(shape), std::move(layout));
    t.fill(value);
    return t;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::bitwise_equal(const Tensor& o) const {
    if (shape_ != o.shape_) return false;
    return data_.empty() ||
           std::memcmp(data_.data(), o.data_.data(), data_.size() * sizeof(double)) == 0;
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

void Tensor::require_feature() const { require_feature_layout(*this); }

int64_t Tensor::batch() const {
    require_feature();
    return shape_[0];
}

int64_t Tensor::channels() const {
    require_feature();
    return shape_[1];
}

int Tensor::spatial_dims() const {
    require_feature();
    return static_cast<int>(shape_.size()) - 2;
}

int64_t Tensor::spatial(int i) const {
    require_feature();
    return shape_[static_cast<size_t>(2 + i)];
}

int64_t Tensor::spatial_numel() const {
    require_feature();
    int64_t n = 1;
    for (size_t i = 2; i < shape_.size(); ++i) n *= shape_[i];
    return n;
}

std::string feature_layout(int spatial_dims) {
    switch (spatial_dims) {
        case 1: return "BCW";
        case 2: return "BCHW";
        case 3: return "BCDHW";
        default: throw ShapeError("feature maps have 1-3 spatial axes");
    }
}

bool is_feature_layout(const std::string& layout) {
    return layout == "BCW" || layout == "BCHW" || layout == "BCDHW";
}

void require_feature_layout(const Tensor& t) {
    if (!is_feature_layout(t.layout()))
        throw ShapeError("expected feature layout (BCW/BCHW/BCDHW), got '" + t.layout() + "'");
    if (t.layout().size() != t.shape().size())
        throw ShapeError("layout rank mismatch");
}

void assert_finite(const Tensor& t, const char* where) {
#ifndef NDEBUG
    if (!t.all_finite()) throw ValueError(std::string("non-finite value produced in ") + where);
#else
    (void)t;
    (void)where;
#endif
}

}  // namespace lcnet
