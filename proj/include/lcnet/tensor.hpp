#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace lcnet {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// shape/layout mismatches
struct ShapeError : Error {
    using Error::Error;
};
// fixture / serialized-data problems
struct FormatError : Error {
    using Error::Error;
};
// bad user-supplied configuration
struct ConfigError : Error {
    using Error::Error;
};
// invalid numeric inputs (degenerate stats, unsupported kernel, ...)
struct ValueError : Error {
    using Error::Error;
};
// metric undefined for the given masks
struct MetricError : Error {
    using Error::Error;
};

// Dense row-major f64 tensor. `layout` tags each axis with a role:
// 'B' batch, 'C' channel, and a 1-3 axis spatial suffix of "DHW".
// Feature maps use "BCW" / "BCHW" / "BCDHW"; parameter tensors and other
// plain arrays leave layout empty.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::vector<int64_t> shape, std::string layout = "");

    static Tensor zeros(std::vector<int64_t> shape, std::string layout = "");
    static Tensor full(std::vector<int64_t> shape, double value, std::string layout = "");

    const std::vector<int64_t>& shape() const { return shape_; }
    const std::string& layout() const { return layout_; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    int dim() const { return static_cast<int>(shape_.size()); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // feature-map accessors; throw ShapeError when layout is not a feature layout
    int64_t batch() const;
    int64_t channels() const;
    int spatial_dims() const;
    int64_t spatial(int i) const;       // i-th spatial extent
    int64_t spatial_numel() const;

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    bool bitwise_equal(const Tensor& o) const;
    bool all_finite() const;

    void fill(double v);

private:
    void require_feature() const;

    std::vector<int64_t> shape_;
    std::string layout_;
    std::vector<double> data_;
};

// canonical feature layout for 1-3 spatial axes: "BCW", "BCHW", "BCDHW"
std::string feature_layout(int spatial_dims);
bool is_feature_layout(const std::string& layout);

// throws ShapeError unless t is a feature map (one batch, one channel,
// 1-3 spatial axes in canonical order)
void require_feature_layout(const Tensor& t);

// debug-build guard: every op output must stay finite
void assert_finite(const Tensor& t, const char* where);

}  // namespace lcnet
