#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "shadow_attn/errors.hpp"

namespace shadow_attn {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>{});
}

std::string shape_string(const Shape& dims);

/// Dense row-major tensor. Attention code uses rank-4 BHSD layout
/// (batch, heads, sequence, head-dim) and views each (batch, head) slice as
/// a sequence x head-dim Eigen matrix.
template <typename Scalar>
class BasicTensor {
public:
    using scalar_type = Scalar;
    using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using HeadView = Eigen::Map<const RowMatrix>;
    using MutableHeadView = Eigen::Map<RowMatrix>;

    BasicTensor() = default;

    BasicTensor(Shape dims, std::vector<Scalar> data) : dims_(std::move(dims)), data_(std::move(data)) {
        if (dims_.empty())
            throw ValidationError("tensor must have at least one dimension");
        for (std::size_t d : dims_)
            if (d == 0)
                throw ValidationError("tensor dimensions must be positive, got " + shape_string(dims_));
        if (data_.size() != element_count(dims_))
            throw ValidationError("tensor data length " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_string(dims_));
        if constexpr (std::is_floating_point_v<Scalar>) {
            for (Scalar x : data_)
                if (!std::isfinite(x))
                    throw ValidationError("tensor contains a non-finite element");
        }
    }

    static BasicTensor zeros(Shape dims) {
        std::vector<Scalar> data(element_count(dims), Scalar{0});
        return BasicTensor(std::move(dims), std::move(data));
    }

    const Shape& dims() const noexcept { return dims_; }
    std::size_t rank() const noexcept { return dims_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t dim(std::size_t i) const { return dims_.at(i); }

    std::span<const Scalar> data() const noexcept { return data_; }
    std::span<Scalar> data() noexcept { return data_; }
    const std::vector<Scalar>& values() const noexcept { return data_; }

    Scalar operator[](std::size_t i) const { return data_[i]; }

    // BHSD accessors. Callers validate rank 4 before using them.
    std::size_t batch() const { return dims_.at(0); }
    std::size_t heads() const { return dims_.at(1); }
    std::size_t seq_len() const { return dims_.at(2); }
    std::size_t head_dim() const { return dims_.at(3); }

    HeadView head(std::size_t b, std::size_t h) const {
        return HeadView(data_.data() + head_offset(b, h), Eigen::Index(seq_len()), Eigen::Index(head_dim()));
    }

    MutableHeadView head(std::size_t b, std::size_t h) {
        return MutableHeadView(data_.data() + head_offset(b, h), Eigen::Index(seq_len()),
                               Eigen::Index(head_dim()));
    }

    /// Copy of one (batch, head) slice as a 1 x 1 x S x D tensor.
    BasicTensor head_slice(std::size_t b, std::size_t h) const {
        const std::size_t n = seq_len() * head_dim();
        auto first = data_.begin() + std::ptrdiff_t(head_offset(b, h));
        return BasicTensor({1, 1, seq_len(), head_dim()}, std::vector<Scalar>(first, first + std::ptrdiff_t(n)));
    }

    friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

private:
    std::size_t head_offset(std::size_t b, std::size_t h) const {
        return ((b * heads() + h) * seq_len()) * head_dim();
    }

    Shape dims_;
    std::vector<Scalar> data_;
};

using Tensor = BasicTensor<float>;
using Int8Tensor = BasicTensor<std::int8_t>;

/// Throws ValidationError unless the tensor is rank 4.
template <typename Scalar>
void require_bhsd(const BasicTensor<Scalar>& t, const char* name) {
    if (t.rank() != 4)
        throw ValidationError(std::string(name) + " must be rank 4 (BHSD), got " + shape_string(t.dims()));
}

inline constexpr int kInt8Max = 127;

/// Per-tensor symmetric INT8 tensor: real value = scale * code.
struct QuantizedTensor {
    Int8Tensor codes;
    float scale = 1.0f;

    QuantizedTensor() = default;
    QuantizedTensor(Int8Tensor c, float s);

    const Shape& dims() const noexcept { return codes.dims(); }
};

/// max|x| / 127, or 1 for an all-zero tensor.
float max_abs_scale(const Tensor& t);

/// Symmetric per-tensor quantization, round half away from zero, clamped to
/// [-127, 127]. Without an override the scale is max_abs_scale(t).
QuantizedTensor quantize(const Tensor& t, std::optional<float> scale_override = std::nullopt);

Tensor dequantize(const QuantizedTensor& q);

}  // namespace shadow_attn
