#include "shadow_attn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace shadow_attn {

std::string shape_string(const Shape& dims) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims.size(); ++i)
        os << (i ? "," : "") << dims[i];
    os << ']';
    return os.str();
}

QuantizedTensor::QuantizedTensor(Int8Tensor c, float s) : codes(std::move(c)), scale(s) {
    if (!(scale > 0.0f) || !std::isfinite(scale))
        throw ValidationError("quantization scale must be a positive finite number");
    for (std::int8_t v : codes.data())
        if (v < -kInt8Max)
            throw ValidationError("quantized code -128 is outside the symmetric range");
}

float max_abs_scale(const Tensor& t) {
    float peak = 0.0f;
    for (float x : t.data())
        peak = std::max(peak, std::abs(x));
    return peak > 0.0f ? peak / float(kInt8Max) : 1.0f;
}

QuantizedTensor quantize(const Tensor& t, std::optional<float> scale_override) {
    if (scale_override && (!(*scale_override > 0.0f) || !std::isfinite(*scale_override)))
        throw ValidationError("scale override must be a positive finite number");
    const float scale = scale_override ? *scale_override : max_abs_scale(t);

    std::vector<std::int8_t> codes(t.size());
    std::ranges::transform(t.data(), codes.begin(), [scale](float x) {
        // std::round rounds half away from zero.
        const float r = std::round(x / scale);
        return std::int8_t(std::clamp(r, float(-kInt8Max), float(kInt8Max)));
    });
    return {Int8Tensor(t.dims(), std::move(codes)), scale};
}

Tensor dequantize(const QuantizedTensor& q) {
    std::vector<float> data(q.codes.size());
    std::ranges::transform(q.codes.data(), data.begin(), [s = q.scale](std::int8_t c) { return s * float(c); });
    return Tensor(q.dims(), std::move(data));
}

}  // namespace shadow_attn
