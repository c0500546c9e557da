#include "shadow_attn/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace shadow_attn {
namespace {

template <typename UInt>
void put_le(std::ostream& out, UInt v) {
    std::array<char, sizeof(UInt)> bytes{};
    for (std::size_t i = 0; i < sizeof(UInt); ++i)
        bytes[i] = char((v >> (8 * i)) & 0xFF);
    out.write(bytes.data(), std::streamsize(bytes.size()));
}

template <typename UInt>
UInt get_le(std::istream& in, const char* what) {
    std::array<unsigned char, sizeof(UInt)> bytes{};
    if (!in.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size())))
        throw FormatError(FormatError::Kind::truncated, std::string("tensor file truncated while reading ") + what);
    UInt v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i)
        v |= UInt(bytes[i]) << (8 * i);
    return v;
}

void put_header(std::ostream& out, DType dtype, const Shape& dims) {
    out.write(kTensorMagic, 4);
    put_le<std::uint32_t>(out, kTensorFormatVersion);
    put_le<std::uint8_t>(out, std::uint8_t(dtype));
    put_le<std::uint8_t>(out, std::uint8_t(dims.size()));
    for (std::size_t d : dims)
        put_le<std::uint64_t>(out, d);
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw FormatError(FormatError::Kind::io, "cannot open " + path.string() + " for writing");
    return out;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
    if (t.rank() > 255)
        throw ValidationError("tensor rank exceeds the file format limit");
    put_header(out, DType::f32, t.dims());
    for (float x : t.data())
        put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(x));
    if (!out)
        throw FormatError(FormatError::Kind::io, "failed writing tensor payload");
}

void write_tensor(std::ostream& out, const QuantizedTensor& q) {
    if (q.codes.rank() > 255)
        throw ValidationError("tensor rank exceeds the file format limit");
    put_header(out, DType::i8, q.dims());
    put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(q.scale));
    for (std::int8_t c : q.codes.data())
        put_le<std::uint8_t>(out, std::bit_cast<std::uint8_t>(c));
    if (!out)
        throw FormatError(FormatError::Kind::io, "failed writing tensor payload");
}

AnyTensor read_any_tensor(std::istream& in) {
    char magic[4] = {};
    if (!in.read(magic, 4))
        throw FormatError(FormatError::Kind::truncated, "tensor file shorter than its magic bytes");
    if (std::memcmp(magic, kTensorMagic, 4) != 0)
        throw FormatError(FormatError::Kind::bad_magic, "not a tensor file (bad magic)");

    const auto version = get_le<std::uint32_t>(in, "version");
    if (version != kTensorFormatVersion)
        throw FormatError(FormatError::Kind::version_mismatch,
                          "unsupported tensor file version " + std::to_string(version));

    const auto dtype = get_le<std::uint8_t>(in, "dtype");
    if (dtype > std::uint8_t(DType::i8))
        throw FormatError(FormatError::Kind::malformed, "unknown dtype code " + std::to_string(dtype));
    const auto ndim = get_le<std::uint8_t>(in, "ndim");
    if (ndim == 0)
        throw FormatError(FormatError::Kind::malformed, "tensor file declares zero dimensions");

    Shape dims(ndim);
    for (auto& d : dims) {
        d = get_le<std::uint64_t>(in, "dims");
        if (d == 0)
            throw FormatError(FormatError::Kind::malformed, "tensor file declares a zero-length dimension");
    }
    const std::size_t n = element_count(dims);

    if (DType(dtype) == DType::f32) {
        std::vector<float> data(n);
        for (auto& x : data)
            x = std::bit_cast<float>(get_le<std::uint32_t>(in, "payload"));
        try {
            return Tensor(std::move(dims), std::move(data));
        } catch (const ValidationError& e) {
            throw FormatError(FormatError::Kind::malformed, e.what());
        }
    }

    const float scale = std::bit_cast<float>(get_le<std::uint32_t>(in, "scale"));
    std::vector<std::int8_t> codes(n);
    for (auto& c : codes)
        c = std::bit_cast<std::int8_t>(get_le<std::uint8_t>(in, "payload"));
    try {
        return QuantizedTensor(Int8Tensor(std::move(dims), std::move(codes)), scale);
    } catch (const ValidationError& e) {
        throw FormatError(FormatError::Kind::malformed, e.what());
    }
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
    auto out = open_out(path);
    write_tensor(out, t);
}

void write_tensor(const std::filesystem::path& path, const QuantizedTensor& q) {
    auto out = open_out(path);
    write_tensor(out, q);
}

AnyTensor read_any_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw FormatError(FormatError::Kind::io, "cannot open " + path.string());
    return read_any_tensor(in);
}

Tensor read_tensor(const std::filesystem::path& path) {
    auto any = read_any_tensor(path);
    if (auto* t = std::get_if<Tensor>(&any))
        return std::move(*t);
    throw FormatError(FormatError::Kind::malformed, path.string() + " holds an i8 tensor, expected f32");
}

QuantizedTensor read_quantized_tensor(const std::filesystem::path& path) {
    auto any = read_any_tensor(path);
    if (auto* q = std::get_if<QuantizedTensor>(&any))
        return std::move(*q);
    throw FormatError(FormatError::Kind::malformed, path.string() + " holds an f32 tensor, expected i8");
}

}  // namespace shadow_attn
