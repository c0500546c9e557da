#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "shadow_attn/tensor.hpp"

namespace shadow_attn {

// ---------------------------------------------------------------------------
// Masking and GQA geometry
// ---------------------------------------------------------------------------

/// Number of key positions visible to query `row`. Under the causal mask the
/// visible set is always the prefix [0, q_offset + row].
inline std::size_t unmasked_count(std::size_t row, std::size_t key_len, bool causal, std::size_t q_offset) {
    return causal ? std::min(key_len, q_offset + row + 1) : key_len;
}

/// Contiguous grouping: query head h reads kv head floor(h * kv_heads / q_heads).
inline std::size_t kv_head_for(std::size_t q_head, std::size_t q_heads, std::size_t kv_heads) {
    return q_head / (q_heads / kv_heads);
}

void check_head_grouping(std::size_t q_heads, std::size_t kv_heads);

template <typename Scalar>
struct BasicAttentionInputs {
    BasicTensor<Scalar> q;  // [B, Hq, Sq, D]
    BasicTensor<Scalar> k;  // [B, Hkv, Sk, D]
    BasicTensor<Scalar> v;  // [B, Hkv, Sk, Dv]
    bool causal = true;
    std::size_t q_offset = 0;  // absolute position of query row 0

    std::size_t num_q_heads() const { return q.heads(); }
    std::size_t num_kv_heads() const { return k.heads(); }
    std::size_t kv_head(std::size_t h) const { return kv_head_for(h, num_q_heads(), num_kv_heads()); }

    void validate() const {
        require_bhsd(q, "q");
        require_bhsd(k, "k");
        require_bhsd(v, "v");
        if (q.batch() != k.batch() || k.batch() != v.batch())
            throw ValidationError("q, k, v batch sizes differ");
        if (k.heads() != v.heads())
            throw ValidationError("k and v head counts differ");
        check_head_grouping(q.heads(), k.heads());
        if (q.head_dim() != k.head_dim())
            throw ValidationError("q and k head dims differ: " + shape_string(q.dims()) + " vs " +
                                  shape_string(k.dims()));
        if (k.seq_len() != v.seq_len())
            throw ValidationError("k and v sequence lengths differ");
        if (causal && q_offset + q.seq_len() > k.seq_len())
            throw ValidationError("causal query rows reach past the last key");
    }
};

using AttentionInputs = BasicAttentionInputs<float>;

/// Single query head (with its kv head) of batch element b, as 1-head inputs.
template <typename Scalar>
BasicAttentionInputs<Scalar> head_inputs(const BasicAttentionInputs<Scalar>& in, std::size_t b, std::size_t h) {
    const std::size_t kvh = in.kv_head(h);
    return {in.q.head_slice(b, h), in.k.head_slice(b, kvh), in.v.head_slice(b, kvh), in.causal, in.q_offset};
}

// ---------------------------------------------------------------------------
// Scores, budgets and selections
// ---------------------------------------------------------------------------

using ScoreBlock = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Raw pre-softmax Q.K / sqrt(d_k) per (batch, query head). No mask is baked
/// in; masking is a function of (row, causal, q_offset) applied by consumers.
struct ScoreMatrix {
    std::size_t batch = 0;
    std::size_t heads = 0;
    std::vector<ScoreBlock> blocks;  // index b * heads + h, rows = queries, cols = keys

    const ScoreBlock& head(std::size_t b, std::size_t h) const { return blocks.at(b * heads + h); }
    ScoreBlock& head(std::size_t b, std::size_t h) { return blocks.at(b * heads + h); }
    std::size_t rows() const { return blocks.empty() ? 0 : std::size_t(blocks.front().rows()); }
    std::size_t keys() const { return blocks.empty() ? 0 : std::size_t(blocks.front().cols()); }

    std::span<const float> row(std::size_t b, std::size_t h, std::size_t r) const {
        const auto& m = head(b, h);
        return {m.data() + r * std::size_t(m.cols()), std::size_t(m.cols())};
    }
};

/// Tokens a query row may keep: either a fixed count or ceil(ratio * unmasked),
/// at least one.
class RowBudget {
public:
    static RowBudget tokens(std::size_t k) { return RowBudget(k, 0.0, false); }
    static RowBudget ratio(double r);

    std::size_t for_row(std::size_t unmasked) const;
    bool is_ratio() const noexcept { return is_ratio_; }
    double ratio_value() const noexcept { return ratio_; }
    std::size_t token_count() const noexcept { return tokens_; }

private:
    RowBudget(std::size_t k, double r, bool is_ratio) : tokens_(k), ratio_(r), is_ratio_(is_ratio) {}

    std::size_t tokens_;
    double ratio_;
    bool is_ratio_;
};

enum class SelectionMode {
    per_row,   // each query row ranks its own scores
    per_head,  // one ranking per head from column sums, trimmed per row by the mask
};

struct SparseSelection {
    std::size_t batch = 0;
    std::size_t heads = 0;
    std::size_t rows = 0;
    std::size_t keys = 0;
    // Index (b * heads + h) * rows + r. Each list strictly increasing.
    std::vector<std::vector<std::uint32_t>> indices;
    std::vector<std::size_t> row_budget;

    std::size_t slot(std::size_t b, std::size_t h, std::size_t r) const { return (b * heads + h) * rows + r; }
    const std::vector<std::uint32_t>& row(std::size_t b, std::size_t h, std::size_t r) const {
        return indices.at(slot(b, h, r));
    }
    std::size_t total_selected() const;
};

/// Top-k over the visible prefix [0, limit) of one row. Ties go to the lower
/// key index; the result is sorted ascending.
template <typename Scalar>
std::vector<std::uint32_t> topk_row(std::span<const Scalar> row, std::size_t limit, std::size_t k) {
    limit = std::min(limit, row.size());
    k = std::min(k, limit);
    std::vector<std::uint32_t> order(limit);
    std::iota(order.begin(), order.end(), 0u);
    auto better = [&](std::uint32_t a, std::uint32_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); };
    std::partial_sort(order.begin(), order.begin() + std::ptrdiff_t(k), order.end(), better);
    order.resize(k);
    std::sort(order.begin(), order.end());
    return order;
}

/// All indices of `values`, best first, ties to the lower index.
template <typename Scalar>
std::vector<std::uint32_t> rank_descending(std::span<const Scalar> values) {
    std::vector<std::uint32_t> order(values.size());
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return values[a] > values[b]; });
    return order;
}

// ---------------------------------------------------------------------------
// Float kernels (templated on scalar so tests can run them at double)
// ---------------------------------------------------------------------------

/// Rotary embedding on consecutive pairs (x[2i], x[2i+1]) with angle
/// (position_offset + s) * theta_base^(-2i/d).
template <typename Scalar>
BasicTensor<Scalar> apply_rope(const BasicTensor<Scalar>& t, std::size_t position_offset, double theta_base) {
    require_bhsd(t, "rope input");
    const std::size_t d = t.head_dim();
    if (d % 2 != 0)
        throw ValidationError("rope requires an even head dim, got " + std::to_string(d));
    if (!(theta_base > 0.0))
        throw ValidationError("rope theta base must be positive");

    std::vector<double> inv_freq(d / 2);
    for (std::size_t i = 0; i < d / 2; ++i)
        inv_freq[i] = std::pow(theta_base, -double(2 * i) / double(d));

    BasicTensor<Scalar> out = t;
    for (std::size_t b = 0; b < t.batch(); ++b)
        for (std::size_t h = 0; h < t.heads(); ++h) {
            auto x = out.head(b, h);
            for (std::size_t s = 0; s < t.seq_len(); ++s) {
                const double pos = double(position_offset + s);
                for (std::size_t i = 0; i < d / 2; ++i) {
                    const double angle = pos * inv_freq[i];
                    const double c = std::cos(angle), sn = std::sin(angle);
                    const double x0 = x(Eigen::Index(s), Eigen::Index(2 * i));
                    const double x1 = x(Eigen::Index(s), Eigen::Index(2 * i + 1));
                    x(Eigen::Index(s), Eigen::Index(2 * i)) = Scalar(x0 * c - x1 * sn);
                    x(Eigen::Index(s), Eigen::Index(2 * i + 1)) = Scalar(x0 * sn + x1 * c);
                }
            }
        }
    return out;
}

/// Q.K^T / sqrt(d) for one head pair.
template <typename Derived1, typename Derived2>
auto scaled_dot_scores(const Eigen::MatrixBase<Derived1>& q, const Eigen::MatrixBase<Derived2>& k) {
    using Scalar = typename Derived1::Scalar;
    using Result = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Result s = q * k.transpose();
    s /= std::sqrt(Scalar(q.cols()));
    return s;
}

/// softmax(mask(Q.K^T / sqrt(d))) . V, max-subtracted, masked keys excluded
/// from the support.
template <typename Scalar>
BasicTensor<Scalar> full_attention(const BasicAttentionInputs<Scalar>& in) {
    in.validate();
    using Vec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
    const std::size_t rows = in.q.seq_len(), keys = in.k.seq_len(), dv = in.v.head_dim();
    auto out = BasicTensor<Scalar>::zeros({in.q.batch(), in.q.heads(), rows, dv});

    for (std::size_t b = 0; b < in.q.batch(); ++b)
        for (std::size_t h = 0; h < in.q.heads(); ++h) {
            const std::size_t kvh = in.kv_head(h);
            const auto scores = scaled_dot_scores(in.q.head(b, h), in.k.head(b, kvh));
            const auto v = in.v.head(b, kvh);
            auto o = out.head(b, h);
            for (std::size_t r = 0; r < rows; ++r) {
                const auto limit = Eigen::Index(unmasked_count(r, keys, in.causal, in.q_offset));
                const auto s = scores.row(Eigen::Index(r)).head(limit);
                const Vec p = (s.array() - s.maxCoeff()).exp().matrix();
                o.row(Eigen::Index(r)) = (p * v.topRows(limit)) / p.sum();
            }
        }
    return out;
}

void check_selection_geometry(const SparseSelection& sel, std::size_t batch, std::size_t heads, std::size_t rows,
                              std::size_t keys);

/// Attention restricted to each row's selected keys: float Q.K recomputed for
/// those keys, softmax over the selected support only. Rows with an empty
/// selection produce zeros.
template <typename Scalar>
BasicTensor<Scalar> sparse_qkv(const BasicAttentionInputs<Scalar>& in, const SparseSelection& sel) {
    in.validate();
    const std::size_t rows = in.q.seq_len(), keys = in.k.seq_len(), dv = in.v.head_dim();
    check_selection_geometry(sel, in.q.batch(), in.q.heads(), rows, keys);
    const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(Scalar(in.q.head_dim()));
    auto out = BasicTensor<Scalar>::zeros({in.q.batch(), in.q.heads(), rows, dv});

    std::vector<Scalar> s;
    for (std::size_t b = 0; b < in.q.batch(); ++b)
        for (std::size_t h = 0; h < in.q.heads(); ++h) {
            const std::size_t kvh = in.kv_head(h);
            const auto q = in.q.head(b, h);
            const auto k = in.k.head(b, kvh);
            const auto v = in.v.head(b, kvh);
            auto o = out.head(b, h);
            for (std::size_t r = 0; r < rows; ++r) {
                const auto& idx = sel.row(b, h, r);
                if (idx.empty())
                    continue;
                const std::size_t limit = unmasked_count(r, keys, in.causal, in.q_offset);
                s.resize(idx.size());
                for (std::size_t j = 0; j < idx.size(); ++j) {
                    if (idx[j] >= limit)
                        throw ValidationError("selected key " + std::to_string(idx[j]) +
                                              " is masked or out of range for query row " + std::to_string(r));
                    s[j] = q.row(Eigen::Index(r)).dot(k.row(Eigen::Index(idx[j]))) * inv_sqrt_d;
                }
                const Scalar m = *std::max_element(s.begin(), s.end());
                Scalar sum = 0;
                for (auto& x : s) {
                    x = std::exp(x - m);
                    sum += x;
                }
                auto acc = o.row(Eigen::Index(r));
                for (std::size_t j = 0; j < idx.size(); ++j)
                    acc += s[j] * v.row(Eigen::Index(idx[j]));
                acc /= sum;
            }
        }
    return out;
}

// ---------------------------------------------------------------------------
// Estimation, selection and metrics
// ---------------------------------------------------------------------------

/// Float scores Q.K^T / sqrt(d_k) with GQA head mapping from the head counts.
ScoreMatrix float_scores(const Tensor& q, const Tensor& k);

/// INT8 Q.K accumulated in 32-bit integers, then scaled by
/// lambda_q * lambda_k / sqrt(d_k). No softmax, no mask.
ScoreMatrix estimate_scores(const QuantizedTensor& q, const QuantizedTensor& k, std::size_t d_k);

SparseSelection topk_select(const ScoreMatrix& scores, RowBudget budget, bool causal, std::size_t q_offset,
                            SelectionMode mode = SelectionMode::per_row);

/// Same, with one budget per query head.
SparseSelection topk_select(const ScoreMatrix& scores, std::span<const RowBudget> head_budgets, bool causal,
                            std::size_t q_offset, SelectionMode mode = SelectionMode::per_row);

/// Every unmasked position of every row.
SparseSelection dense_selection(std::size_t batch, std::size_t heads, std::size_t rows, std::size_t keys,
                                bool causal, std::size_t q_offset);

/// Block-sparse baseline: mean-pool q and k rows per block, rank key blocks by
/// pooled score for the row's query block, take blocks until the row's budget
/// of visible tokens is covered, and expand to the visible tokens of those
/// blocks.
SparseSelection block_sparse_select(const Tensor& q, const Tensor& k, std::size_t block, RowBudget budget,
                                    bool causal, std::size_t q_offset);

/// |predicted n truth| / |truth| averaged over rows, then over heads. Rows
/// with an empty truth set are left out.
double recall(const SparseSelection& predicted, const SparseSelection& truth);

struct ErrorMetrics {
    double max_abs = 0.0;
    double mean_abs = 0.0;
    double relative_l2 = 0.0;  // ||a - b|| / ||b||
};

/// `b` is the reference.
ErrorMetrics output_error(const Tensor& a, const Tensor& b);

/// Full attention the way a static-graph INT8 accelerator would run it:
/// quantized Q.K with the given scales, float softmax, then P (scale 1/127)
/// and V (own max scale) quantized for an integer P.V.
Tensor npu_full_attention(const AttentionInputs& in, float lambda_q, float lambda_k);

}  // namespace shadow_attn
