#include "shadow_attn/attention.hpp"

#include <cmath>
#include <limits>

namespace shadow_attn {

void check_head_grouping(std::size_t q_heads, std::size_t kv_heads) {
    if (q_heads == 0 || kv_heads == 0 || kv_heads > q_heads || q_heads % kv_heads != 0)
        throw ValidationError("query heads (" + std::to_string(q_heads) + ") must be a positive multiple of kv heads (" +
                              std::to_string(kv_heads) + ")");
}

RowBudget RowBudget::ratio(double r) {
    if (!(r > 0.0 && r <= 1.0))
        throw ValidationError("budget ratio must be in (0, 1], got " + std::to_string(r));
    return RowBudget(0, r, true);
}

std::size_t RowBudget::for_row(std::size_t unmasked) const {
    if (!is_ratio_)
        return std::min(tokens_, unmasked);
    if (unmasked == 0)
        return 0;
    // Guard against ceil(0.2 * 5) == 2 from the representation error of 0.2.
    const double want = std::ceil(ratio_ * double(unmasked) - 1e-9);
    return std::clamp<std::size_t>(std::size_t(want), 1, unmasked);
}

std::size_t SparseSelection::total_selected() const {
    std::size_t n = 0;
    for (const auto& r : indices)
        n += r.size();
    return n;
}

void check_selection_geometry(const SparseSelection& sel, std::size_t batch, std::size_t heads, std::size_t rows,
                              std::size_t keys) {
    if (sel.batch != batch || sel.heads != heads || sel.rows != rows || sel.keys != keys ||
        sel.indices.size() != batch * heads * rows)
        throw ValidationError("selection geometry does not match the attention inputs");
}

namespace {

void check_score_pair(const Shape& q, const Shape& k) {
    if (q.size() != 4 || k.size() != 4)
        throw ValidationError("q and k must be rank 4 (BHSD)");
    if (q[0] != k[0])
        throw ValidationError("q and k batch sizes differ");
    check_head_grouping(q[1], k[1]);
    if (q[3] != k[3])
        throw ValidationError("q and k head dims differ");
}

SparseSelection empty_selection(std::size_t batch, std::size_t heads, std::size_t rows, std::size_t keys) {
    SparseSelection sel;
    sel.batch = batch;
    sel.heads = heads;
    sel.rows = rows;
    sel.keys = keys;
    sel.indices.resize(batch * heads * rows);
    sel.row_budget.resize(batch * heads * rows);
    return sel;
}

void select_head_aggregate(const ScoreMatrix& scores, std::size_t b, std::size_t h, RowBudget budget, bool causal,
                           std::size_t q_offset, SparseSelection& sel) {
    const auto& m = scores.head(b, h);
    const std::size_t keys = scores.keys();
    std::vector<double> colsum(keys, 0.0);
    for (std::size_t r = 0; r < scores.rows(); ++r) {
        const std::size_t limit = unmasked_count(r, keys, causal, q_offset);
        for (std::size_t j = 0; j < limit; ++j)
            colsum[j] += m(Eigen::Index(r), Eigen::Index(j));
    }
    // One ranking per head; every row then keeps its best visible keys.
    const auto order = rank_descending<double>(colsum);

    for (std::size_t r = 0; r < scores.rows(); ++r) {
        const std::size_t limit = unmasked_count(r, keys, causal, q_offset);
        const std::size_t k = budget.for_row(limit);
        auto& out = sel.indices[sel.slot(b, h, r)];
        for (std::uint32_t j : order) {
            if (out.size() == k)
                break;
            if (j < limit)
                out.push_back(j);
        }
        std::sort(out.begin(), out.end());
        sel.row_budget[sel.slot(b, h, r)] = k;
    }
}

}  // namespace

ScoreMatrix float_scores(const Tensor& q, const Tensor& k) {
    check_score_pair(q.dims(), k.dims());
    ScoreMatrix out;
    out.batch = q.batch();
    out.heads = q.heads();
    out.blocks.reserve(out.batch * out.heads);
    for (std::size_t b = 0; b < q.batch(); ++b)
        for (std::size_t h = 0; h < q.heads(); ++h)
            out.blocks.push_back(scaled_dot_scores(q.head(b, h), k.head(b, kv_head_for(h, q.heads(), k.heads()))));
    return out;
}

ScoreMatrix estimate_scores(const QuantizedTensor& q, const QuantizedTensor& k, std::size_t d_k) {
    check_score_pair(q.dims(), k.dims());
    if (!(q.scale > 0.0f) || !(k.scale > 0.0f))
        throw ValidationError("quantization scales must be positive");
    if (d_k == 0 || d_k != q.codes.head_dim())
        throw ValidationError("d_k must equal the head dim of q and k");

    using IntMatrix = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const double factor = double(q.scale) * double(k.scale) / std::sqrt(double(d_k));

    ScoreMatrix out;
    out.batch = q.codes.batch();
    out.heads = q.codes.heads();
    out.blocks.reserve(out.batch * out.heads);
    for (std::size_t b = 0; b < out.batch; ++b)
        for (std::size_t h = 0; h < out.heads; ++h) {
            const IntMatrix qi = q.codes.head(b, h).cast<std::int32_t>();
            const IntMatrix ki = k.codes.head(b, kv_head_for(h, q.codes.heads(), k.codes.heads())).cast<std::int32_t>();
            const IntMatrix acc = qi * ki.transpose();
            out.blocks.push_back((acc.cast<double>() * factor).cast<float>());
        }
    return out;
}

SparseSelection topk_select(const ScoreMatrix& scores, std::span<const RowBudget> head_budgets, bool causal,
                            std::size_t q_offset, SelectionMode mode) {
    if (head_budgets.size() != scores.heads)
        throw ValidationError("expected one budget per query head");
    auto sel = empty_selection(scores.batch, scores.heads, scores.rows(), scores.keys());
    for (std::size_t b = 0; b < scores.batch; ++b)
        for (std::size_t h = 0; h < scores.heads; ++h) {
            if (mode == SelectionMode::per_head) {
                select_head_aggregate(scores, b, h, head_budgets[h], causal, q_offset, sel);
                continue;
            }
            for (std::size_t r = 0; r < sel.rows; ++r) {
                const std::size_t limit = unmasked_count(r, sel.keys, causal, q_offset);
                const std::size_t k = head_budgets[h].for_row(limit);
                sel.indices[sel.slot(b, h, r)] = topk_row(scores.row(b, h, r), limit, k);
                sel.row_budget[sel.slot(b, h, r)] = k;
            }
        }
    return sel;
}

SparseSelection topk_select(const ScoreMatrix& scores, RowBudget budget, bool causal, std::size_t q_offset,
                            SelectionMode mode) {
    const std::vector<RowBudget> budgets(scores.heads, budget);
    return topk_select(scores, budgets, causal, q_offset, mode);
}

SparseSelection dense_selection(std::size_t batch, std::size_t heads, std::size_t rows, std::size_t keys,
                                bool causal, std::size_t q_offset) {
    auto sel = empty_selection(batch, heads, rows, keys);
    for (std::size_t s = 0; s < sel.indices.size(); ++s) {
        const std::size_t limit = unmasked_count(s % rows, keys, causal, q_offset);
        sel.indices[s].resize(limit);
        std::iota(sel.indices[s].begin(), sel.indices[s].end(), 0u);
        sel.row_budget[s] = limit;
    }
    return sel;
}

SparseSelection block_sparse_select(const Tensor& q, const Tensor& k, std::size_t block, RowBudget budget,
                                    bool causal, std::size_t q_offset) {
    check_score_pair(q.dims(), k.dims());
    if (block == 0)
        throw ValidationError("block size must be at least 1");

    using Matrix = Tensor::RowMatrix;
    const std::size_t rows = q.seq_len(), keys = k.seq_len(), d = q.head_dim();
    const std::size_t q_blocks = (rows + block - 1) / block, k_blocks = (keys + block - 1) / block;

    auto pool = [&](const Tensor::HeadView& x, std::size_t n_blocks) {
        Matrix pooled{Eigen::Index(n_blocks), Eigen::Index(d)};
        for (std::size_t i = 0; i < n_blocks; ++i) {
            const auto first = Eigen::Index(i * block);
            const auto len = std::min<Eigen::Index>(Eigen::Index(block), x.rows() - first);
            pooled.row(Eigen::Index(i)) = x.middleRows(first, len).colwise().sum() / float(len);
        }
        return pooled;
    };

    auto sel = empty_selection(q.batch(), q.heads(), rows, keys);
    std::vector<float> candidate_scores;
    for (std::size_t b = 0; b < q.batch(); ++b)
        for (std::size_t h = 0; h < q.heads(); ++h) {
            const Matrix pq = pool(q.head(b, h), q_blocks);
            const Matrix pk = pool(k.head(b, kv_head_for(h, q.heads(), k.heads())), k_blocks);
            const ScoreBlock block_scores = scaled_dot_scores(pq, pk);

            for (std::size_t r = 0; r < rows; ++r) {
                const std::size_t limit = unmasked_count(r, keys, causal, q_offset);
                const std::size_t want = budget.for_row(limit);
                const std::size_t visible_blocks = (limit + block - 1) / block;
                const auto row_scores = block_scores.row(Eigen::Index(r / block));

                candidate_scores.assign(row_scores.data(), row_scores.data() + visible_blocks);
                const auto ranked = rank_descending<float>(candidate_scores);

                std::vector<std::uint32_t> chosen;
                std::size_t covered = 0;
                for (std::uint32_t kb : ranked) {
                    if (covered >= want)
                        break;
                    chosen.push_back(kb);
                    covered += std::min((kb + 1) * block, limit) - kb * block;
                }
                std::sort(chosen.begin(), chosen.end());
                auto& out = sel.indices[sel.slot(b, h, r)];
                for (std::uint32_t kb : chosen)
                    for (std::size_t j = kb * block; j < std::min((kb + 1) * block, limit); ++j)
                        out.push_back(std::uint32_t(j));
                sel.row_budget[sel.slot(b, h, r)] = want;
            }
        }
    return sel;
}

double recall(const SparseSelection& predicted, const SparseSelection& truth) {
    if (predicted.batch != truth.batch || predicted.heads != truth.heads || predicted.rows != truth.rows ||
        predicted.keys != truth.keys || predicted.indices.size() != truth.indices.size())
        throw ValidationError("recall needs selections of the same geometry");

    double head_sum = 0.0;
    std::size_t head_count = 0;
    for (std::size_t b = 0; b < truth.batch; ++b)
        for (std::size_t h = 0; h < truth.heads; ++h) {
            double row_sum = 0.0;
            std::size_t row_count = 0;
            for (std::size_t r = 0; r < truth.rows; ++r) {
                const auto& t = truth.row(b, h, r);
                if (t.empty())
                    continue;
                const auto& p = predicted.row(b, h, r);
                std::size_t hits = 0;
                // Both lists are sorted ascending.
                for (auto i = p.begin(), j = t.begin(); i != p.end() && j != t.end();) {
                    if (*i < *j)
                        ++i;
                    else if (*j < *i)
                        ++j;
                    else {
                        ++hits;
                        ++i;
                        ++j;
                    }
                }
                row_sum += double(hits) / double(t.size());
                ++row_count;
            }
            if (row_count > 0) {
                head_sum += row_sum / double(row_count);
                ++head_count;
            }
        }
    return head_count > 0 ? head_sum / double(head_count) : 1.0;
}

ErrorMetrics output_error(const Tensor& a, const Tensor& b) {
    if (a.dims() != b.dims())
        throw ValidationError("output_error needs tensors of the same shape: " + shape_string(a.dims()) + " vs " +
                              shape_string(b.dims()));
    ErrorMetrics m;
    double diff_sq = 0.0, ref_sq = 0.0, abs_sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = double(a[i]) - double(b[i]);
        m.max_abs = std::max(m.max_abs, std::abs(d));
        abs_sum += std::abs(d);
        diff_sq += d * d;
        ref_sq += double(b[i]) * double(b[i]);
    }
    m.mean_abs = abs_sum / double(a.size());
    if (ref_sq > 0.0)
        m.relative_l2 = std::sqrt(diff_sq / ref_sq);
    else
        m.relative_l2 = diff_sq > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    return m;
}

Tensor npu_full_attention(const AttentionInputs& in, float lambda_q, float lambda_k) {
    in.validate();
    const auto qq = quantize(in.q, lambda_q);
    const auto qk = quantize(in.k, lambda_k);
    const auto qv = quantize(in.v);
    const ScoreMatrix scores = estimate_scores(qq, qk, in.q.head_dim());

    using IntMatrix = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const float p_scale = 1.0f / float(kInt8Max);
    const std::size_t rows = in.q.seq_len(), keys = in.k.seq_len(), dv = in.v.head_dim();
    auto out = Tensor::zeros({in.q.batch(), in.q.heads(), rows, dv});

    for (std::size_t b = 0; b < in.q.batch(); ++b)
        for (std::size_t h = 0; h < in.q.heads(); ++h) {
            const auto& s = scores.head(b, h);
            const IntMatrix v = qv.codes.head(b, in.kv_head(h)).cast<std::int32_t>();
            IntMatrix p = IntMatrix::Zero(Eigen::Index(rows), Eigen::Index(keys));
            for (std::size_t r = 0; r < rows; ++r) {
                const auto limit = Eigen::Index(unmasked_count(r, keys, in.causal, in.q_offset));
                const auto srow = s.row(Eigen::Index(r)).head(limit);
                const Eigen::ArrayXf e = (srow.array() - srow.maxCoeff()).exp().transpose();
                const Eigen::ArrayXf prob = e / e.sum();
                for (Eigen::Index j = 0; j < limit; ++j)
                    p(Eigen::Index(r), j) = std::int32_t(std::round(prob(j) / p_scale));
            }
            const IntMatrix acc = p * v;
            out.head(b, h) = acc.cast<float>() * (p_scale * qv.scale);
        }
    return out;
}

}  // namespace shadow_attn
