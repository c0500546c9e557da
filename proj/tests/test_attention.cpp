#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "doctest.h"
#include "shadow_attn/attention.hpp"

using namespace shadow_attn;

namespace {

Tensor gaussian(Shape dims, std::uint64_t seed, float std_dev = 1.0f) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> dist(0.0f, std_dev);
    std::vector<float> data(element_count(dims));
    for (auto& x : data)
        x = dist(rng);
    return Tensor(std::move(dims), std::move(data));
}

AttentionInputs seeded_inputs(std::size_t hq, std::size_t hkv, std::size_t rows, std::size_t keys, std::size_t d,
                              std::uint64_t seed, bool causal = true) {
    return {gaussian({1, hq, rows, d}, seed), gaussian({1, hkv, keys, d}, seed + 1000),
            gaussian({1, hkv, keys, d}, seed + 2000), causal, keys - rows};
}

float at(const Tensor& t, std::size_t b, std::size_t h, std::size_t s, std::size_t d) {
    return t[((b * t.heads() + h) * t.seq_len() + s) * t.head_dim() + d];
}

std::size_t visible(std::size_t r, std::size_t keys, bool causal, std::size_t offset) {
    return causal ? std::min(keys, offset + r + 1) : keys;
}

// Softmax-weighted sum over `support`, every loop written out in double.
std::vector<double> naive_row(const AttentionInputs& in, std::size_t b, std::size_t h, std::size_t r,
                              const std::vector<std::size_t>& support) {
    const std::size_t d = in.q.head_dim(), kvh = h / (in.q.heads() / in.k.heads());
    std::vector<double> s;
    for (std::size_t j : support) {
        double dot = 0.0;
        for (std::size_t i = 0; i < d; ++i)
            dot += double(at(in.q, b, h, r, i)) * double(at(in.k, b, kvh, j, i));
        s.push_back(dot / std::sqrt(double(d)));
    }
    const double m = *std::max_element(s.begin(), s.end());
    double z = 0.0;
    for (auto& x : s)
        z += (x = std::exp(x - m));
    std::vector<double> o(in.v.head_dim(), 0.0);
    for (std::size_t n = 0; n < support.size(); ++n)
        for (std::size_t i = 0; i < o.size(); ++i)
            o[i] += s[n] / z * double(at(in.v, b, kvh, support[n], i));
    return o;
}

double max_diff_to_naive(const AttentionInputs& in, const Tensor& out, const SparseSelection* sel) {
    double worst = 0.0;
    for (std::size_t h = 0; h < in.q.heads(); ++h)
        for (std::size_t r = 0; r < in.q.seq_len(); ++r) {
            std::vector<std::size_t> support;
            if (sel) {
                for (auto j : sel->row(0, h, r))
                    support.push_back(j);
            } else {
                for (std::size_t j = 0; j < visible(r, in.k.seq_len(), in.causal, in.q_offset); ++j)
                    support.push_back(j);
            }
            const auto o = naive_row(in, 0, h, r, support);
            for (std::size_t i = 0; i < o.size(); ++i)
                worst = std::max(worst, std::abs(o[i] - double(at(out, 0, h, r, i))));
        }
    return worst;
}

SparseSelection single_row_selection(std::vector<std::uint32_t> idx, std::size_t keys) {
    SparseSelection s;
    s.batch = s.heads = s.rows = 1;
    s.keys = keys;
    s.row_budget = {idx.size()};
    s.indices = {std::move(idx)};
    return s;
}

}  // namespace

// --- rope -------------------------------------------------------------------

TEST_CASE("rope at position 0 is the identity") {
    const Tensor t = gaussian({1, 2, 1, 8}, 3);
    CHECK(apply_rope(t, 0, 10000.0) == t);
}

TEST_CASE("rope quarter turn maps (1, 0) to (0, 1)") {
    // Pair i = 1 of d = 4 turns by pos * base^(-1/2); base (2/pi)^2 makes that pi/2 at pos 1.
    const double base = std::pow(2.0 / std::numbers::pi, 2.0);
    const Tensor t({1, 1, 1, 4}, {0.0f, 0.0f, 1.0f, 0.0f});
    const Tensor r = apply_rope(t, 1, base);
    CHECK(std::abs(r[2]) <= 1e-6);
    CHECK(std::abs(r[3] - 1.0f) <= 1e-6);
}

TEST_CASE("rope preserves each pair's norm") {
    const Tensor t = gaussian({2, 3, 16, 8}, 11);
    const Tensor r = apply_rope(t, 37, 10000.0);
    for (std::size_t i = 0; i < t.size(); i += 2) {
        const double before = std::hypot(double(t[i]), double(t[i + 1]));
        const double after = std::hypot(double(r[i]), double(r[i + 1]));
        CHECK(std::abs(before - after) <= 1e-5);
    }
}

TEST_CASE("rope makes scores depend on relative position only") {
    const Tensor q = gaussian({1, 1, 1, 8}, 1), k = gaussian({1, 1, 1, 8}, 2);
    auto dot_at = [&](std::size_t pq, std::size_t pk) {
        return double(scaled_dot_scores(apply_rope(q, pq, 10000.0).head(0, 0), apply_rope(k, pk, 10000.0).head(0, 0))(0, 0));
    };
    CHECK(dot_at(5, 2) == doctest::Approx(dot_at(13, 10)).epsilon(1e-5));
}

TEST_CASE("rope rejects odd head dims") {
    CHECK_THROWS_AS(apply_rope(Tensor::zeros({1, 1, 1, 3}), 0, 10000.0), ValidationError);
}

// --- full attention ---------------------------------------------------------

TEST_CASE("identical keys give the uniform average of v") {
    Tensor k({1, 1, 4, 2}, {1, 2, 1, 2, 1, 2, 1, 2});
    Tensor v({1, 1, 4, 2}, {1, 0, 2, 0, 3, 0, 6, 4});
    const AttentionInputs in{Tensor({1, 1, 1, 2}, {0.3f, -0.7f}), k, v, false, 0};
    const Tensor o = full_attention(in);
    CHECK(o[0] == doctest::Approx(3.0));
    CHECK(o[1] == doctest::Approx(1.0));
}

TEST_CASE("causal row 0 at offset 0 returns v row 0 exactly") {
    const auto in = seeded_inputs(1, 1, 4, 4, 4, 5);
    const Tensor o = full_attention(in);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(o[i] == at(in.v, 0, 0, 0, i));
}

TEST_CASE("full attention matches a naive triple loop") {
    for (bool causal : {true, false}) {
        const auto in = seeded_inputs(2, 2, 8, 8, 4, 21, causal);
        CHECK(max_diff_to_naive(in, full_attention(in), nullptr) <= 1e-5);
    }
    SUBCASE("grouped query heads and a chunk offset") {
        const auto in = seeded_inputs(4, 2, 5, 12, 8, 22);
        CHECK(in.q_offset == 7);
        CHECK(max_diff_to_naive(in, full_attention(in), nullptr) <= 1e-5);
    }
}

TEST_CASE("attention input validation") {
    auto in = seeded_inputs(3, 2, 4, 4, 4, 1);
    CHECK_THROWS_AS(in.validate(), ValidationError);
    in = seeded_inputs(2, 2, 4, 4, 4, 1);
    in.v = gaussian({1, 2, 5, 4}, 9);
    CHECK_THROWS_AS(full_attention(in), ValidationError);
    in = seeded_inputs(2, 2, 4, 4, 4, 1);
    in.q_offset = 1;
    CHECK_THROWS_AS(full_attention(in), ValidationError);
}

// --- estimation -------------------------------------------------------------

TEST_CASE("unit dot product at d 64 estimates to 1/8") {
    std::vector<std::int8_t> row(64, 0);
    row[0] = 1;
    const QuantizedTensor q(Int8Tensor({1, 1, 1, 64}, row), 1.0f);
    const auto s = estimate_scores(q, q, 64);
    CHECK(s.head(0, 0)(0, 0) == 0.125f);
}

TEST_CASE("all-zero q estimates to zero") {
    const QuantizedTensor q(Int8Tensor::zeros({1, 1, 3, 8}), 0.5f);
    const auto k = quantize(gaussian({1, 1, 5, 8}, 3));
    const auto s = estimate_scores(q, k, 8);
    CHECK(s.head(0, 0).isZero(0.0f));
}

TEST_CASE("estimation equals float scores of the dequantized tensors") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto q = quantize(gaussian({1, 4, 16, 64}, seed));
        const auto k = quantize(gaussian({1, 2, 24, 64}, seed + 50));
        const auto est = estimate_scores(q, k, 64);
        const auto ref = float_scores(dequantize(q), dequantize(k));
        for (std::size_t h = 0; h < 4; ++h)
            CHECK((est.head(0, h) - ref.head(0, h)).cwiseAbs().maxCoeff() <= 1e-5f);
    }
}

TEST_CASE("estimation argument checks") {
    const auto q = quantize(gaussian({1, 1, 2, 8}, 1));
    CHECK_THROWS_AS(estimate_scores(q, q, 16), ValidationError);
    CHECK_THROWS_AS(estimate_scores(q, quantize(gaussian({1, 1, 2, 4}, 1)), 8), ValidationError);
}

// --- top-k ------------------------------------------------------------------

TEST_CASE("top-k examples") {
    const std::vector<float> row{0.4f, 0.3f, 0.2f, 0.1f};
    CHECK(topk_row<float>(row, 4, 2) == std::vector<std::uint32_t>{0, 1});

    const std::vector<float> quantized{0.5f, 0.4f, 0.08f, 0.02f};
    CHECK(topk_row<float>(quantized, 4, 2) == topk_row<float>(row, 4, 2));

    // Row at absolute position 2 of 5 keys sees keys 0..2; k = 10 clamps to 3.
    const std::vector<float> scores{0.1f, 0.9f, 0.5f, 3.0f, 4.0f};
    CHECK(topk_row<float>(scores, unmasked_count(2, 5, true, 0), 10) == std::vector<std::uint32_t>{0, 1, 2});
}

TEST_CASE("top-k ties go to the lower index") {
    const std::vector<float> row{1.0f, 2.0f, 2.0f, 2.0f, 0.0f};
    CHECK(topk_row<float>(row, 5, 2) == std::vector<std::uint32_t>{1, 2});
}

TEST_CASE("top-k matches a full sort on random rows") {
    std::mt19937_64 rng(9);
    std::uniform_int_distribution<int> small(-3, 3);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 1 + std::size_t(rng() % 40);
        std::vector<float> row(n);
        for (auto& x : row)
            x = float(small(rng));  // many ties
        const std::size_t limit = std::size_t(rng() % (n + 1)), k = std::size_t(rng() % (n + 2));
        std::vector<std::uint32_t> order(std::min(limit, n));
        std::iota(order.begin(), order.end(), 0u);
        std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return row[a] > row[b]; });
        order.resize(std::min(k, order.size()));
        std::sort(order.begin(), order.end());
        CHECK(topk_row<float>(row, limit, k) == order);
    }
}

TEST_CASE("row budgets") {
    CHECK(RowBudget::ratio(0.2).for_row(256) == 52);
    CHECK(RowBudget::ratio(0.2).for_row(5) == 1);
    CHECK(RowBudget::ratio(0.2).for_row(10) == 2);
    CHECK(RowBudget::ratio(1e-6).for_row(100) == 1);
    CHECK(RowBudget::ratio(1.0).for_row(7) == 7);
    CHECK(RowBudget::tokens(3).for_row(2) == 2);
    CHECK(RowBudget::tokens(3).for_row(0) == 0);
    CHECK_THROWS_AS(RowBudget::ratio(0.0), ValidationError);
    CHECK_THROWS_AS(RowBudget::ratio(1.5), ValidationError);
}

TEST_CASE("topk_select keeps only visible keys and respects the budget") {
    const auto in = seeded_inputs(2, 1, 16, 20, 8, 4);
    const auto sel = topk_select(float_scores(in.q, in.k), RowBudget::ratio(0.3), true, in.q_offset);
    for (std::size_t h = 0; h < 2; ++h)
        for (std::size_t r = 0; r < 16; ++r) {
            const auto& idx = sel.row(0, h, r);
            const std::size_t lim = visible(r, 20, true, in.q_offset);
            CHECK(idx.size() == RowBudget::ratio(0.3).for_row(lim));
            CHECK(std::is_sorted(idx.begin(), idx.end()));
            CHECK(std::adjacent_find(idx.begin(), idx.end()) == idx.end());
            for (auto j : idx)
                CHECK(j < lim);
        }
}

TEST_CASE("per-head mode shares one ranking across rows") {
    const auto in = seeded_inputs(1, 1, 6, 6, 4, 8, false);
    const auto scores = float_scores(in.q, in.k);
    const auto sel = topk_select(scores, RowBudget::tokens(2), false, 0, SelectionMode::per_head);
    std::vector<double> colsum(6, 0.0);
    for (std::size_t r = 0; r < 6; ++r)
        for (std::size_t j = 0; j < 6; ++j)
            colsum[j] += scores.head(0, 0)(Eigen::Index(r), Eigen::Index(j));
    std::vector<std::uint32_t> best{0, 1, 2, 3, 4, 5};
    std::stable_sort(best.begin(), best.end(), [&](auto a, auto b) { return colsum[a] > colsum[b]; });
    best.resize(2);
    std::sort(best.begin(), best.end());
    for (std::size_t r = 0; r < 6; ++r)
        CHECK(sel.row(0, 0, r) == best);
}

TEST_CASE("per-head mode under a causal mask only keeps visible keys") {
    const auto in = seeded_inputs(1, 1, 8, 8, 4, 12);
    const auto sel = topk_select(float_scores(in.q, in.k), RowBudget::ratio(0.5), true, 0, SelectionMode::per_head);
    for (std::size_t r = 0; r < 8; ++r) {
        CHECK(sel.row(0, 0, r).size() == RowBudget::ratio(0.5).for_row(r + 1));
        for (auto j : sel.row(0, 0, r))
            CHECK(j <= r);
    }
}

TEST_CASE("per-head budgets need one budget per head") {
    const auto in = seeded_inputs(2, 1, 4, 4, 4, 1);
    const std::vector<RowBudget> one{RowBudget::ratio(0.5)};
    CHECK_THROWS_AS(topk_select(float_scores(in.q, in.k), one, true, 0), ValidationError);
}

// --- sparse attention -------------------------------------------------------

TEST_CASE("dense selection reproduces full attention") {
    const auto in = seeded_inputs(4, 2, 12, 16, 8, 31);
    const auto sel = dense_selection(1, 4, 12, 16, true, in.q_offset);
    const auto diff = output_error(sparse_qkv(in, sel), full_attention(in));
    CHECK(diff.max_abs <= 1e-5);
}

TEST_CASE("a single selected key returns that v row exactly") {
    const auto in = seeded_inputs(1, 1, 1, 6, 4, 2, false);
    const Tensor o = sparse_qkv(in, single_row_selection({4}, 6));
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(o[i] == at(in.v, 0, 0, 4, i));
}

TEST_CASE("sparse attention matches a softmax-over-support oracle") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto in = seeded_inputs(2, 2, 8, 8, 4, 40 + seed);
        const auto sel = topk_select(float_scores(in.q, in.k), RowBudget::ratio(0.5), true, 0);
        CHECK(max_diff_to_naive(in, sparse_qkv(in, sel), &sel) <= 1e-5);
    }
}

TEST_CASE("sparse attention rejects masked or out-of-range keys") {
    const auto in = seeded_inputs(1, 1, 1, 4, 4, 2);
    CHECK_THROWS_AS(sparse_qkv(in, single_row_selection({4}, 4)), ValidationError);
    auto causal = seeded_inputs(1, 1, 2, 2, 4, 2);
    SparseSelection s = dense_selection(1, 1, 2, 2, true, 0);
    s.indices[0] = {1};
    CHECK_THROWS_AS(sparse_qkv(causal, s), ValidationError);
}

TEST_CASE("empty selection rows produce zeros") {
    const auto in = seeded_inputs(1, 1, 1, 4, 4, 2, false);
    const Tensor o = sparse_qkv(in, single_row_selection({}, 4));
    for (float x : o.values())
        CHECK(x == 0.0f);
}

// --- block sparse -----------------------------------------------------------

TEST_CASE("block size 1 equals token top-k on float scores") {
    const auto in = seeded_inputs(2, 1, 10, 10, 8, 17);
    for (bool causal : {true, false}) {
        const auto a = block_sparse_select(in.q, in.k, 1, RowBudget::ratio(0.3), causal, 0);
        const auto b = topk_select(float_scores(in.q, in.k), RowBudget::ratio(0.3), causal, 0);
        CHECK(a.indices == b.indices);
    }
}

TEST_CASE("budget of one block takes the best block whole") {
    // Pooled scores: block 0 -> 2/sqrt(4) = 1, block 1 -> 0.
    const Tensor q({1, 1, 1, 4}, {2, 0, 0, 0});
    const Tensor k({1, 1, 4, 4}, {1, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0});
    const auto sel = block_sparse_select(q, k, 2, RowBudget::tokens(2), false, 0);
    CHECK(sel.row(0, 0, 0) == std::vector<std::uint32_t>{0, 1});
}

TEST_CASE("block selection matches a naive pool-then-rank oracle") {
    const std::size_t block = 4, rows = 10, keys = 14, d = 8;
    const auto in = seeded_inputs(2, 1, rows, keys, d, 77);
    const RowBudget budget = RowBudget::ratio(0.4);
    const auto sel = block_sparse_select(in.q, in.k, block, budget, true, in.q_offset);

    auto pooled = [&](const Tensor& t, std::size_t h, std::size_t blk) {
        const std::size_t first = blk * block, last = std::min(first + block, t.seq_len());
        std::vector<double> m(d, 0.0);
        for (std::size_t s = first; s < last; ++s)
            for (std::size_t i = 0; i < d; ++i)
                m[i] += at(t, 0, h, s, i);
        for (auto& x : m)
            x /= double(last - first);
        return m;
    };
    for (std::size_t h = 0; h < 2; ++h)
        for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t lim = visible(r, keys, true, in.q_offset);
            const auto pq = pooled(in.q, h, r / block);
            std::vector<std::pair<double, std::size_t>> ranked;
            for (std::size_t kb = 0; kb * block < lim; ++kb) {
                const auto pk = pooled(in.k, 0, kb);
                double dot = 0.0;
                for (std::size_t i = 0; i < d; ++i)
                    dot += pq[i] * pk[i];
                ranked.push_back({-float(dot / std::sqrt(double(d))), kb});
            }
            std::sort(ranked.begin(), ranked.end());
            std::set<std::uint32_t> want;
            for (const auto& [_, kb] : ranked) {
                if (want.size() >= budget.for_row(lim))
                    break;
                for (std::size_t j = kb * block; j < std::min(lim, (kb + 1) * block); ++j)
                    want.insert(std::uint32_t(j));
            }
            const auto& got = sel.row(0, h, r);
            CHECK(std::vector<std::uint32_t>(want.begin(), want.end()) == got);
        }
}

TEST_CASE("block size 0 is rejected") {
    const auto in = seeded_inputs(1, 1, 2, 2, 4, 1);
    CHECK_THROWS_AS(block_sparse_select(in.q, in.k, 0, RowBudget::tokens(1), true, 0), ValidationError);
}

// --- metrics ----------------------------------------------------------------

TEST_CASE("recall examples") {
    const auto a = single_row_selection({0, 1, 2}, 4);
    CHECK(recall(a, a) == 1.0);
    CHECK(recall(a, single_row_selection({0, 1, 3}, 4)) == doctest::Approx(2.0 / 3.0));
    CHECK(recall(single_row_selection({2}, 4), single_row_selection({0, 1}, 4)) == 0.0);
}

TEST_CASE("recall averages rows then heads and skips empty truth rows") {
    SparseSelection truth = dense_selection(1, 2, 2, 4, false, 0);
    truth.indices = {{0, 1}, {}, {0, 1, 2, 3}, {0}};
    SparseSelection pred = truth;
    pred.indices = {{0}, {3}, {0, 1}, {0}};
    // head 0: (0.5) ; head 1: (0.5 + 1) / 2
    CHECK(recall(pred, truth) == doctest::Approx((0.5 + 0.75) / 2));
    CHECK_THROWS_AS(recall(pred, dense_selection(1, 1, 2, 4, false, 0)), ValidationError);
}

TEST_CASE("output error examples") {
    const Tensor a({2}, {0.0f, 0.0f}), b({2}, {1.0f, 1.0f});
    auto e = output_error(a, a);
    CHECK(e.max_abs == 0.0);
    CHECK(e.mean_abs == 0.0);
    CHECK(e.relative_l2 == 0.0);
    e = output_error(b, a);
    CHECK(e.max_abs == 1.0);
    CHECK(e.mean_abs == 1.0);

    const Tensor x({3}, {1.0f, -2.0f, 0.5f}), y({3}, {1.5f, -2.0f, 0.0f});
    e = output_error(x, y);
    CHECK(e.max_abs == doctest::Approx(0.5));
    CHECK(e.mean_abs == doctest::Approx(1.0 / 3.0));
    CHECK(e.relative_l2 == doctest::Approx(std::sqrt(0.5 / 6.25)));
    CHECK_THROWS_AS(output_error(a, x), ValidationError);
}

TEST_CASE("integer-only full attention stays close on mild inputs") {
    const auto in = seeded_inputs(2, 1, 16, 16, 8, 90);
    const float lq = max_abs_scale(in.q), lk = max_abs_scale(in.k);
    const auto e = output_error(npu_full_attention(in, lq, lk), full_attention(in));
    CHECK(e.relative_l2 > 0.0);
    CHECK(e.relative_l2 < 0.2);
}
