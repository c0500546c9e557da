#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "shadow_attn/bucketing.hpp"

using namespace shadow_attn;

namespace {

// Scan every bucket; strict < keeps the lowest index on ties.
std::size_t scan(const BucketGrid& grid, ScalePair obs, bool log_space) {
    auto f = [&](double x) { return log_space ? std::log(x) : x; };
    std::size_t best = 0;
    double best_err = INFINITY;
    for (std::size_t i = 0; i < grid.buckets.size(); ++i) {
        const double dq = f(obs.lambda_q) - f(grid.buckets[i].lambda_q);
        const double dk = f(obs.lambda_k) - f(grid.buckets[i].lambda_k);
        const double err = (dq * dq + dk * dk) / 2.0;
        if (err < best_err) {
            best_err = err;
            best = i;
        }
    }
    return best;
}

}  // namespace

TEST_CASE("grid around (0.1, 0.2) at step 0.5") {
    const auto g = build_grid({0.1, 0.2}, 0.5, 3);
    REQUIRE(g.size() == 9);
    const double q[] = {0.05, 0.1, 0.2}, k[] = {0.1, 0.2, 0.4};
    for (std::size_t iq = 0; iq < 3; ++iq)
        for (std::size_t ik = 0; ik < 3; ++ik) {
            CHECK(g.buckets[iq * 3 + ik].lambda_q == doctest::Approx(q[iq]).epsilon(1e-12));
            CHECK(g.buckets[iq * 3 + ik].lambda_k == doctest::Approx(k[ik]).epsilon(1e-12));
        }
    CHECK(g.exponents() == std::vector<int>{1, 0, -1});
}

TEST_CASE("defaults give nine buckets at step 0.5") {
    const auto g = build_grid({1.0, 1.0});
    CHECK(g.size() == 9);
    CHECK(g.step == 0.5);
    CHECK(kDefaultBucketStep == 0.5);
    CHECK(kDefaultBucketsPerAxis * kDefaultBucketsPerAxis == 9);
}

TEST_CASE("one bucket per axis is the center") {
    const auto g = build_grid({0.3, 0.7}, 0.5, 1);
    REQUIRE(g.size() == 1);
    CHECK(g.buckets[0] == ScalePair{0.3, 0.7});
}

TEST_CASE("grid argument checks") {
    CHECK_THROWS_AS(build_grid({0.1, 0.2}, 0.5, 2), ValidationError);
    CHECK_THROWS_AS(build_grid({0.1, 0.2}, 0.5, 0), ValidationError);
    CHECK_THROWS_AS(build_grid({0.1, 0.2}, 1.0, 3), ValidationError);
    CHECK_THROWS_AS(build_grid({0.1, 0.2}, 0.0, 3), ValidationError);
    CHECK_THROWS_AS(build_grid({0.0, 0.2}, 0.5, 3), ValidationError);
}

TEST_CASE("selection examples") {
    const auto g = build_grid({0.1, 0.2}, 0.5, 3);
    for (std::size_t i = 0; i < g.size(); ++i)
        CHECK(select_bucket(g, g.buckets[i]) == i);
    CHECK(select_bucket(g, {0.09, 0.21}) == 4);

    // (0.75, 1) sits exactly between buckets (0.5, 1) and (1, 1).
    const auto unit = build_grid({1.0, 1.0}, 0.5, 3);
    CHECK(select_bucket(unit, {0.75, 1.0}) == 1);
}

TEST_CASE("selection equals an exhaustive scan") {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> lg(-6.0, 1.0);
    for (int trial = 0; trial < 2000; ++trial) {
        const auto g = build_grid({std::exp(lg(rng)), std::exp(lg(rng))}, 0.25 + 0.5 * double(rng() % 2),
                                  1 + 2 * (rng() % 3));
        const ScalePair obs{g.center.lambda_q * std::exp(lg(rng) / 2), g.center.lambda_k * std::exp(lg(rng) / 2)};
        CHECK(select_bucket(g, obs, MseSpace::linear) == scan(g, obs, false));
        CHECK(select_bucket(g, obs, MseSpace::log) == scan(g, obs, true));
    }
}

TEST_CASE("observed scales are per-tensor max based") {
    const Tensor q({1, 1, 2, 2}, {0.5f, -2.54f, 1.0f, 0.0f});
    const Tensor k({1, 1, 1, 2}, {0.127f, 0.0f});
    const auto s = observed_scales(q, k);
    CHECK(s.lambda_q == doctest::Approx(0.02).epsilon(1e-6));
    CHECK(s.lambda_k == doctest::Approx(0.001).epsilon(1e-6));
    const std::vector<ScalePair> seen{{0.1, 0.3}, {0.3, 0.5}};
    CHECK(mean_scales(seen) == ScalePair{0.2, 0.4});
    CHECK_THROWS_AS(mean_scales(std::vector<ScalePair>{}), ValidationError);
}

TEST_CASE("graph cache counts hits and misses") {
    GraphCache cache;
    const ShapeKey a{1, 128, 2048, 64}, b{2, 128, 2048, 64};
    const GraphId first = cache.lookup(3, a);
    CHECK(cache.misses() == 1);
    CHECK(cache.lookup(3, a) == first);
    CHECK(cache.hits() == 1);
    CHECK(cache.lookup(3, b) != first);
    CHECK(cache.lookup(4, a) != first);
    CHECK(cache.hit_rate() == doctest::Approx(0.25));
    CHECK(GraphCache{}.hit_rate() == 0.0);
}

TEST_CASE("nine buckets by two shapes hold eighteen graphs") {
    auto g = build_grid({0.1, 0.2});
    std::set<GraphId> ids;
    for (int pass = 0; pass < 2; ++pass)
        for (std::size_t bucket = 0; bucket < g.size(); ++bucket)
            for (std::size_t fused : {1, 2})
                ids.insert(lookup_graph(g, bucket, {fused, 256, 256, 64}));
    CHECK(ids.size() == 18);
    CHECK(g.graphs.size() == 18);
    CHECK(g.graphs.hits() == 18);
    CHECK_THROWS_AS(lookup_graph(g, 9, {1, 256, 256, 64}), ValidationError);
}

TEST_CASE("quantizing with the selected scale bounds the error") {
    std::mt19937_64 rng(5);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    std::vector<float> data(512);
    for (auto& x : data)
        x = dist(rng);
    const Tensor t({1, 1, 8, 64}, data);
    const auto g = build_grid({max_abs_scale(t), max_abs_scale(t)}, 0.5, 3);
    for (const auto& bucket : g.buckets) {
        const float s = float(bucket.lambda_q);
        const Tensor back = dequantize(quantize(t, s));
        const bool clips = max_abs_scale(t) > s;
        for (std::size_t i = 0; i < t.size(); ++i) {
            const float clip = std::max(0.0f, std::abs(t[i]) - 127.0f * s);
            CHECK(std::abs(back[i] - t[i]) <= s / 2 * (1 + 1e-5f) + clip);
            if (!clips)
                CHECK(clip == 0.0f);
        }
    }
}
