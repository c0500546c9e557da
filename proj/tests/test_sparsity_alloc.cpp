#include <numeric>
#include <random>

#include "doctest.h"
#include "shadow_attn/sparsity_alloc.hpp"

using namespace shadow_attn;

TEST_CASE("importance is the loss increase, floored at zero") {
    ImportanceTable t;
    t.baseline_loss = 2.0;
    t.heads_per_layer = 3;
    t.head_losses = {2.0, 102.0, 1.5};
    t.layer_losses = {2.25};
    CHECK(head_importance(t) == std::vector<double>{0.0, 100.0, 0.0});
    CHECK(layer_importance(t) == std::vector<double>{0.25});
    CHECK(importance_products(t) == std::vector<double>{0.0, 25.0, 0.0});
}

TEST_CASE("importance products follow the head's layer") {
    const auto t = synthetic_importance_table(3, 4, 5);
    const auto products = importance_products(t);
    REQUIRE(products.size() == 12);
    for (std::size_t i = 0; i < 12; ++i) {
        const double head = std::max(0.0, t.head_losses[i] - t.baseline_loss);
        const double layer = std::max(0.0, t.layer_losses[i / 4] - t.baseline_loss);
        CHECK(products[i] == head * layer);
    }
}

TEST_CASE("table validation") {
    ImportanceTable t;
    t.baseline_loss = 1.0;
    t.heads_per_layer = 2;
    t.layer_losses = {1.0, 2.0};
    t.head_losses = {1.0, 2.0, 3.0};
    CHECK_THROWS_AS(t.validate(), ValidationError);
    t.head_losses.push_back(NAN);
    CHECK_THROWS_AS(t.validate(), ValidationError);
    t.head_losses.back() = 4.0;
    CHECK_NOTHROW(t.validate());
    t.heads_per_layer = 0;
    CHECK_THROWS_AS(t.validate(), ValidationError);
}

TEST_CASE("uniform products give every head the global ratio") {
    const std::vector<double> p(4, 3e-4);
    const auto b = allocate_from_products(p, 0.2, 1e-3);
    for (double r : b.ratios)
        CHECK(r == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(b.capped_heads.empty());
}

TEST_CASE("worked allocation example") {
    const std::vector<double> p{1e-4, 2e-4, 5e-4, 2e-3};
    const auto b = allocate_from_products(p, kDefaultGlobalRatio, kDefaultClampThreshold);
    // Clamped sum 1.8e-3; ratio_i = 0.2 * 4 * clamped_i / 1.8e-3.
    const std::vector<double> want{0.0444, 0.0889, 0.2222, 0.4444};
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(std::abs(b.ratios[i] - want[i]) <= 1e-3);
    CHECK(b.ratios[3] == doctest::Approx(0.8 / 1.8));
}

TEST_CASE("defaults") {
    CHECK(kDefaultGlobalRatio == 0.2);
    CHECK(kDefaultClampThreshold == 1e-3);
}

TEST_CASE("pre-cap ratios average to the global ratio") {
    std::mt19937_64 rng(123);
    std::lognormal_distribution<double> dist(std::log(1e-4), 2.0);
    std::uniform_real_distribution<double> ratio(0.05, 0.9);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> p(1 + rng() % 64);
        for (auto& x : p)
            x = (rng() % 10 == 0) ? 0.0 : dist(rng);
        const double r = ratio(rng);
        const auto b = allocate_from_products(p, r, 1e-3);
        const double mean = std::accumulate(b.uncapped.begin(), b.uncapped.end(), 0.0) / double(p.size());
        CHECK(std::abs(mean - r) <= 1e-9);
        for (std::size_t i = 0; i < p.size(); ++i) {
            CHECK(b.ratios[i] > 0.0);
            CHECK(b.ratios[i] <= 1.0);
        }
    }
}

TEST_CASE("ratios above one are capped and reported") {
    const std::vector<double> p{1e-3, 1e-6, 1e-6, 1e-6};
    const auto b = allocate_from_products(p, 0.5, 1e-3);
    CHECK(b.uncapped[0] > 1.0);
    CHECK(b.ratios[0] == 1.0);
    CHECK(b.capped_heads == std::vector<std::size_t>{0});
    // No redistribution: the others keep their uncapped values.
    for (std::size_t i = 1; i < 4; ++i)
        CHECK(b.ratios[i] == b.uncapped[i]);
}

TEST_CASE("zero importance heads get the floor ratio") {
    const std::vector<double> p{0.0, 1e-4};
    const auto b = allocate_from_products(p, 0.2, 1e-3);
    CHECK(b.ratios[0] == kMinHeadRatio);
    CHECK(b.ratios[1] == doctest::Approx(0.4));
}

TEST_CASE("all-zero products fall back to the uniform ratio") {
    const std::vector<double> p(5, 0.0);
    const auto b = allocate_from_products(p, 0.3, 1e-3);
    for (double r : b.ratios)
        CHECK(r == 0.3);
}

TEST_CASE("allocation argument checks") {
    const std::vector<double> p{1.0};
    CHECK_THROWS_AS(allocate_from_products(p, 0.0, 1e-3), ValidationError);
    CHECK_THROWS_AS(allocate_from_products(p, 1.1, 1e-3), ValidationError);
    CHECK_THROWS_AS(allocate_from_products(p, 0.2, 0.0), ValidationError);
    CHECK_THROWS_AS(allocate_from_products(std::vector<double>{}, 0.2, 1e-3), ValidationError);
    CHECK_THROWS_AS(allocate_from_products(std::vector<double>{-1.0}, 0.2, 1e-3), ValidationError);
}

TEST_CASE("layer budgets slice one layer's heads") {
    const auto b = allocate_ratios(synthetic_importance_table(2, 3, 9), 0.2, 1e-3);
    const auto layer1 = b.layer_budgets(1, 3);
    REQUIRE(layer1.size() == 3);
    for (std::size_t h = 0; h < 3; ++h)
        CHECK(layer1[h].ratio_value() == b.ratios[3 + h]);
    CHECK_THROWS_AS(b.layer_budgets(2, 3), ValidationError);
}

TEST_CASE("synthetic tables are seeded and well formed") {
    const auto a = synthetic_importance_table(24, 14, 1), b = synthetic_importance_table(24, 14, 1);
    CHECK(a.head_losses == b.head_losses);
    CHECK(a.head_losses != synthetic_importance_table(24, 14, 2).head_losses);
    CHECK_NOTHROW(a.validate());
    CHECK(a.head_count() == 24 * 14);
}
