#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "shadow_attn/attention.hpp"

namespace shadow_attn {

inline constexpr double kDefaultGlobalRatio = 0.2;
inline constexpr double kDefaultClampThreshold = 1e-3;
/// Floor for heads whose importance product is zero, keeping ratios in (0, 1].
inline constexpr double kMinHeadRatio = 1e-6;

/// Offline loss measurements: the calibration loss, the loss with each head
/// zeroed, and the loss with each layer zeroed. Head i lives in layer
/// i / heads_per_layer.
struct ImportanceTable {
    double baseline_loss = 0.0;
    std::vector<double> head_losses;
    std::vector<double> layer_losses;
    std::size_t heads_per_layer = 1;

    std::size_t head_count() const noexcept { return head_losses.size(); }
    std::size_t layer_count() const noexcept { return layer_losses.size(); }
    void validate() const;
};

/// loss(head zeroed) - baseline, floored at 0.
std::vector<double> head_importance(const ImportanceTable& table);
/// loss(layer zeroed) - baseline, floored at 0.
std::vector<double> layer_importance(const ImportanceTable& table);
/// headImp_i * layerImp_(i / heads_per_layer).
std::vector<double> importance_products(const ImportanceTable& table);

struct HeadBudget {
    double global_ratio = kDefaultGlobalRatio;
    double clamp_threshold = kDefaultClampThreshold;
    std::vector<double> uncapped;  // r * N * v_i / sum(v); mean is exactly r
    std::vector<double> ratios;    // uncapped, capped at 1 and floored at kMinHeadRatio
    std::vector<std::size_t> capped_heads;

    /// Budgets for the query heads of one layer.
    std::vector<RowBudget> layer_budgets(std::size_t layer, std::size_t heads_per_layer) const;
};

/// Head-specific sparsity ratios from clamped importance products. Products
/// above clamp_threshold are clamped before normalisation; ratios above 1 are
/// capped without redistribution and reported in capped_heads. An all-zero
/// product vector falls back to the uniform ratio r.
HeadBudget allocate_ratios(const ImportanceTable& table, double global_ratio, double clamp_threshold);
HeadBudget allocate_from_products(std::span<const double> products, double global_ratio, double clamp_threshold);

/// Seeded table with log-normal head and layer loss deltas, a few of them
/// negative, for tests and the experiment driver.
ImportanceTable synthetic_importance_table(std::size_t layers, std::size_t heads_per_layer, std::uint64_t seed);

}  // namespace shadow_attn
