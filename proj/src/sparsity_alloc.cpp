#include "shadow_attn/sparsity_alloc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace shadow_attn {

void ImportanceTable::validate() const {
    if (heads_per_layer == 0)
        throw ValidationError("heads_per_layer must be positive");
    if (layer_losses.empty())
        throw ValidationError("importance table needs at least one layer");
    if (head_losses.size() != layer_losses.size() * heads_per_layer)
        throw ValidationError("head count " + std::to_string(head_losses.size()) + " != layers " +
                              std::to_string(layer_losses.size()) + " x heads_per_layer " +
                              std::to_string(heads_per_layer));
    auto finite = [](double x) { return std::isfinite(x); };
    if (!std::isfinite(baseline_loss) || !std::ranges::all_of(head_losses, finite) ||
        !std::ranges::all_of(layer_losses, finite))
        throw ValidationError("importance table contains a non-finite loss");
}

namespace {

std::vector<double> loss_deltas(std::span<const double> losses, double baseline) {
    std::vector<double> out(losses.size());
    std::ranges::transform(losses, out.begin(), [baseline](double l) { return std::max(0.0, l - baseline); });
    return out;
}

}  // namespace

std::vector<double> head_importance(const ImportanceTable& table) {
    table.validate();
    return loss_deltas(table.head_losses, table.baseline_loss);
}

std::vector<double> layer_importance(const ImportanceTable& table) {
    table.validate();
    return loss_deltas(table.layer_losses, table.baseline_loss);
}

std::vector<double> importance_products(const ImportanceTable& table) {
    const auto heads = head_importance(table);
    const auto layers = layer_importance(table);
    std::vector<double> out(heads.size());
    for (std::size_t i = 0; i < heads.size(); ++i)
        out[i] = heads[i] * layers[i / table.heads_per_layer];
    return out;
}

HeadBudget allocate_from_products(std::span<const double> products, double global_ratio, double clamp_threshold) {
    if (!(global_ratio > 0.0 && global_ratio <= 1.0))
        throw ValidationError("global ratio must be in (0, 1], got " + std::to_string(global_ratio));
    if (!(clamp_threshold > 0.0) || !std::isfinite(clamp_threshold))
        throw ValidationError("clamp threshold must be positive");
    if (products.empty())
        throw ValidationError("no heads to allocate");
    for (double p : products)
        if (!std::isfinite(p) || p < 0.0)
            throw ValidationError("importance products must be finite and non-negative");

    HeadBudget budget;
    budget.global_ratio = global_ratio;
    budget.clamp_threshold = clamp_threshold;

    const std::size_t n = products.size();
    std::vector<double> clamped(n);
    std::ranges::transform(products, clamped.begin(), [&](double p) { return std::min(p, clamp_threshold); });
    const double total = std::accumulate(clamped.begin(), clamped.end(), 0.0);

    budget.uncapped.resize(n);
    if (total > 0.0) {
        for (std::size_t i = 0; i < n; ++i)
            budget.uncapped[i] = global_ratio * double(n) * clamped[i] / total;
    } else {
        std::ranges::fill(budget.uncapped, global_ratio);
    }

    budget.ratios.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (budget.uncapped[i] > 1.0)
            budget.capped_heads.push_back(i);
        budget.ratios[i] = std::clamp(budget.uncapped[i], kMinHeadRatio, 1.0);
    }
    return budget;
}

HeadBudget allocate_ratios(const ImportanceTable& table, double global_ratio, double clamp_threshold) {
    const auto products = importance_products(table);
    return allocate_from_products(products, global_ratio, clamp_threshold);
}

std::vector<RowBudget> HeadBudget::layer_budgets(std::size_t layer, std::size_t heads_per_layer) const {
    if ((layer + 1) * heads_per_layer > ratios.size())
        throw ValidationError("head budget has no entries for layer " + std::to_string(layer));
    std::vector<RowBudget> out;
    out.reserve(heads_per_layer);
    for (std::size_t h = 0; h < heads_per_layer; ++h)
        out.push_back(RowBudget::ratio(ratios[layer * heads_per_layer + h]));
    return out;
}

ImportanceTable synthetic_importance_table(std::size_t layers, std::size_t heads_per_layer, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::lognormal_distribution<double> head_delta(std::log(0.02), 1.0);
    std::lognormal_distribution<double> layer_delta(std::log(0.05), 1.0);
    std::bernoulli_distribution harmful(0.05);

    ImportanceTable t;
    t.baseline_loss = 2.5;
    t.heads_per_layer = heads_per_layer;
    for (std::size_t l = 0; l < layers; ++l)
        t.layer_losses.push_back(t.baseline_loss + layer_delta(rng));
    for (std::size_t i = 0; i < layers * heads_per_layer; ++i) {
        const double d = head_delta(rng);
        t.head_losses.push_back(t.baseline_loss + (harmful(rng) ? -d : d));
    }
    return t;
}

}  // namespace shadow_attn
