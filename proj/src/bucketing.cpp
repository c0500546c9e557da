#include "shadow_attn/bucketing.hpp"

#include <cmath>
#include <limits>

namespace shadow_attn {

void ScalePair::validate() const {
    if (!(lambda_q > 0.0) || !(lambda_k > 0.0) || !std::isfinite(lambda_q) || !std::isfinite(lambda_k))
        throw ValidationError("scale pair components must be positive and finite");
}

ScalePair observed_scales(const Tensor& q_head, const Tensor& k_head) {
    return {max_abs_scale(q_head), max_abs_scale(k_head)};
}

ScalePair mean_scales(std::span<const ScalePair> observed) {
    if (observed.empty())
        throw ValidationError("need at least one observed scale pair");
    ScalePair mean{0.0, 0.0};
    for (const auto& s : observed) {
        s.validate();
        mean.lambda_q += s.lambda_q;
        mean.lambda_k += s.lambda_k;
    }
    mean.lambda_q /= double(observed.size());
    mean.lambda_k /= double(observed.size());
    return mean;
}

GraphId GraphCache::lookup(std::size_t bucket, const ShapeKey& shape) {
    auto [it, inserted] = graphs_.try_emplace({bucket, shape}, next_id_);
    if (inserted) {
        ++next_id_;
        ++misses_;
    } else {
        ++hits_;
    }
    return it->second;
}

double GraphCache::hit_rate() const noexcept {
    const std::size_t total = hits_ + misses_;
    return total ? double(hits_) / double(total) : 0.0;
}

std::vector<int> BucketGrid::exponents() const {
    const int half = int(per_axis / 2);
    std::vector<int> out;
    for (int m = half; m >= -half; --m)
        out.push_back(m);
    return out;
}

BucketGrid build_grid(ScalePair center, double step, std::size_t per_axis) {
    center.validate();
    if (!(step > 0.0 && step < 1.0))
        throw ValidationError("bucket step must be in (0, 1), got " + std::to_string(step));
    if (per_axis == 0 || per_axis % 2 == 0)
        throw ValidationError("buckets per axis must be odd and positive, got " + std::to_string(per_axis));

    BucketGrid grid;
    grid.center = center;
    grid.step = step;
    grid.per_axis = per_axis;
    const auto exps = grid.exponents();
    grid.buckets.reserve(per_axis * per_axis);
    for (int mq : exps)
        for (int mk : exps)
            grid.buckets.push_back({center.lambda_q * std::pow(step, mq), center.lambda_k * std::pow(step, mk)});
    return grid;
}

std::size_t select_bucket(const BucketGrid& grid, const ScalePair& observed, MseSpace space) {
    if (grid.buckets.empty())
        throw ValidationError("bucket grid is empty");
    if (space == MseSpace::log)
        observed.validate();

    auto coord = [space](double x) { return space == MseSpace::log ? std::log(x) : x; };
    std::size_t best = 0;
    double best_mse = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < grid.buckets.size(); ++i) {
        const double dq = coord(observed.lambda_q) - coord(grid.buckets[i].lambda_q);
        const double dk = coord(observed.lambda_k) - coord(grid.buckets[i].lambda_k);
        const double mse = (dq * dq + dk * dk) / 2.0;
        if (mse < best_mse) {
            best_mse = mse;
            best = i;
        }
    }
    return best;
}

GraphId lookup_graph(BucketGrid& grid, std::size_t bucket, const ShapeKey& shape) {
    if (bucket >= grid.buckets.size())
        throw ValidationError("bucket index " + std::to_string(bucket) + " out of range");
    return grid.graphs.lookup(bucket, shape);
}

}  // namespace shadow_attn
