#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "shadow_attn/tensor.hpp"

namespace shadow_attn {

inline constexpr double kDefaultBucketStep = 0.5;
inline constexpr std::size_t kDefaultBucketsPerAxis = 3;

/// (lambda_Q, lambda_K): the constants baked into one static Q.K graph.
struct ScalePair {
    double lambda_q = 1.0;
    double lambda_k = 1.0;

    void validate() const;
    friend bool operator==(const ScalePair&, const ScalePair&) = default;
};

/// Per-tensor max-based scales of a (q, k) head pair.
ScalePair observed_scales(const Tensor& q_head, const Tensor& k_head);

/// Component-wise mean, used as the grid center.
ScalePair mean_scales(std::span<const ScalePair> observed);

/// Identifies one graph shape inside a bucket: how many heads are fused into
/// the launch and the per-head Q.K geometry.
struct ShapeKey {
    std::size_t fused_heads = 1;
    std::size_t q_rows = 0;
    std::size_t k_rows = 0;
    std::size_t head_dim = 0;

    auto operator<=>(const ShapeKey&) const = default;
};

using GraphId = std::uint64_t;

/// (bucket, shape) -> graph id. A miss registers a new id, standing in for a
/// graph compiled offline. Not thread-safe; one owner mutates it.
class GraphCache {
public:
    GraphId lookup(std::size_t bucket, const ShapeKey& shape);

    std::size_t size() const noexcept { return graphs_.size(); }
    std::size_t hits() const noexcept { return hits_; }
    std::size_t misses() const noexcept { return misses_; }
    double hit_rate() const noexcept;

private:
    std::map<std::pair<std::size_t, ShapeKey>, GraphId> graphs_;
    GraphId next_id_ = 1;
    std::size_t hits_ = 0;
    std::size_t misses_ = 0;
};

/// per_axis x per_axis grid of scale pairs around `center`. Along each axis the
/// scale is center * step^m for m = +(per_axis-1)/2 ... -(per_axis-1)/2, so
/// scales ascend with the index. Bucket index = iq * per_axis + ik.
struct BucketGrid {
    ScalePair center;
    double step = kDefaultBucketStep;
    std::size_t per_axis = kDefaultBucketsPerAxis;
    std::vector<ScalePair> buckets;
    GraphCache graphs;

    std::size_t size() const noexcept { return buckets.size(); }
    /// Exponents m used along each axis, in index order.
    std::vector<int> exponents() const;
};

enum class MseSpace { linear, log };

BucketGrid build_grid(ScalePair center, double step = kDefaultBucketStep,
                      std::size_t per_axis = kDefaultBucketsPerAxis);

/// Bucket with the smallest mean squared distance to `observed`; ties go to
/// the lower index. MseSpace::log measures distance between log scales.
std::size_t select_bucket(const BucketGrid& grid, const ScalePair& observed, MseSpace space = MseSpace::linear);

GraphId lookup_graph(BucketGrid& grid, std::size_t bucket, const ShapeKey& shape);

}  // namespace shadow_attn
