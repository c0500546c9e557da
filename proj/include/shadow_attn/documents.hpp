#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "shadow_attn/bucketing.hpp"
#include "shadow_attn/pipeline.hpp"
#include "shadow_attn/sparsity_alloc.hpp"

// JSON documents exchanged by the command-line tool. Every document carries
// "version": 1 and unknown keys are rejected. Schemas live in docs/formats.md.

namespace shadow_attn {

inline constexpr int kDocumentVersion = 1;

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

ImportanceTable parse_importance_table(const std::string& text);
std::string format_importance_table(const ImportanceTable& table);

HeadBudget parse_head_budget(const std::string& text);
std::string format_head_budget(const HeadBudget& budget);

/// Materialised bucket list is checked against the one rebuilt from center,
/// step and per_axis. The graph cache is not persisted.
BucketGrid parse_bucket_grid(const std::string& text);
std::string format_bucket_grid(const BucketGrid& grid);

/// Observed (lambda_q, lambda_k) pairs from calibration runs.
std::vector<ScalePair> parse_scale_stats(const std::string& text);
std::string format_scale_stats(const std::vector<ScalePair>& scales);

struct ProfileDocument {
    CostProfile profile;
    std::optional<std::vector<std::size_t>> head_buckets;
};

ProfileDocument parse_cost_profile(const std::string& text);
std::string format_cost_profile(const CostProfile& profile,
                                const std::optional<std::vector<std::size_t>>& head_buckets = std::nullopt);

/// processor,kind,id,start,finish
std::string format_events_csv(const std::vector<Event>& events);
std::string format_schedule(const Schedule& schedule);

}  // namespace shadow_attn
