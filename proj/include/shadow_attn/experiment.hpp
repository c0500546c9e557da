#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "shadow_attn/attention.hpp"
#include "shadow_attn/bucketing.hpp"
#include "shadow_attn/pipeline.hpp"
#include "shadow_attn/sparsity_alloc.hpp"

namespace shadow_attn {

struct ModelGeometry {
    std::string name = "Qwen2-0.5B";
    std::size_t q_heads = 14;
    std::size_t kv_heads = 2;
    std::size_t head_dim = 64;
    std::size_t layers = 24;

    friend bool operator==(const ModelGeometry&, const ModelGeometry&) = default;
};

/// PhoneLM-0.5B, PhoneLM-1.5B, Qwen2-0.5B, Qwen2-1.5B.
ModelGeometry model_preset(std::string_view name);
std::vector<std::string> model_preset_names();

enum class Baseline { full, sparse, block_sparse, npu_full, shadow };
enum class Activation { gaussian, heavy_tailed };

std::string_view to_string(Baseline b);
std::string_view to_string(Activation a);
std::string_view to_string(SelectionMode m);
std::string_view to_string(MseSpace m);
Baseline parse_baseline(std::string_view s);
Activation parse_activation(std::string_view s);
SelectionMode parse_selection_mode(std::string_view s);
MseSpace parse_mse_space(std::string_view s);

/// Per-head general-purpose processor costs for one attention chunk. The
/// defaults put estimation (dense Q.K + top-k) at two thirds of the
/// serialized sparse time at ratio 0.2.
struct CpuCostModel {
    double dense_qk_ms = 3.5;
    double topk_ms = 0.5;
    double dense_qkv_ms = 10.0;
};

struct ExperimentConfig {
    ModelGeometry model;
    std::size_t layer = 0;
    double global_ratio = kDefaultGlobalRatio;
    double clamp_threshold = kDefaultClampThreshold;
    double bucket_step = kDefaultBucketStep;
    std::size_t buckets_per_axis = kDefaultBucketsPerAxis;
    MseSpace mse_space = MseSpace::linear;
    std::uint64_t seed = 0;
    std::size_t q_len = 256;
    std::size_t kv_len = 256;
    bool causal = true;
    double rope_theta = 10000.0;
    Activation activation = Activation::gaussian;
    SelectionMode selection = SelectionMode::per_row;
    LaneModel lanes = LaneModel::three_clock;
    Baseline baseline = Baseline::shadow;
    std::size_t block_size = 64;
    std::size_t calibration_samples = 16;
    std::vector<std::pair<std::size_t, double>> npu_points = default_npu_curve().points();
    CpuCostModel cpu;

    std::optional<std::filesystem::path> budget_file;
    std::optional<std::filesystem::path> importance_file;
    std::optional<std::filesystem::path> grid_file;
    std::optional<std::filesystem::path> q_file;
    std::optional<std::filesystem::path> k_file;
    std::optional<std::filesystem::path> v_file;

    /// Query rows sit at the end of the key sequence (chunked prefill).
    std::size_t q_offset() const { return kv_len - q_len; }
    void validate() const;
};

ExperimentConfig parse_config(const std::string& text);
std::string format_config(const ExperimentConfig& config);
/// FNV-1a of the canonical config document, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

/// Seeded BHSD q/k/v before rotary embedding. Each head gets its own
/// log-normal magnitude so per-head scale factors fluctuate.
AttentionInputs synthetic_inputs(const ModelGeometry& model, std::size_t q_len, std::size_t kv_len,
                                 Activation activation, std::uint64_t seed, bool causal = true);

/// Offline stage: grid centred on the mean observed scales of seeded
/// calibration chunks, with graphs registered for every (bucket, fused size)
/// those chunks produce.
BucketGrid calibrate_grid(const ExperimentConfig& config);

/// Timing model for the shadow pipeline: launch curve from the config, topk
/// and ratio-scaled qkv per head.
CostProfile shadow_profile(const ExperimentConfig& config, std::span<const double> head_ratios);

struct BaselineMetrics {
    Baseline baseline = Baseline::full;
    double latency_ms = 0.0;
    ErrorMetrics error;
    std::optional<double> recall;
    double estimation_fraction = 0.0;
};

struct Report {
    std::string command;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string model;
    double global_ratio = 0.0;
    Baseline baseline = Baseline::shadow;

    double recall = 0.0;
    ErrorMetrics error;
    double makespan_greedy = 0.0;
    double makespan_serialized = 0.0;
    std::optional<double> makespan_bruteforce;
    double speedup = 0.0;  // serialized / greedy
    double bucket_hit_rate = 0.0;
    std::size_t fused_groups = 0;
    std::vector<std::size_t> head_buckets;
    std::vector<double> head_ratios;

    std::vector<BaselineMetrics> baselines;  // bench only
    Tensor output;                           // not serialized
};

/// RoPE, bucket-scaled quantization, integer estimation, per-head top-k and
/// sparse attention for one layer, next to the float full-attention oracle.
/// With baseline full/sparse/block_sparse/npu_full the reported output and
/// error are that baseline's.
Report run_experiment(const ExperimentConfig& config);

/// All five baselines on the same inputs: cost-model latency, output error
/// against float full attention and recall for the selection-based ones.
Report bench_experiment(const ExperimentConfig& config);

std::string format_report_json(const Report& report);
std::string format_report_csv(const Report& report);
std::string format_report_text(const Report& report);

/// Writes <dir>/<command>-<hash>.{json,csv,txt}; returns the json path.
std::filesystem::path write_report(const Report& report, const std::filesystem::path& dir);

}  // namespace shadow_attn
