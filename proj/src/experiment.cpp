#include "shadow_attn/experiment.hpp"

#include <cmath>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "json_util.hpp"
#include "shadow_attn/documents.hpp"
#include "shadow_attn/tensor_io.hpp"

namespace shadow_attn {

using detail::check_object;
using detail::json;
using detail::malformed;
using detail::optional_or;
using detail::required;

// ---------------------------------------------------------------------------
// Names
// ---------------------------------------------------------------------------

namespace {

const std::vector<ModelGeometry>& presets() {
    static const std::vector<ModelGeometry> table = {
        {"PhoneLM-0.5B", 16, 16, 64, 24},
        {"PhoneLM-1.5B", 16, 16, 160, 19},
        {"Qwen2-0.5B", 14, 2, 64, 24},
        {"Qwen2-1.5B", 12, 2, 128, 28},
    };
    return table;
}

template <typename Enum, std::size_t N>
Enum parse_named(std::string_view s, const std::pair<std::string_view, Enum> (&names)[N], const char* what) {
    for (const auto& [name, value] : names)
        if (name == s)
            return value;
    throw ValidationError(std::string("unknown ") + what + " '" + std::string(s) + "'");
}

template <typename Enum, std::size_t N>
std::string_view name_of(Enum e, const std::pair<std::string_view, Enum> (&names)[N]) {
    for (const auto& [name, value] : names)
        if (value == e)
            return name;
    return "?";
}

constexpr std::pair<std::string_view, Baseline> kBaselines[] = {
    {"full", Baseline::full},         {"sparse", Baseline::sparse},   {"block_sparse", Baseline::block_sparse},
    {"npu_full", Baseline::npu_full}, {"shadow", Baseline::shadow},
};
constexpr std::pair<std::string_view, Activation> kActivations[] = {
    {"gaussian", Activation::gaussian},
    {"heavy_tailed", Activation::heavy_tailed},
};
constexpr std::pair<std::string_view, SelectionMode> kSelections[] = {
    {"row", SelectionMode::per_row},
    {"head", SelectionMode::per_head},
};
constexpr std::pair<std::string_view, MseSpace> kMseSpaces[] = {
    {"linear", MseSpace::linear},
    {"log", MseSpace::log},
};

}  // namespace

ModelGeometry model_preset(std::string_view name) {
    for (const auto& m : presets())
        if (m.name == name)
            return m;
    throw ValidationError("unknown model preset '" + std::string(name) + "'");
}

std::vector<std::string> model_preset_names() {
    std::vector<std::string> out;
    for (const auto& m : presets())
        out.push_back(m.name);
    return out;
}

std::string_view to_string(Baseline b) { return name_of(b, kBaselines); }
std::string_view to_string(Activation a) { return name_of(a, kActivations); }
std::string_view to_string(SelectionMode m) { return name_of(m, kSelections); }
std::string_view to_string(MseSpace m) { return name_of(m, kMseSpaces); }
Baseline parse_baseline(std::string_view s) { return parse_named(s, kBaselines, "baseline"); }
Activation parse_activation(std::string_view s) { return parse_named(s, kActivations, "activation"); }
SelectionMode parse_selection_mode(std::string_view s) { return parse_named(s, kSelections, "selection mode"); }
MseSpace parse_mse_space(std::string_view s) { return parse_named(s, kMseSpaces, "mse space"); }

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
    if (model.q_heads == 0 || model.head_dim == 0 || model.layers == 0)
        throw ValidationError("model geometry must be positive");
    check_head_grouping(model.q_heads, model.kv_heads);
    if (model.head_dim % 2 != 0)
        throw ValidationError("head dim must be even for rotary embedding");
    if (layer >= model.layers)
        throw ValidationError("layer " + std::to_string(layer) + " outside the model");
    if (!(global_ratio > 0.0 && global_ratio <= 1.0))
        throw ValidationError("global ratio must be in (0, 1]");
    if (!(clamp_threshold > 0.0))
        throw ValidationError("clamp threshold must be positive");
    if (!(bucket_step > 0.0 && bucket_step < 1.0))
        throw ValidationError("bucket step must be in (0, 1)");
    if (buckets_per_axis == 0 || buckets_per_axis % 2 == 0)
        throw ValidationError("buckets per axis must be odd");
    if (q_len == 0 || kv_len == 0 || q_len > kv_len)
        throw ValidationError("need 0 < q_len <= kv_len");
    if (!(rope_theta > 0.0))
        throw ValidationError("rope theta must be positive");
    if (block_size == 0)
        throw ValidationError("block size must be positive");
    if (calibration_samples == 0)
        throw ValidationError("need at least one calibration sample");
    if (lanes == LaneModel::serialized)
        throw ValidationError("lane model must be three-clock or single");
    NpuCurve check(npu_points);
    if (!(cpu.dense_qk_ms > 0.0) || !(cpu.topk_ms > 0.0) || !(cpu.dense_qkv_ms > 0.0))
        throw ValidationError("cpu costs must be positive");
    if (bool(q_file) != bool(k_file) || bool(k_file) != bool(v_file))
        throw ValidationError("q, k and v files must be given together");
}

ExperimentConfig parse_config(const std::string& text) {
    constexpr const char* what = "config";
    const json j = detail::parse_json(text, what);
    check_object(j, {"version", "model", "layer", "global_ratio", "clamp_threshold", "buckets", "seed", "q_len",
                     "kv_len", "causal", "rope_theta", "activation", "selection", "lane", "baseline", "block_size",
                     "calibration_samples", "cost", "inputs"},
                 what);
    detail::check_version(j, what);

    ExperimentConfig c;
    try {
        if (j.contains("model")) {
            const json& m = j["model"];
            if (m.is_string()) {
                c.model = model_preset(m.get<std::string>());
            } else {
                check_object(m, {"name", "q_heads", "kv_heads", "head_dim", "layers"}, "config.model");
                c.model.name = optional_or<std::string>(m, "name", "custom", what);
                c.model.q_heads = required<std::size_t>(m, "q_heads", what);
                c.model.kv_heads = required<std::size_t>(m, "kv_heads", what);
                c.model.head_dim = required<std::size_t>(m, "head_dim", what);
                c.model.layers = required<std::size_t>(m, "layers", what);
            }
        }
        c.layer = optional_or(j, "layer", c.layer, what);
        c.global_ratio = optional_or(j, "global_ratio", c.global_ratio, what);
        c.clamp_threshold = optional_or(j, "clamp_threshold", c.clamp_threshold, what);
        if (j.contains("buckets")) {
            const json& b = j["buckets"];
            check_object(b, {"step", "per_axis", "mse"}, "config.buckets");
            c.bucket_step = optional_or(b, "step", c.bucket_step, what);
            c.buckets_per_axis = optional_or(b, "per_axis", c.buckets_per_axis, what);
            if (b.contains("mse"))
                c.mse_space = parse_mse_space(required<std::string>(b, "mse", what));
        }
        c.seed = optional_or(j, "seed", c.seed, what);
        c.q_len = optional_or(j, "q_len", c.q_len, what);
        c.kv_len = optional_or(j, "kv_len", c.kv_len, what);
        c.causal = optional_or(j, "causal", c.causal, what);
        c.rope_theta = optional_or(j, "rope_theta", c.rope_theta, what);
        if (j.contains("activation"))
            c.activation = parse_activation(required<std::string>(j, "activation", what));
        if (j.contains("selection"))
            c.selection = parse_selection_mode(required<std::string>(j, "selection", what));
        if (j.contains("lane"))
            c.lanes = parse_lane_model(required<std::string>(j, "lane", what));
        if (j.contains("baseline"))
            c.baseline = parse_baseline(required<std::string>(j, "baseline", what));
        c.block_size = optional_or(j, "block_size", c.block_size, what);
        c.calibration_samples = optional_or(j, "calibration_samples", c.calibration_samples, what);
        if (j.contains("cost")) {
            const json& cost = j["cost"];
            check_object(cost, {"npu_points", "dense_qk_ms", "topk_ms", "dense_qkv_ms"}, "config.cost");
            c.npu_points = optional_or(cost, "npu_points", c.npu_points, what);
            c.cpu.dense_qk_ms = optional_or(cost, "dense_qk_ms", c.cpu.dense_qk_ms, what);
            c.cpu.topk_ms = optional_or(cost, "topk_ms", c.cpu.topk_ms, what);
            c.cpu.dense_qkv_ms = optional_or(cost, "dense_qkv_ms", c.cpu.dense_qkv_ms, what);
        }
        if (j.contains("inputs")) {
            const json& in = j["inputs"];
            check_object(in, {"budget", "importance", "grid", "q", "k", "v"}, "config.inputs");
            auto path = [&](const char* key, std::optional<std::filesystem::path>& dst) {
                if (in.contains(key))
                    dst = required<std::string>(in, key, what);
            };
            path("budget", c.budget_file);
            path("importance", c.importance_file);
            path("grid", c.grid_file);
            path("q", c.q_file);
            path("k", c.k_file);
            path("v", c.v_file);
        }
        c.validate();
    } catch (const ValidationError& e) {
        throw malformed(std::string("config: ") + e.what());
    }
    return c;
}

std::string format_config(const ExperimentConfig& c) {
    json j;
    j["version"] = kDocumentVersion;
    j["model"] = {{"name", c.model.name},
                  {"q_heads", c.model.q_heads},
                  {"kv_heads", c.model.kv_heads},
                  {"head_dim", c.model.head_dim},
                  {"layers", c.model.layers}};
    j["layer"] = c.layer;
    j["global_ratio"] = c.global_ratio;
    j["clamp_threshold"] = c.clamp_threshold;
    j["buckets"] = {{"step", c.bucket_step}, {"per_axis", c.buckets_per_axis}, {"mse", to_string(c.mse_space)}};
    j["seed"] = c.seed;
    j["q_len"] = c.q_len;
    j["kv_len"] = c.kv_len;
    j["causal"] = c.causal;
    j["rope_theta"] = c.rope_theta;
    j["activation"] = to_string(c.activation);
    j["selection"] = to_string(c.selection);
    j["lane"] = to_string(c.lanes);
    j["baseline"] = to_string(c.baseline);
    j["block_size"] = c.block_size;
    j["calibration_samples"] = c.calibration_samples;
    j["cost"] = {{"npu_points", c.npu_points},
                 {"dense_qk_ms", c.cpu.dense_qk_ms},
                 {"topk_ms", c.cpu.topk_ms},
                 {"dense_qkv_ms", c.cpu.dense_qkv_ms}};
    json inputs = json::object();
    auto path = [&](const char* key, const std::optional<std::filesystem::path>& p) {
        if (p)
            inputs[key] = p->string();
    };
    path("budget", c.budget_file);
    path("importance", c.importance_file);
    path("grid", c.grid_file);
    path("q", c.q_file);
    path("k", c.k_file);
    path("v", c.v_file);
    if (!inputs.empty())
        j["inputs"] = inputs;
    return j.dump(2) + "\n";
}

std::string config_hash(const ExperimentConfig& config) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : format_config(config)) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

// ---------------------------------------------------------------------------
// Workloads
// ---------------------------------------------------------------------------

AttentionInputs synthetic_inputs(const ModelGeometry& model, std::size_t q_len, std::size_t kv_len,
                                 Activation activation, std::uint64_t seed, bool causal) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    std::lognormal_distribution<float> head_scale(0.0f, 0.35f);
    std::bernoulli_distribution outlier(0.02);
    constexpr float kOutlierGain = 8.0f;
    // Query and key spreads put raw logits at a standard deviation near 3, so attention is
    // concentrated on a minority of keys as in trained models.
    constexpr float kQueryStd = 2.0f, kKeyStd = 1.5f;

    auto fill = [&](std::size_t heads, std::size_t seq, float std_dev, bool per_head_scale) {
        std::vector<float> data;
        data.reserve(heads * seq * model.head_dim);
        for (std::size_t h = 0; h < heads; ++h) {
            const float gain = std_dev * (per_head_scale ? head_scale(rng) : 1.0f);
            for (std::size_t i = 0; i < seq * model.head_dim; ++i) {
                float x = normal(rng) * gain;
                if (activation == Activation::heavy_tailed && outlier(rng))
                    x *= kOutlierGain;
                data.push_back(x);
            }
        }
        return Tensor({1, heads, seq, model.head_dim}, std::move(data));
    };

    AttentionInputs in;
    in.q = fill(model.q_heads, q_len, kQueryStd, true);
    in.k = fill(model.kv_heads, kv_len, kKeyStd, true);
    in.v = fill(model.kv_heads, kv_len, 1.0f, false);
    in.causal = causal;
    in.q_offset = kv_len - q_len;
    return in;
}

namespace {

constexpr std::uint64_t kCalibrationSeedBase = 0x5eed'ca11'b7a7'0000ULL;

AttentionInputs with_rope(const AttentionInputs& raw, double theta) {
    return {apply_rope(raw.q, raw.q_offset, theta), apply_rope(raw.k, 0, theta), raw.v, raw.causal, raw.q_offset};
}

std::vector<ScalePair> head_scales(const AttentionInputs& in) {
    std::vector<ScalePair> out;
    for (std::size_t h = 0; h < in.q.heads(); ++h)
        out.push_back(observed_scales(in.q.head_slice(0, h), in.k.head_slice(0, in.kv_head(h))));
    return out;
}

std::vector<std::size_t> assign_buckets(const BucketGrid& grid, std::span<const ScalePair> scales, MseSpace space) {
    std::vector<std::size_t> out;
    for (const auto& s : scales)
        out.push_back(select_bucket(grid, s, space));
    return out;
}

AttentionInputs calibration_chunk(const ExperimentConfig& config, std::size_t i) {
    return with_rope(synthetic_inputs(config.model, config.q_len, config.kv_len, config.activation,
                                      kCalibrationSeedBase + i, config.causal),
                     config.rope_theta);
}

void register_calibration_graphs(BucketGrid& grid, const ExperimentConfig& config) {
    for (std::size_t i = 0; i < config.calibration_samples; ++i) {
        const auto scales = head_scales(calibration_chunk(config, i));
        for (const auto& g : form_groups(assign_buckets(grid, scales, config.mse_space)))
            lookup_graph(grid, g.bucket, {g.heads.size(), config.q_len, config.kv_len, config.model.head_dim});
    }
}

AttentionInputs load_inputs(const ExperimentConfig& config) {
    if (!config.q_file)
        return synthetic_inputs(config.model, config.q_len, config.kv_len, config.activation, config.seed,
                                config.causal);
    AttentionInputs in{read_tensor(*config.q_file), read_tensor(*config.k_file), read_tensor(*config.v_file),
                       config.causal, config.q_offset()};
    in.validate();
    const Shape want_q{1, config.model.q_heads, config.q_len, config.model.head_dim};
    const Shape want_kv{1, config.model.kv_heads, config.kv_len, config.model.head_dim};
    if (in.q.dims() != want_q || in.k.dims() != want_kv || in.v.dims() != want_kv)
        throw ValidationError("input tensors " + shape_string(in.q.dims()) + "/" + shape_string(in.k.dims()) +
                              " do not match the configured geometry " + shape_string(want_q) + "/" +
                              shape_string(want_kv));
    return in;
}

std::vector<double> load_head_ratios(const ExperimentConfig& config) {
    const std::size_t hq = config.model.q_heads;
    std::optional<HeadBudget> budget;
    if (config.budget_file)
        budget = parse_head_budget(read_text_file(*config.budget_file));
    else if (config.importance_file)
        budget = allocate_ratios(parse_importance_table(read_text_file(*config.importance_file)),
                                 config.global_ratio, config.clamp_threshold);
    if (!budget)
        return std::vector<double>(hq, config.global_ratio);
    if (budget->ratios.size() != hq * config.model.layers)
        throw ValidationError("head budget covers " + std::to_string(budget->ratios.size()) + " heads, model has " +
                              std::to_string(hq * config.model.layers));
    const auto first = budget->ratios.begin() + std::ptrdiff_t(config.layer * hq);
    return {first, first + std::ptrdiff_t(hq)};
}

std::vector<RowBudget> ratio_budgets(std::span<const double> ratios) {
    std::vector<RowBudget> out;
    for (double r : ratios)
        out.push_back(RowBudget::ratio(r));
    return out;
}

// Everything both commands need from one layer's worth of inputs.
struct Workload {
    AttentionInputs in;
    Tensor oracle;
    std::vector<double> ratios;
    std::vector<RowBudget> head_budgets;
    std::vector<RowBudget> uniform_budgets;
    BucketGrid grid;
    std::vector<std::size_t> head_buckets;
    std::vector<FusedGroup> groups;
    double hit_rate = 0.0;
    SparseSelection shadow_selection;
    SparseSelection truth_head;     // float top-k with head-specific budgets
    SparseSelection truth_uniform;  // float top-k with the global ratio
    CostProfile profile;
    Schedule greedy;
    SimulationResult greedy_sim;
};

Workload prepare(const ExperimentConfig& config) {
    config.validate();
    Workload w;
    w.in = with_rope(load_inputs(config), config.rope_theta);
    w.oracle = full_attention(w.in);
    w.ratios = load_head_ratios(config);
    w.head_budgets = ratio_budgets(w.ratios);
    w.uniform_budgets.assign(config.model.q_heads, RowBudget::ratio(config.global_ratio));

    if (config.grid_file) {
        w.grid = parse_bucket_grid(read_text_file(*config.grid_file));
        register_calibration_graphs(w.grid, config);
    } else {
        w.grid = calibrate_grid(config);
    }

    const std::size_t hq = config.model.q_heads, d = config.model.head_dim;
    w.head_buckets = assign_buckets(w.grid, head_scales(w.in), config.mse_space);
    w.groups = form_groups(w.head_buckets);
    const std::size_t hits_before = w.grid.graphs.hits(), misses_before = w.grid.graphs.misses();
    for (const auto& g : w.groups)
        lookup_graph(w.grid, g.bucket, {g.heads.size(), config.q_len, config.kv_len, d});
    const double hits = double(w.grid.graphs.hits() - hits_before);
    w.hit_rate = hits / (hits + double(w.grid.graphs.misses() - misses_before));

    ScoreMatrix estimated;
    estimated.batch = 1;
    estimated.heads = hq;
    for (std::size_t h = 0; h < hq; ++h) {
        const ScalePair& bucket = w.grid.buckets[w.head_buckets[h]];
        const auto q = quantize(w.in.q.head_slice(0, h), float(bucket.lambda_q));
        const auto k = quantize(w.in.k.head_slice(0, w.in.kv_head(h)), float(bucket.lambda_k));
        estimated.blocks.push_back(std::move(estimate_scores(q, k, d).blocks.front()));
    }
    w.shadow_selection = topk_select(estimated, w.head_budgets, config.causal, config.q_offset(), config.selection);

    const ScoreMatrix exact = float_scores(w.in.q, w.in.k);
    w.truth_head = topk_select(exact, w.head_budgets, config.causal, config.q_offset(), config.selection);
    w.truth_uniform = topk_select(exact, w.uniform_budgets, config.causal, config.q_offset(), config.selection);

    w.profile = shadow_profile(config, w.ratios);
    w.greedy = plan_greedy(w.groups, w.profile, config.lanes);
    w.greedy_sim = simulate(w.greedy, w.profile);
    return w;
}

Tensor npu_full_output(const Workload& w) {
    const std::size_t hq = w.in.q.heads();
    auto out = Tensor::zeros({1, hq, w.in.q.seq_len(), w.in.v.head_dim()});
    for (std::size_t h = 0; h < hq; ++h) {
        const ScalePair& bucket = w.grid.buckets[w.head_buckets[h]];
        const Tensor o = npu_full_attention(head_inputs(w.in, 0, h), float(bucket.lambda_q), float(bucket.lambda_k));
        out.head(0, h) = o.head(0, 0);
    }
    return out;
}

void fill_common(Report& r, const ExperimentConfig& config, const Workload& w, const char* command) {
    r.command = command;
    r.config_hash = config_hash(config);
    r.seed = config.seed;
    r.model = config.model.name;
    r.global_ratio = config.global_ratio;
    r.baseline = config.baseline;
    r.makespan_greedy = w.greedy.makespan;
    r.makespan_serialized = serialized_time(w.groups, w.profile);
    if (order_count(w.groups) <= kDefaultPermutationLimit)
        r.makespan_bruteforce = plan_bruteforce(w.groups, w.profile, config.lanes).makespan;
    r.speedup = r.makespan_serialized / r.makespan_greedy;
    r.bucket_hit_rate = w.hit_rate;
    r.fused_groups = w.groups.size();
    r.head_buckets = w.head_buckets;
    r.head_ratios = w.ratios;
}

// General-purpose-only baselines: every head runs estimation, topk and qkv
// back to back on one core.
SimulationResult serialized_cpu(std::span<const HeadCost> heads, double estimation_ms) {
    CostProfile p;
    p.npu = NpuCurve({{1, estimation_ms}});
    p.heads.assign(heads.begin(), heads.end());
    std::vector<std::size_t> singletons(heads.size());
    std::iota(singletons.begin(), singletons.end(), 0);
    const auto groups = form_groups(singletons);
    return simulate(plan_sequential(groups, p), p);
}

}  // namespace

BucketGrid calibrate_grid(const ExperimentConfig& config) {
    config.validate();
    std::vector<ScalePair> observed;
    for (std::size_t i = 0; i < config.calibration_samples; ++i) {
        const auto s = head_scales(calibration_chunk(config, i));
        observed.insert(observed.end(), s.begin(), s.end());
    }
    BucketGrid grid = build_grid(mean_scales(observed), config.bucket_step, config.buckets_per_axis);
    register_calibration_graphs(grid, config);
    return grid;
}

CostProfile shadow_profile(const ExperimentConfig& config, std::span<const double> head_ratios) {
    CostProfile p;
    p.npu = NpuCurve(config.npu_points);
    for (double r : head_ratios)
        p.heads.push_back({config.cpu.topk_ms, r * config.cpu.dense_qkv_ms});
    return p;
}

Report run_experiment(const ExperimentConfig& config) {
    const Workload w = prepare(config);
    Report r;
    fill_common(r, config, w, "run");

    switch (config.baseline) {
    case Baseline::full:
        r.output = full_attention(w.in);
        r.recall = 1.0;
        break;
    case Baseline::sparse:
        r.output = sparse_qkv(w.in, w.truth_uniform);
        r.recall = 1.0;
        break;
    case Baseline::block_sparse: {
        const auto sel = block_sparse_select(w.in.q, w.in.k, config.block_size, RowBudget::ratio(config.global_ratio),
                                             config.causal, config.q_offset());
        r.output = sparse_qkv(w.in, sel);
        r.recall = recall(sel, w.truth_uniform);
        break;
    }
    case Baseline::npu_full:
        r.output = npu_full_output(w);
        r.recall = 1.0;
        break;
    case Baseline::shadow:
        r.output = sparse_qkv(w.in, w.shadow_selection);
        r.recall = recall(w.shadow_selection, w.truth_head);
        break;
    }
    r.error = output_error(r.output, w.oracle);
    return r;
}

Report bench_experiment(const ExperimentConfig& config) {
    const Workload w = prepare(config);
    Report r;
    fill_common(r, config, w, "bench");
    const CpuCostModel& cpu = config.cpu;
    const std::size_t hq = config.model.q_heads;

    BaselineMetrics full{Baseline::full, double(hq) * cpu.dense_qkv_ms, output_error(full_attention(w.in), w.oracle),
                         std::nullopt, 0.0};

    std::vector<HeadCost> sparse_heads(hq, HeadCost{cpu.topk_ms, config.global_ratio * cpu.dense_qkv_ms});
    const auto sparse_sim = serialized_cpu(sparse_heads, cpu.dense_qk_ms);
    BaselineMetrics sparse{Baseline::sparse, sparse_sim.makespan,
                           output_error(sparse_qkv(w.in, w.truth_uniform), w.oracle), 1.0,
                           sparse_sim.estimation_fraction};

    const auto block_sel = block_sparse_select(w.in.q, w.in.k, config.block_size, RowBudget::ratio(config.global_ratio),
                                               config.causal, config.q_offset());
    const double visible = double(dense_selection(1, 1, config.q_len, config.kv_len, config.causal, config.q_offset())
                                      .total_selected());
    std::vector<HeadCost> block_heads;
    const double block = double(config.block_size);
    for (std::size_t h = 0; h < hq; ++h) {
        double kept = 0.0;
        for (std::size_t row = 0; row < config.q_len; ++row)
            kept += double(block_sel.row(0, h, row).size());
        block_heads.push_back({cpu.topk_ms / block, kept / visible * cpu.dense_qkv_ms});
    }
    const auto block_sim = serialized_cpu(block_heads, cpu.dense_qk_ms / block);
    BaselineMetrics block_sparse{Baseline::block_sparse, block_sim.makespan,
                                 output_error(sparse_qkv(w.in, block_sel), w.oracle),
                                 recall(block_sel, w.truth_uniform), block_sim.estimation_fraction};

    double npu_latency = 0.0;
    for (const auto& g : w.groups)
        npu_latency += 2.0 * group_npu_time(w.profile, g);
    BaselineMetrics npu{Baseline::npu_full, npu_latency, output_error(npu_full_output(w), w.oracle), std::nullopt,
                        1.0};

    r.output = sparse_qkv(w.in, w.shadow_selection);
    r.recall = recall(w.shadow_selection, w.truth_head);
    r.error = output_error(r.output, w.oracle);
    BaselineMetrics shadow{Baseline::shadow, w.greedy.makespan, r.error, r.recall,
                           w.greedy_sim.estimation_fraction};

    r.baselines = {full, sparse, block_sparse, npu, shadow};
    return r;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

namespace {

json error_json(const ErrorMetrics& e) {
    return {{"max_abs", e.max_abs}, {"mean_abs", e.mean_abs}, {"relative_l2", e.relative_l2}};
}

}  // namespace

std::string format_report_json(const Report& r) {
    json j;
    j["version"] = kDocumentVersion;
    j["command"] = r.command;
    j["config_hash"] = r.config_hash;
    j["seed"] = r.seed;
    j["model"] = r.model;
    j["global_ratio"] = r.global_ratio;
    j["baseline"] = to_string(r.baseline);
    j["recall"] = r.recall;
    j["output_error"] = error_json(r.error);
    j["makespan"] = {{"greedy", r.makespan_greedy}, {"serialized", r.makespan_serialized}};
    if (r.makespan_bruteforce)
        j["makespan"]["bruteforce"] = *r.makespan_bruteforce;
    j["speedup"] = r.speedup;
    j["bucket_hit_rate"] = r.bucket_hit_rate;
    j["fused_groups"] = r.fused_groups;
    j["head_buckets"] = r.head_buckets;
    j["head_ratios"] = r.head_ratios;
    if (!r.baselines.empty()) {
        json list = json::array();
        for (const auto& b : r.baselines) {
            json e = {{"baseline", to_string(b.baseline)},
                      {"latency_ms", b.latency_ms},
                      {"output_error", error_json(b.error)},
                      {"estimation_fraction", b.estimation_fraction}};
            if (b.recall)
                e["recall"] = *b.recall;
            list.push_back(e);
        }
        j["baselines"] = list;
    }
    return j.dump(2) + "\n";
}

std::string format_report_csv(const Report& r) {
    std::ostringstream os;
    os << std::setprecision(9);
    os << "config_hash,seed,baseline,latency_ms,speedup_vs_full,max_abs,mean_abs,relative_l2,recall,"
          "estimation_fraction\n";
    auto row = [&](std::string_view name, double latency, double speedup, const ErrorMetrics& e,
                   std::optional<double> rec, double est) {
        os << r.config_hash << ',' << r.seed << ',' << name << ',' << latency << ',' << speedup << ',' << e.max_abs
           << ',' << e.mean_abs << ',' << e.relative_l2 << ',';
        if (rec)
            os << *rec;
        os << ',' << est << '\n';
    };
    if (r.baselines.empty()) {
        row(to_string(r.baseline), r.makespan_greedy, r.speedup, r.error, r.recall, 0.0);
    } else {
        const double full = r.baselines.front().latency_ms;
        for (const auto& b : r.baselines)
            row(to_string(b.baseline), b.latency_ms, full / b.latency_ms, b.error, b.recall, b.estimation_fraction);
    }
    return os.str();
}

std::string format_report_text(const Report& r) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << r.command << " " << r.model << "  seed " << r.seed << "  ratio " << r.global_ratio << "  config "
       << r.config_hash << "\n";
    os << "  recall            " << r.recall << "\n";
    os << "  output error      max " << std::scientific << std::setprecision(3) << r.error.max_abs << "  mean "
       << r.error.mean_abs << "  rel-l2 " << r.error.relative_l2 << std::fixed << std::setprecision(4) << "\n";
    os << "  makespan (ms)     greedy " << r.makespan_greedy << "  serialized " << r.makespan_serialized;
    if (r.makespan_bruteforce)
        os << "  exhaustive " << *r.makespan_bruteforce;
    os << "  speedup " << r.speedup << "x\n";
    os << "  fused groups      " << r.fused_groups << "  graph hit rate " << r.bucket_hit_rate << "\n";
    if (!r.baselines.empty()) {
        os << "\n  " << std::left << std::setw(14) << "baseline" << std::right << std::setw(12) << "latency ms"
           << std::setw(10) << "speedup" << std::setw(12) << "max err" << std::setw(12) << "rel-l2" << std::setw(9)
           << "recall" << std::setw(8) << "est%" << "\n";
        const double full = r.baselines.front().latency_ms;
        for (const auto& b : r.baselines) {
            os << "  " << std::left << std::setw(14) << to_string(b.baseline) << std::right << std::setw(12)
               << std::setprecision(3) << b.latency_ms << std::setw(10) << std::setprecision(2) << full / b.latency_ms
               << std::scientific << std::setprecision(2) << std::setw(12) << b.error.max_abs << std::setw(12)
               << b.error.relative_l2 << std::fixed << std::setprecision(4) << std::setw(9);
            if (b.recall)
                os << *b.recall;
            else
                os << "-";
            os << std::setw(8) << std::setprecision(1) << 100.0 * b.estimation_fraction << "\n";
        }
    }
    return os.str();
}

std::filesystem::path write_report(const Report& report, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const std::string stem = report.command + "-" + report.config_hash;
    write_text_file(dir / (stem + ".csv"), format_report_csv(report));
    write_text_file(dir / (stem + ".txt"), format_report_text(report));
    const auto json_path = dir / (stem + ".json");
    write_text_file(json_path, format_report_json(report));
    return json_path;
}

}  // namespace shadow_attn
