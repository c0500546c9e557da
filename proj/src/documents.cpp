#include "shadow_attn/documents.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json_util.hpp"

namespace shadow_attn {

using detail::check_object;
using detail::check_version;
using detail::json;
using detail::malformed;
using detail::required;

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw FormatError(FormatError::Kind::io, "cannot open " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out || !(out << text))
        throw FormatError(FormatError::Kind::io, "cannot write " + path.string());
}

// --- importance table -------------------------------------------------------

ImportanceTable parse_importance_table(const std::string& text) {
    constexpr const char* what = "importance table";
    const json j = detail::parse_json(text, what);
    check_object(j, {"version", "baseline_loss", "head_losses", "layer_losses", "heads_per_layer"}, what);
    check_version(j, what);
    ImportanceTable t;
    t.baseline_loss = required<double>(j, "baseline_loss", what);
    t.head_losses = required<std::vector<double>>(j, "head_losses", what);
    t.layer_losses = required<std::vector<double>>(j, "layer_losses", what);
    t.heads_per_layer = required<std::size_t>(j, "heads_per_layer", what);
    try {
        t.validate();
    } catch (const ValidationError& e) {
        throw malformed(std::string(what) + ": " + e.what());
    }
    return t;
}

std::string format_importance_table(const ImportanceTable& table) {
    json j;
    j["version"] = kDocumentVersion;
    j["baseline_loss"] = table.baseline_loss;
    j["heads_per_layer"] = table.heads_per_layer;
    j["head_losses"] = table.head_losses;
    j["layer_losses"] = table.layer_losses;
    return j.dump(2) + "\n";
}

// --- head budget ------------------------------------------------------------

HeadBudget parse_head_budget(const std::string& text) {
    constexpr const char* what = "head budget";
    const json j = detail::parse_json(text, what);
    check_object(j, {"version", "global_ratio", "clamp_threshold", "ratios", "uncapped", "capped_heads"}, what);
    check_version(j, what);
    HeadBudget b;
    b.global_ratio = required<double>(j, "global_ratio", what);
    b.clamp_threshold = required<double>(j, "clamp_threshold", what);
    b.ratios = required<std::vector<double>>(j, "ratios", what);
    b.uncapped = detail::optional_or(j, "uncapped", b.ratios, what);
    b.capped_heads = detail::optional_or(j, "capped_heads", std::vector<std::size_t>{}, what);
    if (b.ratios.empty() || b.uncapped.size() != b.ratios.size())
        throw malformed("head budget: ratios missing or inconsistent with uncapped");
    for (double r : b.ratios)
        if (!(r > 0.0 && r <= 1.0))
            throw malformed("head budget: every ratio must be in (0, 1]");
    return b;
}

std::string format_head_budget(const HeadBudget& budget) {
    json j;
    j["version"] = kDocumentVersion;
    j["global_ratio"] = budget.global_ratio;
    j["clamp_threshold"] = budget.clamp_threshold;
    j["ratios"] = budget.ratios;
    j["uncapped"] = budget.uncapped;
    j["capped_heads"] = budget.capped_heads;
    return j.dump(2) + "\n";
}

// --- bucket grid ------------------------------------------------------------

namespace {

json scale_pair_json(const ScalePair& s) { return {{"lambda_q", s.lambda_q}, {"lambda_k", s.lambda_k}}; }

ScalePair parse_scale_pair(const json& j, const char* what) {
    check_object(j, {"lambda_q", "lambda_k", "index"}, what);
    ScalePair s{required<double>(j, "lambda_q", what), required<double>(j, "lambda_k", what)};
    try {
        s.validate();
    } catch (const ValidationError& e) {
        throw malformed(std::string(what) + ": " + e.what());
    }
    return s;
}

bool close(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(std::abs(a), std::abs(b)); }

}  // namespace

BucketGrid parse_bucket_grid(const std::string& text) {
    constexpr const char* what = "bucket grid";
    const json j = detail::parse_json(text, what);
    check_object(j, {"version", "center", "step", "per_axis", "buckets"}, what);
    check_version(j, what);
    const ScalePair center = parse_scale_pair(required<json>(j, "center", what), what);
    BucketGrid grid;
    try {
        grid = build_grid(center, required<double>(j, "step", what), required<std::size_t>(j, "per_axis", what));
    } catch (const ValidationError& e) {
        throw malformed(std::string(what) + ": " + e.what());
    }
    if (j.contains("buckets")) {
        const json& list = j["buckets"];
        if (!list.is_array() || list.size() != grid.buckets.size())
            throw malformed("bucket grid: bucket list does not match per_axis");
        for (std::size_t i = 0; i < list.size(); ++i) {
            const ScalePair b = parse_scale_pair(list[i], what);
            if (!close(b.lambda_q, grid.buckets[i].lambda_q) || !close(b.lambda_k, grid.buckets[i].lambda_k))
                throw malformed("bucket grid: bucket " + std::to_string(i) + " disagrees with center and step");
        }
    }
    return grid;
}

std::string format_bucket_grid(const BucketGrid& grid) {
    json j;
    j["version"] = kDocumentVersion;
    j["center"] = scale_pair_json(grid.center);
    j["step"] = grid.step;
    j["per_axis"] = grid.per_axis;
    json list = json::array();
    for (std::size_t i = 0; i < grid.buckets.size(); ++i) {
        json b = scale_pair_json(grid.buckets[i]);
        b["index"] = i;
        list.push_back(b);
    }
    j["buckets"] = list;
    return j.dump(2) + "\n";
}

std::vector<ScalePair> parse_scale_stats(const std::string& text) {
    constexpr const char* what = "scale statistics";
    const json j = detail::parse_json(text, what);
    check_object(j, {"version", "scales"}, what);
    check_version(j, what);
    const json list = required<json>(j, "scales", what);
    if (!list.is_array() || list.empty())
        throw malformed("scale statistics: 'scales' must be a non-empty array");
    std::vector<ScalePair> out;
    for (const auto& s : list)
        out.push_back(parse_scale_pair(s, what));
    return out;
}

std::string format_scale_stats(const std::vector<ScalePair>& scales) {
    json list = json::array();
    for (const auto& s : scales)
        list.push_back(scale_pair_json(s));
    return json{{"version", kDocumentVersion}, {"scales", list}}.dump(2) + "\n";
}

// --- cost profile -----------------------------------------------------------

namespace {

NpuCurve parse_curve(const json& j, const char* what) {
    try {
        return NpuCurve(j.get<std::vector<std::pair<std::size_t, double>>>());
    } catch (const json::exception& e) {
        throw malformed(std::string(what) + ": npu points must be [head_count, ms] pairs: " + e.what());
    } catch (const ValidationError& e) {
        throw malformed(std::string(what) + ": " + e.what());
    }
}

}  // namespace

ProfileDocument parse_cost_profile(const std::string& text) {
    constexpr const char* what = "cost profile";
    const json j = detail::parse_json(text, what);
    check_object(j, {"version", "npu_points", "bucket_npu_points", "heads", "head_buckets"}, what);
    check_version(j, what);

    ProfileDocument doc;
    doc.profile.npu = parse_curve(required<json>(j, "npu_points", what), what);
    if (j.contains("bucket_npu_points")) {
        const json& overrides = j["bucket_npu_points"];
        if (!overrides.is_object())
            throw malformed("cost profile: bucket_npu_points must map bucket index to points");
        for (const auto& [key, points] : overrides.items()) {
            std::size_t bucket = 0;
            try {
                bucket = std::stoul(key);
            } catch (const std::exception&) {
                throw malformed("cost profile: bucket key '" + key + "' is not an index");
            }
            doc.profile.bucket_npu[bucket] = parse_curve(points, what);
        }
    }
    for (const auto& h : required<json>(j, "heads", what)) {
        check_object(h, {"topk", "qkv"}, what);
        doc.profile.heads.push_back({required<double>(h, "topk", what), required<double>(h, "qkv", what)});
    }
    if (j.contains("head_buckets")) {
        doc.head_buckets = required<std::vector<std::size_t>>(j, "head_buckets", what);
        if (doc.head_buckets->size() != doc.profile.heads.size())
            throw malformed("cost profile: head_buckets needs one entry per head");
    }
    try {
        doc.profile.validate();
    } catch (const ValidationError& e) {
        throw malformed(std::string(what) + ": " + e.what());
    }
    return doc;
}

std::string format_cost_profile(const CostProfile& profile, const std::optional<std::vector<std::size_t>>& head_buckets) {
    json j;
    j["version"] = kDocumentVersion;
    j["npu_points"] = profile.npu.points();
    if (!profile.bucket_npu.empty()) {
        json overrides = json::object();
        for (const auto& [bucket, curve] : profile.bucket_npu)
            overrides[std::to_string(bucket)] = curve.points();
        j["bucket_npu_points"] = overrides;
    }
    json heads = json::array();
    for (const auto& h : profile.heads)
        heads.push_back({{"topk", h.topk_ms}, {"qkv", h.qkv_ms}});
    j["heads"] = heads;
    if (head_buckets)
        j["head_buckets"] = *head_buckets;
    return j.dump(2) + "\n";
}

// --- schedules --------------------------------------------------------------

std::string format_events_csv(const std::vector<Event>& events) {
    std::ostringstream os;
    os << "processor,kind,id,start,finish\n" << std::setprecision(17);
    for (const auto& e : events)
        os << to_string(e.processor) << ',' << to_string(e.kind) << ',' << e.id << ',' << e.start << ','
           << e.finish << '\n';
    return os.str();
}

std::string format_schedule(const Schedule& schedule) {
    json j;
    j["version"] = kDocumentVersion;
    j["lanes"] = std::string(to_string(schedule.lanes));
    j["makespan"] = schedule.makespan;
    json groups = json::array();
    for (const auto& g : schedule.npu_order)
        groups.push_back({{"bucket", g.bucket}, {"heads", g.heads}});
    j["npu_order"] = groups;
    j["cpu_order"] = schedule.cpu_order;
    json events = json::array();
    for (const auto& e : schedule.events)
        events.push_back({{"processor", std::string(to_string(e.processor))},
                          {"kind", std::string(to_string(e.kind))},
                          {"id", e.id},
                          {"start", e.start},
                          {"finish", e.finish}});
    j["events"] = events;
    return j.dump(2) + "\n";
}

}  // namespace shadow_attn
