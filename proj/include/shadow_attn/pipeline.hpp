#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "shadow_attn/errors.hpp"

namespace shadow_attn {

/// Accelerator launch cost as a function of how many heads are fused into one
/// launch. Measured points are interpolated linearly; past the last point the
/// last segment's marginal cost per head continues. With a single point the
/// marginal cost is that point's average cost per head. Below the first point
/// the first value holds.
class NpuCurve {
public:
    NpuCurve() = default;
    explicit NpuCurve(std::vector<std::pair<std::size_t, double>> points);

    double at(std::size_t head_count) const;
    const std::vector<std::pair<std::size_t, double>>& points() const noexcept { return points_; }

private:
    std::vector<std::pair<std::size_t, double>> points_;
};

/// Launch costs measured for a QxK graph with Q=[1,1,128,64], K=[1,1,2048,64]:
/// 2 ms for one head, 3 ms for two fused, 4 ms for four fused.
NpuCurve default_npu_curve();

struct HeadCost {
    double topk_ms = 0.0;
    double qkv_ms = 0.0;
};

/// Per-stage timing model in milliseconds. `bucket_npu` optionally overrides
/// the launch curve for the graphs of one bucket.
struct CostProfile {
    NpuCurve npu;
    std::map<std::size_t, NpuCurve> bucket_npu;
    std::vector<HeadCost> heads;

    const NpuCurve& curve_for(std::size_t bucket) const;
    void validate() const;
};

double npu_time_of(const CostProfile& profile, std::size_t head_count);

/// Heads sharing one scale bucket, launched together on the accelerator.
struct FusedGroup {
    std::size_t bucket = 0;
    std::vector<std::size_t> heads;  // ascending

    friend bool operator==(const FusedGroup&, const FusedGroup&) = default;
};

/// Groups heads by bucket index, groups in ascending bucket order.
std::vector<FusedGroup> form_groups(std::span<const std::size_t> head_buckets);

double group_npu_time(const CostProfile& profile, const FusedGroup& group);

enum class LaneModel {
    three_clock,  // npu, topk and qkv each advance their own clock
    single_lane,  // topk and qkv share one general-purpose lane
    serialized,   // nothing overlaps
};

enum class Processor { npu, topk_lane, qkv_lane, cpu };
enum class EventKind { npu, topk, qkv };

std::string_view to_string(LaneModel m);
std::string_view to_string(Processor p);
std::string_view to_string(EventKind k);
LaneModel parse_lane_model(std::string_view s);

struct Event {
    Processor processor = Processor::npu;
    EventKind kind = EventKind::npu;
    std::size_t id = 0;  // position in npu_order for npu events, head id otherwise
    double start = 0.0;
    double finish = 0.0;

    friend bool operator==(const Event&, const Event&) = default;
};

struct Schedule {
    LaneModel lanes = LaneModel::three_clock;
    std::vector<FusedGroup> npu_order;
    std::vector<std::size_t> cpu_order;
    std::vector<Event> events;
    double makespan = 0.0;
};

/// Greedy planning: each step launches the unscheduled fused group whose
/// inner greedy head order gives the smallest qkv clock. Ties keep the
/// earliest group and head. Accepts three_clock and single_lane.
Schedule plan_greedy(std::span<const FusedGroup> groups, const CostProfile& profile,
                     LaneModel lanes = LaneModel::three_clock);

inline constexpr std::uint64_t kDefaultPermutationLimit = 1'000'000;

/// Number of (group order, within-group order) combinations, saturating.
std::uint64_t order_count(std::span<const FusedGroup> groups);

/// Exhaustive minimum-makespan schedule under the same recurrences. Throws
/// SearchLimitExceeded when order_count exceeds `limit`.
Schedule plan_bruteforce(std::span<const FusedGroup> groups, const CostProfile& profile,
                         LaneModel lanes = LaneModel::three_clock, std::uint64_t limit = kDefaultPermutationLimit);

/// Groups in the given order, heads ascending, nothing overlapping.
Schedule plan_sequential(std::span<const FusedGroup> groups, const CostProfile& profile);

/// Sum of every stage time.
double serialized_time(std::span<const FusedGroup> groups, const CostProfile& profile);

struct SimulationResult {
    double makespan = 0.0;
    double npu_busy = 0.0;
    double topk_busy = 0.0;
    double qkv_busy = 0.0;
    double cpu_idle = 0.0;   // bubbles on the general-purpose side
    double overlap = 0.0;    // total busy time minus makespan
    double estimation_fraction = 0.0;  // (npu + topk) / total busy
    double attention_fraction = 0.0;   // qkv / total busy
    std::vector<Event> events;
};

/// Checks recorded events against the stage dependencies (npu before topk
/// before qkv of each head) and one event at a time per processor.
void validate_events(const Schedule& schedule);

/// Replays the schedule from its orders alone. Throws ScheduleInvalid when
/// the orders are malformed, the recorded events break a dependency, or the
/// recorded makespan differs from the replay.
SimulationResult simulate(const Schedule& schedule, const CostProfile& profile);

}  // namespace shadow_attn
