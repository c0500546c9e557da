#include "shadow_attn/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <string>

namespace shadow_attn {

// ---------------------------------------------------------------------------
// Cost model
// ---------------------------------------------------------------------------

NpuCurve::NpuCurve(std::vector<std::pair<std::size_t, double>> points) : points_(std::move(points)) {
    if (points_.empty())
        throw ValidationError("npu curve needs at least one measured point");
    std::ranges::sort(points_);
    for (std::size_t i = 0; i < points_.size(); ++i) {
        const auto [count, time] = points_[i];
        if (count == 0 || !(time > 0.0) || !std::isfinite(time))
            throw ValidationError("npu curve points need a positive head count and positive time");
        if (i > 0 && count == points_[i - 1].first)
            throw ValidationError("npu curve has two points for head count " + std::to_string(count));
        if (i > 0 && time < points_[i - 1].second)
            throw ValidationError("npu curve must be nondecreasing in head count");
    }
}

double NpuCurve::at(std::size_t head_count) const {
    if (points_.empty())
        throw ValidationError("npu curve is empty");
    if (head_count == 0)
        throw ValidationError("npu time needs at least one head");
    const auto& first = points_.front();
    const auto& last = points_.back();
    if (head_count <= first.first)
        return head_count == first.first || points_.size() > 1 ? first.second
                                                               : first.second * double(head_count) / double(first.first);
    if (head_count >= last.first) {
        const double marginal = points_.size() > 1
                                    ? (last.second - points_[points_.size() - 2].second) /
                                          double(last.first - points_[points_.size() - 2].first)
                                    : last.second / double(last.first);
        return last.second + marginal * double(head_count - last.first);
    }
    auto hi = std::ranges::lower_bound(points_, head_count, {}, &std::pair<std::size_t, double>::first);
    auto lo = std::prev(hi);
    const double t = double(head_count - lo->first) / double(hi->first - lo->first);
    return lo->second + t * (hi->second - lo->second);
}

NpuCurve default_npu_curve() { return NpuCurve({{1, 2.0}, {2, 3.0}, {4, 4.0}}); }

const NpuCurve& CostProfile::curve_for(std::size_t bucket) const {
    auto it = bucket_npu.find(bucket);
    return it != bucket_npu.end() ? it->second : npu;
}

void CostProfile::validate() const {
    if (npu.points().empty())
        throw ValidationError("cost profile has no npu measurements");
    for (std::size_t i = 0; i < heads.size(); ++i)
        if (!(heads[i].topk_ms > 0.0) || !(heads[i].qkv_ms > 0.0) || !std::isfinite(heads[i].topk_ms) ||
            !std::isfinite(heads[i].qkv_ms))
            throw ValidationError("head " + std::to_string(i) + " needs positive topk and qkv times");
}

double npu_time_of(const CostProfile& profile, std::size_t head_count) { return profile.npu.at(head_count); }

double group_npu_time(const CostProfile& profile, const FusedGroup& group) {
    return profile.curve_for(group.bucket).at(group.heads.size());
}

std::vector<FusedGroup> form_groups(std::span<const std::size_t> head_buckets) {
    std::map<std::size_t, std::vector<std::size_t>> by_bucket;
    for (std::size_t h = 0; h < head_buckets.size(); ++h)
        by_bucket[head_buckets[h]].push_back(h);
    std::vector<FusedGroup> groups;
    for (auto& [bucket, heads] : by_bucket)
        groups.push_back({bucket, std::move(heads)});
    return groups;
}

std::string_view to_string(LaneModel m) {
    switch (m) {
    case LaneModel::three_clock: return "three-clock";
    case LaneModel::single_lane: return "single";
    case LaneModel::serialized: return "serialized";
    }
    return "?";
}

std::string_view to_string(Processor p) {
    switch (p) {
    case Processor::npu: return "npu";
    case Processor::topk_lane: return "cpu-topk";
    case Processor::qkv_lane: return "cpu-qkv";
    case Processor::cpu: return "cpu";
    }
    return "?";
}

std::string_view to_string(EventKind k) {
    switch (k) {
    case EventKind::npu: return "npu";
    case EventKind::topk: return "topk";
    case EventKind::qkv: return "qkv";
    }
    return "?";
}

LaneModel parse_lane_model(std::string_view s) {
    if (s == "three-clock")
        return LaneModel::three_clock;
    if (s == "single")
        return LaneModel::single_lane;
    if (s == "serialized")
        return LaneModel::serialized;
    throw ValidationError("unknown lane model '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Planning
// ---------------------------------------------------------------------------

namespace {

struct CpuClocks {
    double topk = 0.0;
    double qkv = 0.0;
};

struct HeadTiming {
    double topk_start, topk_finish, qkv_start, qkv_finish;
};

// One head on the general-purpose side, given when its launch finished:
//   t_topk' = max(t_npu, t_topk) + topk,  t_qkv' = max(t_qkv, t_topk') + qkv
// With a single lane the topk waits for the previous qkv instead.
HeadTiming time_head(double t_npu, CpuClocks c, const HeadCost& cost, LaneModel lanes) {
    HeadTiming t;
    t.topk_start = std::max(t_npu, lanes == LaneModel::three_clock ? c.topk : c.qkv);
    t.topk_finish = t.topk_start + cost.topk_ms;
    t.qkv_start = std::max(c.qkv, t.topk_finish);
    t.qkv_finish = t.qkv_start + cost.qkv_ms;
    return t;
}

CpuClocks step_head(double t_npu, CpuClocks c, const HeadCost& cost, LaneModel lanes) {
    const auto t = time_head(t_npu, c, cost, lanes);
    return {t.topk_finish, t.qkv_finish};
}

void check_planner_inputs(std::span<const FusedGroup> groups, const CostProfile& profile, LaneModel lanes) {
    if (groups.empty())
        throw ValidationError("planning needs at least one fused group");
    if (lanes == LaneModel::serialized)
        throw ValidationError("serialized execution is planned with plan_sequential");
    profile.validate();
    std::set<std::size_t> seen;
    for (const auto& g : groups) {
        if (g.heads.empty())
            throw ValidationError("fused group for bucket " + std::to_string(g.bucket) + " is empty");
        for (std::size_t h : g.heads) {
            if (h >= profile.heads.size())
                throw ValidationError("head " + std::to_string(h) + " has no cost entry");
            if (!seen.insert(h).second)
                throw ValidationError("head " + std::to_string(h) + " appears in two fused groups");
        }
    }
}

struct GroupPlan {
    std::vector<std::size_t> order;
    CpuClocks clocks;
};

// Greedy head order inside one fused group whose launch finishes at t_npu.
GroupPlan plan_group(double t_npu, CpuClocks clocks, const FusedGroup& group, const CostProfile& profile,
                     LaneModel lanes) {
    GroupPlan plan;
    std::vector<bool> used(group.heads.size(), false);
    for (std::size_t step = 0; step < group.heads.size(); ++step) {
        double t_min = std::numeric_limits<double>::infinity();
        std::size_t selected = group.heads.size();
        for (std::size_t i = 0; i < group.heads.size(); ++i) {
            if (used[i])
                continue;
            const auto trial = step_head(t_npu, clocks, profile.heads[group.heads[i]], lanes);
            if (trial.qkv < t_min) {
                t_min = trial.qkv;
                selected = i;
            }
        }
        used[selected] = true;
        plan.order.push_back(group.heads[selected]);
        clocks = step_head(t_npu, clocks, profile.heads[group.heads[selected]], lanes);
    }
    plan.clocks = clocks;
    return plan;
}

// Events for fixed orders under the overlapping lane models.
std::vector<Event> overlapped_events(const std::vector<FusedGroup>& npu_order, const std::vector<std::size_t>& cpu_order,
                                     const CostProfile& profile, LaneModel lanes) {
    std::vector<Event> events;
    std::map<std::size_t, double> launch_done;  // head -> finish of its launch
    double t_npu = 0.0;
    for (std::size_t g = 0; g < npu_order.size(); ++g) {
        const double start = t_npu;
        t_npu = t_npu + group_npu_time(profile, npu_order[g]);
        events.push_back({Processor::npu, EventKind::npu, g, start, t_npu});
        for (std::size_t h : npu_order[g].heads)
            launch_done[h] = t_npu;
    }
    const Processor topk_proc = lanes == LaneModel::three_clock ? Processor::topk_lane : Processor::cpu;
    const Processor qkv_proc = lanes == LaneModel::three_clock ? Processor::qkv_lane : Processor::cpu;
    CpuClocks clocks;
    for (std::size_t h : cpu_order) {
        const auto t = time_head(launch_done.at(h), clocks, profile.heads[h], lanes);
        events.push_back({topk_proc, EventKind::topk, h, t.topk_start, t.topk_finish});
        events.push_back({qkv_proc, EventKind::qkv, h, t.qkv_start, t.qkv_finish});
        clocks = {t.topk_finish, t.qkv_finish};
    }
    return events;
}

std::uint64_t saturating_mul(std::uint64_t a, std::uint64_t b) {
    if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a)
        return std::numeric_limits<std::uint64_t>::max();
    return a * b;
}

std::uint64_t factorial(std::size_t n) {
    std::uint64_t f = 1;
    for (std::size_t i = 2; i <= n; ++i)
        f = saturating_mul(f, i);
    return f;
}

}  // namespace

Schedule plan_greedy(std::span<const FusedGroup> input_groups, const CostProfile& profile, LaneModel lanes) {
    check_planner_inputs(input_groups, profile, lanes);
    // Ascending members so that head ties resolve to the lowest id.
    std::vector<FusedGroup> groups(input_groups.begin(), input_groups.end());
    for (auto& g : groups)
        std::ranges::sort(g.heads);

    Schedule s;
    s.lanes = lanes;
    double t_npu = 0.0;
    CpuClocks clocks;
    std::vector<bool> scheduled(groups.size(), false);

    for (std::size_t step = 0; step < groups.size(); ++step) {
        double t_min = std::numeric_limits<double>::infinity();
        std::size_t selected = groups.size();
        for (std::size_t g = 0; g < groups.size(); ++g) {
            if (scheduled[g])
                continue;
            const double t_npu_new = t_npu + group_npu_time(profile, groups[g]);
            const auto trial = plan_group(t_npu_new, clocks, groups[g], profile, lanes);
            if (trial.clocks.qkv < t_min) {
                t_min = trial.clocks.qkv;
                selected = g;
            }
        }
        scheduled[selected] = true;
        s.npu_order.push_back(groups[selected]);
        t_npu = t_npu + group_npu_time(profile, groups[selected]);
        auto plan = plan_group(t_npu, clocks, groups[selected], profile, lanes);
        s.cpu_order.insert(s.cpu_order.end(), plan.order.begin(), plan.order.end());
        clocks = plan.clocks;
    }

    s.makespan = clocks.qkv;
    s.events = overlapped_events(s.npu_order, s.cpu_order, profile, lanes);
    return s;
}

std::uint64_t order_count(std::span<const FusedGroup> groups) {
    std::uint64_t n = factorial(groups.size());
    for (const auto& g : groups)
        n = saturating_mul(n, factorial(g.heads.size()));
    return n;
}

Schedule plan_bruteforce(std::span<const FusedGroup> groups, const CostProfile& profile, LaneModel lanes,
                         std::uint64_t limit) {
    check_planner_inputs(groups, profile, lanes);
    const std::uint64_t count = order_count(groups);
    if (count > limit)
        throw SearchLimitExceeded("exhaustive planning needs " + std::to_string(count) +
                                  " orders, above the limit of " + std::to_string(limit));

    std::vector<std::size_t> group_order(groups.size());
    std::iota(group_order.begin(), group_order.end(), 0);

    double best = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> best_groups;
    std::vector<std::vector<std::size_t>> best_heads;

    do {
        std::vector<std::vector<std::size_t>> head_orders;
        for (const auto& g : groups)
            head_orders.push_back(g.heads);
        for (auto& o : head_orders)
            std::ranges::sort(o);

        for (bool more = true; more;) {
            double t_npu = 0.0;
            CpuClocks clocks;
            for (std::size_t g : group_order) {
                t_npu = t_npu + group_npu_time(profile, groups[g]);
                for (std::size_t h : head_orders[g])
                    clocks = step_head(t_npu, clocks, profile.heads[h], lanes);
            }
            if (clocks.qkv < best) {
                best = clocks.qkv;
                best_groups = group_order;
                best_heads = head_orders;
            }
            // Odometer over the within-group permutations.
            more = false;
            for (std::size_t i = head_orders.size(); i-- > 0;)
                if (std::next_permutation(head_orders[i].begin(), head_orders[i].end())) {
                    more = true;
                    break;
                }
        }
    } while (std::next_permutation(group_order.begin(), group_order.end()));

    Schedule s;
    s.lanes = lanes;
    for (std::size_t g : best_groups) {
        s.npu_order.push_back(groups[g]);
        s.cpu_order.insert(s.cpu_order.end(), best_heads[g].begin(), best_heads[g].end());
    }
    s.makespan = best;
    s.events = overlapped_events(s.npu_order, s.cpu_order, profile, lanes);
    return s;
}

Schedule plan_sequential(std::span<const FusedGroup> groups, const CostProfile& profile) {
    check_planner_inputs(groups, profile, LaneModel::three_clock);
    Schedule s;
    s.lanes = LaneModel::serialized;
    double clock = 0.0;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        s.npu_order.push_back(groups[g]);
        const double start = clock;
        clock = clock + group_npu_time(profile, groups[g]);
        s.events.push_back({Processor::npu, EventKind::npu, g, start, clock});
        auto heads = groups[g].heads;
        std::ranges::sort(heads);
        for (std::size_t h : heads) {
            s.cpu_order.push_back(h);
            const double topk_start = clock;
            clock = clock + profile.heads[h].topk_ms;
            s.events.push_back({Processor::cpu, EventKind::topk, h, topk_start, clock});
            const double qkv_start = clock;
            clock = clock + profile.heads[h].qkv_ms;
            s.events.push_back({Processor::cpu, EventKind::qkv, h, qkv_start, clock});
        }
    }
    s.makespan = clock;
    return s;
}

double serialized_time(std::span<const FusedGroup> groups, const CostProfile& profile) {
    double total = 0.0;
    for (const auto& g : groups) {
        total += group_npu_time(profile, g);
        for (std::size_t h : g.heads)
            total += profile.heads.at(h).topk_ms + profile.heads.at(h).qkv_ms;
    }
    return total;
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

void validate_events(const Schedule& schedule) {
    std::map<std::size_t, std::size_t> group_of;  // head -> npu_order position
    for (std::size_t g = 0; g < schedule.npu_order.size(); ++g)
        for (std::size_t h : schedule.npu_order[g].heads)
            group_of[h] = g;

    std::map<std::size_t, const Event*> launch, topk, qkv;
    std::map<Processor, std::vector<const Event*>> by_processor;
    for (const auto& e : schedule.events) {
        if (!(e.finish >= e.start) || e.start < 0.0)
            throw ScheduleInvalid("event finishes before it starts");
        auto& slot = e.kind == EventKind::npu ? launch : e.kind == EventKind::topk ? topk : qkv;
        if (!slot.emplace(e.id, &e).second)
            throw ScheduleInvalid("duplicate " + std::string(to_string(e.kind)) + " event for id " +
                                  std::to_string(e.id));
        by_processor[e.processor].push_back(&e);
    }
    if (launch.size() != schedule.npu_order.size() || topk.size() != group_of.size() || qkv.size() != group_of.size())
        throw ScheduleInvalid("event list does not cover every launch and head exactly once");

    for (const auto& [h, g] : group_of) {
        auto t = topk.find(h);
        auto q = qkv.find(h);
        auto n = launch.find(g);
        if (t == topk.end() || q == qkv.end() || n == launch.end())
            throw ScheduleInvalid("head " + std::to_string(h) + " is missing an event");
        if (t->second->start < n->second->finish)
            throw ScheduleInvalid("topk of head " + std::to_string(h) + " starts before its launch finishes");
        if (q->second->start < t->second->finish)
            throw ScheduleInvalid("qkv of head " + std::to_string(h) + " starts before its topk finishes");
    }

    for (auto& [proc, list] : by_processor) {
        std::ranges::sort(list, [](const Event* a, const Event* b) {
            return a->start < b->start || (a->start == b->start && a->finish < b->finish);
        });
        for (std::size_t i = 1; i < list.size(); ++i)
            if (list[i]->start < list[i - 1]->finish)
                throw ScheduleInvalid("two events overlap on " + std::string(to_string(proc)));
    }
}

SimulationResult simulate(const Schedule& schedule, const CostProfile& profile) {
    profile.validate();
    std::map<std::size_t, std::size_t> group_of;
    for (std::size_t g = 0; g < schedule.npu_order.size(); ++g) {
        if (schedule.npu_order[g].heads.empty())
            throw ScheduleInvalid("empty fused group in launch order");
        for (std::size_t h : schedule.npu_order[g].heads) {
            if (h >= profile.heads.size())
                throw ScheduleInvalid("head " + std::to_string(h) + " has no cost entry");
            if (!group_of.emplace(h, g).second)
                throw ScheduleInvalid("head " + std::to_string(h) + " launched twice");
        }
    }
    std::set<std::size_t> cpu_heads(schedule.cpu_order.begin(), schedule.cpu_order.end());
    if (cpu_heads.size() != schedule.cpu_order.size() || cpu_heads.size() != group_of.size() ||
        !std::ranges::all_of(cpu_heads, [&](std::size_t h) { return group_of.contains(h); }))
        throw ScheduleInvalid("general-purpose order must list every launched head exactly once");
    if (!schedule.events.empty())
        validate_events(schedule);

    SimulationResult r;
    std::vector<double> launch_finish(schedule.npu_order.size(), 0.0);
    auto launch = [&](std::size_t g, double start) {
        const double finish = start + group_npu_time(profile, schedule.npu_order[g]);
        launch_finish[g] = finish;
        r.events.push_back({Processor::npu, EventKind::npu, g, start, finish});
        r.npu_busy += finish - start;
        return finish;
    };

    if (schedule.lanes == LaneModel::serialized) {
        double clock = 0.0;
        std::size_t launched = 0;
        for (std::size_t h : schedule.cpu_order) {
            while (launched <= group_of[h])
                clock = launch(launched++, clock);
            const HeadCost& c = profile.heads[h];
            r.events.push_back({Processor::cpu, EventKind::topk, h, clock, clock + c.topk_ms});
            clock = clock + c.topk_ms;
            r.events.push_back({Processor::cpu, EventKind::qkv, h, clock, clock + c.qkv_ms});
            clock = clock + c.qkv_ms;
            r.topk_busy += c.topk_ms;
            r.qkv_busy += c.qkv_ms;
        }
        r.makespan = clock;
    } else {
        double npu_free = 0.0;
        for (std::size_t g = 0; g < schedule.npu_order.size(); ++g)
            npu_free = launch(g, npu_free);

        const bool split = schedule.lanes == LaneModel::three_clock;
        const Processor topk_proc = split ? Processor::topk_lane : Processor::cpu;
        const Processor qkv_proc = split ? Processor::qkv_lane : Processor::cpu;
        double topk_free = 0.0, qkv_free = 0.0;
        for (std::size_t h : schedule.cpu_order) {
            const HeadCost& c = profile.heads[h];
            const double topk_start = std::max(launch_finish[group_of[h]], split ? topk_free : qkv_free);
            const double topk_finish = topk_start + c.topk_ms;
            const double qkv_start = std::max(qkv_free, topk_finish);
            const double qkv_finish = qkv_start + c.qkv_ms;
            r.events.push_back({topk_proc, EventKind::topk, h, topk_start, topk_finish});
            r.events.push_back({qkv_proc, EventKind::qkv, h, qkv_start, qkv_finish});
            topk_free = topk_finish;
            qkv_free = qkv_finish;
            r.topk_busy += c.topk_ms;
            r.qkv_busy += c.qkv_ms;
        }
        r.makespan = qkv_free;
    }

    const double busy = r.npu_busy + r.topk_busy + r.qkv_busy;
    r.overlap = busy - r.makespan;
    r.cpu_idle = r.makespan - (schedule.lanes == LaneModel::three_clock ? r.qkv_busy : r.topk_busy + r.qkv_busy);
    r.estimation_fraction = busy > 0.0 ? (r.npu_busy + r.topk_busy) / busy : 0.0;
    r.attention_fraction = busy > 0.0 ? r.qkv_busy / busy : 0.0;

    if (!schedule.events.empty() && r.makespan != schedule.makespan)
        throw ScheduleInvalid("replayed makespan " + std::to_string(r.makespan) + " differs from the recorded " +
                              std::to_string(schedule.makespan));
    return r;
}

}  // namespace shadow_attn
