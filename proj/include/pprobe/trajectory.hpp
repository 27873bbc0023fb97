#pragma once

// Probe outputs along a conversation, per turn or per token.

#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "pprobe/activation_store.hpp"
#include "pprobe/probe.hpp"
#include "pprobe/transcript.hpp"

namespace pprobe {

enum class Granularity { conversation_end, turn, token };

inline std::string_view to_string(Granularity g) {
    switch (g) {
        case Granularity::conversation_end: return "conversation_end";
        case Granularity::turn: return "turn";
        case Granularity::token: return "token";
    }
    return "";
}

inline std::optional<Granularity> parse_granularity(std::string_view s) {
    for (auto g : {Granularity::conversation_end, Granularity::turn, Granularity::token})
        if (to_string(g) == s) return g;
    return std::nullopt;
}

struct TrajectoryPoint {
    Granularity granularity = Granularity::turn;
    /// 1-based turn number for turn/conversation_end points; token position for token points.
    std::size_t index = 0;
    /// 0-based turn the point reads from.
    std::size_t turn_index = 0;
    ProbVector probs;
    std::size_t predicted_class = 0;
};

struct Trajectory {
    std::string conversation_id;
    Task task;
    std::vector<std::string> class_names;
    std::vector<TrajectoryPoint> points;
    std::vector<std::string> warnings;

    /// Probability of the positive ("high"/"persuaded") class at each point.
    std::vector<double> positive_series() const {
        std::vector<double> out;
        out.reserve(points.size());
        for (const auto& p : points) out.push_back(p.probs.at(1));
        return out;
    }

    const TrajectoryPoint* at_index(std::size_t index) const {
        for (const auto& p : points)
            if (p.index == index) return &p;
        return nullptr;
    }
};

namespace detail {

inline Trajectory start_trajectory(const ProbeModel& probe, const ActivationBundle& bundle) {
    if (probe.dim != bundle.d)
        throw DimensionError("probe dimension " + std::to_string(probe.dim) +
                             " does not match bundle dimension " + std::to_string(bundle.d));
    Trajectory tr;
    tr.conversation_id = bundle.conversation_id;
    tr.task = probe.task;
    tr.class_names = probe.class_names;
    if (!probe.model_id.empty() && probe.model_id != bundle.model_id)
        tr.warnings.push_back("probe model '" + probe.model_id + "' differs from bundle model '" +
                              bundle.model_id + "'");
    if (probe.layer != bundle.layer)
        tr.warnings.push_back("probe layer " + std::to_string(probe.layer) +
                              " differs from bundle layer " + std::to_string(bundle.layer));
    return tr;
}

inline TrajectoryPoint make_point(const ProbeModel& probe, std::span<const float> row,
                                  Granularity g, std::size_t index, std::size_t turn_index) {
    TrajectoryPoint pt;
    pt.granularity = g;
    pt.index = index;
    pt.turn_index = turn_index;
    pt.probs = predict(probe, row);
    pt.predicted_class = argmax(pt.probs);
    return pt;
}

}  // namespace detail

/// Point k reads the last token of turn k, i.e. the probe applied to the prefix of turns 1..k.
/// Requires spans for turns 0..T-1 where T is the highest spanned turn + 1.
inline Trajectory turn_trajectory(const ProbeModel& probe, const ActivationBundle& bundle) {
    auto tr = detail::start_trajectory(probe, bundle);
    const std::size_t T = bundle.span_turn_count();
    if (T == 0) throw DataError("bundle '" + bundle.conversation_id + "' has no turn spans");
    tr.points.reserve(T);
    for (std::size_t k = 1; k <= T; ++k)
        tr.points.push_back(detail::make_point(probe, detail::last_row_of_turn(bundle, k),
                                               Granularity::turn, k, k - 1));
    return tr;
}

/// The probe applied once, at the final in-span token.
inline Trajectory conversation_end_point(const ProbeModel& probe, const ActivationBundle& bundle) {
    auto tr = detail::start_trajectory(probe, bundle);
    if (bundle.turn_spans.empty())
        throw DataError("bundle '" + bundle.conversation_id + "' has no turn spans");
    const auto& last = bundle.turn_spans.back();
    tr.points.push_back(detail::make_point(probe, bundle.row(last.end - 1),
                                           Granularity::conversation_end, last.turn_index + 1,
                                           last.turn_index));
    return tr;
}

/// One point per in-span token; scaffolding tokens outside every span are skipped.
inline Trajectory token_trajectory(const ProbeModel& probe, const ActivationBundle& bundle) {
    auto tr = detail::start_trajectory(probe, bundle);
    for (const auto& s : bundle.turn_spans)
        for (std::size_t j = s.start; j < s.end; ++j)
            tr.points.push_back(
                detail::make_point(probe, bundle.row(j), Granularity::token, j, s.turn_index));
    return tr;
}

using TraitTrajectories = std::map<Trait, Trajectory>;

/// Turn trajectories for all five trait probes, keyed by trait.
inline TraitTrajectories trait_trajectories(std::span<const ProbeModel> probes,
                                            const ActivationBundle& bundle) {
    if (probes.size() != kTraits.size())
        throw DataError("expected 5 trait probes, got " + std::to_string(probes.size()));
    TraitTrajectories out;
    for (const auto& p : probes) {
        if (p.task.kind != Task::Kind::trait)
            throw DataError("probe for task " + p.task.name() + " is not a trait probe");
        if (out.count(p.task.trait))
            throw DataError("duplicate probe for trait " + std::string(to_string(p.task.trait)));
        out.emplace(p.task.trait, turn_trajectory(p, bundle));
    }
    return out;
}

/// Strategy distribution per turn; with a role filter only that role's turns are kept.
inline Trajectory strategy_trajectory(const ProbeModel& probe, const ActivationBundle& bundle,
                                      const Conversation* conversation = nullptr,
                                      std::optional<Role> role_filter = std::nullopt) {
    if (probe.task.kind != Task::Kind::strategy || probe.num_classes != 3)
        throw DataError("probe for task " + probe.task.name() + " is not a strategy probe");
    auto tr = turn_trajectory(probe, bundle);
    if (role_filter) {
        if (!conversation) throw DataError("role filter needs the conversation's turn roles");
        std::erase_if(tr.points, [&](const TrajectoryPoint& p) {
            return p.turn_index >= conversation->turns.size() ||
                   conversation->turns[p.turn_index].role != *role_filter;
        });
    }
    return tr;
}

}  // namespace pprobe
