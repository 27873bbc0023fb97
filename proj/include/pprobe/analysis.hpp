#pragma once

// Derived analyses on probe trajectories: trait-threshold (un)persuasion
// detection, strategy x personality correlation, semantic-label calibration,
// and knock-one-out word ablation deltas.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pprobe/activation_store.hpp"
#include "pprobe/error.hpp"
#include "pprobe/probe.hpp"
#include "pprobe/trajectory.hpp"
#include "pprobe/transcript.hpp"

namespace pprobe {

enum class Comparator { less, greater };

struct DetectionClause {
    Trait trait = Trait::agreeableness;
    Comparator cmp = Comparator::less;
    double threshold = 0.5;

    bool holds(double p) const { return cmp == Comparator::less ? p < threshold : p > threshold; }

    std::string name() const {
        return std::string(to_string(trait)) + (cmp == Comparator::less ? "<" : ">") +
               std::to_string(threshold);
    }
};

/// Flags a conversation when any clause holds (clauses are OR-ed).
struct DetectionRule {
    std::vector<DetectionClause> clauses;
    Outcome positive_class = Outcome::unpersuaded;

    void validate() const {
        if (clauses.empty()) throw InvariantError("detection rule needs at least one clause");
        for (const auto& c : clauses)
            if (!(c.threshold >= 0.0 && c.threshold <= 1.0))
                throw InvariantError("detection threshold outside [0, 1]");
        if (positive_class == Outcome::unknown)
            throw InvariantError("positive class must be persuaded or unpersuaded");
    }

    /// Low agreeableness or high neuroticism flags unpersuasion.
    static DetectionRule unpersuasion() {
        return {{{Trait::agreeableness, Comparator::less, 0.2},
                 {Trait::neuroticism, Comparator::greater, 0.8}},
                Outcome::unpersuaded};
    }

    /// High agreeableness or low neuroticism flags persuasion.
    static DetectionRule persuasion() {
        return {{{Trait::agreeableness, Comparator::greater, 0.8},
                 {Trait::neuroticism, Comparator::less, 0.2}},
                Outcome::persuaded};
    }
};

/// Parses "trait<0.2" or "trait>0.8".
inline std::optional<DetectionClause> parse_clause(std::string_view s) {
    auto pos = s.find_first_of("<>");
    if (pos == std::string_view::npos) return std::nullopt;
    auto trait = parse_trait(s.substr(0, pos));
    if (!trait) return std::nullopt;
    try {
        std::size_t used = 0;
        const std::string num(s.substr(pos + 1));
        double t = std::stod(num, &used);
        if (used != num.size()) return std::nullopt;
        return DetectionClause{*trait, s[pos] == '<' ? Comparator::less : Comparator::greater, t};
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

struct DetectionResult {
    std::size_t turn = 0;
    std::optional<double> tpr;  // absent without positives
    std::optional<double> fpr;  // absent without negatives
    std::vector<bool> flags;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
};

namespace detail {

inline std::optional<bool> flag_at(const DetectionRule& rule, const TraitTrajectories& traits,
                                   std::size_t turn) {
    bool flagged = false;
    for (const auto& c : rule.clauses) {
        auto it = traits.find(c.trait);
        if (it == traits.end()) return std::nullopt;
        const TrajectoryPoint* pt = it->second.at_index(turn);
        if (!pt) return std::nullopt;
        if (c.holds(pt->probs.at(1))) flagged = true;
    }
    return flagged;
}

inline DetectionResult rates(std::size_t turn, std::vector<bool> flags,
                             std::span<const Outcome> outcomes, Outcome positive) {
    DetectionResult r;
    r.turn = turn;
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < flags.size(); ++i) {
        if (outcomes[i] == Outcome::unknown) continue;
        if (outcomes[i] == positive) {
            ++r.n_pos;
            tp += flags[i] ? 1 : 0;
        } else {
            ++r.n_neg;
            fp += flags[i] ? 1 : 0;
        }
    }
    if (r.n_pos > 0) r.tpr = static_cast<double>(tp) / static_cast<double>(r.n_pos);
    if (r.n_neg > 0) r.fpr = static_cast<double>(fp) / static_cast<double>(r.n_neg);
    r.flags = std::move(flags);
    return r;
}

}  // namespace detail

/// Applies the rule at one 1-based turn. Every conversation must have trait points there.
inline DetectionResult detect(const DetectionRule& rule,
                              std::span<const TraitTrajectories> trajectories,
                              std::span<const Outcome> outcomes, std::size_t turn) {
    rule.validate();
    if (trajectories.size() != outcomes.size())
        throw DimensionError("every conversation needs exactly one outcome");
    std::vector<bool> flags;
    flags.reserve(trajectories.size());
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
        auto f = detail::flag_at(rule, trajectories[i], turn);
        if (!f)
            throw DataError("conversation " + std::to_string(i) + " has no trait points at turn " +
                            std::to_string(turn));
        flags.push_back(*f);
    }
    return detail::rates(turn, std::move(flags), outcomes, rule.positive_class);
}

/// detect() at every turn, each over the conversations that reach it.
/// flags in each row refer to that turn's surviving subset, in input order.
inline std::vector<DetectionResult> detection_curve(const DetectionRule& rule,
                                                    std::span<const TraitTrajectories> trajectories,
                                                    std::span<const Outcome> outcomes) {
    rule.validate();
    if (trajectories.size() != outcomes.size())
        throw DimensionError("every conversation needs exactly one outcome");
    std::size_t max_turn = 0;
    for (const auto& tt : trajectories)
        for (const auto& [trait, tr] : tt)
            for (const auto& p : tr.points) max_turn = std::max(max_turn, p.index);
    std::vector<DetectionResult> out;
    for (std::size_t k = 1; k <= max_turn; ++k) {
        std::vector<bool> flags;
        std::vector<Outcome> kept;
        for (std::size_t i = 0; i < trajectories.size(); ++i) {
            auto f = detail::flag_at(rule, trajectories[i], k);
            if (!f) continue;
            flags.push_back(*f);
            kept.push_back(outcomes[i]);
        }
        if (flags.empty()) continue;
        out.push_back(detail::rates(k, std::move(flags), kept, rule.positive_class));
    }
    return out;
}

/// Pearson correlation; absent when either series has zero variance.
inline std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw DimensionError("series differ in length");
    if (x.size() < 2) throw DataError("correlation needs at least two observations");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) return std::nullopt;
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Per-conversation summary: mean strategy distribution over persuader turns and
/// mean P(high trait) over persuadee turns.
struct StrategyTraitSample {
    std::string conversation_id;
    Outcome outcome = Outcome::unknown;
    std::array<double, 3> strategy{};
    std::array<double, 5> traits{};
};

/// Returns nullopt when the conversation lacks a persuader or a persuadee point.
inline std::optional<StrategyTraitSample> aggregate_conversation(const Conversation& conv,
                                                                 const Trajectory& strategy,
                                                                 const TraitTrajectories& traits) {
    if (strategy.task.kind != Task::Kind::strategy)
        throw DataError("expected a strategy trajectory");
    auto role_of = [&](const TrajectoryPoint& p) -> std::optional<Role> {
        if (p.turn_index >= conv.turns.size()) return std::nullopt;
        return conv.turns[p.turn_index].role;
    };
    StrategyTraitSample s;
    s.conversation_id = conv.id;
    s.outcome = conv.labels.outcome;
    std::size_t n_er = 0;
    for (const auto& p : strategy.points) {
        if (role_of(p) != Role::persuader) continue;
        for (std::size_t c = 0; c < 3; ++c) s.strategy[c] += p.probs.at(c);
        ++n_er;
    }
    if (n_er == 0) return std::nullopt;
    for (double& v : s.strategy) v /= static_cast<double>(n_er);

    for (auto t : kTraits) {
        auto it = traits.find(t);
        if (it == traits.end())
            throw DataError("missing trajectory for trait " + std::string(to_string(t)));
        double sum = 0.0;
        std::size_t n_ee = 0;
        for (const auto& p : it->second.points) {
            if (role_of(p) != Role::persuadee) continue;
            sum += p.probs.at(1);
            ++n_ee;
        }
        if (n_ee == 0) return std::nullopt;
        s.traits[static_cast<std::size_t>(t)] = sum / static_cast<double>(n_ee);
    }
    return s;
}

enum class OutcomeFilter { persuaded, unpersuaded, all };

inline std::optional<OutcomeFilter> parse_outcome_filter(std::string_view s) {
    if (s == "persuaded") return OutcomeFilter::persuaded;
    if (s == "unpersuaded") return OutcomeFilter::unpersuaded;
    if (s == "all") return OutcomeFilter::all;
    return std::nullopt;
}

/// Rows: strategies (logical, emotional, credibility). Columns: traits in canonical order.
struct CorrelationMatrix {
    std::array<std::array<std::optional<double>, 5>, 3> r{};
    std::array<std::array<std::size_t, 5>, 3> n{};
};

inline CorrelationMatrix correlate(std::span<const StrategyTraitSample> samples,
                                   OutcomeFilter filter = OutcomeFilter::persuaded) {
    std::vector<const StrategyTraitSample*> kept;
    for (const auto& s : samples) {
        if (filter == OutcomeFilter::persuaded && s.outcome != Outcome::persuaded) continue;
        if (filter == OutcomeFilter::unpersuaded && s.outcome != Outcome::unpersuaded) continue;
        kept.push_back(&s);
    }
    if (kept.size() < 3)
        throw DataError("correlation needs at least 3 conversations, got " +
                        std::to_string(kept.size()));
    CorrelationMatrix m;
    std::vector<double> xs(kept.size()), ys(kept.size());
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t t = 0; t < 5; ++t) {
            for (std::size_t i = 0; i < kept.size(); ++i) {
                xs[i] = kept[i]->strategy[c];
                ys[i] = kept[i]->traits[t];
            }
            m.r[c][t] = pearson(xs, ys);
            m.n[c][t] = kept.size();
        }
    return m;
}

struct CalibrationBin {
    std::string label;
    double proportion = 0.0;
    std::size_t n = 0;
};

/// Share of utterances per semantic label scored persuasive (score >= threshold),
/// sorted by proportion descending, then label ascending.
inline std::vector<CalibrationBin> calibration_histogram(std::span<const double> scores,
                                                         std::span<const std::string> labels,
                                                         double threshold = 0.5) {
    if (scores.size() != labels.size()) throw DimensionError("every score needs one label");
    if (scores.empty()) throw DataError("calibration histogram of an empty set");
    std::map<std::string, std::pair<std::size_t, std::size_t>> acc;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        auto& [hits, n] = acc[labels[i]];
        hits += scores[i] >= threshold ? 1 : 0;
        ++n;
    }
    std::vector<CalibrationBin> out;
    for (const auto& [label, hn] : acc)
        out.push_back({label, static_cast<double>(hn.first) / static_cast<double>(hn.second),
                       hn.second});
    std::stable_sort(out.begin(), out.end(), [](const CalibrationBin& a, const CalibrationBin& b) {
        if (a.proportion != b.proportion) return a.proportion > b.proportion;
        return a.label < b.label;
    });
    return out;
}

struct AblatedBundle {
    std::size_t word_index = 0;
    ActivationBundle bundle;
};

struct AblationDelta {
    std::size_t word_index = 0;
    double delta = 0.0;
};

/// P(persuaded | original) - P(persuaded | variant), both read at the last in-span token.
inline std::vector<AblationDelta> ablation_deltas(const ActivationBundle& original,
                                                  std::span<const AblatedBundle> variants,
                                                  const ProbeModel& probe) {
    auto final_positive = [&](const ActivationBundle& b) {
        return conversation_end_point(probe, b).points.front().probs.at(1);
    };
    const double base = final_positive(original);
    std::vector<AblationDelta> out;
    out.reserve(variants.size());
    for (const auto& v : variants) {
        if (v.bundle.d != original.d)
            throw DimensionError("ablation variant for word " + std::to_string(v.word_index) +
                                 " has d=" + std::to_string(v.bundle.d) + ", original has d=" +
                                 std::to_string(original.d));
        if (v.bundle.model_id != original.model_id)
            throw DataError("ablation variant for word " + std::to_string(v.word_index) +
                            " comes from a different model");
        out.push_back({v.word_index, base - final_positive(v.bundle)});
    }
    return out;
}

}  // namespace pprobe
