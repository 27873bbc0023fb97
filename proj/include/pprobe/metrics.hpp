#pragma once

// Evaluation metrics: rank AUROC, Big-5 rescaling and per-turn MSE,
// Jensen-Shannon distance, Cohen's kappa and threshold reports.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pprobe/error.hpp"
#include "pprobe/trajectory.hpp"

namespace pprobe {

struct CurvePoint {
    std::size_t turn = 0;
    double value = 0.0;
    std::size_t n = 0;
};

struct OmittedPoint {
    std::size_t turn = 0;
    std::string reason;
};

struct TurnCurve {
    std::string metric;
    std::vector<CurvePoint> points;
    std::vector<OmittedPoint> omitted;

    const CurvePoint* at(std::size_t turn) const {
        for (const auto& p : points)
            if (p.turn == turn) return &p;
        return nullptr;
    }
};

namespace detail {

inline void check_binary(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size())
        throw DimensionError("scores and labels differ in length (" +
                             std::to_string(scores.size()) + " vs " +
                             std::to_string(labels.size()) + ")");
    for (int y : labels)
        if (y != 0 && y != 1) throw InvariantError("binary labels must be 0 or 1");
    for (double s : scores)
        if (std::isnan(s)) throw InvariantError("score is NaN");
}

}  // namespace detail

/// Mann-Whitney form: fraction of positive/negative pairs where the positive scores higher,
/// ties counting one half. Computed from mid-ranks in O(n log n).
inline double auroc(std::span<const double> scores, std::span<const int> labels) {
    detail::check_binary(scores, labels);
    const std::size_t n = scores.size();
    std::size_t n_pos = 0;
    for (int y : labels) n_pos += static_cast<std::size_t>(y);
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw DataError("AUROC needs both positive and negative labels");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Sum of doubled mid-ranks of positives keeps everything integral.
    std::size_t doubled_rank_sum = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const std::size_t doubled_mid = i + 1 + j;  // 2 * average of ranks i+1..j
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]] == 1) doubled_rank_sum += doubled_mid;
        i = j;
    }
    const double u = static_cast<double>(doubled_rank_sum) / 2.0 -
                     static_cast<double>(n_pos) * static_cast<double>(n_pos + 1) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

/// Maps a trait probability onto the 1-5 Big-5 scale.
inline double rescale_trait(double p) {
    if (!(p >= 0.0 && p <= 1.0))
        throw InvariantError("probability " + std::to_string(p) + " outside [0, 1]");
    return 1.0 + 4.0 * p;
}

/// Per-turn mean of (rescale(P(high)) - truth)^2 over conversations reaching that turn.
/// truths[i] is the conversation-level score paired with trajectories[i].
inline TurnCurve trait_mse_curve(std::span<const Trajectory> trajectories,
                                 std::span<const double> truths) {
    if (trajectories.size() != truths.size())
        throw DimensionError("every trajectory needs exactly one truth score");
    for (double t : truths)
        if (!(t >= kTraitMin && t <= kTraitMax))
            throw InvariantError("truth score " + std::to_string(t) + " outside [1, 5]");
    std::map<std::size_t, std::pair<double, std::size_t>> acc;
    for (std::size_t i = 0; i < trajectories.size(); ++i)
        for (const auto& pt : trajectories[i].points) {
            const double e = rescale_trait(pt.probs.at(1)) - truths[i];
            auto& [sum, n] = acc[pt.index];
            sum += e * e;
            ++n;
        }
    if (acc.empty()) throw DataError("no predictions to compare against truth scores");
    TurnCurve curve{"trait_mse", {}, {}};
    for (const auto& [turn, sn] : acc)
        curve.points.push_back({turn, sn.first / static_cast<double>(sn.second), sn.second});
    return curve;
}

namespace detail {

inline void check_simplex(std::span<const double> p, const char* name) {
    double sum = 0.0;
    for (double v : p) {
        if (!(v >= 0.0)) throw InvariantError(std::string(name) + " has a negative or NaN entry");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw InvariantError(std::string(name) + " does not sum to 1 (sum=" + std::to_string(sum) +
                             ")");
}

inline double plogp_ratio(double a, double m) { return a > 0.0 ? a * std::log2(a / m) : 0.0; }

}  // namespace detail

/// Jensen-Shannon distance with base-2 logarithms, so the result lies in [0, 1].
inline double jsd(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size())
        throw DimensionError("distributions differ in dimension (" + std::to_string(p.size()) +
                             " vs " + std::to_string(q.size()) + ")");
    detail::check_simplex(p, "p");
    detail::check_simplex(q, "q");
    double div = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double m = 0.5 * (p[i] + q[i]);
        div += 0.5 * detail::plogp_ratio(p[i], m) + 0.5 * detail::plogp_ratio(q[i], m);
    }
    return std::sqrt(std::clamp(div, 0.0, 1.0));
}

inline double jsd(const std::vector<double>& p, const std::vector<double>& q) {
    return jsd(std::span<const double>(p), std::span<const double>(q));
}

/// At each turn, JSD between the mean subject and mean reference distributions over the
/// conversations (paired by id) that have a point at that turn on both sides.
inline TurnCurve strategy_jsd_curve(std::span<const Trajectory> subject,
                                    std::span<const Trajectory> reference) {
    std::map<std::string, const Trajectory*> ref_by_id;
    for (const auto& r : reference) ref_by_id[r.conversation_id] = &r;

    struct Acc {
        std::vector<double> subj;
        std::vector<double> ref;
        std::size_t n = 0;
    };
    std::map<std::size_t, Acc> acc;
    for (const auto& s : subject) {
        auto it = ref_by_id.find(s.conversation_id);
        if (it == ref_by_id.end()) continue;
        for (const auto& pt : s.points) {
            const TrajectoryPoint* rp = it->second->at_index(pt.index);
            if (!rp) continue;
            if (rp->probs.size() != pt.probs.size())
                throw DimensionError("subject and reference class counts differ");
            auto& a = acc[pt.index];
            if (a.n == 0) {
                a.subj.assign(pt.probs.size(), 0.0);
                a.ref.assign(pt.probs.size(), 0.0);
            }
            for (std::size_t c = 0; c < pt.probs.size(); ++c) {
                a.subj[c] += pt.probs[c];
                a.ref[c] += rp->probs[c];
            }
            ++a.n;
        }
    }
    auto normalize = [](std::vector<double>& v) {
        const double s = std::accumulate(v.begin(), v.end(), 0.0);
        for (double& x : v) x /= s;
    };
    TurnCurve curve{"strategy_jsd", {}, {}};
    for (auto& [turn, a] : acc) {
        normalize(a.subj);
        normalize(a.ref);
        curve.points.push_back({turn, jsd(a.subj, a.ref), a.n});
    }
    return curve;
}

/// Chance-corrected agreement between two label sequences over any comparable label type.
template <typename Label>
double cohens_kappa(std::span<const Label> a, std::span<const Label> b) {
    if (a.size() != b.size())
        throw DimensionError("label sequences differ in length (" + std::to_string(a.size()) +
                             " vs " + std::to_string(b.size()) + ")");
    if (a.empty()) throw DataError("kappa of empty label sequences");
    std::map<Label, std::pair<std::size_t, std::size_t>> counts;
    std::size_t agree = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i]) ++agree;
        ++counts[a[i]].first;
        ++counts[b[i]].second;
    }
    const double n = static_cast<double>(a.size());
    const double p_o = static_cast<double>(agree) / n;
    double p_e = 0.0;
    for (const auto& [label, c] : counts)
        p_e += (static_cast<double>(c.first) / n) * (static_cast<double>(c.second) / n);
    if (p_e >= 1.0) {
        if (p_o == 1.0) return 1.0;
        throw DataError("kappa undefined: chance agreement is 1 but observed agreement is not");
    }
    return (p_o - p_e) / (1.0 - p_e);
}

template <typename Label>
double cohens_kappa(const std::vector<Label>& a, const std::vector<Label>& b) {
    return cohens_kappa(std::span<const Label>(a), std::span<const Label>(b));
}

struct ClassificationReport {
    double threshold = 0.5;
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t tn = 0;
    std::size_t fn = 0;
    double accuracy = 0.0;
    std::optional<double> precision;  // absent when nothing is predicted positive
    std::optional<double> recall;     // absent when there are no positives
};

/// Predicts positive iff score >= threshold.
inline ClassificationReport classification_report(std::span<const double> scores,
                                                  std::span<const int> labels,
                                                  double threshold = 0.5) {
    detail::check_binary(scores, labels);
    if (scores.empty()) throw DataError("classification report of an empty set");
    ClassificationReport r;
    r.threshold = threshold;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] >= threshold;
        const bool pos = labels[i] == 1;
        if (pred && pos) ++r.tp;
        else if (pred) ++r.fp;
        else if (pos) ++r.fn;
        else ++r.tn;
    }
    r.accuracy = static_cast<double>(r.tp + r.tn) / static_cast<double>(scores.size());
    if (r.tp + r.fp > 0) r.precision = static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp);
    if (r.tp + r.fn > 0) r.recall = static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn);
    return r;
}

inline nlohmann::json to_json(const ClassificationReport& r) {
    auto opt = [](const std::optional<double>& v) -> nlohmann::json {
        return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    };
    return {{"threshold", r.threshold}, {"accuracy", r.accuracy}, {"precision", opt(r.precision)},
            {"recall", opt(r.recall)},  {"tp", r.tp},             {"fp", r.fp},
            {"tn", r.tn},               {"fn", r.fn}};
}

/// Per-turn AUROC of P(persuaded) against outcomes (1 = persuaded) over conversations
/// reaching that turn. Turns where only one class survives are omitted with a reason.
inline TurnCurve auroc_curve(std::span<const Trajectory> trajectories,
                             std::span<const int> outcomes) {
    if (trajectories.size() != outcomes.size())
        throw DimensionError("every trajectory needs exactly one outcome");
    std::map<std::size_t, std::pair<std::vector<double>, std::vector<int>>> by_turn;
    for (std::size_t i = 0; i < trajectories.size(); ++i)
        for (const auto& pt : trajectories[i].points) {
            auto& [s, y] = by_turn[pt.index];
            s.push_back(pt.probs.at(1));
            y.push_back(outcomes[i]);
        }
    TurnCurve curve{"auroc", {}, {}};
    for (const auto& [turn, sy] : by_turn) {
        const auto& [s, y] = sy;
        const auto pos = static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
        if (pos == 0 || pos == y.size()) {
            curve.omitted.push_back({turn, "single-class population (" + std::to_string(y.size()) +
                                               " conversations, " + std::to_string(pos) +
                                               " persuaded)"});
            continue;
        }
        curve.points.push_back({turn, auroc(s, y), y.size()});
    }
    return curve;
}

inline nlohmann::json to_json(const TurnCurve& c) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : c.points) pts.push_back({{"turn", p.turn}, {"value", p.value}, {"n", p.n}});
    nlohmann::json om = nlohmann::json::array();
    for (const auto& o : c.omitted) om.push_back({{"turn", o.turn}, {"reason", o.reason}});
    return {{"metric", c.metric}, {"points", pts}, {"omitted", om}};
}

}  // namespace pprobe
