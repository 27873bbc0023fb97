#pragma once

// CSV emitters (and the trajectory CSV reader) for every tabular report.

#include <charconv>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pprobe/analysis.hpp"
#include "pprobe/error.hpp"
#include "pprobe/metrics.hpp"
#include "pprobe/trajectory.hpp"

namespace pprobe::csv {

inline std::string quote(std::string_view field) {
    if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

/// Shortest text that parses back to the same double.
inline std::string number(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, end);
}

inline std::string optional_number(const std::optional<double>& v) { return v ? number(*v) : ""; }

inline void write_row(std::ostream& out, const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out << ',';
        out << quote(fields[i]);
    }
    out << '\n';
}

/// Splits one CSV record; handles RFC 4180 quoting within a single line.
inline std::vector<std::string> split_row(std::string_view line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

inline double parse_number(const std::string& s, const std::string& what) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw FormatError("cannot parse " + what + " '" + s + "'");
    return v;
}

inline std::size_t parse_count(const std::string& s, const std::string& what) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw FormatError("cannot parse " + what + " '" + s + "'");
    return v;
}

inline void write_trajectory_header(std::ostream& out, const std::vector<std::string>& class_names) {
    std::vector<std::string> h = {"conversation_id", "task", "granularity", "index"};
    for (const auto& c : class_names) h.push_back("p_" + c);
    h.push_back("predicted_class");
    h.push_back("role");
    write_row(out, h);
}

/// Rows for one trajectory. The role column is filled when the conversation is supplied.
inline void write_trajectory_rows(std::ostream& out, const Trajectory& tr,
                                  const Conversation* conv = nullptr) {
    for (const auto& p : tr.points) {
        std::vector<std::string> row = {tr.conversation_id, tr.task.name(),
                                        std::string(to_string(p.granularity)),
                                        std::to_string(p.index)};
        for (double v : p.probs) row.push_back(number(v));
        row.push_back(std::to_string(p.predicted_class));
        std::string role;
        if (conv && p.turn_index < conv->turns.size())
            role = std::string(to_string(conv->turns[p.turn_index].role));
        row.push_back(role);
        write_row(out, row);
    }
}

/// Reads a trajectory CSV back into trajectories, grouped by conversation in first-seen order.
/// Turn-granularity points get turn_index = index - 1.
inline std::vector<Trajectory> read_trajectories(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty trajectory CSV");
    auto header = split_row(line);
    if (header.size() < 6 || header[0] != "conversation_id" || header[1] != "task" ||
        header[2] != "granularity" || header[3] != "index")
        throw FormatError("unexpected trajectory CSV header");
    std::size_t pred_col = 4;
    std::vector<std::string> class_names;
    while (pred_col < header.size() && header[pred_col].rfind("p_", 0) == 0) {
        class_names.push_back(header[pred_col].substr(2));
        ++pred_col;
    }
    if (class_names.size() < 2 || pred_col >= header.size() || header[pred_col] != "predicted_class")
        throw FormatError("trajectory CSV needs >= 2 probability columns and predicted_class");

    std::vector<Trajectory> out;
    std::map<std::string, std::size_t> slot;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto f = split_row(line);
        if (f.size() < pred_col + 1)
            throw FormatError("trajectory CSV line " + std::to_string(lineno) + " is short");
        auto task = parse_task(f[1]);
        if (!task) throw FormatError("unknown task '" + f[1] + "' on line " + std::to_string(lineno));
        auto gran = parse_granularity(f[2]);
        if (!gran) throw FormatError("unknown granularity '" + f[2] + "'");
        auto [it, fresh] = slot.try_emplace(f[0], out.size());
        if (fresh) {
            Trajectory tr;
            tr.conversation_id = f[0];
            tr.task = *task;
            tr.class_names = class_names;
            out.push_back(std::move(tr));
        }
        TrajectoryPoint p;
        p.granularity = *gran;
        p.index = parse_count(f[3], "index");
        p.turn_index = (*gran != Granularity::token && p.index > 0) ? p.index - 1 : 0;
        for (std::size_t c = 0; c < class_names.size(); ++c)
            p.probs.push_back(parse_number(f[4 + c], "probability"));
        p.predicted_class = parse_count(f[pred_col], "predicted_class");
        out[it->second].points.push_back(std::move(p));
    }
    return out;
}

inline void write_curve(std::ostream& out, const TurnCurve& c) {
    write_row(out, {"turn", "value", "n"});
    for (const auto& p : c.points)
        write_row(out, {std::to_string(p.turn), number(p.value), std::to_string(p.n)});
}

inline void write_loss_curve(std::ostream& out, const std::vector<double>& losses) {
    write_row(out, {"epoch", "loss"});
    for (std::size_t i = 0; i < losses.size(); ++i)
        write_row(out, {std::to_string(i + 1), number(losses[i])});
}

inline void write_detection(std::ostream& out, const std::vector<DetectionResult>& rows) {
    write_row(out, {"turn", "tpr", "fpr", "n_pos", "n_neg"});
    for (const auto& r : rows)
        write_row(out, {std::to_string(r.turn), optional_number(r.tpr), optional_number(r.fpr),
                        std::to_string(r.n_pos), std::to_string(r.n_neg)});
}

inline void write_correlation(std::ostream& out, const CorrelationMatrix& m) {
    std::vector<std::string> h = {"strategy"};
    for (auto t : kTraits) h.emplace_back(to_string(t));
    write_row(out, h);
    for (std::size_t c = 0; c < 3; ++c) {
        std::vector<std::string> row = {std::string(to_string(kStrategies[c]))};
        for (std::size_t t = 0; t < 5; ++t) row.push_back(optional_number(m.r[c][t]));
        write_row(out, row);
    }
}

inline void write_correlation_n(std::ostream& out, const CorrelationMatrix& m) {
    std::vector<std::string> h = {"strategy"};
    for (auto t : kTraits) h.emplace_back(to_string(t));
    write_row(out, h);
    for (std::size_t c = 0; c < 3; ++c) {
        std::vector<std::string> row = {std::string(to_string(kStrategies[c]))};
        for (std::size_t t = 0; t < 5; ++t) row.push_back(std::to_string(m.n[c][t]));
        write_row(out, row);
    }
}

inline void write_calibration(std::ostream& out, const std::vector<CalibrationBin>& bins) {
    write_row(out, {"label", "proportion", "n"});
    for (const auto& b : bins) write_row(out, {b.label, number(b.proportion), std::to_string(b.n)});
}

inline void write_ablation(std::ostream& out, const std::vector<AblationDelta>& deltas,
                           const std::vector<std::string>& words) {
    write_row(out, {"word_index", "word", "delta_p"});
    for (const auto& d : deltas)
        write_row(out, {std::to_string(d.word_index),
                        d.word_index < words.size() ? words[d.word_index] : "",
                        number(d.delta)});
}

}  // namespace pprobe::csv
