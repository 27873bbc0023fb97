#pragma once

// Conversation data model and the line-oriented transcript corpus reader/writer.

#include <algorithm>
#include <cctype>
#include <array>
#include <cstddef>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "pprobe/error.hpp"

namespace pprobe {

enum class Role { persuader, persuadee };

enum class Strategy { logical = 0, emotional = 1, credibility = 2 };

enum class Outcome { persuaded, unpersuaded, unknown };

/// Big-5 traits in canonical order; the enum value doubles as an array index.
enum class Trait { openness = 0, extraversion, conscientiousness, agreeableness, neuroticism };

inline constexpr std::array<Trait, 5> kTraits = {Trait::openness, Trait::extraversion,
                                                 Trait::conscientiousness, Trait::agreeableness,
                                                 Trait::neuroticism};

inline constexpr std::array<Strategy, 3> kStrategies = {Strategy::logical, Strategy::emotional,
                                                        Strategy::credibility};

inline constexpr double kTraitMin = 1.0;
inline constexpr double kTraitMax = 5.0;

inline std::string_view to_string(Role r) {
    return r == Role::persuader ? "persuader" : "persuadee";
}

inline std::string_view to_string(Strategy s) {
    switch (s) {
        case Strategy::logical: return "logical";
        case Strategy::emotional: return "emotional";
        case Strategy::credibility: return "credibility";
    }
    return "";
}

inline std::string_view to_string(Outcome o) {
    switch (o) {
        case Outcome::persuaded: return "persuaded";
        case Outcome::unpersuaded: return "unpersuaded";
        case Outcome::unknown: return "unknown";
    }
    return "";
}

inline std::string_view to_string(Trait t) {
    static constexpr std::array<std::string_view, 5> names = {
        "openness", "extraversion", "conscientiousness", "agreeableness", "neuroticism"};
    return names[static_cast<std::size_t>(t)];
}

inline std::optional<Role> parse_role(std::string_view s) {
    if (s == "persuader") return Role::persuader;
    if (s == "persuadee") return Role::persuadee;
    return std::nullopt;
}

inline std::optional<Strategy> parse_strategy(std::string_view s) {
    for (auto st : kStrategies)
        if (to_string(st) == s) return st;
    return std::nullopt;
}

inline std::optional<Outcome> parse_outcome(std::string_view s) {
    for (auto o : {Outcome::persuaded, Outcome::unpersuaded, Outcome::unknown})
        if (to_string(o) == s) return o;
    return std::nullopt;
}

inline std::optional<Trait> parse_trait(std::string_view s) {
    for (auto t : kTraits)
        if (to_string(t) == s) return t;
    return std::nullopt;
}

/// Scores indexed by Trait; each lies in [1, 5].
using Big5 = std::array<double, 5>;

inline double trait_score(const Big5& scores, Trait t) {
    return scores[static_cast<std::size_t>(t)];
}

struct Turn {
    std::size_t index = 0;
    Role role = Role::persuader;
    std::string text;
    std::optional<std::string> semantic_label;
    std::optional<Strategy> strategy_label;

    bool operator==(const Turn&) const = default;
};

struct ConversationLabels {
    Outcome outcome = Outcome::unknown;
    std::optional<Big5> ee_big5;
    std::optional<Big5> er_big5;

    bool operator==(const ConversationLabels&) const = default;
};

struct Conversation {
    std::string id;
    std::vector<Turn> turns;
    ConversationLabels labels;

    std::size_t turn_count() const noexcept { return turns.size(); }

    bool operator==(const Conversation&) const = default;
};

namespace detail {

inline bool is_blank(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

inline Big5 parse_big5(const nlohmann::json& obj, std::size_t line, const std::string& field) {
    if (!obj.is_object()) throw SchemaError(line, field, "expected an object of trait scores");
    Big5 scores{};
    std::array<bool, 5> seen{};
    for (const auto& [key, value] : obj.items()) {
        auto trait = parse_trait(key);
        if (!trait) throw SchemaError(line, field + "." + key, "unknown trait");
        if (!value.is_number())
            throw SchemaError(line, field + "." + key, "trait score must be a number");
        double v = value.get<double>();
        if (!(v >= kTraitMin && v <= kTraitMax))
            throw SchemaError(line, field + "." + key, "trait score outside [1, 5]");
        scores[static_cast<std::size_t>(*trait)] = v;
        seen[static_cast<std::size_t>(*trait)] = true;
    }
    for (auto t : kTraits)
        if (!seen[static_cast<std::size_t>(t)])
            throw SchemaError(line, field + "." + std::string(to_string(t)), "missing trait");
    return scores;
}

inline const std::string& require_string(const nlohmann::json& obj, const char* key,
                                         std::size_t line, const std::string& field) {
    auto it = obj.find(key);
    if (it == obj.end()) throw SchemaError(line, field, "missing required field");
    if (!it->is_string()) throw SchemaError(line, field, "expected a string");
    return it->get_ref<const std::string&>();
}

inline Conversation parse_record(const nlohmann::json& rec, std::size_t line) {
    if (!rec.is_object()) throw SchemaError(line, "<record>", "expected a JSON object");
    Conversation conv;
    conv.id = require_string(rec, "id", line, "id");
    if (conv.id.empty()) throw SchemaError(line, "id", "empty conversation id");

    if (auto it = rec.find("outcome"); it != rec.end() && !it->is_null()) {
        if (!it->is_string()) throw SchemaError(line, "outcome", "expected a string");
        auto o = parse_outcome(it->get<std::string>());
        if (!o) throw SchemaError(line, "outcome", "invalid outcome '" + it->get<std::string>() + "'");
        conv.labels.outcome = *o;
    }
    if (auto it = rec.find("ee_big5"); it != rec.end() && !it->is_null())
        conv.labels.ee_big5 = parse_big5(*it, line, "ee_big5");
    if (auto it = rec.find("er_big5"); it != rec.end() && !it->is_null())
        conv.labels.er_big5 = parse_big5(*it, line, "er_big5");

    auto turns = rec.find("turns");
    if (turns == rec.end()) throw SchemaError(line, "turns", "missing required field");
    if (!turns->is_array()) throw SchemaError(line, "turns", "expected an array");
    if (turns->empty()) throw SchemaError(line, "turns", "conversation has no turns");

    for (std::size_t i = 0; i < turns->size(); ++i) {
        const auto& t = (*turns)[i];
        const std::string prefix = "turns[" + std::to_string(i) + "]";
        if (!t.is_object()) throw SchemaError(line, prefix, "expected an object");
        Turn turn;
        turn.index = i;
        const auto& role = require_string(t, "role", line, prefix + ".role");
        auto r = parse_role(role);
        if (!r) throw SchemaError(line, prefix + ".role", "invalid role '" + role + "'");
        turn.role = *r;
        turn.text = require_string(t, "text", line, prefix + ".text");
        if (is_blank(turn.text)) throw SchemaError(line, prefix + ".text", "empty turn text");
        if (auto it = t.find("semantic_label"); it != t.end() && !it->is_null()) {
            if (!it->is_string())
                throw SchemaError(line, prefix + ".semantic_label", "expected a string");
            turn.semantic_label = it->get<std::string>();
        }
        if (auto it = t.find("strategy_label"); it != t.end() && !it->is_null()) {
            if (!it->is_string())
                throw SchemaError(line, prefix + ".strategy_label", "expected a string");
            auto s = parse_strategy(it->get<std::string>());
            if (!s)
                throw SchemaError(line, prefix + ".strategy_label",
                                  "invalid strategy '" + it->get<std::string>() + "'");
            turn.strategy_label = *s;
        }
        conv.turns.push_back(std::move(turn));
    }
    return conv;
}

inline nlohmann::json big5_to_json(const Big5& scores) {
    nlohmann::json obj = nlohmann::json::object();
    for (auto t : kTraits) obj[std::string(to_string(t))] = trait_score(scores, t);
    return obj;
}

}  // namespace detail

/// Reads one conversation per line. Blank lines are skipped; line numbers in
/// errors are 1-based positions in the stream.
inline std::vector<Conversation> parse_transcripts(std::istream& in) {
    std::vector<Conversation> out;
    std::unordered_set<std::string> ids;
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (!text.empty() && text.back() == '\r') text.pop_back();
        if (detail::is_blank(text)) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(text);
        } catch (const nlohmann::json::parse_error& e) {
            throw SchemaError(line, "<record>", std::string("malformed JSON: ") + e.what());
        }
        auto conv = detail::parse_record(rec, line);
        if (!ids.insert(conv.id).second)
            throw SchemaError(line, "id", "duplicate conversation id '" + conv.id + "'");
        out.push_back(std::move(conv));
    }
    return out;
}

inline nlohmann::json to_json(const Conversation& conv) {
    nlohmann::json rec;
    rec["id"] = conv.id;
    rec["outcome"] = to_string(conv.labels.outcome);
    if (conv.labels.ee_big5) rec["ee_big5"] = detail::big5_to_json(*conv.labels.ee_big5);
    if (conv.labels.er_big5) rec["er_big5"] = detail::big5_to_json(*conv.labels.er_big5);
    nlohmann::json turns = nlohmann::json::array();
    for (const auto& t : conv.turns) {
        nlohmann::json jt;
        jt["role"] = to_string(t.role);
        jt["text"] = t.text;
        if (t.semantic_label) jt["semantic_label"] = *t.semantic_label;
        if (t.strategy_label) jt["strategy_label"] = to_string(*t.strategy_label);
        turns.push_back(std::move(jt));
    }
    rec["turns"] = std::move(turns);
    return rec;
}

inline void write_transcripts(std::ostream& out, const std::vector<Conversation>& convs) {
    for (const auto& c : convs) out << to_json(c).dump() << '\n';
}

/// Turn indices in ascending order, optionally restricted to one role.
inline std::vector<std::size_t> select_turns(const Conversation& conv,
                                             std::optional<Role> role = std::nullopt) {
    std::vector<std::size_t> idx;
    for (const auto& t : conv.turns)
        if (!role || t.role == *role) idx.push_back(t.index);
    return idx;
}

enum class TraitClass { low = 0, high = 1 };

/// Midpoint split of the 1-5 scale; the midpoint itself counts as high.
inline TraitClass binarize_trait(double score) {
    if (!(score >= kTraitMin && score <= kTraitMax))
        throw InvariantError("trait score " + std::to_string(score) + " outside [1, 5]");
    return score >= 3.0 ? TraitClass::high : TraitClass::low;
}

/// Whitespace-delimited words across all turns, in conversation order.
inline std::vector<std::string> conversation_words(const Conversation& conv) {
    std::vector<std::string> words;
    for (const auto& t : conv.turns) {
        std::size_t i = 0;
        const auto& s = t.text;
        while (i < s.size()) {
            while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
            std::size_t j = i;
            while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
            if (j > i) words.emplace_back(s.substr(i, j - i));
            i = j;
        }
    }
    return words;
}

}  // namespace pprobe
