#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pprobe/transcript.hpp"

namespace pprobe {

/// What a probe reads out: persuasion outcome, one Big-5 trait, or rhetorical strategy.
struct Task {
    enum class Kind { persuasion, trait, strategy };

    Kind kind = Kind::persuasion;
    Trait trait = Trait::openness;  // meaningful only for Kind::trait

    static Task persuasion() { return {Kind::persuasion, Trait::openness}; }
    static Task of_trait(Trait t) { return {Kind::trait, t}; }
    static Task strategy() { return {Kind::strategy, Trait::openness}; }

    std::size_t class_count() const { return kind == Kind::strategy ? 3 : 2; }

    /// Class 1 is the positive class for the binary tasks.
    std::vector<std::string> class_names() const {
        switch (kind) {
            case Kind::persuasion: return {"unpersuaded", "persuaded"};
            case Kind::trait: return {"low", "high"};
            case Kind::strategy: return {"logical", "emotional", "credibility"};
        }
        return {};
    }

    std::string name() const {
        switch (kind) {
            case Kind::persuasion: return "persuasion";
            case Kind::trait: return "trait:" + std::string(to_string(trait));
            case Kind::strategy: return "strategy";
        }
        return {};
    }

    bool operator==(const Task& o) const {
        return kind == o.kind && (kind != Kind::trait || trait == o.trait);
    }
};

inline std::optional<Task> parse_task(std::string_view s) {
    if (s == "persuasion") return Task::persuasion();
    if (s == "strategy") return Task::strategy();
    constexpr std::string_view prefix = "trait:";
    if (s.substr(0, prefix.size()) == prefix) {
        if (auto t = parse_trait(s.substr(prefix.size()))) return Task::of_trait(*t);
    }
    return std::nullopt;
}

}  // namespace pprobe
