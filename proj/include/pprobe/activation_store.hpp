#pragma once

// Activation bundles (.ppab): per-token residual-stream activations for one
// conversation at one layer, plus the turn/token alignment needed to pick
// window representatives. Also assembles labeled probe datasets from them.
//
// On-disk layout, all integers little-endian:
//   "PPAB" | version u32 | d u32 | n_tokens u32 | layer u32 | meta_len u32
//   | meta (UTF-8 JSON) | n_tokens * d f32, row-major

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <iterator>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "pprobe/error.hpp"
#include "pprobe/task.hpp"
#include "pprobe/transcript.hpp"

namespace pprobe {

inline constexpr std::array<char, 4> kBundleMagic = {'P', 'P', 'A', 'B'};
inline constexpr std::uint32_t kBundleVersion = 1;
inline constexpr std::size_t kBundleHeaderSize = 24;

/// Token range [start, end) belonging to one turn.
struct TurnSpan {
    std::size_t turn_index = 0;
    std::size_t start = 0;
    std::size_t end = 0;

    bool operator==(const TurnSpan&) const = default;
};

struct ActivationBundle {
    std::string conversation_id;
    std::string model_id;
    std::uint32_t layer = 0;
    std::size_t d = 0;
    std::size_t n_tokens = 0;
    std::vector<std::string> token_strings;
    std::vector<TurnSpan> turn_spans;
    std::vector<float> matrix;  // n_tokens x d, row-major
    /// Metadata keys this reader does not interpret (e.g. a rendering stamp); kept verbatim.
    nlohmann::json extra_metadata = nlohmann::json::object();

    std::span<const float> row(std::size_t token) const {
        return {matrix.data() + token * d, d};
    }
    std::span<float> row(std::size_t token) { return {matrix.data() + token * d, d}; }

    const TurnSpan* find_span(std::size_t turn_index) const {
        auto it = std::lower_bound(
            turn_spans.begin(), turn_spans.end(), turn_index,
            [](const TurnSpan& s, std::size_t t) { return s.turn_index < t; });
        if (it == turn_spans.end() || it->turn_index != turn_index) return nullptr;
        return &*it;
    }

    /// Number of turns covered, assuming spans for 0..T-1.
    std::size_t span_turn_count() const {
        return turn_spans.empty() ? 0 : turn_spans.back().turn_index + 1;
    }

    /// Token positions inside some turn span, ascending.
    std::vector<std::size_t> in_span_tokens() const {
        std::vector<std::size_t> out;
        for (const auto& s : turn_spans)
            for (std::size_t j = s.start; j < s.end; ++j) out.push_back(j);
        return out;
    }

    /// Throws InvariantError when a structural invariant is broken.
    void validate() const {
        if (n_tokens == 0) throw InvariantError("bundle has no tokens");
        if (d == 0) throw InvariantError("bundle has zero embedding dimension");
        if (token_strings.size() != n_tokens)
            throw InvariantError("token_strings has " + std::to_string(token_strings.size()) +
                                 " entries, expected " + std::to_string(n_tokens));
        if (matrix.size() != n_tokens * d)
            throw InvariantError("matrix has " + std::to_string(matrix.size()) +
                                 " entries, expected " + std::to_string(n_tokens * d));
        for (std::size_t i = 0; i < turn_spans.size(); ++i) {
            const auto& s = turn_spans[i];
            if (!(s.start < s.end) || s.end > n_tokens)
                throw InvariantError("turn span " + std::to_string(s.turn_index) +
                                     " out of range or empty");
            if (i > 0) {
                const auto& p = turn_spans[i - 1];
                if (s.turn_index <= p.turn_index)
                    throw InvariantError("turn spans not ordered by turn index");
                if (s.start < p.end) throw InvariantError("turn spans overlap");
            }
        }
        for (float v : matrix)
            if (!std::isfinite(v)) throw InvariantError("non-finite activation entry");
    }

    bool operator==(const ActivationBundle& o) const {
        if (!(conversation_id == o.conversation_id && model_id == o.model_id &&
              layer == o.layer && d == o.d && n_tokens == o.n_tokens &&
              token_strings == o.token_strings && turn_spans == o.turn_spans &&
              extra_metadata == o.extra_metadata && matrix.size() == o.matrix.size()))
            return false;
        // Bitwise, so -0.0 and 0.0 differ.
        return std::memcmp(matrix.data(), o.matrix.data(), matrix.size() * sizeof(float)) == 0;
    }
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(std::string_view in, std::size_t pos) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    return v;
}

inline std::uint32_t checked_u32(std::size_t v, const char* what) {
    if (v > 0xFFFFFFFFu) throw InvariantError(std::string(what) + " exceeds u32 range");
    return static_cast<std::uint32_t>(v);
}

}  // namespace detail

/// Serializes a validated bundle to its byte representation.
inline std::string encode_bundle(const ActivationBundle& b) {
    b.validate();
    nlohmann::json meta = b.extra_metadata;
    meta["conversation_id"] = b.conversation_id;
    meta["model_id"] = b.model_id;
    meta["token_strings"] = b.token_strings;
    nlohmann::json spans = nlohmann::json::array();
    for (const auto& s : b.turn_spans) spans.push_back({s.turn_index, s.start, s.end});
    meta["turn_spans"] = std::move(spans);
    // Invalid UTF-8 in token strings is replaced rather than rejected.
    const std::string meta_text = meta.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);

    std::string out;
    out.reserve(kBundleHeaderSize + meta_text.size() + 4 * b.matrix.size());
    out.append(kBundleMagic.data(), kBundleMagic.size());
    detail::put_u32(out, kBundleVersion);
    detail::put_u32(out, detail::checked_u32(b.d, "d"));
    detail::put_u32(out, detail::checked_u32(b.n_tokens, "n_tokens"));
    detail::put_u32(out, b.layer);
    detail::put_u32(out, detail::checked_u32(meta_text.size(), "metadata length"));
    out += meta_text;
    for (float v : b.matrix) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

/// Writes the bundle and returns the number of bytes emitted.
inline std::size_t write_bundle(const ActivationBundle& b, std::ostream& sink) {
    const std::string bytes = encode_bundle(b);
    sink.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!sink) throw Error("failed writing activation bundle");
    return bytes.size();
}

inline ActivationBundle decode_bundle(std::string_view bytes) {
    if (bytes.size() < 4 || !std::equal(kBundleMagic.begin(), kBundleMagic.end(), bytes.begin()))
        throw FormatError("bad magic: not an activation bundle");
    if (bytes.size() < kBundleHeaderSize)
        throw TruncationError(kBundleHeaderSize, bytes.size());
    const std::uint32_t version = detail::get_u32(bytes, 4);
    if (version == 0 || version > kBundleVersion)
        throw UnsupportedVersionError("unsupported bundle version " + std::to_string(version) +
                                      " (supported: " + std::to_string(kBundleVersion) + ")");
    ActivationBundle b;
    b.d = detail::get_u32(bytes, 8);
    b.n_tokens = detail::get_u32(bytes, 12);
    b.layer = detail::get_u32(bytes, 16);
    const std::size_t meta_len = detail::get_u32(bytes, 20);
    if (b.d != 0 && b.n_tokens > (std::size_t{1} << 40) / b.d)
        throw FormatError("declared matrix size is implausibly large");
    const std::size_t expected = kBundleHeaderSize + meta_len + 4 * b.n_tokens * b.d;
    if (bytes.size() < expected) throw TruncationError(expected, bytes.size());
    if (bytes.size() > expected)
        throw FormatError("trailing data: expected " + std::to_string(expected) +
                          " bytes, got " + std::to_string(bytes.size()));

    try {
        auto meta = nlohmann::json::parse(bytes.substr(kBundleHeaderSize, meta_len));
        b.conversation_id = meta.at("conversation_id").get<std::string>();
        b.model_id = meta.at("model_id").get<std::string>();
        b.token_strings = meta.at("token_strings").get<std::vector<std::string>>();
        for (const auto& s : meta.at("turn_spans")) {
            if (s.is_array() && s.size() == 3)
                b.turn_spans.push_back({s[0].get<std::size_t>(), s[1].get<std::size_t>(),
                                        s[2].get<std::size_t>()});
            else
                b.turn_spans.push_back({s.at("turn_index").get<std::size_t>(),
                                        s.at("start").get<std::size_t>(),
                                        s.at("end").get<std::size_t>()});
        }
        for (const char* key : {"conversation_id", "model_id", "token_strings", "turn_spans"})
            meta.erase(key);
        b.extra_metadata = std::move(meta);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("invalid bundle metadata: ") + e.what());
    }

    b.matrix.resize(b.n_tokens * b.d);
    const std::size_t base = kBundleHeaderSize + meta_len;
    for (std::size_t i = 0; i < b.matrix.size(); ++i)
        b.matrix[i] = std::bit_cast<float>(detail::get_u32(bytes, base + 4 * i));
    try {
        b.validate();
    } catch (const InvariantError& e) {
        throw FormatError(std::string("invalid bundle: ") + e.what());
    }
    return b;
}

inline ActivationBundle read_bundle(std::istream& source) {
    std::string bytes((std::istreambuf_iterator<char>(source)), std::istreambuf_iterator<char>());
    return decode_bundle(bytes);
}

inline ActivationBundle read_bundle_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open bundle file '" + path + "'");
    return read_bundle(in);
}

inline std::size_t write_bundle_file(const ActivationBundle& b, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    return write_bundle(b, out);
}

/// Which turns a training/evaluation window covers.
///
/// context(k): turns 1..k (k unset means the whole conversation).
/// no_context(t): turn t on its own (t unset means every turn separately).
/// hold(h): turns 1..T-h.
struct WindowPolicy {
    enum class Kind { context, no_context, hold };

    Kind kind = Kind::context;
    std::optional<std::size_t> turn;  // k for context, t for no_context; 1-based
    std::size_t hold = 0;

    static WindowPolicy context(std::optional<std::size_t> k = std::nullopt) {
        return {Kind::context, k, 0};
    }
    static WindowPolicy no_context(std::optional<std::size_t> t = std::nullopt) {
        return {Kind::no_context, t, 0};
    }
    static WindowPolicy hold_out(std::size_t h) { return {Kind::hold, std::nullopt, h}; }

    std::string name() const {
        switch (kind) {
            case Kind::context: return turn ? "context:" + std::to_string(*turn) : "context";
            case Kind::no_context:
                return turn ? "no-context:" + std::to_string(*turn) : "no-context";
            case Kind::hold: return "hold:" + std::to_string(hold);
        }
        return {};
    }
};

inline std::optional<WindowPolicy> parse_policy(std::string_view s) {
    auto number = [](std::string_view v) -> std::optional<std::size_t> {
        if (v.empty() || v.size() > 9) return std::nullopt;
        std::size_t n = 0;
        for (char c : v) {
            if (c < '0' || c > '9') return std::nullopt;
            n = n * 10 + static_cast<std::size_t>(c - '0');
        }
        return n;
    };
    auto colon = s.find(':');
    std::string_view head = s.substr(0, colon);
    std::optional<std::size_t> arg;
    if (colon != std::string_view::npos) {
        arg = number(s.substr(colon + 1));
        if (!arg) return std::nullopt;
    }
    if (head == "context") {
        if (arg && *arg < 1) return std::nullopt;
        return WindowPolicy::context(arg);
    }
    if (head == "no-context") {
        if (arg && *arg < 1) return std::nullopt;
        return WindowPolicy::no_context(arg);
    }
    if (head == "hold" && arg) return WindowPolicy::hold_out(*arg);
    return std::nullopt;
}

namespace detail {

inline std::span<const float> last_row_of_turn(const ActivationBundle& b, std::size_t turn_number) {
    if (turn_number == 0) throw DataError("turn numbers are 1-based");
    const TurnSpan* s = b.find_span(turn_number - 1);
    if (!s)
        throw DataError("bundle '" + b.conversation_id + "' has no span for turn " +
                        std::to_string(turn_number));
    return b.row(s->end - 1);
}

/// 1-based final turn of the window, or nullopt when the policy leaves no turns.
inline std::optional<std::size_t> window_end(const WindowPolicy& p, std::size_t turn_count) {
    switch (p.kind) {
        case WindowPolicy::Kind::context: {
            std::size_t k = p.turn.value_or(turn_count);
            if (k < 1 || k > turn_count) return std::nullopt;
            return k;
        }
        case WindowPolicy::Kind::no_context: {
            if (!p.turn || *p.turn < 1 || *p.turn > turn_count) return std::nullopt;
            return *p.turn;
        }
        case WindowPolicy::Kind::hold:
            if (p.hold >= turn_count) return std::nullopt;
            return turn_count - p.hold;
    }
    return std::nullopt;
}

}  // namespace detail

/// Activation row representing the window: the last token of the window's final turn.
inline std::span<const float> representation(const ActivationBundle& bundle,
                                             const WindowPolicy& policy,
                                             const Conversation& conversation) {
    const std::size_t T = conversation.turn_count();
    if (policy.kind == WindowPolicy::Kind::no_context && !policy.turn)
        throw DataError("no-context representation needs an explicit turn");
    auto end = detail::window_end(policy, T);
    if (!end)
        throw DataError("policy " + policy.name() + " does not fit conversation '" +
                        conversation.id + "' with " + std::to_string(T) + " turns");
    return detail::last_row_of_turn(bundle, *end);
}

struct Example {
    std::vector<double> features;
    std::size_t label = 0;
};

struct Provenance {
    std::string conversation_id;
    std::string window;

    bool operator==(const Provenance&) const = default;
};

struct Dataset {
    Task task;
    std::vector<std::string> class_names;
    std::size_t num_classes = 0;
    std::size_t dim = 0;
    std::uint32_t layer = 0;
    std::string model_id;
    std::vector<Example> examples;
    std::vector<Provenance> provenance;
    std::size_t skipped = 0;  // conversations or windows without the needed label

    std::size_t size() const noexcept { return examples.size(); }

    std::vector<std::size_t> class_counts() const {
        std::vector<std::size_t> counts(num_classes, 0);
        for (const auto& e : examples) ++counts[e.label];
        return counts;
    }

    /// Subset in the given order; metadata is copied.
    Dataset subset(std::span<const std::size_t> rows) const {
        Dataset out = *this;
        out.examples.clear();
        out.provenance.clear();
        for (auto r : rows) {
            out.examples.push_back(examples.at(r));
            out.provenance.push_back(provenance.at(r));
        }
        return out;
    }
};

namespace detail {

inline std::optional<std::size_t> window_label(const Conversation& conv, const Task& task,
                                               std::size_t first_turn, std::size_t last_turn) {
    switch (task.kind) {
        case Task::Kind::persuasion:
            if (conv.labels.outcome == Outcome::persuaded) return 1;
            if (conv.labels.outcome == Outcome::unpersuaded) return 0;
            return std::nullopt;
        case Task::Kind::trait:
            if (!conv.labels.ee_big5) return std::nullopt;
            return static_cast<std::size_t>(
                binarize_trait(trait_score(*conv.labels.ee_big5, task.trait)));
        case Task::Kind::strategy:
            for (std::size_t k = last_turn + 1; k-- > first_turn;) {
                const Turn& t = conv.turns[k - 1];
                if (t.role != Role::persuader) continue;
                if (!t.strategy_label) return std::nullopt;
                return static_cast<std::size_t>(*t.strategy_label);
            }
            return std::nullopt;
    }
    return std::nullopt;
}

}  // namespace detail

/// Builds one labeled example per usable (conversation, window) pair.
///
/// Bundles are paired with conversations by id and emitted in bundle order.
/// Windows whose label is unavailable are skipped and counted in Dataset::skipped.
inline Dataset assemble(std::span<const ActivationBundle> bundles,
                        std::span<const Conversation> conversations, const WindowPolicy& policy,
                        const Task& task) {
    std::map<std::string, const Conversation*> by_id;
    for (const auto& c : conversations) by_id[c.id] = &c;

    Dataset ds;
    ds.task = task;
    ds.class_names = task.class_names();
    ds.num_classes = task.class_count();

    bool first = true;
    for (const auto& b : bundles) {
        auto it = by_id.find(b.conversation_id);
        if (it == by_id.end())
            throw DataError("bundle '" + b.conversation_id + "' has no matching conversation");
        const Conversation& conv = *it->second;
        if (first) {
            ds.dim = b.d;
            ds.layer = b.layer;
            ds.model_id = b.model_id;
            first = false;
        } else if (b.d != ds.dim) {
            throw DimensionError("bundle '" + b.conversation_id + "' has d=" +
                                 std::to_string(b.d) + ", expected " + std::to_string(ds.dim));
        } else if (b.layer != ds.layer) {
            throw DataError("bundles mix layers " + std::to_string(ds.layer) + " and " +
                            std::to_string(b.layer));
        }

        // (first turn, last turn, descriptor) per window, 1-based.
        struct Window {
            std::size_t first;
            std::size_t last;
            std::string name;
        };
        std::vector<Window> windows;
        const std::size_t T = conv.turn_count();
        if (policy.kind == WindowPolicy::Kind::no_context && !policy.turn) {
            for (const auto& s : b.turn_spans)
                if (s.turn_index < T)
                    windows.push_back({s.turn_index + 1, s.turn_index + 1,
                                       "no-context:" + std::to_string(s.turn_index + 1)});
        } else if (auto end = detail::window_end(policy, T)) {
            std::size_t start = policy.kind == WindowPolicy::Kind::no_context ? *end : 1;
            std::string name = policy.kind == WindowPolicy::Kind::hold
                                   ? policy.name()
                                   : (policy.kind == WindowPolicy::Kind::context
                                          ? "context:" + std::to_string(*end)
                                          : "no-context:" + std::to_string(*end));
            windows.push_back({start, *end, std::move(name)});
        }
        if (windows.empty()) {
            ++ds.skipped;
            continue;
        }
        for (const auto& w : windows) {
            auto label = detail::window_label(conv, task, w.first, w.last);
            if (!label) {
                ++ds.skipped;
                continue;
            }
            auto row = detail::last_row_of_turn(b, w.last);
            ds.examples.push_back({std::vector<double>(row.begin(), row.end()), *label});
            ds.provenance.push_back({conv.id, w.name});
        }
    }
    if (ds.examples.empty())
        throw DataError("no usable examples for task " + task.name() + " under policy " +
                        policy.name() + " (" + std::to_string(ds.skipped) + " skipped)");
    return ds;
}

}  // namespace pprobe
