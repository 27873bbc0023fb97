#pragma once

// Command-line front end. run_cli() is the whole program minus main(), so the
// test suite can drive every subcommand in-process.
//
// Exit codes: 0 success, 2 configuration error, 3 data error.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pprobe/pprobe.hpp"

namespace pprobe::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;

/// Bad flags, missing paths, task/probe mismatches.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CommonOptions {
    std::string transcripts;
    std::string bundles;
    std::vector<std::string> probes;
    std::string task;
    std::optional<std::uint32_t> layer;
    std::string policy = "context";
    std::string out;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
};

struct TrainOptions {
    double lr = 1e-3;
    std::string optimizer = "adam";
    std::size_t epochs = 200;
    std::size_t batch_size = 0;
    double l2 = 0.0;
};

// ---------------------------------------------------------------------------
// Input discovery and loading

/// Bundle files named <conversation_id>.L<layer>[.abl<word_index>].ppab.
struct BundleIndex {
    std::map<std::pair<std::string, std::uint32_t>, fs::path> main;
    std::map<std::pair<std::string, std::uint32_t>, std::vector<std::pair<std::size_t, fs::path>>>
        ablations;
    std::set<std::uint32_t> layers;
};

inline BundleIndex scan_bundles(const std::string& dir) {
    if (dir.empty()) throw ConfigError("--bundles is required");
    if (!fs::is_directory(dir)) throw ConfigError("bundle directory '" + dir + "' does not exist");
    static const std::regex name_re(R"(^(.+)\.L(\d+)(?:\.abl(\d+))?\.ppab$)");
    BundleIndex idx;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& p : files) {
        std::smatch m;
        const std::string name = p.filename().string();
        if (!std::regex_match(name, m, name_re)) continue;
        const auto layer = static_cast<std::uint32_t>(std::stoul(m[2].str()));
        const std::pair<std::string, std::uint32_t> key{m[1].str(), layer};
        idx.layers.insert(layer);
        if (m[3].matched)
            idx.ablations[key].emplace_back(std::stoul(m[3].str()), p);
        else
            idx.main[key] = p;
    }
    for (auto& [k, v] : idx.ablations) std::sort(v.begin(), v.end());
    return idx;
}

inline std::uint32_t resolve_layer(const BundleIndex& idx, std::optional<std::uint32_t> requested,
                                   std::optional<std::uint32_t> preferred = std::nullopt) {
    if (requested) {
        if (!idx.layers.count(*requested))
            throw ConfigError("no bundles at layer " + std::to_string(*requested));
        return *requested;
    }
    if (idx.layers.empty()) throw ConfigError("bundle directory contains no .ppab bundles");
    if (idx.layers.size() == 1) return *idx.layers.begin();
    if (preferred && idx.layers.count(*preferred)) return *preferred;
    throw ConfigError("bundles span several layers; pass --layer");
}

inline std::vector<Conversation> load_transcripts(const std::string& path) {
    if (path.empty()) throw ConfigError("--transcripts is required");
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open transcripts '" + path + "'");
    return parse_transcripts(in);
}

inline std::vector<ProbeModel> load_probes(const std::vector<std::string>& paths) {
    if (paths.empty()) throw ConfigError("--probe is required");
    std::vector<ProbeModel> out;
    for (const auto& p : paths) {
        std::ifstream in(p);
        if (!in) throw ConfigError("cannot open probe '" + p + "'");
        std::stringstream ss;
        ss << in.rdbuf();
        out.push_back(load_probe(ss.str()));
    }
    return out;
}

/// Conversations paired index-for-index with their bundles, in transcript order.
struct Corpus {
    std::vector<Conversation> conversations;
    std::vector<ActivationBundle> bundles;
    std::uint32_t layer = 0;
    std::size_t without_bundle = 0;
};

inline Corpus load_corpus(const CommonOptions& opt,
                          std::optional<std::uint32_t> preferred_layer = std::nullopt) {
    auto idx = scan_bundles(opt.bundles);
    auto convs = load_transcripts(opt.transcripts);
    Corpus c;
    c.layer = resolve_layer(idx, opt.layer, preferred_layer);
    std::vector<fs::path> paths;
    for (auto& conv : convs) {
        auto it = idx.main.find({conv.id, c.layer});
        if (it == idx.main.end()) {
            ++c.without_bundle;
            continue;
        }
        paths.push_back(it->second);
        c.conversations.push_back(std::move(conv));
    }
    if (c.conversations.empty())
        throw DataError("no conversation has a bundle at layer " + std::to_string(c.layer));
    c.bundles = parallel_map(paths.size(), opt.jobs,
                             [&](std::size_t i) { return read_bundle_file(paths[i].string()); });
    for (std::size_t i = 0; i < c.bundles.size(); ++i)
        if (c.bundles[i].conversation_id != c.conversations[i].id)
            throw DataError("bundle file '" + paths[i].string() + "' holds conversation '" +
                            c.bundles[i].conversation_id + "'");
    return c;
}

inline Task require_task(const std::string& s) {
    if (s.empty()) throw ConfigError("--task is required");
    auto t = parse_task(s);
    if (!t) throw ConfigError("unknown task '" + s + "' (persuasion | strategy | trait:<name>)");
    return *t;
}

inline WindowPolicy require_policy(const std::string& s) {
    auto p = parse_policy(s);
    if (!p) throw ConfigError("invalid --policy '" + s + "' (context | no-context | hold:H)");
    return *p;
}

inline TrainConfig make_train_config(const TrainOptions& t, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.learning_rate = t.lr;
    if (t.optimizer == "adam") cfg.optimizer = Optimizer::adam;
    else if (t.optimizer == "sgd") cfg.optimizer = Optimizer::sgd;
    else throw ConfigError("unknown optimizer '" + t.optimizer + "'");
    cfg.epochs = t.epochs;
    cfg.batch_size = t.batch_size;
    cfg.l2_penalty = t.l2;
    cfg.seed = seed;
    try {
        cfg.validate();
    } catch (const InvariantError& e) {
        throw ConfigError(e.what());
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Output

inline fs::path prepare_out(const std::string& out) {
    if (out.empty()) throw ConfigError("--out is required");
    fs::create_directories(out);
    return fs::path(out);
}

inline std::string file_tag(const Task& t) {
    auto s = t.name();
    std::replace(s.begin(), s.end(), ':', '-');
    return s;
}

template <typename Writer>
void write_file(const fs::path& path, Writer&& w) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write '" + path.string() + "'");
    w(f);
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
    write_file(path, [&](std::ostream& o) { o << j.dump(2) << '\n'; });
}

// ---------------------------------------------------------------------------
// Subcommands

inline int cmd_train(const CommonOptions& opt, const TrainOptions& topt, std::ostream& out) {
    const Task task = require_task(opt.task);
    const WindowPolicy policy = require_policy(opt.policy);
    const TrainConfig cfg = make_train_config(topt, opt.seed);
    const auto dir = prepare_out(opt.out);
    auto corpus = load_corpus(opt);

    const Dataset ds = assemble(corpus.bundles, corpus.conversations, policy, task);
    const TrainResult res = train(ds, cfg);
    const double acc = accuracy(res.probe, ds.examples);

    const std::string tag = file_tag(task);
    write_file(dir / ("probe_" + tag + ".json"), [&](std::ostream& o) { o << save_probe(res.probe); });
    write_file(dir / ("loss_" + tag + ".csv"),
               [&](std::ostream& o) { csv::write_loss_curve(o, res.loss_curve); });

    nlohmann::json counts = nlohmann::json::object();
    auto cc = ds.class_counts();
    for (std::size_t c = 0; c < cc.size(); ++c) counts[ds.class_names[c]] = cc[c];
    nlohmann::json summary = {{"task", task.name()},
                              {"policy", policy.name()},
                              {"layer", corpus.layer},
                              {"model_id", ds.model_id},
                              {"d", ds.dim},
                              {"n_examples", ds.size()},
                              {"class_counts", counts},
                              {"skipped", ds.skipped},
                              {"conversations_without_bundle", corpus.without_bundle},
                              {"final_loss", res.loss_curve.back()},
                              {"train_accuracy", acc},
                              {"optimizer", topt.optimizer},
                              {"learning_rate", cfg.learning_rate},
                              {"epochs", cfg.epochs},
                              {"batch_size", cfg.batch_size},
                              {"l2_penalty", cfg.l2_penalty},
                              {"seed", cfg.seed}};
    write_json(dir / ("summary_" + tag + ".json"), summary);
    out << "trained " << task.name() << " probe on " << ds.size() << " examples; train accuracy "
        << acc << ", final loss " << res.loss_curve.back() << '\n';
    return kExitOk;
}

/// Turn trajectories for every conversation, computed on the worker pool.
inline std::vector<Trajectory> turn_trajectories(const ProbeModel& probe, const Corpus& c,
                                                 std::size_t jobs) {
    return parallel_map(c.bundles.size(), jobs,
                        [&](std::size_t i) { return turn_trajectory(probe, c.bundles[i]); });
}

inline int cmd_eval(const CommonOptions& opt, const std::string& reference,
                    const std::string& role_filter, const std::string& granularity,
                    double threshold, std::ostream& out, std::ostream& err) {
    auto probes = load_probes(opt.probes);
    if (!opt.task.empty()) {
        const Task t = require_task(opt.task);
        for (const auto& p : probes)
            if (!(p.task == t))
                throw ConfigError("probe task " + p.task.name() + " does not match --task " +
                                  t.name());
    }
    std::optional<Role> role;
    if (!role_filter.empty()) {
        role = parse_role(role_filter);
        if (!role) throw ConfigError("invalid --role-filter '" + role_filter + "'");
    }
    auto gran = parse_granularity(granularity);
    if (!gran || *gran == Granularity::conversation_end)
        throw ConfigError("invalid --granularity '" + granularity + "' (turn | token)");
    if (!reference.empty() && !fs::exists(reference))
        throw ConfigError("reference trajectories '" + reference + "' do not exist");
    const auto dir = prepare_out(opt.out);
    auto corpus = load_corpus(opt, probes.front().layer);

    nlohmann::json summary = {{"layer", corpus.layer},
                              {"conversations", corpus.conversations.size()},
                              {"conversations_without_bundle", corpus.without_bundle}};
    nlohmann::json warnings = nlohmann::json::array();
    auto warn = [&](const std::string& w) {
        err << "warning: " << w << '\n';
        warnings.push_back(w);
    };

    for (const auto& probe : probes) {
        const std::string tag = file_tag(probe.task);
        nlohmann::json section;
        auto trajs = turn_trajectories(probe, corpus, opt.jobs);
        if (probe.task.kind == Task::Kind::strategy && role) {
            for (std::size_t i = 0; i < trajs.size(); ++i)
                trajs[i] = strategy_trajectory(probe, corpus.bundles[i], &corpus.conversations[i], role);
        }
        std::set<std::string> seen;
        for (const auto& t : trajs)
            for (const auto& w : t.warnings)
                if (seen.insert(w).second) warn(w);

        write_file(dir / ("trajectories_" + tag + ".csv"), [&](std::ostream& o) {
            csv::write_trajectory_header(o, probe.class_names);
            if (*gran == Granularity::token) {
                auto tok = parallel_map(corpus.bundles.size(), opt.jobs, [&](std::size_t i) {
                    return token_trajectory(probe, corpus.bundles[i]);
                });
                for (std::size_t i = 0; i < tok.size(); ++i)
                    csv::write_trajectory_rows(o, tok[i], &corpus.conversations[i]);
            } else {
                for (std::size_t i = 0; i < trajs.size(); ++i)
                    csv::write_trajectory_rows(o, trajs[i], &corpus.conversations[i]);
            }
        });

        switch (probe.task.kind) {
            case Task::Kind::persuasion: {
                std::vector<Trajectory> known;
                std::vector<int> labels;
                std::vector<double> final_scores;
                for (std::size_t i = 0; i < trajs.size(); ++i) {
                    const auto o = corpus.conversations[i].labels.outcome;
                    if (o == Outcome::unknown) continue;
                    known.push_back(trajs[i]);
                    labels.push_back(o == Outcome::persuaded ? 1 : 0);
                    final_scores.push_back(trajs[i].points.back().probs.at(1));
                }
                if (known.empty()) {
                    warn("no conversation has a known outcome; persuasion metrics skipped");
                    break;
                }
                auto curve = auroc_curve(known, labels);
                for (const auto& om : curve.omitted)
                    warn("auroc turn " + std::to_string(om.turn) + " omitted: " + om.reason);
                write_file(dir / ("auroc_" + tag + ".csv"),
                           [&](std::ostream& o) { csv::write_curve(o, curve); });
                section["auroc_curve"] = to_json(curve);
                section["classification_report"] =
                    to_json(classification_report(final_scores, labels, threshold));
                break;
            }
            case Task::Kind::trait: {
                std::vector<Trajectory> with_truth;
                std::vector<double> truths;
                for (std::size_t i = 0; i < trajs.size(); ++i) {
                    const auto& b5 = corpus.conversations[i].labels.ee_big5;
                    if (!b5) continue;
                    with_truth.push_back(trajs[i]);
                    truths.push_back(trait_score(*b5, probe.task.trait));
                }
                if (with_truth.empty()) {
                    warn("no conversation has persuadee Big-5 scores; MSE curve skipped");
                    break;
                }
                auto curve = trait_mse_curve(with_truth, truths);
                write_file(dir / ("mse_" + tag + ".csv"),
                           [&](std::ostream& o) { csv::write_curve(o, curve); });
                section["trait_mse_curve"] = to_json(curve);
                break;
            }
            case Task::Kind::strategy: {
                if (reference.empty()) break;
                std::ifstream in(reference);
                auto ref = csv::read_trajectories(in);
                auto curve = strategy_jsd_curve(trajs, ref);
                write_file(dir / ("jsd_" + tag + ".csv"),
                           [&](std::ostream& o) { csv::write_curve(o, curve); });
                section["strategy_jsd_curve"] = to_json(curve);
                break;
            }
        }
        summary[probe.task.name()] = section;
    }
    summary["warnings"] = warnings;
    write_json(dir / "summary_eval.json", summary);
    out << "evaluated " << probes.size() << " probe(s) on " << corpus.conversations.size()
        << " conversations\n";
    return kExitOk;
}

inline int cmd_kappa(const std::string& input, const std::string& col_a, const std::string& col_b,
                     const std::string& out_dir, std::ostream& out) {
    if (input.empty()) throw ConfigError("--input is required");
    std::ifstream in(input);
    if (!in) throw ConfigError("cannot open '" + input + "'");
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty label file");
    auto header = csv::split_row(line);
    auto column = [&](const std::string& name, std::size_t fallback) {
        if (name.empty()) {
            if (fallback >= header.size()) throw DataError("label file needs two columns");
            return fallback;
        }
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw ConfigError("no column named '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t ia = column(col_a, 0);
    const std::size_t ib = column(col_b, 1);
    std::vector<std::string> a, b;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        auto f = csv::split_row(line);
        if (std::max(ia, ib) >= f.size()) throw DataError("short row in label file");
        a.push_back(f[ia]);
        b.push_back(f[ib]);
    }
    const double k = cohens_kappa(a, b);
    out << "kappa " << csv::number(k) << " (n=" << a.size() << ")\n";
    if (!out_dir.empty()) {
        const auto dir = prepare_out(out_dir);
        write_json(dir / "kappa.json", {{"kappa", k}, {"n", a.size()}});
    }
    return kExitOk;
}

/// The five trait probes, ordered canonically. Missing or duplicate traits are data errors.
inline std::vector<ProbeModel> pick_trait_probes(const std::vector<ProbeModel>& probes) {
    std::vector<ProbeModel> traits;
    for (auto t : kTraits) {
        auto n = std::count_if(probes.begin(), probes.end(), [&](const ProbeModel& p) {
            return p.task == Task::of_trait(t);
        });
        if (n == 0) throw DataError("missing probe for trait " + std::string(to_string(t)));
        if (n > 1) throw DataError("several probes for trait " + std::string(to_string(t)));
        traits.push_back(*std::find_if(probes.begin(), probes.end(), [&](const ProbeModel& p) {
            return p.task == Task::of_trait(t);
        }));
    }
    return traits;
}

inline std::vector<TraitTrajectories> all_trait_trajectories(const std::vector<ProbeModel>& traits,
                                                             const Corpus& c, std::size_t jobs) {
    return parallel_map(c.bundles.size(), jobs,
                        [&](std::size_t i) { return trait_trajectories(traits, c.bundles[i]); });
}

inline int cmd_detect(const CommonOptions& opt, const std::string& rule_name,
                      const std::vector<std::string>& clauses, const std::string& positive,
                      std::ostream& out) {
    DetectionRule rule;
    if (rule_name == "unpersuasion") rule = DetectionRule::unpersuasion();
    else if (rule_name == "persuasion") rule = DetectionRule::persuasion();
    else throw ConfigError("unknown --rule '" + rule_name + "' (unpersuasion | persuasion)");
    if (!clauses.empty()) {
        rule.clauses.clear();
        for (const auto& s : clauses) {
            auto c = parse_clause(s);
            if (!c) throw ConfigError("invalid --clause '" + s + "' (e.g. agreeableness<0.2)");
            rule.clauses.push_back(*c);
        }
    }
    if (!positive.empty()) {
        auto o = parse_outcome(positive);
        if (!o || *o == Outcome::unknown) throw ConfigError("invalid --positive '" + positive + "'");
        rule.positive_class = *o;
    }
    try {
        rule.validate();
    } catch (const InvariantError& e) {
        throw ConfigError(e.what());
    }
    auto probes = load_probes(opt.probes);
    const auto dir = prepare_out(opt.out);
    auto traits = pick_trait_probes(probes);
    auto corpus = load_corpus(opt, traits.front().layer);
    auto tt = all_trait_trajectories(traits, corpus, opt.jobs);
    std::vector<Outcome> outcomes;
    for (const auto& c : corpus.conversations) outcomes.push_back(c.labels.outcome);
    auto rows = detection_curve(rule, tt, outcomes);
    write_file(dir / "detection.csv", [&](std::ostream& o) { csv::write_detection(o, rows); });
    out << "detection over " << rows.size() << " turns written\n";
    return kExitOk;
}

inline int cmd_correlate(const CommonOptions& opt, const std::string& filter_name,
                         std::ostream& out) {
    auto filter = parse_outcome_filter(filter_name);
    if (!filter) throw ConfigError("invalid --outcome-filter '" + filter_name + "'");
    auto probes = load_probes(opt.probes);
    const auto dir = prepare_out(opt.out);
    auto strat = std::find_if(probes.begin(), probes.end(),
                              [](const ProbeModel& p) { return p.task.kind == Task::Kind::strategy; });
    if (strat == probes.end()) throw DataError("missing strategy probe");
    auto traits = pick_trait_probes(probes);
    auto corpus = load_corpus(opt, strat->layer);
    auto tt = all_trait_trajectories(traits, corpus, opt.jobs);
    auto samples = parallel_map(corpus.bundles.size(), opt.jobs, [&](std::size_t i) {
        auto st = strategy_trajectory(*strat, corpus.bundles[i]);
        return aggregate_conversation(corpus.conversations[i], st, tt[i]);
    });
    std::vector<StrategyTraitSample> kept;
    for (auto& s : samples)
        if (s) kept.push_back(std::move(*s));
    auto m = correlate(kept, *filter);
    write_file(dir / "correlation.csv", [&](std::ostream& o) { csv::write_correlation(o, m); });
    write_file(dir / "correlation_n.csv", [&](std::ostream& o) { csv::write_correlation_n(o, m); });
    out << "correlation over " << m.n[0][0] << " conversations written\n";
    return kExitOk;
}

inline const ProbeModel& single_probe(const std::vector<ProbeModel>& probes, Task::Kind kind) {
    if (probes.size() != 1) throw ConfigError("exactly one --probe expected");
    if (probes.front().task.kind != kind)
        throw ConfigError("probe task " + probes.front().task.name() + " is not supported here");
    return probes.front();
}

inline int cmd_calibrate(const CommonOptions& opt, double threshold, std::ostream& out) {
    auto probes = load_probes(opt.probes);
    const auto& probe = single_probe(probes, Task::Kind::persuasion);
    const auto dir = prepare_out(opt.out);
    auto corpus = load_corpus(opt, probe.layer);
    auto trajs = turn_trajectories(probe, corpus, opt.jobs);
    std::vector<double> scores;
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < trajs.size(); ++i)
        for (const auto& p : trajs[i].points) {
            const auto& turn = corpus.conversations[i].turns.at(p.turn_index);
            if (!turn.semantic_label) continue;
            scores.push_back(p.probs.at(1));
            labels.push_back(*turn.semantic_label);
        }
    auto bins = calibration_histogram(scores, labels, threshold);
    write_file(dir / "calibration.csv", [&](std::ostream& o) { csv::write_calibration(o, bins); });
    out << "calibration over " << scores.size() << " utterances, " << bins.size() << " labels\n";
    return kExitOk;
}

inline int cmd_ablate_report(const CommonOptions& opt, const std::string& only_id,
                             std::ostream& out) {
    auto probes = load_probes(opt.probes);
    const auto& probe = single_probe(probes, Task::Kind::persuasion);
    const auto dir = prepare_out(opt.out);
    auto idx = scan_bundles(opt.bundles);
    const auto layer = resolve_layer(idx, opt.layer, probe.layer);
    auto convs = load_transcripts(opt.transcripts);

    std::vector<const Conversation*> todo;
    for (const auto& c : convs) {
        if (!only_id.empty() && c.id != only_id) continue;
        if (idx.ablations.count({c.id, layer}) && idx.main.count({c.id, layer})) todo.push_back(&c);
    }
    if (todo.empty()) throw DataError("no conversation has ablation bundles at layer " +
                                      std::to_string(layer));
    auto reports = parallel_map(todo.size(), opt.jobs, [&](std::size_t i) {
        const auto& c = *todo[i];
        auto original = read_bundle_file(idx.main.at({c.id, layer}).string());
        std::vector<AblatedBundle> variants;
        for (const auto& [w, path] : idx.ablations.at({c.id, layer}))
            variants.push_back({w, read_bundle_file(path.string())});
        return ablation_deltas(original, variants, probe);
    });
    for (std::size_t i = 0; i < todo.size(); ++i) {
        const auto words = conversation_words(*todo[i]);
        write_file(dir / ("ablation_" + todo[i]->id + ".csv"),
                   [&](std::ostream& o) { csv::write_ablation(o, reports[i], words); });
    }
    out << "ablation reports for " << todo.size() << " conversation(s) written\n";
    return kExitOk;
}

/// Seeded 80/20 split: returns (train rows, test rows).
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_80_20(std::size_t n,
                                                                                std::uint64_t seed) {
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(rows.begin(), rows.end(), rng);
    std::size_t n_test = n / 5;
    if (n_test == 0 && n >= 2) n_test = 1;
    std::vector<std::size_t> test(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_test));
    std::vector<std::size_t> tr(rows.begin() + static_cast<std::ptrdiff_t>(n_test), rows.end());
    return {tr, test};
}

inline int cmd_layer_sweep(const CommonOptions& opt, const TrainOptions& topt, std::ostream& out) {
    const Task task = require_task(opt.task);
    const WindowPolicy policy = require_policy(opt.policy);
    const TrainConfig cfg = make_train_config(topt, opt.seed);
    const auto dir = prepare_out(opt.out);
    auto idx = scan_bundles(opt.bundles);
    if (idx.layers.empty()) throw ConfigError("bundle directory contains no .ppab bundles");

    struct Row {
        std::uint32_t layer;
        std::size_t n_train, n_test;
        double train_acc;
        std::optional<double> test_acc;
    };
    std::vector<Row> rows;
    for (auto layer : idx.layers) {
        if (opt.layer && *opt.layer != layer) continue;
        CommonOptions per = opt;
        per.layer = layer;
        auto corpus = load_corpus(per);
        const Dataset ds = assemble(corpus.bundles, corpus.conversations, policy, task);
        auto [tr_rows, te_rows] = split_80_20(ds.size(), opt.seed);
        const Dataset train_set = ds.subset(tr_rows);
        const auto res = train(train_set, cfg);
        Row r{layer, tr_rows.size(), te_rows.size(), accuracy(res.probe, train_set.examples), {}};
        if (!te_rows.empty()) r.test_acc = accuracy(res.probe, ds.subset(te_rows).examples);
        rows.push_back(r);
    }
    write_file(dir / "layer_sweep.csv", [&](std::ostream& o) {
        csv::write_row(o, {"layer", "n_train", "n_test", "train_accuracy", "test_accuracy"});
        for (const auto& r : rows)
            csv::write_row(o, {std::to_string(r.layer), std::to_string(r.n_train),
                               std::to_string(r.n_test), csv::number(r.train_acc),
                               csv::optional_number(r.test_acc)});
    });
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& r : rows) layers.push_back(r.layer);
    write_json(dir / "summary_layer_sweep.json",
               {{"task", task.name()}, {"policy", policy.name()}, {"layers", layers},
                {"split", "seeded shuffle, 80% train / 20% test"}, {"seed", opt.seed}});
    out << "layer sweep over " << rows.size() << " layer(s) written\n";
    return kExitOk;
}

inline int cmd_bundle_info(const std::string& path, const std::string& out_dir, std::ostream& out) {
    if (path.empty()) throw ConfigError("--bundle is required");
    if (!fs::is_regular_file(path)) throw ConfigError("bundle '" + path + "' does not exist");
    const auto b = read_bundle_file(path);
    nlohmann::json spans = nlohmann::json::array();
    for (const auto& s : b.turn_spans)
        spans.push_back({{"turn_index", s.turn_index}, {"start", s.start}, {"end", s.end}});
    nlohmann::json info = {{"conversation_id", b.conversation_id},
                           {"model_id", b.model_id},
                           {"layer", b.layer},
                           {"d", b.d},
                           {"n_tokens", b.n_tokens},
                           {"n_in_span_tokens", b.in_span_tokens().size()},
                           {"turn_spans", spans},
                           {"file_bytes", fs::file_size(path)},
                           {"extra_metadata", b.extra_metadata}};
    out << info.dump(2) << '\n';
    if (!out_dir.empty()) write_json(prepare_out(out_dir) / "bundle_info.json", info);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// Argument parsing

inline void add_common(CLI::App* sub, CommonOptions& o, bool corpus, bool probes) {
    if (corpus) {
        sub->add_option("--transcripts", o.transcripts, "Transcript corpus (JSON lines)");
        sub->add_option("--bundles", o.bundles,
                        "Directory of <id>.L<layer>[.abl<w>].ppab activation bundles");
        sub->add_option("--layer", o.layer, "Use bundles at this layer");
        sub->add_option("--jobs", o.jobs, "Worker threads for per-conversation work")
            ->check(CLI::Range(1, 1024));
    }
    if (probes) sub->add_option("--probe", o.probes, "Probe JSON file (repeatable)");
    sub->add_option("--out", o.out, "Output directory");
}

inline void add_train_flags(CLI::App* sub, CommonOptions& o, TrainOptions& t) {
    sub->add_option("--task", o.task, "persuasion | strategy | trait:<name>");
    sub->add_option("--policy", o.policy, "Window policy: context[:K] | no-context[:T] | hold:H")
        ->capture_default_str();
    sub->add_option("--seed", o.seed, "Random seed")->capture_default_str();
    sub->add_option("--lr", t.lr, "Learning rate")->capture_default_str();
    sub->add_option("--optimizer", t.optimizer, "adam | sgd")->capture_default_str();
    sub->add_option("--epochs", t.epochs, "Training epochs")->capture_default_str();
    sub->add_option("--batch-size", t.batch_size, "Mini-batch size (0 = full batch)")
        ->capture_default_str();
    sub->add_option("--l2", t.l2, "L2 penalty on W")->capture_default_str();
}

/// Parses args (without the program name) and runs one subcommand.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
    CLI::App app{"Linear probes over language-model activations for multi-turn persuasion analysis",
                 "pprobe"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Optional key=value config file; command-line flags win");
    app.fallthrough();

    CommonOptions o;
    TrainOptions t;
    std::string reference, role_filter, granularity = "turn", col_a, col_b, input;
    std::string rule = "unpersuasion", positive, filter = "persuaded", only_id, bundle_path;
    std::vector<std::string> clauses;
    double threshold = 0.5;

    auto* train_cmd = app.add_subcommand("train", "Train a probe and write probe/loss/summary files");
    add_common(train_cmd, o, true, false);
    add_train_flags(train_cmd, o, t);

    auto* eval_cmd = app.add_subcommand("eval", "Apply probes per turn and write metric curves");
    add_common(eval_cmd, o, true, true);
    eval_cmd->add_option("--task", o.task, "Expected probe task; mismatch is a config error");
    eval_cmd->add_option("--reference", reference, "Reference strategy trajectory CSV for JSD");
    eval_cmd->add_option("--role-filter", role_filter, "Keep only persuader|persuadee strategy turns");
    eval_cmd->add_option("--granularity", granularity, "Trajectory CSV granularity: turn | token")
        ->capture_default_str();
    eval_cmd->add_option("--threshold", threshold, "Classification threshold")->capture_default_str();

    auto* kappa_cmd = app.add_subcommand("kappa", "Cohen's kappa between two label columns of a CSV");
    kappa_cmd->add_option("--input", input, "CSV with a header row");
    kappa_cmd->add_option("--col-a", col_a, "First column name (default: column 1)");
    kappa_cmd->add_option("--col-b", col_b, "Second column name (default: column 2)");
    kappa_cmd->add_option("--out", o.out, "Output directory for kappa.json");

    auto* detect_cmd = app.add_subcommand("detect", "Trait-threshold detection TPR/FPR per turn");
    add_common(detect_cmd, o, true, true);
    detect_cmd->add_option("--rule", rule, "unpersuasion | persuasion")->capture_default_str();
    detect_cmd->add_option("--clause", clauses, "Custom OR-ed clause, e.g. agreeableness<0.2");
    detect_cmd->add_option("--positive", positive, "Positive class for custom clauses");

    auto* corr_cmd = app.add_subcommand("correlate", "Strategy x trait Pearson correlation matrix");
    add_common(corr_cmd, o, true, true);
    corr_cmd->add_option("--outcome-filter", filter, "persuaded | unpersuaded | all")
        ->capture_default_str();

    auto* cal_cmd = app.add_subcommand("calibrate", "Persuasive share per semantic label");
    add_common(cal_cmd, o, true, true);
    cal_cmd->add_option("--threshold", threshold, "Persuasive threshold")->capture_default_str();

    auto* abl_cmd = app.add_subcommand("ablate-report", "Knock-one-out word ablation deltas");
    add_common(abl_cmd, o, true, true);
    abl_cmd->add_option("--conversation", only_id, "Restrict to one conversation id");

    auto* sweep_cmd = app.add_subcommand("layer-sweep", "Held-out accuracy for each available layer");
    add_common(sweep_cmd, o, true, false);
    add_train_flags(sweep_cmd, o, t);

    auto* info_cmd = app.add_subcommand("bundle-info", "Describe one activation bundle");
    info_cmd->add_option("--bundle", bundle_path, "Bundle file");
    info_cmd->add_option("--out", o.out, "Optional output directory for bundle_info.json");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        // Subcommand --help surfaces here too.
        if (e.get_exit_code() == 0) {
            for (auto* sub : app.get_subcommands()) out << sub->help();
            return kExitOk;
        }
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    }

    try {
        if (train_cmd->parsed()) return cmd_train(o, t, out);
        if (eval_cmd->parsed())
            return cmd_eval(o, reference, role_filter, granularity, threshold, out, err);
        if (kappa_cmd->parsed()) return cmd_kappa(input, col_a, col_b, o.out, out);
        if (detect_cmd->parsed()) return cmd_detect(o, rule, clauses, positive, out);
        if (corr_cmd->parsed()) return cmd_correlate(o, filter, out);
        if (cal_cmd->parsed()) return cmd_calibrate(o, threshold, out);
        if (abl_cmd->parsed()) return cmd_ablate_report(o, only_id, out);
        if (sweep_cmd->parsed()) return cmd_layer_sweep(o, t, out);
        if (info_cmd->parsed()) return cmd_bundle_info(bundle_path, o.out, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const pprobe::Error& e) {
        err << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const fs::filesystem_error& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfig;
    }
    return kExitConfig;
}

}  // namespace pprobe::cli
