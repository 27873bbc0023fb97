#pragma once

// Linear probe: p = softmax(W h + b), trained by minimizing mean cross-entropy
// with plain gradient descent or Adam.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pprobe/activation_store.hpp"
#include "pprobe/error.hpp"
#include "pprobe/task.hpp"

namespace pprobe {

inline constexpr int kProbeFormatVersion = 1;

struct ProbeModel {
    Task task;
    std::vector<std::string> class_names;
    std::uint32_t layer = 0;
    std::string model_id;
    std::size_t num_classes = 0;
    std::size_t dim = 0;
    std::vector<double> weights;  // num_classes x dim, row-major
    std::vector<double> bias;     // num_classes

    /// Zero-parameter probe for a task.
    static ProbeModel zeros(const Task& task, std::size_t dim, std::uint32_t layer = 0,
                            std::string model_id = {}) {
        ProbeModel p;
        p.task = task;
        p.class_names = task.class_names();
        p.layer = layer;
        p.model_id = std::move(model_id);
        p.num_classes = task.class_count();
        p.dim = dim;
        p.weights.assign(p.num_classes * dim, 0.0);
        p.bias.assign(p.num_classes, 0.0);
        return p;
    }

    double& w(std::size_t c, std::size_t j) { return weights[c * dim + j]; }
    double w(std::size_t c, std::size_t j) const { return weights[c * dim + j]; }

    void validate() const {
        if (num_classes != task.class_count())
            throw InvariantError("task " + task.name() + " requires " +
                                 std::to_string(task.class_count()) + " classes, probe has " +
                                 std::to_string(num_classes));
        if (class_names.size() != num_classes)
            throw InvariantError("class_names has " + std::to_string(class_names.size()) +
                                 " entries, expected " + std::to_string(num_classes));
        if (class_names != task.class_names())
            throw InvariantError("class_names do not match task " + task.name());
        if (dim == 0) throw InvariantError("probe dimension is zero");
        if (weights.size() != num_classes * dim)
            throw InvariantError("weight matrix has " + std::to_string(weights.size()) +
                                 " entries, expected " + std::to_string(num_classes * dim));
        if (bias.size() != num_classes)
            throw InvariantError("bias has " + std::to_string(bias.size()) + " entries, expected " +
                                 std::to_string(num_classes));
        auto finite = [](double v) { return std::isfinite(v); };
        if (!std::all_of(weights.begin(), weights.end(), finite) ||
            !std::all_of(bias.begin(), bias.end(), finite))
            throw InvariantError("probe parameters must be finite");
    }

    bool operator==(const ProbeModel&) const = default;
};

/// A point on the probability simplex.
using ProbVector = std::vector<double>;

/// Argmax with ties resolved toward the lowest index.
inline std::size_t argmax(std::span<const double> p) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < p.size(); ++i)
        if (p[i] > p[best]) best = i;
    return best;
}

namespace detail {

template <typename T>
void check_input(const ProbeModel& probe, std::span<const T> h) {
    if (h.size() != probe.dim)
        throw DimensionError("input has dimension " + std::to_string(h.size()) + ", probe expects " +
                             std::to_string(probe.dim));
    for (T v : h)
        if (!std::isfinite(static_cast<double>(v))) throw InvariantError("non-finite probe input");
}

template <typename T>
std::vector<double> logits(const ProbeModel& probe, std::span<const T> h) {
    std::vector<double> z(probe.num_classes);
    for (std::size_t c = 0; c < probe.num_classes; ++c) {
        const double* wc = probe.weights.data() + c * probe.dim;
        double s = probe.bias[c];
        for (std::size_t j = 0; j < probe.dim; ++j) s += wc[j] * static_cast<double>(h[j]);
        z[c] = s;
    }
    return z;
}

/// In-place softmax; returns log of the normalizer (log-sum-exp of the input).
inline double softmax_inplace(std::vector<double>& z) {
    const double zmax = *std::max_element(z.begin(), z.end());
    double denom = 0.0;
    for (double& v : z) {
        v = std::exp(v - zmax);
        denom += v;
    }
    for (double& v : z) v /= denom;
    return zmax + std::log(denom);
}

}  // namespace detail

template <typename T>
ProbVector predict(const ProbeModel& probe, std::span<const T> h) {
    detail::check_input(probe, h);
    auto z = detail::logits(probe, h);
    detail::softmax_inplace(z);
    return z;
}

inline ProbVector predict(const ProbeModel& probe, const std::vector<double>& h) {
    return predict(probe, std::span<const double>(h));
}

/// Cross-entropy of one example: -log p_y, computed as logsumexp(z) - z_y.
template <typename T>
double nll(const ProbeModel& probe, std::span<const T> h, std::size_t y) {
    if (y >= probe.num_classes)
        throw InvariantError("label " + std::to_string(y) + " out of range for " +
                             std::to_string(probe.num_classes) + " classes");
    detail::check_input(probe, h);
    auto z = detail::logits(probe, h);
    const double zy = z[y];
    const double lse = detail::softmax_inplace(z);
    return std::max(0.0, lse - zy);
}

inline double nll(const ProbeModel& probe, const std::vector<double>& h, std::size_t y) {
    return nll(probe, std::span<const double>(h), y);
}

/// Mean cross-entropy over a batch plus (l2 / 2) * ||W||^2.
inline double mean_loss(const ProbeModel& probe, std::span<const Example> batch, double l2 = 0.0) {
    if (batch.empty()) throw DataError("empty batch");
    double total = 0.0;
    for (const auto& ex : batch) total += nll(probe, std::span<const double>(ex.features), ex.label);
    double loss = total / static_cast<double>(batch.size());
    if (l2 != 0.0) {
        double sq = 0.0;
        for (double w : probe.weights) sq += w * w;
        loss += 0.5 * l2 * sq;
    }
    return loss;
}

struct Gradients {
    std::vector<double> weights;  // num_classes x dim
    std::vector<double> bias;
};

/// Analytic gradient of mean_loss: dW = mean((p - onehot(y)) h^T) + l2 W, db = mean(p - onehot(y)).
inline Gradients gradients(const ProbeModel& probe, std::span<const Example> batch,
                           double l2 = 0.0) {
    if (batch.empty()) throw DataError("empty batch");
    const std::size_t C = probe.num_classes;
    const std::size_t d = probe.dim;
    Gradients g{std::vector<double>(C * d, 0.0), std::vector<double>(C, 0.0)};
    for (const auto& ex : batch) {
        if (ex.label >= C) throw InvariantError("label out of range");
        auto p = predict(probe, std::span<const double>(ex.features));
        for (std::size_t c = 0; c < C; ++c) {
            const double delta = p[c] - (c == ex.label ? 1.0 : 0.0);
            g.bias[c] += delta;
            double* gw = g.weights.data() + c * d;
            for (std::size_t j = 0; j < d; ++j) gw[j] += delta * ex.features[j];
        }
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (double& v : g.weights) v *= inv;
    for (double& v : g.bias) v *= inv;
    if (l2 != 0.0)
        for (std::size_t i = 0; i < g.weights.size(); ++i) g.weights[i] += l2 * probe.weights[i];
    return g;
}

enum class Optimizer { sgd, adam };

struct TrainConfig {
    double learning_rate = 1e-3;
    Optimizer optimizer = Optimizer::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t epochs = 200;
    std::size_t batch_size = 0;  // 0 = full batch
    std::uint64_t seed = 0;
    double l2_penalty = 0.0;

    void validate() const {
        if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
            throw InvariantError("learning rate must be positive");
        if (epochs < 1) throw InvariantError("epochs must be at least 1");
        if (l2_penalty < 0.0) throw InvariantError("l2 penalty must be non-negative");
    }
};

struct TrainResult {
    ProbeModel probe;
    std::vector<double> loss_curve;  // full-dataset objective after each epoch
};

namespace detail {

class AdamState {
public:
    AdamState(std::size_t n, const TrainConfig& cfg)
        : m_(n, 0.0), v_(n, 0.0), cfg_(cfg) {}

    void step(std::span<double> params, std::span<const double> grad, std::size_t t) {
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
            v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
            const double mhat = m_[i] / c1;
            const double vhat = v_[i] / c2;
            params[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
        }
    }

private:
    std::vector<double> m_;
    std::vector<double> v_;
    const TrainConfig& cfg_;
};

}  // namespace detail

/// Trains a zero-initialized probe. Deterministic for a fixed (data, config).
inline TrainResult train(const Dataset& data, const TrainConfig& config) {
    config.validate();
    if (data.examples.empty()) throw DataError("cannot train on an empty dataset");
    if (data.num_classes < 2) throw InvariantError("dataset needs at least two classes");
    for (const auto& ex : data.examples) {
        if (ex.features.size() != data.dim) throw DimensionError("example dimension mismatch");
        if (ex.label >= data.num_classes) throw InvariantError("example label out of range");
    }

    ProbeModel probe = ProbeModel::zeros(data.task, data.dim, data.layer, data.model_id);
    probe.class_names = data.class_names;
    probe.num_classes = data.num_classes;
    probe.weights.assign(data.num_classes * data.dim, 0.0);
    probe.bias.assign(data.num_classes, 0.0);

    const std::size_t n = data.examples.size();
    const std::size_t batch = config.batch_size == 0 ? n : std::min(config.batch_size, n);
    const bool shuffle = batch < n;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(config.seed);
    std::vector<Example> scratch;
    scratch.reserve(batch);

    detail::AdamState adam_w(probe.weights.size(), config);
    detail::AdamState adam_b(probe.bias.size(), config);
    std::size_t step = 0;

    TrainResult result;
    result.loss_curve.reserve(config.epochs);
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        if (shuffle) std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t stop = std::min(n, start + batch);
            std::span<const Example> slice;
            if (shuffle) {
                scratch.clear();
                for (std::size_t i = start; i < stop; ++i) scratch.push_back(data.examples[order[i]]);
                slice = scratch;
            } else {
                slice = std::span<const Example>(data.examples).subspan(start, stop - start);
            }
            auto g = gradients(probe, slice, config.l2_penalty);
            ++step;
            if (config.optimizer == Optimizer::adam) {
                adam_w.step(probe.weights, g.weights, step);
                adam_b.step(probe.bias, g.bias, step);
            } else {
                for (std::size_t i = 0; i < probe.weights.size(); ++i)
                    probe.weights[i] -= config.learning_rate * g.weights[i];
                for (std::size_t i = 0; i < probe.bias.size(); ++i)
                    probe.bias[i] -= config.learning_rate * g.bias[i];
            }
        }
        const bool params_finite =
            std::all_of(probe.weights.begin(), probe.weights.end(), [](double v) { return std::isfinite(v); }) &&
            std::all_of(probe.bias.begin(), probe.bias.end(), [](double v) { return std::isfinite(v); });
        if (!params_finite) throw DivergenceError(epoch);
        const double loss = mean_loss(probe, data.examples, config.l2_penalty);
        if (!std::isfinite(loss)) throw DivergenceError(epoch);
        result.loss_curve.push_back(loss);
    }
    result.probe = std::move(probe);
    return result;
}

/// Fraction of examples whose argmax prediction equals the label.
inline double accuracy(const ProbeModel& probe, std::span<const Example> examples) {
    if (examples.empty()) throw DataError("accuracy of an empty set");
    std::size_t hits = 0;
    for (const auto& ex : examples) {
        auto p = predict(probe, std::span<const double>(ex.features));
        if (argmax(p) == ex.label) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(examples.size());
}

inline nlohmann::json probe_to_json(const ProbeModel& probe) {
    probe.validate();
    return {{"format_version", kProbeFormatVersion},
            {"task", probe.task.name()},
            {"class_names", probe.class_names},
            {"layer_index", probe.layer},
            {"model_id", probe.model_id},
            {"d", probe.dim},
            {"C", probe.num_classes},
            {"W", probe.weights},
            {"b", probe.bias}};
}

/// JSON text; doubles are printed with round-trip precision.
inline std::string save_probe(const ProbeModel& probe) { return probe_to_json(probe).dump(2) + "\n"; }

inline ProbeModel load_probe(std::string_view text) {
    ProbeModel p;
    try {
        auto j = nlohmann::json::parse(text);
        const int version = j.at("format_version").get<int>();
        if (version != kProbeFormatVersion)
            throw UnsupportedVersionError("unsupported probe format version " +
                                          std::to_string(version));
        const auto task_name = j.at("task").get<std::string>();
        auto task = parse_task(task_name);
        if (!task) throw FormatError("unknown probe task '" + task_name + "'");
        p.task = *task;
        p.class_names = j.at("class_names").get<std::vector<std::string>>();
        p.layer = j.at("layer_index").get<std::uint32_t>();
        p.model_id = j.at("model_id").get<std::string>();
        p.dim = j.at("d").get<std::size_t>();
        p.num_classes = j.at("C").get<std::size_t>();
        p.weights = j.at("W").get<std::vector<double>>();
        p.bias = j.at("b").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed probe file: ") + e.what());
    }
    p.validate();
    return p;
}

}  // namespace pprobe
