#pragma once

// Fixture builders and independent oracles shared by the unit and acceptance suites.
// Oracles here deliberately avoid the library's implementation paths.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "pprobe/pprobe.hpp"

namespace pprobe::testkit {

/// Alternating-role conversation; persuader speaks first unless ee_first.
inline Conversation make_conversation(const std::string& id, std::size_t turns,
                                      Outcome outcome = Outcome::unknown, bool ee_first = false) {
    Conversation c;
    c.id = id;
    c.labels.outcome = outcome;
    for (std::size_t i = 0; i < turns; ++i) {
        Turn t;
        t.index = i;
        const bool er = (i % 2 == 0) != ee_first;
        t.role = er ? Role::persuader : Role::persuadee;
        t.text = "turn " + std::to_string(i) + " text";
        c.turns.push_back(t);
    }
    return c;
}

/// Bundle with `per_turn` tokens for every turn, `scaffold` out-of-span tokens before each
/// turn, and entries drawn uniformly from [-1, 1].
inline ActivationBundle make_bundle(const std::string& id, std::size_t turns, std::size_t d,
                                    std::mt19937_64& rng, std::size_t per_turn = 3,
                                    std::size_t scaffold = 1) {
    ActivationBundle b;
    b.conversation_id = id;
    b.model_id = "test-model";
    b.layer = 26;
    b.d = d;
    std::size_t pos = 0;
    for (std::size_t t = 0; t < turns; ++t) {
        for (std::size_t s = 0; s < scaffold; ++s) b.token_strings.push_back("<s>");
        pos += scaffold;
        b.turn_spans.push_back({t, pos, pos + per_turn});
        for (std::size_t k = 0; k < per_turn; ++k)
            b.token_strings.push_back("t" + std::to_string(t) + "_" + std::to_string(k));
        pos += per_turn;
    }
    b.n_tokens = pos;
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    b.matrix.resize(b.n_tokens * d);
    for (auto& v : b.matrix) v = u(rng);
    return b;
}

inline ProbeModel random_probe(const Task& task, std::size_t d, std::mt19937_64& rng,
                               double scale = 1.0) {
    auto p = ProbeModel::zeros(task, d, 26, "test-model");
    std::normal_distribution<double> n(0.0, scale);
    for (auto& w : p.weights) w = n(rng);
    for (auto& b : p.bias) b = n(rng);
    return p;
}

/// Two isotropic Gaussian clusters at +/- 2 e_1 with sigma 0.5; label 1 for the + cluster.
inline Dataset gaussian_fixture(std::size_t per_class, std::uint64_t seed, std::size_t d = 8) {
    Dataset ds;
    ds.task = Task::persuasion();
    ds.class_names = ds.task.class_names();
    ds.num_classes = 2;
    ds.dim = d;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.5);
    for (std::size_t i = 0; i < 2 * per_class; ++i) {
        const std::size_t y = i % 2;
        Example ex;
        ex.label = y;
        ex.features.resize(d);
        for (std::size_t j = 0; j < d; ++j) ex.features[j] = noise(rng);
        ex.features[0] += y == 1 ? 2.0 : -2.0;
        ds.examples.push_back(std::move(ex));
        ds.provenance.push_back({"g" + std::to_string(i), "synthetic"});
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Oracles

/// O(n_pos * n_neg) pair counting with half credit for ties.
inline double brute_force_auroc(const std::vector<double>& s, const std::vector<int>& y) {
    double wins = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (y[i] != 1) continue;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[j] != 0) continue;
            ++pairs;
            if (s[i] > s[j]) wins += 1.0;
            else if (s[i] == s[j]) wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

/// Textbook JSD: sqrt(0.5 KL(p||m) + 0.5 KL(q||m)) in bits, via natural logs.
inline double direct_jsd(const std::vector<double>& p, const std::vector<double>& q) {
    double kl_p = 0.0, kl_q = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double m = (p[i] + q[i]) / 2.0;
        if (p[i] > 0) kl_p += p[i] * std::log(p[i] / m);
        if (q[i] > 0) kl_q += q[i] * std::log(q[i] / m);
    }
    return std::sqrt((kl_p + kl_q) / 2.0 / std::log(2.0));
}

/// Mean cross-entropy computed from an explicit probability evaluation (no log-sum-exp).
inline double naive_mean_loss(const ProbeModel& p, const std::vector<Example>& batch) {
    double total = 0.0;
    for (const auto& ex : batch) {
        std::vector<double> z(p.num_classes);
        double denom = 0.0;
        for (std::size_t c = 0; c < p.num_classes; ++c) {
            z[c] = p.bias[c];
            for (std::size_t j = 0; j < p.dim; ++j) z[c] += p.weights[c * p.dim + j] * ex.features[j];
        }
        for (double v : z) denom += std::exp(v);
        total += -std::log(std::exp(z[ex.label]) / denom);
    }
    return total / static_cast<double>(batch.size());
}

/// Central finite differences of naive_mean_loss with respect to every parameter.
inline Gradients finite_difference_gradients(ProbeModel p, const std::vector<Example>& batch,
                                             double step = 1e-5) {
    Gradients g{std::vector<double>(p.weights.size()), std::vector<double>(p.bias.size())};
    auto diff = [&](double& param) {
        const double saved = param;
        param = saved + step;
        const double up = naive_mean_loss(p, batch);
        param = saved - step;
        const double down = naive_mean_loss(p, batch);
        param = saved;
        return (up - down) / (2.0 * step);
    };
    for (std::size_t i = 0; i < p.weights.size(); ++i) g.weights[i] = diff(p.weights[i]);
    for (std::size_t i = 0; i < p.bias.size(); ++i) g.bias[i] = diff(p.bias[i]);
    return g;
}

/// Max over entries of |a - b| / max(|a|, |b|, floor).
inline double max_relative_error(const Gradients& a, const Gradients& b, double floor = 1e-6) {
    double worst = 0.0;
    auto cmp = [&](const std::vector<double>& x, const std::vector<double>& y) {
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double denom = std::max({std::abs(x[i]), std::abs(y[i]), floor});
            worst = std::max(worst, std::abs(x[i] - y[i]) / denom);
        }
    };
    cmp(a.weights, b.weights);
    cmp(a.bias, b.bias);
    return worst;
}

/// Binary logistic regression by Newton-Raphson (IRLS) with a tiny ridge; returns
/// training accuracy. Independent of the probe's softmax/gradient code.
inline double irls_logistic_accuracy(const Dataset& ds, int iterations = 25, double ridge = 1e-3) {
    const std::size_t d = ds.dim + 1;
    std::vector<double> beta(d, 0.0);
    auto x_at = [&](const Example& ex, std::size_t j) { return j < ds.dim ? ex.features[j] : 1.0; };
    for (int it = 0; it < iterations; ++it) {
        std::vector<double> grad(d, 0.0);
        std::vector<double> hess(d * d, 0.0);
        for (const auto& ex : ds.examples) {
            double z = 0.0;
            for (std::size_t j = 0; j < d; ++j) z += beta[j] * x_at(ex, j);
            const double mu = 1.0 / (1.0 + std::exp(-z));
            const double w = mu * (1.0 - mu);
            for (std::size_t j = 0; j < d; ++j) {
                grad[j] += (static_cast<double>(ex.label) - mu) * x_at(ex, j);
                for (std::size_t k = 0; k < d; ++k) hess[j * d + k] += w * x_at(ex, j) * x_at(ex, k);
            }
        }
        for (std::size_t j = 0; j < d; ++j) {
            grad[j] -= ridge * beta[j];
            hess[j * d + j] += ridge;
        }
        // Solve hess * step = grad by Gaussian elimination with partial pivoting.
        std::vector<double> a = hess, b = grad;
        for (std::size_t c = 0; c < d; ++c) {
            std::size_t piv = c;
            for (std::size_t r = c + 1; r < d; ++r)
                if (std::abs(a[r * d + c]) > std::abs(a[piv * d + c])) piv = r;
            for (std::size_t k = 0; k < d; ++k) std::swap(a[c * d + k], a[piv * d + k]);
            std::swap(b[c], b[piv]);
            for (std::size_t r = c + 1; r < d; ++r) {
                const double f = a[r * d + c] / a[c * d + c];
                for (std::size_t k = c; k < d; ++k) a[r * d + k] -= f * a[c * d + k];
                b[r] -= f * b[c];
            }
        }
        std::vector<double> step(d);
        for (std::size_t c = d; c-- > 0;) {
            double s = b[c];
            for (std::size_t k = c + 1; k < d; ++k) s -= a[c * d + k] * step[k];
            step[c] = s / a[c * d + c];
        }
        for (std::size_t j = 0; j < d; ++j) beta[j] += step[j];
    }
    std::size_t hits = 0;
    for (const auto& ex : ds.examples) {
        double z = 0.0;
        for (std::size_t j = 0; j < d; ++j) z += beta[j] * x_at(ex, j);
        hits += ((z >= 0.0) == (ex.label == 1)) ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(ds.examples.size());
}

/// Pearson r from the raw-moment formula, independent of the centered two-pass version.
inline double raw_moment_pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        syy += y[i] * y[i];
        sxy += x[i] * y[i];
    }
    return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

/// A random point on the simplex of dimension k with strictly positive entries.
inline std::vector<double> random_simplex(std::size_t k, std::mt19937_64& rng) {
    std::exponential_distribution<double> e(1.0);
    std::vector<double> v(k);
    double s = 0.0;
    for (auto& x : v) {
        x = e(rng) + 1e-12;
        s += x;
    }
    for (auto& x : v) x /= s;
    return v;
}

}  // namespace pprobe::testkit
