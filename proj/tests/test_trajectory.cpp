#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "pprobe/trajectory.hpp"
#include "support.hpp"

using namespace pprobe;
namespace tk = pprobe::testkit;

namespace {

// d=2 bundle, one token per turn with no scaffolding, turn-k row = (k, 0).
ActivationBundle ramp_bundle(std::size_t turns) {
    std::mt19937_64 rng(0);
    auto b = tk::make_bundle("ramp", turns, 2, rng, 1, 0);
    for (std::size_t k = 0; k < turns; ++k) {
        b.matrix[2 * k] = static_cast<float>(k + 1);
        b.matrix[2 * k + 1] = 0.0f;
    }
    return b;
}

std::vector<ProbeModel> uniform_trait_probes(std::size_t d) {
    std::vector<ProbeModel> out;
    for (Trait t : kTraits) out.push_back(ProbeModel::zeros(Task::of_trait(t), d, 26, "test-model"));
    return out;
}

}  // namespace

TEST(TurnTrajectory, UniformProbeIsUniform) {
    std::mt19937_64 rng(1);
    auto b = tk::make_bundle("c", 7, 4, rng);
    for (auto task : {Task::persuasion(), Task::strategy()}) {
        auto tr = turn_trajectory(ProbeModel::zeros(task, 4, 26, "test-model"), b);
        ASSERT_EQ(tr.points.size(), 7u);
        for (const auto& p : tr.points) {
            for (double v : p.probs) EXPECT_DOUBLE_EQ(v, 1.0 / static_cast<double>(task.class_count()));
            EXPECT_EQ(p.predicted_class, 0u);
        }
        EXPECT_TRUE(tr.warnings.empty());
    }
}

TEST(TurnTrajectory, AnalyticSoftmaxOfRamp) {
    auto b = ramp_bundle(4);
    auto p = ProbeModel::zeros(Task::persuasion(), 2, 26, "test-model");
    p.weights = {1, 0, -1, 0};
    auto tr = turn_trajectory(p, b);
    ASSERT_EQ(tr.points.size(), 4u);
    EXPECT_NEAR(tr.points[0].probs[0], 0.880797, 1e-6);
    for (std::size_t k = 1; k <= 4; ++k) {
        const double kk = static_cast<double>(k);
        EXPECT_EQ(tr.points[k - 1].index, k);
        EXPECT_NEAR(tr.points[k - 1].probs[0], std::exp(kk) / (std::exp(kk) + std::exp(-kk)), 1e-12);
    }
}

TEST(TurnTrajectory, SingleTurnMatchesConversationEnd) {
    std::mt19937_64 rng(2);
    auto b = tk::make_bundle("one", 1, 5, rng);
    auto p = tk::random_probe(Task::persuasion(), 5, rng);
    auto tr = turn_trajectory(p, b);
    auto end = conversation_end_point(p, b);
    ASSERT_EQ(tr.points.size(), 1u);
    ASSERT_EQ(end.points.size(), 1u);
    EXPECT_EQ(tr.points[0].probs, end.points[0].probs);
    EXPECT_EQ(end.points[0].granularity, Granularity::conversation_end);
}

TEST(TurnTrajectory, DimensionMismatchThrows) {
    std::mt19937_64 rng(3);
    auto b = tk::make_bundle("c", 2, 4, rng);
    EXPECT_THROW(turn_trajectory(ProbeModel::zeros(Task::persuasion(), 5), b), DimensionError);
}

TEST(TurnTrajectory, ModelMismatchOnlyWarns) {
    std::mt19937_64 rng(4);
    auto b = tk::make_bundle("c", 2, 4, rng);
    auto p = ProbeModel::zeros(Task::persuasion(), 4, 30, "proxy-model");
    auto tr = turn_trajectory(p, b);
    EXPECT_EQ(tr.points.size(), 2u);
    EXPECT_EQ(tr.warnings.size(), 2u);
}

TEST(TurnTrajectory, LengthAndOrderProperty) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t T = 1 + rng() % 20;
        auto b = tk::make_bundle("c", T, 3, rng, 1 + rng() % 4, rng() % 3);
        auto p = tk::random_probe(Task::strategy(), 3, rng);
        auto tr = turn_trajectory(p, b);
        ASSERT_EQ(tr.points.size(), T);
        for (std::size_t i = 0; i < T; ++i) {
            EXPECT_EQ(tr.points[i].index, i + 1);
            EXPECT_EQ(tr.points[i].predicted_class, argmax(tr.points[i].probs));
        }
        auto tok = token_trajectory(p, b);
        EXPECT_EQ(tok.points.size(), b.in_span_tokens().size());
        for (std::size_t i = 1; i < tok.points.size(); ++i)
            EXPECT_LT(tok.points[i - 1].index, tok.points[i].index);
    }
}

TEST(TurnTrajectory, PrefixCausalityProperty) {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<float> u(-5.0f, 5.0f);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t T = 2 + rng() % 10;
        auto b = tk::make_bundle("c", T, 4, rng);
        auto p = tk::random_probe(Task::persuasion(), 4, rng);
        const auto before = turn_trajectory(p, b);
        const std::size_t k = 1 + rng() % (T - 1);
        auto edited = b;
        for (std::size_t j = b.turn_spans[k - 1].end; j < b.n_tokens; ++j)
            for (std::size_t c = 0; c < b.d; ++c) edited.matrix[j * b.d + c] = u(rng);
        const auto after = turn_trajectory(p, edited);
        for (std::size_t i = 0; i < k; ++i) EXPECT_EQ(before.points[i].probs, after.points[i].probs);
    }
}

TEST(TurnTrajectory, Deterministic) {
    std::mt19937_64 rng(7);
    auto b = tk::make_bundle("c", 9, 6, rng);
    auto p = tk::random_probe(Task::strategy(), 6, rng);
    auto a = turn_trajectory(p, b);
    auto c = turn_trajectory(p, b);
    ASSERT_EQ(a.points.size(), c.points.size());
    for (std::size_t i = 0; i < a.points.size(); ++i) EXPECT_EQ(a.points[i].probs, c.points[i].probs);
}

TEST(TokenTrajectory, OnePointPerInSpanToken) {
    std::mt19937_64 rng(8);
    auto b = tk::make_bundle("c", 2, 3, rng, 2, 2);  // spans [2,4) and [6,8); widen the second
    b.turn_spans[1].end = b.turn_spans[1].start + 3;
    b.token_strings.push_back("extra");
    b.n_tokens += 1;
    b.matrix.resize(b.n_tokens * b.d, 0.5f);
    b.validate();
    ASSERT_EQ(b.in_span_tokens().size(), 5u);
    auto tr = token_trajectory(tk::random_probe(Task::persuasion(), 3, rng), b);
    EXPECT_EQ(tr.points.size(), 5u);
    for (const auto& p : tr.points) EXPECT_EQ(p.granularity, Granularity::token);
}

TEST(TokenTrajectory, ConstantRowsGiveConstantTrajectory) {
    std::mt19937_64 rng(9);
    auto b = tk::make_bundle("c", 4, 3, rng);
    std::fill(b.matrix.begin(), b.matrix.end(), 0.25f);
    auto tr = token_trajectory(tk::random_probe(Task::strategy(), 3, rng), b);
    for (const auto& p : tr.points) EXPECT_EQ(p.probs, tr.points.front().probs);
}

TEST(TokenTrajectory, LastPointMatchesTurnTrajectory) {
    std::mt19937_64 rng(10);
    for (int trial = 0; trial < 20; ++trial) {
        auto b = tk::make_bundle("c", 1 + rng() % 8, 4, rng);
        auto p = tk::random_probe(Task::persuasion(), 4, rng);
        EXPECT_EQ(token_trajectory(p, b).points.back().probs,
                  turn_trajectory(p, b).points.back().probs);
    }
}

TEST(TraitTrajectories, UniformProbesAreFlatAtHalf) {
    std::mt19937_64 rng(11);
    auto b = tk::make_bundle("c", 5, 4, rng);
    auto probes = uniform_trait_probes(4);
    auto out = trait_trajectories(probes, b);
    ASSERT_EQ(out.size(), 5u);
    for (Trait t : kTraits) {
        ASSERT_TRUE(out.count(t));
        for (double v : out.at(t).positive_series()) EXPECT_DOUBLE_EQ(v, 0.5);
    }
}

TEST(TraitTrajectories, CurveDependsOnlyOnItsProbe) {
    std::mt19937_64 rng(12);
    auto b = tk::make_bundle("c", 6, 4, rng);
    std::vector<ProbeModel> probes;
    for (Trait t : kTraits) probes.push_back(tk::random_probe(Task::of_trait(t), 4, rng));
    auto base = trait_trajectories(probes, b);
    auto copy = probes;
    copy[3] = ProbeModel(probes[3]);
    copy[0].bias[0] += 1.0;  // perturb a different trait
    auto again = trait_trajectories(copy, b);
    EXPECT_EQ(base.at(Trait::agreeableness).positive_series(),
              again.at(Trait::agreeableness).positive_series());
    EXPECT_NE(base.at(Trait::openness).positive_series(), again.at(Trait::openness).positive_series());
}

TEST(TraitTrajectories, MissingOrDuplicateTraitThrows) {
    std::mt19937_64 rng(13);
    auto b = tk::make_bundle("c", 3, 4, rng);
    auto probes = uniform_trait_probes(4);
    auto missing = probes;
    missing.pop_back();
    EXPECT_THROW(trait_trajectories(missing, b), DataError);
    auto dup = probes;
    dup[4] = dup[0];
    EXPECT_THROW(trait_trajectories(dup, b), DataError);
    auto wrong = probes;
    wrong[2] = ProbeModel::zeros(Task::persuasion(), 4);
    EXPECT_THROW(trait_trajectories(wrong, b), DataError);
}

TEST(StrategyTrajectory, UniformProbeGivesThirds) {
    std::mt19937_64 rng(14);
    auto b = tk::make_bundle("c", 4, 3, rng);
    auto tr = strategy_trajectory(ProbeModel::zeros(Task::strategy(), 3, 26, "test-model"), b);
    ASSERT_EQ(tr.points.size(), 4u);
    for (const auto& p : tr.points)
        for (double v : p.probs) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(StrategyTrajectory, PersuaderFilterKeepsOddTurns) {
    std::mt19937_64 rng(15);
    auto conv = tk::make_conversation("c", 6);
    auto b = tk::make_bundle("c", 6, 3, rng);
    auto tr = strategy_trajectory(tk::random_probe(Task::strategy(), 3, rng), b, &conv, Role::persuader);
    ASSERT_EQ(tr.points.size(), 3u);
    EXPECT_EQ(tr.points[0].index, 1u);
    EXPECT_EQ(tr.points[1].index, 3u);
    EXPECT_EQ(tr.points[2].index, 5u);
    for (const auto& p : tr.points) EXPECT_NEAR(p.probs[0] + p.probs[1] + p.probs[2], 1.0, 1e-6);
}

TEST(StrategyTrajectory, RejectsNonStrategyProbe) {
    std::mt19937_64 rng(16);
    auto b = tk::make_bundle("c", 2, 3, rng);
    EXPECT_THROW(strategy_trajectory(ProbeModel::zeros(Task::persuasion(), 3), b), DataError);
}
