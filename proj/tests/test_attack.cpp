#include <gtest/gtest.h>

#include <cmath>

#include "lord/attack.hpp"
#include "lord/errors.hpp"
#include "support/toy_model.hpp"

using namespace lord;

namespace {

AttackConfig stage1_attack(double zeta = 8.0 / 255.0) {
    AttackConfig a;
    a.iterations = 2;
    a.zeta = zeta;
    a.step = zeta / 4.0;
    return a;
}

// Mean denoising loss over `draws` independent (t, eps) per row.
double expected_loss(LatentDiffusion& m, const Tensor& x, std::size_t draws, std::uint64_t seed) {
    Rng rng(seed);
    double total = 0.0;
    for (std::size_t k = 0; k < draws; ++k) {
        Graph g;
        g.set_params_frozen(true);
        total += ldm_loss(g, m, g.constant(x.detached()), "base", rng).value().item();
    }
    return total / static_cast<double>(draws);
}

}  // namespace

TEST(Pgd, ZeroIterationsIsIdentity) {
    LatentDiffusion m = oracle::toy_base();
    const Tensor x = take_rows(oracle::toy_corpus().images, 0, 4);
    AttackConfig a = stage1_attack();
    a.iterations = 0;
    Rng rng(1);
    EXPECT_TRUE(bit_equal(pgd_perturb(x, m, "base", a, rng), x));
}

TEST(Pgd, ZeroStepIsIdentity) {
    LatentDiffusion m = oracle::toy_base();
    const Tensor x = take_rows(oracle::toy_corpus().images, 0, 4);
    AttackConfig a = stage1_attack();
    a.step = 0.0;
    Rng rng(1);
    EXPECT_TRUE(bit_equal(pgd_perturb(x, m, "base", a, rng), x));
}

TEST(Pgd, SingleStepMovesEveryFreePixelByExactlyTheStep) {
    LatentDiffusion m = oracle::toy_base();
    const Tensor x = take_rows(oracle::toy_corpus().images, 0, 3);
    AttackConfig a = stage1_attack();
    a.iterations = 1;
    Rng rng(2);
    const Tensor xp = pgd_perturb(x, m, "base", a, rng);
    std::size_t moved = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = std::abs(xp[i] - x[i]);
        const bool interior = x[i] >= a.step && x[i] <= 1.0 - a.step;
        if (interior) {
            EXPECT_NEAR(d, a.step, 1e-15) << "pixel " << i;
            ++moved;
        }
    }
    EXPECT_GT(moved, x.size() / 2);
}

TEST(Pgd, OversizedStepIsCappedAtBudget) {
    LatentDiffusion m = oracle::toy_base();
    const Tensor x = take_rows(oracle::toy_corpus().images, 0, 3);
    AttackConfig a = stage1_attack();
    a.iterations = 1;
    a.step = 5.0 * a.zeta;
    Rng rng(3);
    const Tensor xp = pgd_perturb(x, m, "base", a, rng);
    for (std::size_t i = 0; i < x.size(); ++i) {
        EXPECT_LE(std::abs(xp[i] - x[i]), a.zeta);
        if (x[i] >= a.zeta && x[i] <= 1.0 - a.zeta) EXPECT_NEAR(std::abs(xp[i] - x[i]), a.zeta, 1e-15);
    }
}

TEST(Pgd, ProjectionHoldsExactlyForAllBudgets) {
    LatentDiffusion m = oracle::toy_base();
    const Tensor x = take_rows(oracle::toy_corpus().images, 0, 20);
    for (double zeta : {4.0 / 255.0, 8.0 / 255.0, 16.0 / 255.0}) {
        AttackConfig a = stage1_attack(zeta);
        a.iterations = 5;
        Rng rng(4);
        const Tensor xp = pgd_perturb(x, m, "base", a, rng);
        for (double d : linf_distance(x, xp)) EXPECT_LE(d, zeta);
        for (double v : xp.data()) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

TEST(Pgd, AscendsTheDenoisingLossInMostSeeds) {
    LatentDiffusion m = oracle::toy_base();
    const Dataset d = oracle::toy_corpus();
    int ascents = 0;
    for (std::uint64_t s = 0; s < 20; ++s) {
        const Tensor x = take_rows(d.images, 4 * s % 96, 4 * s % 96 + 4);
        Rng rng(100 + s);
        const Tensor xp = pgd_perturb(x, m, "base", stage1_attack(), rng);
        if (expected_loss(m, xp, 16, 500 + s) >= expected_loss(m, x, 16, 500 + s)) ++ascents;
    }
    EXPECT_GE(ascents, 18);
}

TEST(Pgd, RejectsPixelsOutsideUnitRange) {
    LatentDiffusion m = oracle::toy_base();
    Tensor x = take_rows(oracle::toy_corpus().images, 0, 2);
    x[37] = 1.5;
    Rng rng(5);
    try {
        (void)pgd_perturb(x, m, "base", stage1_attack(), rng);
        FAIL() << "expected ValidationError";
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("pixel 37"), std::string::npos) << e.what();
    }
}

TEST(Pgd, ModelParametersAreUntouched) {
    LatentDiffusion m = oracle::toy_base();
    for (Tensor* p : m.denoiser.layer_parameters()) p->set_requires_grad(true);
    const Tensor before = m.denoiser.layer("fc2").weight.detached();
    Rng rng(6);
    (void)pgd_perturb(take_rows(oracle::toy_corpus().images, 0, 4), m, "base", stage1_attack(), rng);
    EXPECT_TRUE(bit_equal(m.denoiser.layer("fc2").weight, before));
    for (Tensor* p : m.denoiser.layer_parameters()) EXPECT_FALSE(p->has_grad());
}

TEST(LdmLoss, InputGradientMatchesFiniteDifferences) {
    LatentDiffusion m = oracle::toy_base();
    const Tensor x = take_rows(oracle::toy_corpus().images, 0, 2);
    Rng rng(7);
    const NoiseDraw draw = draw_noise(rng, 2, 64, m.schedule);
    auto loss_at = [&](const Tensor& xi) {
        Graph g;
        g.set_params_frozen(true);
        return ldm_loss(g, m, g.constant(xi.detached()), "base", draw).value().item();
    };
    Graph g;
    g.set_params_frozen(true);
    Var xv = g.input(x.detached());
    g.backward(ldm_loss(g, m, xv, "base", draw));
    const auto grad = g.grad(xv);
    Tensor probe = x.detached();
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); i += 7) {
        const double x0 = probe[i];
        probe[i] = x0 + 1e-5;
        const double fp = loss_at(probe);
        probe[i] = x0 - 1e-5;
        const double fm = loss_at(probe);
        probe[i] = x0;
        const double num = (fp - fm) / 2e-5;
        worst = std::max(worst, std::abs(num - grad[i]) / std::max({std::abs(num), std::abs(grad[i]), 1e-6}));
    }
    EXPECT_LE(worst, 1e-4);
}

TEST(TargetedAttack, ZeroIterationsIsIdentity) {
    LatentDiffusion m = oracle::toy_base();
    const Tensor x = take_rows(oracle::toy_corpus().images, 0, 3);
    AttackConfig a = stage1_attack();
    a.mode = AttackMode::TargetedLatent;
    a.target_pattern = target_pattern(7);
    a.iterations = 0;
    Rng rng(8);
    EXPECT_TRUE(bit_equal(run_attack(x, m, "base", a, rng), x));
}

TEST(TargetedAttack, DescendsTargetedLossUnderFixedNoise) {
    LatentDiffusion m = oracle::toy_base();
    const Dataset d = oracle::toy_corpus();
    const Tensor target = target_pattern(7);
    int descents = 0;
    for (std::uint64_t s = 0; s < 20; ++s) {
        const Tensor x = take_rows(d.images, 4 * s % 96, 4 * s % 96 + 4);
        AttackConfig a = stage1_attack();
        a.mode = AttackMode::TargetedLatent;
        a.target_pattern = target;
        a.iterations = 10;
        a.step = a.zeta / 10.0;
        a.redraw_noise = false;
        Rng rng(200 + s);
        Rng replay(200 + s);
        const NoiseDraw draw = draw_noise(replay, 4, 64, m.schedule);
        const Tensor xp = run_attack(x, m, "base", a, rng);
        auto loss_at = [&](const Tensor& xi) {
            Graph g;
            g.set_params_frozen(true);
            return targeted_loss(g, m, g.constant(xi.detached()), "base", target, draw).value().item();
        };
        if (loss_at(xp) <= loss_at(x)) ++descents;
    }
    EXPECT_GE(descents, 18);
}

TEST(TargetedAttack, MissingTargetRejected) {
    LatentDiffusion m = oracle::toy_base();
    AttackConfig a = stage1_attack();
    a.mode = AttackMode::TargetedLatent;
    Rng rng(9);
    EXPECT_THROW(run_attack(take_rows(oracle::toy_corpus().images, 0, 1), m, "base", a, rng), ValidationError);
}

TEST(AdversarialBatch, IdenticalInputsGiveZeroDelta) {
    const Tensor x = take_rows(oracle::toy_corpus().images, 0, 3);
    const AdversarialBatch b = build_adversarial_batch(x, x, stage1_attack());
    for (double d : linf_distance(b.clean, b.perturbed)) EXPECT_EQ(d, 0.0);
}

TEST(AdversarialBatch, OverBudgetSampleIsNamed) {
    const Tensor x = take_rows(oracle::toy_corpus().images, 0, 4);
    Tensor xp = x.detached();
    const AttackConfig a = stage1_attack();
    // Pick an interior pixel of sample 2 so the shifted value stays in [0,1].
    std::size_t col = 0;
    while (x.at(2, col) > 0.5) ++col;
    xp.at(2, col) += a.zeta + 0.01;
    try {
        (void)build_adversarial_batch(x, xp, a);
        FAIL() << "expected ValidationError";
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("sample 2"), std::string::npos) << e.what();
    }
}

TEST(AdversarialBatch, LabelsFollowRowOrder) {
    const Dataset d = synth_dataset(2, 4, 3);
    const AdversarialBatch b = build_adversarial_batch(d.images, d.images, stage1_attack());
    ASSERT_EQ(b.labels.size(), 16u);
    for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(b.labels[i], i < 8 ? 0.0 : 1.0);
    EXPECT_EQ(b.stacked().rows(), 16u);
    EXPECT_EQ(b.provenance, stage1_attack().hash());
}
