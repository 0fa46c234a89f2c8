#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "lord/errors.hpp"
#include "lord/experiment.hpp"
#include "support/toy_model.hpp"

using namespace lord;

namespace {

const std::vector<std::string> kLayers = {"fc1", "fc2", "fc3"};

AdapterSet frozen_lord(const LatentDiffusion& m, std::uint64_t seed) {
    Rng rng(seed);
    AdapterSet s = AdapterSet::attach_lord(m.denoiser, kLayers, 4, 32.0, rng);
    s.set_frozen(true);
    return s;
}

Stage2Config short_stage2(std::size_t epochs = 4) {
    Stage2Config c;
    c.epochs = epochs;
    c.repeats = 2;
    return c;
}

Tensor toy_fewshot() { return take_rows(oracle::toy_corpus().images, 0, 4); }

std::vector<double> ldm_curve(const TrainReport& r) {
    std::vector<double> v;
    for (const auto& e : r.epochs) v.push_back(e.ldm);
    return v;
}

bool same_tensors(const AdapterSet& a, const AdapterSet& b) {
    const auto ta = a.named_tensors(), tb = b.named_tensors();
    if (ta.size() != tb.size()) return false;
    for (std::size_t i = 0; i < ta.size(); ++i) {
        if (ta[i].first != tb[i].first || !bit_equal(*ta[i].second, *tb[i].second)) return false;
    }
    return true;
}

RunConfig toy_run_config() {
    RunConfig c;
    c.model.diffusion = oracle::toy_diffusion_config();
    c.stage2.epochs = 3;
    c.stage2.repeats = 2;
    c.eval.samples = 6;
    c.eval.attack.iterations = 3;
    return c;
}

}  // namespace

TEST(Decomposition, ComponentArithmetic) {
    TrainReport r;
    r.lambda_adv = 2.0;
    r.lambda_det = 0.1;
    r.epochs.push_back(EpochRecord{.ldm = 1.0, .adv = 0.5, .bce = std::log(2.0), .total = 2.0693147180559945});
    EXPECT_LE(r.decomposition_error(), 1e-12);
    r.epochs.back().total = 2.0693;
    EXPECT_GT(r.decomposition_error(), 1e-6);
}

TEST(Stage1, LoggedTotalsDecomposeAndLambdaIsReported) {
    LatentDiffusion m = oracle::toy_base();
    Stage1Config c;
    c.epochs = 2;
    c.batch = 10;
    const Stage1Result r = stage1_train(m, take_rows(oracle::toy_corpus().images, 0, 20), AdapterConfig{}, c, 3);
    ASSERT_EQ(r.report.epochs.size(), 2u);
    EXPECT_LE(r.report.decomposition_error(), 1e-9);
    EXPECT_TRUE(r.lord.frozen());
    for (const auto& e : r.report.epochs) {
        EXPECT_GT(e.bce, 0.0);
        EXPECT_GT(e.lambda_clean, 0.0);
        EXPECT_LT(e.lambda_perturbed, 1.0);
    }
}

TEST(Stage1, BaseIsNotModified) {
    LatentDiffusion m = oracle::toy_base();
    const std::uint64_t before = parameter_checksum(m, nullptr);
    Stage1Config c;
    c.epochs = 1;
    c.batch = 10;
    (void)stage1_train(m, take_rows(oracle::toy_corpus().images, 0, 10), AdapterConfig{}, c, 4);
    EXPECT_EQ(parameter_checksum(m, nullptr), before);
}

TEST(Stage1, DegenerateWeightsMatchLoraOnTheFirstStep) {
    // With zero-initialised B and B', the first forward and every A/B gradient
    // coincide with a LoRA run sharing A.
    LatentDiffusion m = oracle::toy_base();
    Rng r1(5), r2(6);
    AdapterSet lord = AdapterSet::attach_lord(m.denoiser, kLayers, 4, 32.0, r1);
    AdapterSet lora = AdapterSet::attach_lora(m.denoiser, kLayers, 4, 32.0, r2);
    for (const auto& name : kLayers) lora.lora(name).A = lord.lord(name).A.detached().set_requires_grad(true);
    const Tensor x = take_rows(oracle::toy_corpus().images, 0, 8);
    Rng nr(7);
    const NoiseDraw draw = draw_noise(nr, 8, 64, m.schedule);
    auto run = [&](AdapterSet& set) {
        for (Tensor* p : set.parameters()) p->clear_grad();
        Graph g;
        Var l = ldm_loss(g, m, g.constant(x), "base", draw, &set);
        g.backward(l);
        return l.value().item();
    };
    const double l_lord = run(lord);
    const double l_lora = run(lora);
    EXPECT_EQ(l_lord, l_lora);
    for (const auto& name : kLayers) {
        const auto ga = lord.lord(name).A.grad(), gb = lora.lora(name).A.grad();
        for (std::size_t i = 0; i < ga.size(); ++i) EXPECT_NEAR(ga[i], gb[i], 1e-12) << name << ".A " << i;
        const auto ha = lord.lord(name).B.grad(), hb = lora.lora(name).B.grad();
        for (std::size_t i = 0; i < ha.size(); ++i) EXPECT_NEAR(ha[i], hb[i], 1e-12) << name << ".B " << i;
    }
}

TEST(Stage1, InvalidWeightsRejected) {
    LatentDiffusion m = oracle::toy_base();
    Stage1Config c;
    c.lambda_adv = -1.0;
    EXPECT_THROW(stage1_train(m, toy_fewshot(), AdapterConfig{}, c, 1), ValidationError);
    AdapterConfig a;
    a.alpha = 2.0;
    EXPECT_THROW(stage1_train(m, toy_fewshot(), a, Stage1Config{}, 1), ValidationError);
}

TEST(Stage2, OnlyLoraAndTokenRowChange) {
    LatentDiffusion m = oracle::toy_base();
    AdapterSet lord = frozen_lord(m, 8);
    const std::uint64_t frozen_before = parameter_checksum(m, &lord, "sks");
    const Tensor sks_before = m.denoiser.tokens().row("sks").detached();
    const Stage2Result r = stage2_finetune(m, &lord, toy_fewshot(), AdapterConfig{}, short_stage2(), 9);
    EXPECT_EQ(parameter_checksum(m, &lord, "sks"), frozen_before);
    EXPECT_FALSE(bit_equal(m.denoiser.tokens().row("sks"), sks_before));
    bool b_moved = false;
    for (const auto& name : kLayers) {
        for (double v : r.lora.lora(name).B.data()) b_moved |= v != 0.0;
    }
    EXPECT_TRUE(b_moved);
    EXPECT_TRUE(r.lora.frozen());
}

TEST(Stage2, ZeroEpochsIsNoOp) {
    LatentDiffusion m = oracle::toy_base();
    AdapterSet lord = frozen_lord(m, 10);
    const std::uint64_t before = parameter_checksum(m, &lord);
    Stage2Result r = stage2_finetune(m, &lord, toy_fewshot(), AdapterConfig{}, short_stage2(0), 11);
    EXPECT_EQ(parameter_checksum(m, &lord), before);
    EXPECT_TRUE(r.report.epochs.empty());
    AdapterStack stack = compose_test_stack(m.denoiser, lord, r.lora);
    Rng a(12), b(12);
    EXPECT_TRUE(bit_equal(denoise_sample(m, "sks", a, 3, &stack), denoise_sample(m, "sks", b, 3, &lord)));
}

TEST(Stage2, UnfrozenLordRejected) {
    LatentDiffusion m = oracle::toy_base();
    Rng rng(13);
    AdapterSet lord = AdapterSet::attach_lord(m.denoiser, kLayers, 4, 32.0, rng);
    EXPECT_THROW(stage2_finetune(m, &lord, toy_fewshot(), AdapterConfig{}, short_stage2(), 1), ValidationError);
}

TEST(Stage2, ZeroBranchLordMatchesDetachedRun) {
    LatentDiffusion a = oracle::toy_base();
    LatentDiffusion b = oracle::toy_base();
    AdapterSet lord = frozen_lord(a, 14);  // B = B' = 0, random head
    const Stage2Result with = stage2_finetune(a, &lord, toy_fewshot(), AdapterConfig{}, short_stage2(), 15);
    const Stage2Result without = stage2_finetune(b, nullptr, toy_fewshot(), AdapterConfig{}, short_stage2(), 15);
    EXPECT_EQ(ldm_curve(with.report), ldm_curve(without.report));
    EXPECT_TRUE(same_tensors(with.lora, without.lora));
}

TEST(Pgd2, ZeroFractionEqualsPlainFinetune) {
    LatentDiffusion a = oracle::toy_base();
    LatentDiffusion b = oracle::toy_base();
    Stage2Config c = short_stage2();
    c.pgd2_fraction = 0.0;
    const Stage2Result p = pgd2_baseline(a, toy_fewshot(), AdapterConfig{}, c, 16);
    const Stage2Result s = stage2_finetune(b, nullptr, toy_fewshot(), AdapterConfig{}, c, 16);
    EXPECT_EQ(ldm_curve(p.report), ldm_curve(s.report));
    EXPECT_TRUE(same_tensors(p.lora, s.lora));
    EXPECT_TRUE(bit_equal(a.denoiser.tokens().row("sks"), b.denoiser.tokens().row("sks")));
}

TEST(Pgd2, NonzeroFractionChangesTraining) {
    LatentDiffusion a = oracle::toy_base();
    LatentDiffusion b = oracle::toy_base();
    Stage2Config c = short_stage2();
    const Stage2Result p = pgd2_baseline(a, toy_fewshot(), AdapterConfig{}, c, 17);
    const Stage2Result s = stage2_finetune(b, nullptr, toy_fewshot(), AdapterConfig{}, c, 17);
    EXPECT_NE(ldm_curve(p.report), ldm_curve(s.report));
}

TEST(Metrics, RocAucExtremesAndTies) {
    EXPECT_EQ(roc_auc({0.1, 0.2}, {0.8, 0.9}), 1.0);
    EXPECT_EQ(roc_auc({0.8, 0.9}, {0.1, 0.2}), 0.0);
    EXPECT_EQ(roc_auc({0.5, 0.5}, {0.5}), 0.5);
    EXPECT_THROW(roc_auc({}, {1.0}), ValidationError);
}

TEST(Metrics, FrechetOfShiftedSet) {
    Rng rng(18);
    const Tensor a = rng.normal_tensor({200, 5}, 1.0);
    Tensor b = a.detached();
    for (double& v : b.storage()) v += 0.5;
    EXPECT_NEAR(frechet_distance(a, a), 0.0, 1e-9);
    EXPECT_NEAR(frechet_distance(a, b), 5 * 0.25, 1e-9);
    EXPECT_THROW(frechet_distance(a, take_rows(a, 0, 1)), ValidationError);
}

TEST(Metrics, SampleMetricsAreFiniteAndNonNegative) {
    const Tensor s = take_rows(oracle::toy_corpus().images, 0, 6);
    const SampleMetrics m = sample_metrics(s, identity_pattern(7, 0), target_pattern(7), take_rows(s, 0, 4));
    for (double v : {m.denoise_mse, m.target_capture, m.frechet}) {
        EXPECT_TRUE(std::isfinite(v));
        EXPECT_GE(v, 0.0);
    }
}

TEST(Probe, IdenticalInputsGiveChanceAuc) {
    LatentDiffusion m = oracle::toy_base();
    AdapterSet lord = frozen_lord(m, 19);
    const Tensor x = toy_fewshot();
    const LambdaProbe p = probe_lambda(m, lord, x, x, "base", 0, 20);
    ASSERT_EQ(p.clean.size(), 4u);
    EXPECT_EQ(p.clean, p.perturbed);
    EXPECT_EQ(p.auc, 0.5);
    EXPECT_EQ(p.mean_clean, p.mean_perturbed);
}

TEST(Experiment, ScenarioIsBitReproducible) {
    const RunConfig cfg = toy_run_config();
    const LatentDiffusion& base = oracle::toy_base();
    AdapterSet lord = frozen_lord(base, 21);
    const Tensor fs = fewshot_set(cfg, 0);
    for (Scenario s : {Scenario::AttackOnly, Scenario::Lord, Scenario::Pgd2Defense}) {
        const SampleMetrics a = run_scenario(base, &lord, cfg, s, fs, 0, 7);
        const SampleMetrics b = run_scenario(base, &lord, cfg, s, fs, 0, 7);
        EXPECT_EQ(std::memcmp(&a, &b, sizeof a), 0) << scenario_name(s);
        EXPECT_TRUE(std::isfinite(a.denoise_mse) && a.denoise_mse >= 0.0);
    }
}

TEST(Experiment, AttackedFewshotStaysInBudget) {
    RunConfig cfg = toy_run_config();
    LatentDiffusion base = oracle::toy_base();
    const Tensor clean = fewshot_set(cfg, 1);
    const Tensor adv = attack_fewshot(base, cfg, clean, 22);
    for (double d : linf_distance(clean, adv)) EXPECT_LE(d, cfg.eval.attack.zeta);
    const Tensor half = mix_fewshot(clean, adv, 0.5);
    EXPECT_TRUE(bit_equal(take_rows(half, 0, 2), take_rows(adv, 0, 2)));
    EXPECT_TRUE(bit_equal(take_rows(half, 2, 4), take_rows(clean, 2, 4)));
}

TEST(Experiment, CheckpointRoundTrips) {
    const RunConfig cfg = toy_run_config();
    const LatentDiffusion& base = oracle::toy_base();
    const Checkpoint mc = decode_checkpoint(encode_checkpoint(model_checkpoint(base, cfg, 7)));
    const LatentDiffusion back = model_from_checkpoint(mc, cfg);
    EXPECT_EQ(parameter_checksum(back, nullptr), parameter_checksum(base, nullptr));
    EXPECT_TRUE(bit_equal(back.codec.encoder(), base.codec.encoder()));

    AdapterSet lord = frozen_lord(base, 23);
    const Checkpoint ac = decode_checkpoint(encode_checkpoint(adapter_checkpoint(lord, cfg, 7)));
    EXPECT_EQ(ac.metadata.at("alpha"), "32");
    EXPECT_EQ(ac.metadata.at("r"), "4");
    const AdapterSet lb = adapter_from_checkpoint(ac);
    EXPECT_EQ(lb.kind(), AdapterKind::Lord);
    EXPECT_TRUE(lb.frozen());
    EXPECT_TRUE(same_tensors(lb, lord));
}

TEST(Experiment, MedianOfEvenAndOdd) {
    EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
    EXPECT_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
}
