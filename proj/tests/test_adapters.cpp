#include <gtest/gtest.h>

#include <cmath>

#include "lord/adapters.hpp"
#include "lord/errors.hpp"
#include "support/adapter_oracle.hpp"

using namespace lord;

using namespace lord::oracle;

TEST(LoraForward, ZeroBIsExactNoOp) {
    Rng rng(1);
    LoraAdapter a = LoraAdapter::create(kIn, kOut, 4, 32.0, rng);
    Graph g;
    const Tensor base = rng.normal_tensor({5, kOut});
    Var out = lora_forward(g, a, g.constant(base.detached()), g.constant(rng.normal_tensor({5, kIn})));
    EXPECT_TRUE(bit_equal(out.value(), base));
}

TEST(LoraForward, ScalesUpdateByAlphaOverRank) {
    Rng rng(2);
    LoraAdapter a = random_lora(rng);
    EXPECT_DOUBLE_EQ(a.scaling(), 8.0);
    const Tensor x = rng.normal_tensor({3, kIn});
    const Tensor base = rng.normal_tensor({3, kOut});
    const Tensor v = dense_apply(x, dense_product(a.B, a.A, 1.0));
    Graph g;
    const Tensor out = lora_forward(g, a, g.constant(base.detached()), g.constant(x.detached())).value();
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], base[i] + 8.0 * v[i], 1e-12);
}

TEST(LoraForward, MatchesDenseOracle) {
    Rng rng(3);
    LoraAdapter a = random_lora(rng);
    const Tensor W = rng.normal_tensor({kOut, kIn});
    const Tensor x = rng.normal_tensor({7, kIn});
    Graph g;
    Var xv = g.constant(x.detached());
    const Tensor out = lora_forward(g, a, linear(xv, g.constant(W.detached())), xv).value();
    const Tensor ref = dense_apply(x, plus(W, dense_product(a.B, a.A, a.scaling())));
    EXPECT_LE(max_abs_diff(out, ref), 1e-9);
}

TEST(LoraAdapter, RejectsAlphaBelowRank) {
    Rng rng(4);
    EXPECT_THROW(LoraAdapter::create(kIn, kOut, 4, 2.0, rng), ValidationError);
    EXPECT_THROW(LoraAdapter::create(kIn, kOut, 0, 32.0, rng), ValidationError);
}

TEST(LordForward, ZeroBPrimeMatchesLora) {
    Rng rng(5);
    LordAdapter d = random_lord(rng);
    d.B_prime = Tensor({kOut, 4});
    LoraAdapter l;
    l.A = d.A.detached();
    l.B = d.B.detached();
    l.alpha = d.alpha;
    l.rank = d.rank;
    const Tensor x = rng.normal_tensor({6, kIn});
    const Tensor base = rng.normal_tensor({6, kOut});
    Graph g;
    const Tensor a = lord_forward(g, d, g.constant(base.detached()), g.constant(x.detached())).out.value();
    const Tensor b = lora_forward(g, l, g.constant(base.detached()), g.constant(x.detached())).value();
    EXPECT_LE(max_abs_diff(a, b), 1e-12);
}

TEST(LordForward, ZeroHeadGivesHalf) {
    Rng rng(6);
    LordAdapter d = random_lord(rng);
    d.head.w1 = Tensor({kOut, kOut});
    d.head.b1 = Tensor({kOut});
    d.head.w2 = Tensor({1, kOut});
    d.head.b2 = Tensor({1});
    Graph g;
    const auto r = lord_forward(g, d, g.constant(Tensor({4, kOut})), g.constant(rng.normal_tensor({4, kIn})));
    for (double v : r.lambda.value().data()) EXPECT_EQ(v, 0.5);
}

TEST(LordForward, LambdaPinnedToOneAndZero) {
    Rng rng(7);
    LordAdapter d = random_lord(rng);
    const Tensor W = rng.normal_tensor({kOut, kIn});
    const Tensor x = rng.normal_tensor({100, kIn});
    const double s = d.scaling();
    for (double pin : {1.0, 0.0}) {
        d.head.b2 = Tensor({1}, pin > 0.5 ? 1e4 : -1e4);
        Graph g;
        Var xv = g.constant(x.detached());
        const auto r = lord_forward(g, d, linear(xv, g.constant(W.detached())), xv);
        Tensor M = plus(W, dense_product(d.B, d.A, s));
        if (pin > 0.5) M = plus(M, dense_product(d.B_prime, d.A, s));
        EXPECT_LE(max_abs_diff(r.out.value(), dense_apply(x, M)), 1e-9) << "lambda pinned to " << pin;
    }
}

TEST(DetectionLoss, AnalyticCases) {
    Graph g;
    std::vector<Var> halves;
    for (int k = 0; k < 3; ++k) halves.push_back(g.constant(Tensor({5, 1}, 0.5)));
    EXPECT_NEAR(detection_loss(halves, 1.0).value().item(), std::log(2.0), 1e-12);

    std::vector<Var> sure = {g.constant(Tensor({4, 1}, 1.0 - 1e-12))};
    EXPECT_NEAR(detection_loss(sure, 1.0).value().item(), 0.0, 1e-6);

    std::vector<Var> mixed = {g.constant(Tensor({2, 1}, std::vector<double>{0.2, 0.8}))};
    EXPECT_NEAR(detection_loss(mixed, 0.0).value().item(), 0.5 * (-std::log(0.8) - std::log(0.2)), 1e-12);
    EXPECT_NEAR(detection_loss(mixed, 0.0).value().item(), 0.9163, 1e-4);
}

TEST(DetectionLoss, SplitScoresEachHalfAgainstItsLabel) {
    Graph g;
    std::vector<Var> lam = {g.constant(Tensor({4, 1}, std::vector<double>{0.2, 0.2, 0.7, 0.7}))};
    const double expect = -std::log(0.8) - std::log(0.7);
    EXPECT_NEAR(split_detection_loss(lam, 2).value().item(), expect, 1e-12);
}

TEST(Merge, ZeroBLeavesWeight) {
    Rng rng(8);
    LoraAdapter a = LoraAdapter::create(kIn, kOut, 4, 32.0, rng);
    const Tensor W = rng.normal_tensor({kOut, kIn});
    EXPECT_TRUE(bit_equal(merge_lora_into_weights(a, W), W));
}

TEST(Merge, MergedWeightMatchesRuntimeOnHundredInputs) {
    Rng rng(9);
    LoraAdapter a = random_lora(rng);
    const Tensor W = rng.normal_tensor({kOut, kIn});
    const Tensor merged = merge_lora_into_weights(a, W);
    const Tensor x = rng.normal_tensor({100, kIn});
    Graph g;
    Var xv = g.constant(x.detached());
    const Tensor runtime = lora_forward(g, a, linear(xv, g.constant(W.detached())), xv).value();
    EXPECT_LE(max_abs_diff(linear(xv, g.constant(merged.detached())).value(), runtime), 1e-9);
}

TEST(Merge, SubtractingUpdateRecoversWeight) {
    Rng rng(10);
    LoraAdapter a = random_lora(rng);
    const Tensor W = rng.normal_tensor({kOut, kIn});
    const Tensor merged = merge_lora_into_weights(a, W);
    const Tensor delta = dense_product(a.B, a.A, a.scaling());
    Tensor back = merged.detached();
    for (std::size_t i = 0; i < back.size(); ++i) back[i] -= delta[i];
    EXPECT_LE(max_abs_diff(back, W), 1e-12);
}

TEST(Merge, ShapeMismatchRejected) {
    Rng rng(11);
    LoraAdapter a = random_lora(rng);
    EXPECT_THROW(merge_lora_into_weights(a, Tensor({kIn, kOut})), DimensionError);
}

namespace {

struct StackFixture {
    AdapterSet lord{AdapterKind::Lord};
    AdapterSet lora{AdapterKind::Lora};
    Tensor W, x;

    explicit StackFixture(std::uint64_t seed) {
        Rng rng(seed);
        lord.add("fc1", random_lord(rng));
        lora.add("fc1", random_lora(rng));
        W = rng.normal_tensor({kOut, kIn});
        x = rng.normal_tensor({9, kIn});
    }

    Tensor run(std::vector<AdapterSet*> sets) { return run_stack(std::move(sets), x, W); }
};

}  // namespace

TEST(Stack, ZeroSecondLoraEqualsLordOnly) {
    StackFixture f(12);
    f.lora.lora("fc1").B = Tensor({kOut, 4});
    EXPECT_LE(max_abs_diff(f.run({&f.lord, &f.lora}), f.run({&f.lord})), 1e-12);
}

TEST(Stack, ZeroLordBranchesEqualsLoraOnly) {
    StackFixture f(13);
    f.lord.lord("fc1").B = Tensor({kOut, 4});
    f.lord.lord("fc1").B_prime = Tensor({kOut, 4});
    EXPECT_LE(max_abs_diff(f.run({&f.lord, &f.lora}), f.run({&f.lora})), 1e-12);
}

TEST(Stack, MatchesFourTermOracle) {
    StackFixture f(14);
    const Tensor out = f.run({&f.lord, &f.lora});
    const Tensor ref = four_term_oracle(f.x, f.W, f.lord.lord("fc1"), f.lora.lora("fc1"));
    EXPECT_LE(max_abs_diff(out, ref), 1e-9);
}

TEST(AdapterSet, FrozenSetExposesNoParameters) {
    Rng rng(15);
    AdapterSet s(AdapterKind::Lord);
    s.add("fc1", random_lord(rng));
    EXPECT_EQ(s.parameters().size(), 7u);
    s.set_frozen(true);
    EXPECT_TRUE(s.parameters().empty());
    for (Tensor* t : s.all_tensors()) EXPECT_FALSE(t->requires_grad());
}

TEST(AdapterSet, NamedTensorRoundTrip) {
    Rng rng(16);
    AdapterSet s(AdapterKind::Lord);
    s.add("fc1", random_lord(rng));
    s.add("fc2", random_lord(rng));
    std::map<std::string, Tensor> m;
    for (const auto& [name, t] : s.named_tensors()) m.emplace(name, t->detached());
    AdapterSet back = AdapterSet::from_named_tensors(AdapterKind::Lord, m, 32.0, 4);
    ASSERT_EQ(back.names(), s.names());
    for (const auto& [name, t] : back.named_tensors()) EXPECT_TRUE(bit_equal(*t, m.at(name))) << name;
}

TEST(AdapterSet, KindMismatchRejected) {
    Rng rng(17);
    AdapterSet s(AdapterKind::Lora);
    EXPECT_THROW(s.add("fc1", random_lord(rng)), ValidationError);
    s.add("fc1", random_lora(rng));
    EXPECT_THROW(s.add("fc1", random_lora(rng)), ValidationError);
}
