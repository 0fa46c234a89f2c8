#include <gtest/gtest.h>

#include <cstring>

#include "lord/data.hpp"
#include "lord/errors.hpp"

using namespace lord;

TEST(SynthDataset, SameSeedGivesIdenticalBytes) {
    const Dataset a = synth_dataset(5, 4, 11);
    const Dataset b = synth_dataset(5, 4, 11);
    ASSERT_EQ(a.images.size(), b.images.size());
    EXPECT_EQ(std::memcmp(a.images.data().data(), b.images.data().data(), a.images.size() * sizeof(double)), 0);
    EXPECT_EQ(a.identity, b.identity);
}

TEST(SynthDataset, DifferentSeedsDiffer) {
    EXPECT_FALSE(bit_equal(synth_dataset(3, 2, 1).images, synth_dataset(3, 2, 2).images));
}

TEST(SynthDataset, ShapeRangeAndIdentities) {
    const Dataset d = synth_dataset(4, 3, 5, 20);
    ASSERT_EQ(d.images.shape(), (Shape{12, 256}));
    for (double v : d.images.data()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    for (std::size_t id = 20; id < 24; ++id)
        EXPECT_EQ(std::count(d.identity.begin(), d.identity.end(), id), 3);
}

TEST(SynthDataset, InterIdentityDistanceExceedsIntra) {
    const std::size_t per = 10;
    for (std::size_t a = 0; a < 5; ++a) {
        std::vector<Tensor> rows_a, rows_b;
        Tensor A({per, 256}), B({per, 256});
        for (std::size_t k = 0; k < per; ++k) {
            const Tensor ra = identity_sample(7, a, k);
            const Tensor rb = identity_sample(7, a + 1, k);
            std::copy(ra.data().begin(), ra.data().end(), A.data().begin() + static_cast<long>(k * 256));
            std::copy(rb.data().begin(), rb.data().end(), B.data().begin() + static_cast<long>(k * 256));
        }
        EXPECT_GT(mean_pair_distance(A, B), mean_pair_distance(A, A)) << "identities " << a << "," << a + 1;
    }
}

TEST(SynthDataset, ZeroCountsRejected) {
    EXPECT_THROW(synth_dataset(0, 4, 1), ValidationError);
    EXPECT_THROW(synth_dataset(4, 0, 1), ValidationError);
}

TEST(Patterns, SamplesDrawnIndependentlyOfCorpusLayout) {
    const Dataset d = synth_dataset(3, 2, 9);
    for (std::size_t r = 0; r < d.images.rows(); ++r) {
        const Tensor s = identity_sample(9, d.identity[r], r / 3);
        EXPECT_TRUE(bit_equal(take_rows(d.images, r, r + 1), s.reshaped({1, 256}))) << "row " << r;
    }
}

TEST(Patterns, TargetIsInRangeAndFarFromIdentities) {
    const Tensor t = target_pattern(7);
    ASSERT_EQ(t.size(), 256u);
    for (double v : t.data()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    EXPECT_GT(mean_pair_distance(t.reshaped({1, 256}), identity_pattern(7, 0).reshaped({1, 256})), 0.1);
}

TEST(Rows, TakeAndGather) {
    const Dataset d = synth_dataset(2, 3, 4);
    EXPECT_EQ(take_rows(d.images, 1, 4).rows(), 3u);
    const Tensor g = gather_rows(d.images, {5, 0});
    EXPECT_TRUE(bit_equal(take_rows(g, 0, 1), take_rows(d.images, 5, 6)));
    EXPECT_THROW(take_rows(d.images, 4, 9), DimensionError);
}
