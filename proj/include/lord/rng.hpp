#pragma once

#include <cstdint>
#include <random>

#include "lord/tensor.hpp"

namespace lord {

// splitmix64 finalizer; used to derive independent child seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    Rng derive(std::uint64_t stream) const { return Rng(mix_seed(seed_of_state(), stream)); }

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }
    std::size_t below(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }
    std::uint64_t next_u64() { return engine_(); }

    Tensor normal_tensor(Shape shape, double stddev = 1.0);

    std::mt19937_64& engine() { return engine_; }

private:
    std::uint64_t seed_of_state() const {
        auto copy = engine_;
        return copy();
    }

    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace lord
