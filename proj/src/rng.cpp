#include "lord/rng.hpp"

namespace lord {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

Tensor Rng::normal_tensor(Shape shape, double stddev) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = stddev * normal();
    return t;
}

}  // namespace lord
