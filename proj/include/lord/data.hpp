#pragma once

#include <cstdint>
#include <vector>

#include "lord/tensor.hpp"

namespace lord {

struct Dataset {
    Tensor images;                      // n x side*side, values in [0,1]
    std::vector<std::size_t> identity;  // identity index per row
};

struct PatternOptions {
    std::size_t side = 16;
    double jitter = 0.35;        // bump-centre jitter in pixels
    double amp_jitter = 0.05;    // relative amplitude jitter
    double pixel_noise = 0.01;   // additive gaussian noise per pixel
};

// Jitter-free pattern of one identity.
Tensor identity_pattern(std::uint64_t seed, std::size_t identity, const PatternOptions& opt = {});

// One jittered draw of an identity; sample selects the jitter stream.
Tensor identity_sample(std::uint64_t seed, std::size_t identity, std::uint64_t sample, const PatternOptions& opt = {});

// n_identities * per_identity rows, identities starting at first_identity.
Dataset synth_dataset(std::size_t n_identities, std::size_t per_identity, std::uint64_t seed,
                      std::size_t first_identity = 0, const PatternOptions& opt = {});

// Concentric ring texture used as the attacker's target.
Tensor target_pattern(std::uint64_t seed, std::size_t side = 16);

// Rows [begin, end) of a batch.
Tensor take_rows(const Tensor& t, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& rows);

// Mean over row pairs of the mean absolute pixel difference.
double mean_pair_distance(const Tensor& a, const Tensor& b);

}  // namespace lord
