#pragma once

#include <cstdint>

#include "lord/autograd.hpp"

namespace lord {

// Fixed linear encoder/decoder between 16x16 pixel space and the latent.
//
// Encoder rows are a seeded random rotation of the lowest-frequency 2-D
// cosine basis functions, so rows are orthonormal and the decoder is the
// transpose. Pixels in [0,1] are mapped to [-1,1] before projection.
class LinearCodec {
public:
    LinearCodec() = default;
    LinearCodec(std::size_t side, std::size_t latent_dim, std::uint64_t seed);
    // Rebuild from stored matrices (checkpoint load).
    LinearCodec(Tensor encoder, Tensor decoder, std::uint64_t seed);

    std::size_t pixel_dim() const { return encoder_.cols(); }
    std::size_t latent_dim() const { return encoder_.rows(); }
    std::uint64_t seed() const { return seed_; }
    const Tensor& encoder() const { return encoder_; }
    const Tensor& decoder() const { return decoder_; }

    // x: n x D pixels -> n x d_z latents. Differentiable in x.
    Var encode(Var x) const;
    Var decode(Var z) const;
    Tensor encode(const Tensor& x) const;
    Tensor decode(const Tensor& z) const;

private:
    Tensor encoder_;  // d_z x D
    Tensor decoder_;  // D x d_z
    std::uint64_t seed_ = 0;
};

}  // namespace lord
