#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lord/codec.hpp"
#include "lord/denoiser.hpp"
#include "lord/schedule.hpp"

namespace lord {

// Frozen codec and schedule plus the trainable noise predictor.
struct LatentDiffusion {
    Denoiser denoiser;
    LinearCodec codec;
    NoiseSchedule schedule;
};

struct DiffusionConfig {
    std::size_t image_side = 16;
    std::size_t steps = 100;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    DenoiserConfig denoiser;
    std::uint64_t codec_seed = 17;
};

LatentDiffusion make_latent_diffusion(const DiffusionConfig& cfg, Rng& rng);

// One (t, eps) draw per row.
struct NoiseDraw {
    std::vector<std::size_t> t;
    Tensor eps;
};

NoiseDraw draw_noise(Rng& rng, std::size_t rows, std::size_t latent_dim, const NoiseSchedule& sched);

using NoisePredictor = std::function<Var(Var z_t, std::span<const std::size_t> t)>;

// Mean squared error between the drawn noise and the predictor's output on
// z_t = q_sample(encode(x), t, eps). Differentiable in x and in whatever the
// predictor binds.
Var noise_prediction_loss(Var x, const LinearCodec& codec, const NoiseSchedule& sched, const NoiseDraw& draw,
                          const NoisePredictor& predict);

Var ldm_loss(Graph& g, LatentDiffusion& model, Var x, const std::string& token, const NoiseDraw& draw,
             LayerHook* hook = nullptr);
Var ldm_loss(Graph& g, LatentDiffusion& model, Var x, const std::string& token, Rng& rng, LayerHook* hook = nullptr);

// DDPM ancestral sampling, decoded to pixels and clamped to [0,1].
Tensor denoise_sample(LatentDiffusion& model, const std::string& token, Rng& rng, std::size_t n,
                      LayerHook* hook = nullptr);

}  // namespace lord
