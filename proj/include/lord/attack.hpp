#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lord/diffusion.hpp"

namespace lord {

enum class AttackMode { Untargeted, TargetedLatent };

struct AttackConfig {
    std::size_t iterations = 2;      // C
    double step = 2.0 / 255.0;       // alpha_per
    double zeta = 8.0 / 255.0;       // L-infinity budget
    AttackMode mode = AttackMode::Untargeted;
    std::optional<Tensor> target_pattern;  // 1 x D, targeted mode only
    std::uint64_t seed = 0;
    // Draw a fresh (t, eps) per iteration; when false one draw is reused.
    bool redraw_noise = true;

    void validate() const;
    std::uint64_t hash() const;
};

// Sign-gradient ascent on the denoising loss with respect to the pixels,
// projected after every step onto the zeta-ball around x and onto [0,1].
// Model parameters are read-only for the duration of the attack.
Tensor pgd_perturb(const Tensor& x, LatentDiffusion& model, const std::string& token, const AttackConfig& cfg,
                   Rng& rng, LayerHook* hook = nullptr);

// Sign-gradient descent on the distance between the model's noise
// prediction and the noise that would be predicted if the clean latent were
// encode(target). Fine-tuning on the result drags samples toward the target.
Tensor targeted_latent_perturb(const Tensor& x, LatentDiffusion& model, const std::string& token,
                               const AttackConfig& cfg, Rng& rng, LayerHook* hook = nullptr);

// Dispatches on cfg.mode.
Tensor run_attack(const Tensor& x, LatentDiffusion& model, const std::string& token, const AttackConfig& cfg, Rng& rng,
                  LayerHook* hook = nullptr);

// Targeted objective for fixed (t, eps); exposed for tests.
Var targeted_loss(Graph& g, LatentDiffusion& model, Var x, const std::string& token, const Tensor& target_pattern,
                  const NoiseDraw& draw, LayerHook* hook = nullptr);

struct AdversarialBatch {
    Tensor clean;
    Tensor perturbed;
    std::vector<double> labels;  // 0 for clean rows, 1 for perturbed rows
    std::uint64_t provenance = 0;

    // Clean rows followed by perturbed rows.
    Tensor stacked() const;
};

AdversarialBatch build_adversarial_batch(const Tensor& clean, const Tensor& perturbed, const AttackConfig& cfg);

// Per-row max |perturbed - clean|.
std::vector<double> linf_distance(const Tensor& a, const Tensor& b);

}  // namespace lord
