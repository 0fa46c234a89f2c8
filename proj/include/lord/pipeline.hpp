#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lord/adam.hpp"
#include "lord/adapters.hpp"
#include "lord/attack.hpp"
#include "lord/data.hpp"
#include "lord/diffusion.hpp"

namespace lord {

struct PretrainConfig {
    std::size_t epochs = 200;
    std::size_t batch = 50;
    double lr = 1e-3;
    std::string token = "base";
};

struct Stage1Config {
    double lambda_adv = 2.0;
    double lambda_det = 0.1;
    double lr = 1e-4;
    std::size_t epochs = 100;
    std::size_t batch = 50;
    AttackConfig attack;  // untargeted, C = 2, zeta = 8/255, step = zeta/4
    std::string token = "base";

    void validate() const;
};

struct Stage2Config {
    double lr = 1e-3;
    std::size_t epochs = 100;
    // Each epoch is one step over the few-shot set repeated this many times,
    // every copy with its own (t, eps).
    std::size_t repeats = 8;
    std::string token = "sks";
    // PGD-2 baseline only: fraction of each batch replaced by PGD copies.
    double pgd2_fraction = 0.5;
    AttackConfig pgd2_attack;

    void validate() const;
};

struct AdapterConfig {
    double alpha = 32.0;
    std::size_t rank = 4;
    std::vector<std::string> layers = {"fc1", "fc2", "fc3"};

    void validate() const;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double ldm = 0.0;
    double adv = 0.0;
    double bce = 0.0;
    double total = 0.0;
    double lambda_clean = 0.0;
    double lambda_perturbed = 0.0;
};

struct TrainReport {
    std::string stage;
    std::uint64_t seed = 0;
    std::uint64_t config_hash = 0;
    double lambda_adv = 0.0;
    double lambda_det = 0.0;
    double wall_seconds = 0.0;
    std::vector<EpochRecord> epochs;

    // Largest |total - (ldm + lambda_adv*adv + lambda_det*bce)| over epochs.
    double decomposition_error() const;
};

// Trains every denoiser parameter on the clean corpus.
TrainReport pretrain(LatentDiffusion& model, const Tensor& data, const PretrainConfig& cfg, std::uint64_t seed);

struct Stage1Result {
    AdapterSet lord;
    TrainReport report;
};

// Adversarial training of LoRD adapters on a frozen base. Each step attacks
// the current batch, runs clean and perturbed rows through one forward, and
// minimises L_LDM(clean) + lambda_adv*L_LDM(perturbed) + lambda_det*BCE.
Stage1Result stage1_train(LatentDiffusion& model, const Tensor& data, const AdapterConfig& acfg,
                          const Stage1Config& cfg, std::uint64_t seed);

struct Stage2Result {
    AdapterSet lora;
    TrainReport report;
};

// Few-shot LoRA plus token-row fine-tune. lord may be null (plain LoRA);
// otherwise it must be frozen and is applied beneath the new LoRA.
// Only the LoRA tensors and cfg.token's row change.
Stage2Result stage2_finetune(LatentDiffusion& model, AdapterSet* lord, const Tensor& fewshot,
                             const AdapterConfig& acfg, const Stage2Config& cfg, std::uint64_t seed);

// Plain LoRA fine-tune where each step replaces cfg.pgd2_fraction of the
// batch with PGD copies crafted against the current model.
Stage2Result pgd2_baseline(LatentDiffusion& model, const Tensor& fewshot, const AdapterConfig& acfg,
                           const Stage2Config& cfg, std::uint64_t seed);

// FNV hash of the base layers, every token row except skip_token, and the
// given adapter tensors.
std::uint64_t parameter_checksum(const LatentDiffusion& model, const AdapterSet* adapters,
                                 const std::string& skip_token = "");

struct SampleMetrics {
    double denoise_mse = 0.0;     // mean squared pixel error to the identity pattern
    double target_capture = 0.0;  // mean absolute pixel distance to the attack target
    double frechet = 0.0;         // pixel-space Frechet distance to the reference set
};

SampleMetrics sample_metrics(const Tensor& samples, const Tensor& identity, const Tensor& target,
                             const Tensor& reference);

// Frechet distance between Gaussian fits of two row sets.
double frechet_distance(const Tensor& a, const Tensor& b);

// Mann-Whitney AUC of scores where positives should score higher.
double roc_auc(const std::vector<double>& negatives, const std::vector<double>& positives);

struct LambdaProbe {
    std::vector<double> clean;
    std::vector<double> perturbed;
    double mean_clean = 0.0;
    double mean_perturbed = 0.0;
    double auc = 0.0;
};

// Per-sample lambda (mean over adapters) for clean and perturbed rows. Both
// sets share one (t, eps) draw per row; t is pinned when given.
LambdaProbe probe_lambda(LatentDiffusion& model, AdapterSet& lord, const Tensor& clean, const Tensor& perturbed,
                         const std::string& token, std::optional<std::size_t> t, std::uint64_t seed);

}  // namespace lord
