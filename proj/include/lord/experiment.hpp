#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lord/checkpoint.hpp"
#include "lord/config.hpp"
#include "lord/metrics_log.hpp"
#include "lord/pipeline.hpp"

namespace lord {

using Progress = std::function<void(const std::string&)>;

// Seed streams derived from the master seed.
namespace streams {
inline constexpr std::uint64_t kModelInit = 1;
inline constexpr std::uint64_t kPretrain = 2;
inline constexpr std::uint64_t kStage1 = 3;
inline constexpr std::uint64_t kProbe = 4;
inline constexpr std::uint64_t kStage2 = 100;
inline constexpr std::uint64_t kAttack = 200;
inline constexpr std::uint64_t kSampling = 300;
}  // namespace streams

Dataset make_corpus(const RunConfig& cfg);
LatentDiffusion make_base(const RunConfig& cfg, std::uint64_t seed);

// Few-shot set, jitter-free pattern and a larger clean reference set for
// the identity used by evaluation seed index s.
std::size_t fewshot_identity(const RunConfig& cfg, std::size_t s);
Tensor fewshot_set(const RunConfig& cfg, std::size_t s);
Tensor reference_set(const RunConfig& cfg, std::size_t s, std::size_t n);
Tensor attack_target(const RunConfig& cfg);

// Targeted (or untargeted, per config) perturbation of a few-shot set
// against the base model.
Tensor attack_fewshot(LatentDiffusion& base, const RunConfig& cfg, const Tensor& clean, std::uint64_t seed);

// First round(fraction * rows) rows from attacked, the rest from clean.
Tensor mix_fewshot(const Tensor& clean, const Tensor& attacked, double fraction);

enum class Scenario { AttackOnly, Pgd2Defense, Lord, Clean, LordClean };
const char* scenario_name(Scenario s);

// Stage-2 fine-tune of a copy of base for one scenario, then sampling and
// metrics. lord may be null for scenarios that do not use it.
SampleMetrics run_scenario(const LatentDiffusion& base, const AdapterSet* lord, const RunConfig& cfg, Scenario scenario,
                           const Tensor& fewshot, std::size_t seed_index, std::uint64_t master_seed);

struct ScenarioRow {
    Scenario scenario;
    std::vector<SampleMetrics> per_seed;
    SampleMetrics median;
};

struct SweepPoint {
    double fraction = 0.0;
    std::vector<double> plain;  // denoise-MSE per seed
    std::vector<double> lord;
    double plain_median = 0.0;
    double lord_median = 0.0;
};

struct ReproduceResult {
    std::uint64_t seed = 0;
    std::uint64_t config_hash = 0;
    TrainReport pretrain;
    TrainReport stage1;
    LambdaProbe probe;          // fresh draws of corpus identities, t = probe_t
    LambdaProbe probe_uniform;  // same rows, uniform t
    LambdaProbe probe_unseen;   // identities outside the corpus, t = probe_t
    std::vector<ScenarioRow> table;
    std::vector<SweepPoint> sweep;
    double identity_target_distance = 0.0;  // median over seeds, no-capture reference
    MetricsLog log;

    const ScenarioRow& row(Scenario s) const;
};

// Held-out lambda probes for a trained LoRD set.
void probe_detection(LatentDiffusion& base, AdapterSet& lord, const RunConfig& cfg, std::uint64_t seed,
                     ReproduceResult& out);

// Pretrain, stage 1, the scenario matrix over cfg.eval.seeds and the
// adversarial-fraction sweep.
ReproduceResult reproduce(const RunConfig& cfg, std::uint64_t seed, const Progress& progress = {});

std::string summary_csv(const ReproduceResult& r);
std::string sweep_csv(const ReproduceResult& r);
std::string clean_csv(const ReproduceResult& r);
std::string lambda_csv(const ReproduceResult& r);

double median(std::vector<double> v);

// Checkpoint conversion.
Metadata run_metadata(const RunConfig& cfg, std::uint64_t seed, const std::string& kind);
Checkpoint model_checkpoint(const LatentDiffusion& model, const RunConfig& cfg, std::uint64_t seed);
LatentDiffusion model_from_checkpoint(const Checkpoint& ckpt, const RunConfig& cfg);
Checkpoint adapter_checkpoint(const AdapterSet& set, const RunConfig& cfg, std::uint64_t seed);
AdapterSet adapter_from_checkpoint(const Checkpoint& ckpt);

}  // namespace lord
