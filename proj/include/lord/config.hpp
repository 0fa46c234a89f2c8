#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lord/data.hpp"
#include "lord/diffusion.hpp"
#include "lord/pipeline.hpp"

namespace lord {

struct DataConfig {
    std::size_t n_identities = 50;
    std::size_t per_identity = 20;
    std::uint64_t seed = 7;
    std::size_t fewshot = 4;
    // Few-shot identities are heldout_identity + eval seed index.
    std::size_t heldout_identity = 10000;
    // Fresh draws per corpus identity for the held-out lambda probe.
    std::size_t probe_per_identity = 4;
    PatternOptions pattern;
};

struct ModelConfig {
    DiffusionConfig diffusion;
    PretrainConfig pretrain;
};

struct EvalConfig {
    std::size_t samples = 64;
    std::size_t seeds = 5;
    std::vector<double> fractions = {0.0, 0.25, 0.5, 0.75, 1.0};
    std::size_t probe_t = 0;
    AttackConfig attack;  // targeted-latent surrogate applied to the few-shot set
    std::uint64_t target_seed = 7;
    std::string attack_token = "base";
};

struct RunConfig {
    DataConfig data;
    ModelConfig model;
    AdapterConfig adapter;
    Stage1Config stage1;
    Stage2Config stage2;
    EvalConfig eval;

    RunConfig();
    // Cross-field checks; throws ValidationError with a "section.key: ..." message.
    void validate() const;
    // Canonical text; parse(dump()) reproduces the config.
    std::string dump() const;
    std::uint64_t hash() const;
};

// INI-style sections and "key = value" lines; '#' and ';' start comments.
// Numbers may be written as fractions ("8/255"). Unknown sections or keys
// are rejected.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace lord
