#pragma once

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lord/autograd.hpp"
#include "lord/rng.hpp"

namespace lord {

struct DenoiserConfig {
    std::size_t latent_dim = 64;
    std::size_t hidden = 256;
    std::size_t hidden_layers = 3;
    std::size_t time_dim = 32;
    std::size_t token_dim = 32;
};

struct LinearLayer {
    std::string name;
    Tensor weight;  // out x in
    Tensor bias;    // out

    std::size_t in_features() const { return weight.cols(); }
    std::size_t out_features() const { return weight.rows(); }
};

// Called for every hidden linear layer with the layer input and the frozen
// base output W·x + b; returns the (possibly adapted) layer output.
class LayerHook {
public:
    virtual ~LayerHook() = default;
    virtual Var apply(const std::string& layer, Var input, Var base_out) = 0;
    // Called by Denoiser::forward before the first layer.
    virtual void begin_pass() {}
};

// Learned conditioning vectors keyed by token string.
class TokenTable {
public:
    void add(const std::string& token, Tensor row);
    bool contains(const std::string& token) const { return rows_.contains(token); }
    Tensor& row(const std::string& token);
    const Tensor& row(const std::string& token) const;
    std::vector<std::string> names() const;

private:
    std::map<std::string, Tensor> rows_;
};

// Sinusoidal embedding of integer timesteps, one row per entry of t.
Tensor time_embedding(std::span<const std::size_t> t, std::size_t dim);

// Time- and token-conditional noise predictor: an MLP over
// [z_t, time embedding, token embedding] with SiLU hidden layers fc1..fcN
// and a linear read-out to the latent dimension.
class Denoiser {
public:
    Denoiser() = default;
    Denoiser(const DenoiserConfig& cfg, Rng& rng, const std::vector<std::string>& tokens = {"base", "sks"});

    const DenoiserConfig& config() const { return cfg_; }

    Var forward(Graph& g, Var z_t, std::span<const std::size_t> t, const std::string& token,
                LayerHook* hook = nullptr);

    // Names of the hidden linear layers adapters may attach to.
    std::vector<std::string> attachment_points() const;
    bool has_layer(const std::string& name) const;
    LinearLayer& layer(const std::string& name);
    const LinearLayer& layer(const std::string& name) const;
    const std::vector<LinearLayer>& layers() const { return layers_; }

    TokenTable& tokens() { return tokens_; }
    const TokenTable& tokens() const { return tokens_; }

    // Layer weights and token rows, in a stable order, named
    // "<layer>.weight", "<layer>.bias" and "token.<name>".
    std::vector<std::pair<std::string, Tensor*>> named_parameters();
    std::vector<std::pair<std::string, const Tensor*>> named_parameters() const;
    std::vector<Tensor*> layer_parameters();
    void set_trainable(bool on);

private:
    DenoiserConfig cfg_;
    std::vector<LinearLayer> layers_;
    TokenTable tokens_;
};

}  // namespace lord
