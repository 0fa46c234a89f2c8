#include "lord/denoiser.hpp"

#include <cmath>

#include "lord/errors.hpp"

namespace lord {

void TokenTable::add(const std::string& token, Tensor row) {
    if (rows_.contains(token)) throw ValidationError("token '" + token + "' already registered");
    rows_.emplace(token, std::move(row));
}

Tensor& TokenTable::row(const std::string& token) {
    auto it = rows_.find(token);
    if (it == rows_.end()) throw ValidationError("unknown conditioning token '" + token + "'");
    return it->second;
}

const Tensor& TokenTable::row(const std::string& token) const {
    auto it = rows_.find(token);
    if (it == rows_.end()) throw ValidationError("unknown conditioning token '" + token + "'");
    return it->second;
}

std::vector<std::string> TokenTable::names() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : rows_) out.push_back(k);
    return out;
}

Tensor time_embedding(std::span<const std::size_t> t, std::size_t dim) {
    const std::size_t half = dim / 2;
    Tensor out({t.size(), dim});
    for (std::size_t r = 0; r < t.size(); ++r) {
        for (std::size_t i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(1000.0) * static_cast<double>(i) / static_cast<double>(half));
            const double arg = static_cast<double>(t[r]) * freq;
            out.at(r, i) = std::sin(arg);
            out.at(r, half + i) = std::cos(arg);
        }
    }
    return out;
}

Denoiser::Denoiser(const DenoiserConfig& cfg, Rng& rng, const std::vector<std::string>& tokens) : cfg_(cfg) {
    if (cfg.hidden_layers == 0) throw ValidationError("denoiser needs at least one hidden layer");
    std::size_t in = cfg.latent_dim + cfg.time_dim + cfg.token_dim;
    auto make = [&](std::string name, std::size_t fan_in, std::size_t fan_out, double gain) {
        LinearLayer l;
        l.name = std::move(name);
        l.weight = rng.normal_tensor({fan_out, fan_in}, gain / std::sqrt(static_cast<double>(fan_in)));
        l.bias = Tensor({fan_out});
        l.weight.set_requires_grad(true);
        l.bias.set_requires_grad(true);
        layers_.push_back(std::move(l));
    };
    for (std::size_t i = 0; i < cfg.hidden_layers; ++i) {
        make("fc" + std::to_string(i + 1), in, cfg.hidden, 1.0);
        in = cfg.hidden;
    }
    make("out", in, cfg.latent_dim, 0.5);
    for (const auto& tok : tokens) {
        Tensor row = rng.normal_tensor({1, cfg.token_dim}, 1.0);
        row.set_requires_grad(true);
        tokens_.add(tok, std::move(row));
    }
}

Var Denoiser::forward(Graph& g, Var z_t, std::span<const std::size_t> t, const std::string& token, LayerHook* hook) {
    if (z_t.cols() != cfg_.latent_dim || z_t.shape().size() != 2) {
        throw DimensionError("denoiser: latent batch " + shape_str(z_t.shape()) + " but latent dim is " +
                             std::to_string(cfg_.latent_dim));
    }
    const std::size_t n = z_t.rows();
    if (t.size() != n) throw DimensionError("denoiser: " + std::to_string(t.size()) + " timesteps for " + std::to_string(n) + " rows");
    Tensor& tok_row = tokens_.row(token);
    if (hook) hook->begin_pass();
    Var temb = g.constant(time_embedding(t, cfg_.time_dim));
    Var cond = matmul(g.constant(Tensor({n, 1}, 1.0)), g.param(tok_row));
    const Var parts[] = {z_t, temb, cond};
    Var h = concat_cols(parts);
    for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
        LinearLayer& l = layers_[i];
        Var base = add_bias(linear(h, g.param(l.weight)), g.param(l.bias));
        Var out = hook ? hook->apply(l.name, h, base) : base;
        h = silu(out);
    }
    LinearLayer& head = layers_.back();
    return add_bias(linear(h, g.param(head.weight)), g.param(head.bias));
}

std::vector<std::string> Denoiser::attachment_points() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i + 1 < layers_.size(); ++i) out.push_back(layers_[i].name);
    return out;
}

bool Denoiser::has_layer(const std::string& name) const {
    for (const auto& l : layers_)
        if (l.name == name) return true;
    return false;
}

LinearLayer& Denoiser::layer(const std::string& name) {
    for (auto& l : layers_)
        if (l.name == name) return l;
    throw ValidationError("denoiser has no layer named '" + name + "'");
}

const LinearLayer& Denoiser::layer(const std::string& name) const {
    for (const auto& l : layers_)
        if (l.name == name) return l;
    throw ValidationError("denoiser has no layer named '" + name + "'");
}

std::vector<std::pair<std::string, Tensor*>> Denoiser::named_parameters() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (auto& l : layers_) {
        out.emplace_back(l.name + ".weight", &l.weight);
        out.emplace_back(l.name + ".bias", &l.bias);
    }
    for (const auto& name : tokens_.names()) out.emplace_back("token." + name, &tokens_.row(name));
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> Denoiser::named_parameters() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (const auto& l : layers_) {
        out.emplace_back(l.name + ".weight", &l.weight);
        out.emplace_back(l.name + ".bias", &l.bias);
    }
    for (const auto& name : tokens_.names()) out.emplace_back("token." + name, &tokens_.row(name));
    return out;
}

std::vector<Tensor*> Denoiser::layer_parameters() {
    std::vector<Tensor*> out;
    for (auto& l : layers_) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
    return out;
}

void Denoiser::set_trainable(bool on) {
    for (auto& [_, p] : named_parameters()) p->set_requires_grad(on);
}

}  // namespace lord
