#include "lord/attack.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "lord/errors.hpp"

namespace lord {

namespace {

void check_unit_range(const Tensor& x, const char* what) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] >= 0.0 && x[i] <= 1.0)) {
            throw ValidationError(std::string(what) + ": pixel " + std::to_string(i) + " = " + std::to_string(x[i]) +
                                  " outside [0,1]");
        }
    }
}

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ULL;
    }
    return h;
}

template <class T>
std::uint64_t fnv_value(std::uint64_t h, const T& v) {
    return fnv1a(h, &v, sizeof(T));
}

void project(Tensor& cur, const Tensor& origin, double zeta) {
    for (std::size_t i = 0; i < cur.size(); ++i) {
        const double d = std::clamp(cur[i] - origin[i], -zeta, zeta);
        double v = std::clamp(origin[i] + d, 0.0, 1.0);
        // origin + d can round one ulp past the ball; step back toward origin.
        while (std::abs(v - origin[i]) > zeta) v = std::nextafter(v, origin[i]);
        cur[i] = v;
    }
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

using LossBuilder = std::function<Var(Graph&, Var x, const NoiseDraw&)>;

// Shared projected sign-gradient loop; direction is +1 for ascent.
Tensor projected_sign_steps(const Tensor& x, const AttackConfig& cfg, Rng& rng, std::size_t latent_dim,
                            const NoiseSchedule& sched, double direction, const LossBuilder& build) {
    Tensor cur = x.detached();
    if (cfg.iterations == 0 || cfg.step == 0.0 || x.rows() == 0) return cur;
    NoiseDraw draw = draw_noise(rng, x.rows(), latent_dim, sched);
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        if (it > 0 && cfg.redraw_noise) draw = draw_noise(rng, x.rows(), latent_dim, sched);
        Graph g;
        g.set_params_frozen(true);
        Var xi = g.input(cur);
        Var loss = build(g, xi, draw);
        g.backward(loss);
        const auto grad = g.grad(xi);
        for (std::size_t i = 0; i < cur.size(); ++i) cur[i] += direction * cfg.step * sign(grad[i]);
        project(cur, x, cfg.zeta);
    }
    return cur;
}

}  // namespace

void AttackConfig::validate() const {
    if (!(step >= 0.0)) throw ValidationError("attack.step must be >= 0");
    if (!(zeta >= 0.0 && zeta <= 1.0)) throw ValidationError("attack.zeta must lie in [0,1]");
    if (mode == AttackMode::TargetedLatent && !target_pattern) {
        throw ValidationError("targeted-latent attack needs a target pattern");
    }
}

std::uint64_t AttackConfig::hash() const {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    h = fnv_value(h, iterations);
    h = fnv_value(h, step);
    h = fnv_value(h, zeta);
    h = fnv_value(h, static_cast<int>(mode));
    h = fnv_value(h, seed);
    h = fnv_value(h, redraw_noise);
    if (target_pattern) h = fnv1a(h, target_pattern->data().data(), target_pattern->size() * sizeof(double));
    return h;
}

Tensor pgd_perturb(const Tensor& x, LatentDiffusion& model, const std::string& token, const AttackConfig& cfg,
                   Rng& rng, LayerHook* hook) {
    cfg.validate();
    check_unit_range(x, "pgd_perturb");
    model.denoiser.tokens().row(token);
    return projected_sign_steps(x, cfg, rng, model.codec.latent_dim(), model.schedule, +1.0,
                                [&](Graph& g, Var xi, const NoiseDraw& draw) {
                                    return ldm_loss(g, model, xi, token, draw, hook);
                                });
}

Var targeted_loss(Graph& g, LatentDiffusion& model, Var x, const std::string& token, const Tensor& target_pattern,
                  const NoiseDraw& draw, LayerHook* hook) {
    const std::size_t n = x.rows();
    if (target_pattern.size() != model.codec.pixel_dim()) {
        throw DimensionError("target pattern has " + std::to_string(target_pattern.size()) + " pixels, codec expects " +
                             std::to_string(model.codec.pixel_dim()));
    }
    const Tensor z_target = model.codec.encode(target_pattern.reshaped({1, target_pattern.size()}));
    const std::size_t dz = z_target.size();
    Tensor target_rows({n, dz});
    Tensor inv_sigma({n, 1});
    for (std::size_t r = 0; r < n; ++r) {
        const double ab = model.schedule.alpha_bar[draw.t[r]];
        inv_sigma[r] = 1.0 / std::sqrt(1.0 - ab);
        for (std::size_t j = 0; j < dz; ++j) target_rows.at(r, j) = std::sqrt(ab) * z_target[j];
    }
    Var z0 = model.codec.encode(x);
    Var zt = q_sample(z0, draw.t, g.constant(draw.eps), model.schedule);
    // Noise that a perfect denoiser would predict if the clean latent were the target's.
    Var eps_target = scale_rows(sub(zt, g.constant(std::move(target_rows))), g.constant(std::move(inv_sigma)));
    Var pred = model.denoiser.forward(g, zt, draw.t, token, hook);
    return mse_loss(pred, eps_target);
}

Tensor targeted_latent_perturb(const Tensor& x, LatentDiffusion& model, const std::string& token,
                               const AttackConfig& cfg, Rng& rng, LayerHook* hook) {
    if (!cfg.target_pattern) throw ValidationError("targeted-latent attack needs a target pattern");
    cfg.validate();
    check_unit_range(x, "targeted_latent_perturb");
    check_unit_range(*cfg.target_pattern, "target pattern");
    model.denoiser.tokens().row(token);
    const Tensor& target = *cfg.target_pattern;
    return projected_sign_steps(x, cfg, rng, model.codec.latent_dim(), model.schedule, -1.0,
                                [&](Graph& g, Var xi, const NoiseDraw& draw) {
                                    return targeted_loss(g, model, xi, token, target, draw, hook);
                                });
}

Tensor run_attack(const Tensor& x, LatentDiffusion& model, const std::string& token, const AttackConfig& cfg, Rng& rng,
                  LayerHook* hook) {
    return cfg.mode == AttackMode::TargetedLatent ? targeted_latent_perturb(x, model, token, cfg, rng, hook)
                                                  : pgd_perturb(x, model, token, cfg, rng, hook);
}

std::vector<double> linf_distance(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw DimensionError("linf_distance: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::size_t n = a.rows(), c = a.cols();
    std::vector<double> out(n, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < c; ++j) out[r] = std::max(out[r], std::abs(a.at(r, j) - b.at(r, j)));
    return out;
}

Tensor AdversarialBatch::stacked() const {
    const std::size_t c = clean.cols();
    std::vector<double> data(clean.storage());
    data.insert(data.end(), perturbed.storage().begin(), perturbed.storage().end());
    return Tensor({clean.rows() + perturbed.rows(), c}, std::move(data));
}

AdversarialBatch build_adversarial_batch(const Tensor& clean, const Tensor& perturbed, const AttackConfig& cfg) {
    if (clean.shape() != perturbed.shape()) {
        throw DimensionError("adversarial batch: clean " + shape_str(clean.shape()) + " vs perturbed " +
                             shape_str(perturbed.shape()));
    }
    check_unit_range(perturbed, "adversarial batch");
    const auto dist = linf_distance(clean, perturbed);
    for (std::size_t i = 0; i < dist.size(); ++i) {
        if (dist[i] > cfg.zeta + 1e-12) {
            throw ValidationError("adversarial batch: sample " + std::to_string(i) + " has |delta|_inf = " +
                                  std::to_string(dist[i]) + " > zeta = " + std::to_string(cfg.zeta));
        }
    }
    AdversarialBatch b;
    b.clean = clean.detached();
    b.perturbed = perturbed.detached();
    b.labels.assign(clean.rows(), 0.0);
    b.labels.resize(2 * clean.rows(), 1.0);
    b.provenance = cfg.hash();
    return b;
}

}  // namespace lord
