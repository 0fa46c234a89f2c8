#include "lord/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "lord/errors.hpp"

namespace lord {

LatentDiffusion make_latent_diffusion(const DiffusionConfig& cfg, Rng& rng) {
    LatentDiffusion m;
    m.codec = LinearCodec(cfg.image_side, cfg.denoiser.latent_dim, cfg.codec_seed);
    m.schedule = make_schedule(cfg.steps, cfg.beta_start, cfg.beta_end);
    m.denoiser = Denoiser(cfg.denoiser, rng);
    return m;
}

NoiseDraw draw_noise(Rng& rng, std::size_t rows, std::size_t latent_dim, const NoiseSchedule& sched) {
    NoiseDraw d;
    d.t.reserve(rows);
    for (std::size_t i = 0; i < rows; ++i) d.t.push_back(rng.below(sched.steps));
    d.eps = rng.normal_tensor({rows, latent_dim});
    return d;
}

Var noise_prediction_loss(Var x, const LinearCodec& codec, const NoiseSchedule& sched, const NoiseDraw& draw,
                          const NoisePredictor& predict) {
    Graph& g = x.graph();
    Var z0 = codec.encode(x);
    Var eps = g.constant(draw.eps);
    Var zt = q_sample(z0, draw.t, eps, sched);
    return mse_loss(predict(zt, draw.t), eps);
}

Var ldm_loss(Graph& g, LatentDiffusion& model, Var x, const std::string& token, const NoiseDraw& draw,
             LayerHook* hook) {
    if (!model.denoiser.tokens().contains(token)) throw ValidationError("unknown conditioning token '" + token + "'");
    return noise_prediction_loss(x, model.codec, model.schedule, draw, [&](Var zt, std::span<const std::size_t> t) {
        return model.denoiser.forward(g, zt, t, token, hook);
    });
}

Var ldm_loss(Graph& g, LatentDiffusion& model, Var x, const std::string& token, Rng& rng, LayerHook* hook) {
    const NoiseDraw draw = draw_noise(rng, x.rows(), model.codec.latent_dim(), model.schedule);
    return ldm_loss(g, model, x, token, draw, hook);
}

Tensor denoise_sample(LatentDiffusion& model, const std::string& token, Rng& rng, std::size_t n, LayerHook* hook) {
    const std::size_t dz = model.codec.latent_dim();
    const NoiseSchedule& s = model.schedule;
    if (n == 0) return Tensor({0, model.codec.pixel_dim()});
    model.denoiser.tokens().row(token);

    Tensor z = rng.normal_tensor({n, dz});
    std::vector<std::size_t> t(n);
    for (std::size_t step = s.steps; step-- > 0;) {
        std::fill(t.begin(), t.end(), step);
        Graph g;
        g.set_params_frozen(true);
        const Tensor eps_hat = model.denoiser.forward(g, g.constant(z), t, token, hook).value().detached();
        const double coef = s.beta[step] / std::sqrt(1.0 - s.alpha_bar[step]);
        const double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha[step]);
        double sigma = 0.0;
        if (step > 0) {
            // Posterior variance of q(z_{t-1} | z_t, z_0).
            sigma = std::sqrt(s.beta[step] * (1.0 - s.alpha_bar[step - 1]) / (1.0 - s.alpha_bar[step]));
        }
        for (std::size_t i = 0; i < z.size(); ++i) {
            z[i] = inv_sqrt_alpha * (z[i] - coef * eps_hat[i]);
            if (step > 0) z[i] += sigma * rng.normal();
        }
    }
    Tensor x = model.codec.decode(z);
    for (double& v : x.data()) v = std::clamp(v, 0.0, 1.0);
    return x;
}

}  // namespace lord
