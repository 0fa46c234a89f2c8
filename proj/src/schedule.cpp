#include "lord/schedule.hpp"

#include <cmath>

#include "lord/errors.hpp"

namespace lord {

NoiseSchedule make_schedule(std::size_t steps, double beta_start, double beta_end) {
    if (steps == 0) throw ValidationError("schedule: step count must be positive");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw ValidationError("schedule: need 0 < beta_start <= beta_end < 1, got beta_start=" +
                              std::to_string(beta_start) + " beta_end=" + std::to_string(beta_end));
    }
    NoiseSchedule s;
    s.steps = steps;
    s.beta_start = beta_start;
    s.beta_end = beta_end;
    double prod = 1.0;
    for (std::size_t t = 0; t < steps; ++t) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(steps - 1);
        const double b = beta_start + frac * (beta_end - beta_start);
        s.beta.push_back(b);
        s.alpha.push_back(1.0 - b);
        prod *= 1.0 - b;
        s.alpha_bar.push_back(prod);
    }
    return s;
}

Var q_sample(Var z0, std::span<const std::size_t> t, Var eps, const NoiseSchedule& sched) {
    if (z0.shape() != eps.shape()) {
        throw DimensionError("q_sample: noise " + shape_str(eps.shape()) + " vs latent " + shape_str(z0.shape()));
    }
    const std::size_t n = z0.rows();
    if (t.size() != n) throw DimensionError("q_sample: " + std::to_string(t.size()) + " timesteps for " + std::to_string(n) + " rows");
    Tensor signal({n, 1}), noise({n, 1});
    for (std::size_t i = 0; i < n; ++i) {
        if (t[i] >= sched.steps) {
            throw ValidationError("q_sample: timestep " + std::to_string(t[i]) + " outside [0, " +
                                  std::to_string(sched.steps) + ")");
        }
        signal[i] = std::sqrt(sched.alpha_bar[t[i]]);
        noise[i] = std::sqrt(1.0 - sched.alpha_bar[t[i]]);
    }
    Graph& g = z0.graph();
    return add(scale_rows(z0, g.constant(std::move(signal))), scale_rows(eps, g.constant(std::move(noise))));
}

Tensor q_sample(const Tensor& z0, std::size_t t, const Tensor& eps, const NoiseSchedule& sched) {
    if (z0.shape() != eps.shape()) {
        throw DimensionError("q_sample: noise " + shape_str(eps.shape()) + " vs latent " + shape_str(z0.shape()));
    }
    if (t >= sched.steps) throw ValidationError("q_sample: timestep " + std::to_string(t) + " out of range");
    const double a = std::sqrt(sched.alpha_bar[t]);
    const double b = std::sqrt(1.0 - sched.alpha_bar[t]);
    Tensor out(z0.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * z0[i] + b * eps[i];
    return out;
}

}  // namespace lord
