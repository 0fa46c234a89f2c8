#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "lord/autograd.hpp"

namespace lord {

// DDPM variance schedule with linear betas.
struct NoiseSchedule {
    std::size_t steps = 0;
    double beta_start = 0.0;
    double beta_end = 0.0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;
};

NoiseSchedule make_schedule(std::size_t steps, double beta_start, double beta_end);

// z_t = sqrt(alpha_bar[t]) * z0 + sqrt(1 - alpha_bar[t]) * eps, one timestep per row.
Var q_sample(Var z0, std::span<const std::size_t> t, Var eps, const NoiseSchedule& sched);
Tensor q_sample(const Tensor& z0, std::size_t t, const Tensor& eps, const NoiseSchedule& sched);

}  // namespace lord
