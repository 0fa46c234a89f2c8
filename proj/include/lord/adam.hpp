#pragma once

#include <cstdint>
#include <vector>

#include "lord/tensor.hpp"

namespace lord {

struct AdamOptions {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Moment buffers for a fixed, ordered parameter list. The list passed to
// step() must match the one the state was created for.
class AdamState {
public:
    AdamState() = default;
    AdamState(const std::vector<Tensor*>& params, AdamOptions opts);

    const AdamOptions& options() const { return opts_; }
    void set_lr(double lr) { opts_.lr = lr; }
    std::uint64_t step_count() const { return step_; }
    const std::vector<std::vector<double>>& first_moment() const { return m_; }
    const std::vector<std::vector<double>>& second_moment() const { return v_; }

    // Bias-corrected Adam update. Gradients are read, never cleared.
    void step(const std::vector<Tensor*>& params);

private:
    AdamOptions opts_;
    std::uint64_t step_ = 0;
    std::vector<Shape> shapes_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

inline void adam_step(const std::vector<Tensor*>& params, AdamState& state) { state.step(params); }

void zero_grads(const std::vector<Tensor*>& params);

}  // namespace lord
