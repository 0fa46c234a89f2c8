#include "lord/adam.hpp"

#include <cmath>

#include "lord/errors.hpp"

namespace lord {

AdamState::AdamState(const std::vector<Tensor*>& params, AdamOptions opts) : opts_(opts) {
    for (const Tensor* p : params) {
        shapes_.push_back(p->shape());
        m_.emplace_back(p->size(), 0.0);
        v_.emplace_back(p->size(), 0.0);
    }
}

void AdamState::step(const std::vector<Tensor*>& params) {
    if (params.size() != shapes_.size()) {
        throw ValidationError("adam: state tracks " + std::to_string(shapes_.size()) + " parameters, got " +
                              std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->shape() != shapes_[i]) {
            throw DimensionError("adam: parameter " + std::to_string(i) + " has shape " +
                                 shape_str(params[i]->shape()) + ", state expects " + shape_str(shapes_[i]));
        }
        if (!params[i]->has_grad()) throw ValidationError("adam: parameter " + std::to_string(i) + " has no gradient");
    }
    ++step_;
    const double b1 = opts_.beta1, b2 = opts_.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto w = params[i]->data();
        auto g = params[i]->grad();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            w[j] -= opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps);
        }
    }
}

void zero_grads(const std::vector<Tensor*>& params) {
    for (Tensor* p : params) p->zero_grad();
}

}  // namespace lord
