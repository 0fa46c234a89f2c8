#pragma once

// Central finite-difference gradient checks shared by the unit tests and the
// acceptance binary.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "lord/autograd.hpp"
#include "lord/rng.hpp"

namespace lord::oracle {

using GraphFn = std::function<Var(Graph&, const std::vector<Var>&)>;

struct GradCheck {
    std::string name;
    std::vector<Tensor> inputs;
    GraphFn fn;
};

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
};

inline double evaluate(const GradCheck& c, const std::vector<Tensor>& inputs) {
    Graph g;
    std::vector<Var> vs;
    for (const auto& t : inputs) vs.push_back(g.input(t.detached()));
    return c.fn(g, vs).value().item();
}

// Relative error |a - n| / max(|a|, |n|, floor) per element; the floor keeps
// near-zero gradients from turning rounding noise into large ratios.
inline GradCheckResult run_gradcheck(const GradCheck& c, double h = 1e-5, double floor = 1e-3) {
    Graph g;
    std::vector<Var> vs;
    for (const auto& t : c.inputs) vs.push_back(g.input(t.detached()));
    Var loss = c.fn(g, vs);
    g.backward(loss);
    GradCheckResult r;
    std::vector<Tensor> probe;
    for (const auto& t : c.inputs) probe.push_back(t.detached());
    for (std::size_t k = 0; k < probe.size(); ++k) {
        const auto analytic = g.grad(vs[k]);
        for (std::size_t i = 0; i < probe[k].size(); ++i) {
            const double x0 = probe[k][i];
            probe[k][i] = x0 + h;
            const double fp = evaluate(c, probe);
            probe[k][i] = x0 - h;
            const double fm = evaluate(c, probe);
            probe[k][i] = x0;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[i];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
            r.max_rel_err = std::max(r.max_rel_err, rel);
            ++r.checked;
        }
    }
    return r;
}

// Values away from zero so relu and the bce clamp stay differentiable under
// the probe step.
inline Tensor away_from_zero(Rng& rng, Shape shape) {
    Tensor t = rng.normal_tensor(std::move(shape));
    for (double& v : t.storage()) v = v >= 0 ? v + 0.1 : v - 0.1;
    return t;
}

inline Tensor probabilities(Rng& rng, Shape shape) {
    Tensor t(std::move(shape));
    for (double& v : t.storage()) v = 0.1 + 0.8 * rng.uniform();
    return t;
}

// One check per differentiable op.
inline std::vector<GradCheck> op_checks(std::uint64_t seed = 11) {
    Rng rng(seed);
    std::vector<GradCheck> out;
    auto reduce = [](Var v) { return sum(mul(v, v)); };
    out.push_back({"matmul", {rng.normal_tensor({3, 4}), rng.normal_tensor({4, 2})},
                   [=](Graph&, const std::vector<Var>& v) { return reduce(matmul(v[0], v[1])); }});
    out.push_back({"linear", {rng.normal_tensor({3, 4}), rng.normal_tensor({5, 4})},
                   [=](Graph&, const std::vector<Var>& v) { return reduce(linear(v[0], v[1])); }});
    out.push_back({"add", {rng.normal_tensor({2, 3}), rng.normal_tensor({2, 3})},
                   [=](Graph&, const std::vector<Var>& v) { return reduce(add(v[0], v[1])); }});
    out.push_back({"sub", {rng.normal_tensor({2, 3}), rng.normal_tensor({2, 3})},
                   [=](Graph&, const std::vector<Var>& v) { return reduce(sub(v[0], v[1])); }});
    out.push_back({"mul", {rng.normal_tensor({2, 3}), rng.normal_tensor({2, 3})},
                   [=](Graph&, const std::vector<Var>& v) { return reduce(mul(v[0], v[1])); }});
    out.push_back({"scale", {rng.normal_tensor({2, 3})},
                   [=](Graph&, const std::vector<Var>& v) { return reduce(scale(v[0], 8.0)); }});
    out.push_back({"add_scalar", {rng.normal_tensor({2, 3})},
                   [=](Graph&, const std::vector<Var>& v) { return reduce(add_scalar(v[0], 0.7)); }});
    out.push_back({"mul_scalar", {rng.normal_tensor({2, 3})}, [=](Graph&, const std::vector<Var>& v) {
                       return reduce(elementwise(Elementwise::Mul, v[0], -1.5));
                   }});
    out.push_back({"sigmoid", {rng.normal_tensor({2, 3})},
                   [=](Graph&, const std::vector<Var>& v) { return reduce(sigmoid(v[0])); }});
    out.push_back({"silu", {rng.normal_tensor({2, 3})},
                   [=](Graph&, const std::vector<Var>& v) { return reduce(silu(v[0])); }});
    out.push_back({"relu", {away_from_zero(rng, {2, 3})},
                   [=](Graph&, const std::vector<Var>& v) { return reduce(relu(v[0])); }});
    out.push_back({"square", {rng.normal_tensor({2, 3})},
                   [=](Graph&, const std::vector<Var>& v) { return sum(square(v[0])); }});
    out.push_back({"add_bias", {rng.normal_tensor({3, 4}), rng.normal_tensor({4})},
                   [=](Graph&, const std::vector<Var>& v) { return reduce(add_bias(v[0], v[1])); }});
    out.push_back({"scale_rows", {rng.normal_tensor({3, 4}), rng.normal_tensor({3, 1})},
                   [=](Graph&, const std::vector<Var>& v) { return reduce(scale_rows(v[0], v[1])); }});
    out.push_back({"concat_cols", {rng.normal_tensor({2, 3}), rng.normal_tensor({2, 2})},
                   [=](Graph&, const std::vector<Var>& v) {
                       const Var parts[] = {v[0], v[1]};
                       return reduce(concat_cols(parts));
                   }});
    out.push_back({"concat_rows", {rng.normal_tensor({2, 3}), rng.normal_tensor({1, 3})},
                   [=](Graph&, const std::vector<Var>& v) {
                       const Var parts[] = {v[0], v[1]};
                       return reduce(concat_rows(parts));
                   }});
    out.push_back({"slice_rows", {rng.normal_tensor({4, 3})},
                   [=](Graph&, const std::vector<Var>& v) { return reduce(slice_rows(v[0], 1, 3)); }});
    out.push_back({"sum", {rng.normal_tensor({2, 3})},
                   [=](Graph&, const std::vector<Var>& v) { return sum(v[0]); }});
    out.push_back({"mean", {rng.normal_tensor({2, 3})},
                   [=](Graph&, const std::vector<Var>& v) { return mean(mul(v[0], v[0])); }});
    out.push_back({"mse_loss", {rng.normal_tensor({3, 4}), rng.normal_tensor({3, 4})},
                   [=](Graph&, const std::vector<Var>& v) { return mse_loss(v[0], v[1]); }});
    out.push_back({"bce_loss", {probabilities(rng, {4, 1})}, [=](Graph&, const std::vector<Var>& v) {
                       const std::vector<double> labels = {0, 1, 1, 0};
                       return bce_loss(v[0], labels);
                   }});
    return out;
}

// Random layered graph of depth >= 4 mixing the differentiable ops.
inline GradCheck random_composite(std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t n = 3 + rng.below(3);
    const std::size_t d = 3 + rng.below(4);
    const std::size_t depth = 4 + rng.below(3);
    GradCheck c;
    c.name = "composite-" + std::to_string(seed);
    c.inputs.push_back(rng.normal_tensor({n, d}));
    std::vector<int> plan;
    for (std::size_t l = 0; l < depth; ++l) {
        const int kind = static_cast<int>(rng.below(5));
        plan.push_back(kind);
        c.inputs.push_back(rng.normal_tensor({d, d}, 1.0 / std::sqrt(static_cast<double>(d))));
        c.inputs.push_back(rng.normal_tensor({d}, 0.1));
    }
    c.inputs.push_back(probabilities(rng, {n, 1}));
    c.fn = [plan, n](Graph& g, const std::vector<Var>& v) {
        Var h = v[0];
        Var skip = h;
        for (std::size_t l = 0; l < plan.size(); ++l) {
            Var z = add_bias(linear(h, v[1 + 2 * l]), v[2 + 2 * l]);
            switch (plan[l]) {
                case 0: h = silu(z); break;
                case 1: h = sigmoid(z); break;
                case 2: h = add(mul(z, sigmoid(z)), scale(skip, 0.5)); break;
                case 3: h = sub(square(z), scale(h, 0.25)); break;
                default: {
                    const Var parts[] = {slice_rows(z, 0, 1), slice_rows(silu(z), 1, n)};
                    h = concat_rows(parts);
                }
            }
            skip = z;
        }
        Var gated = scale_rows(h, v.back());
        std::vector<double> labels(n);
        for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<double>(i % 2);
        Tensor w({h.cols(), 1});
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.3 * (i % 2 ? 1.0 : -1.0);
        Var p = sigmoid(matmul(gated, g.constant(std::move(w))));
        return add(add(mean(square(gated)), mse_loss(h, scale(v[0], 0.3))), bce_loss(p, labels));
    };
    return c;
}

}  // namespace lord::oracle
