#include "lord/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lord/errors.hpp"
#include "lord/rng.hpp"

namespace lord {

namespace {

struct Bump {
    double cy, cx, width, amp;
};

struct PatternSpec {
    std::vector<Bump> bumps;
    double freq, theta, phase, stripe_amp;
};

PatternSpec make_spec(std::uint64_t seed, std::size_t identity, std::size_t side) {
    Rng rng(mix_seed(seed, 0x1D00000000ULL + identity));
    const double s = static_cast<double>(side);
    PatternSpec p;
    const std::size_t n_bumps = 3;
    for (std::size_t i = 0; i < n_bumps; ++i) {
        Bump b;
        b.cy = 0.2 * s + 0.6 * s * rng.uniform();
        b.cx = 0.2 * s + 0.6 * s * rng.uniform();
        b.width = 1.5 + 2.0 * rng.uniform();
        b.amp = (rng.uniform() < 0.5 ? -1.0 : 1.0) * (0.25 + 0.2 * rng.uniform());
        p.bumps.push_back(b);
    }
    p.freq = 0.06 + 0.1 * rng.uniform();  // cycles per pixel
    p.theta = std::numbers::pi * rng.uniform();
    p.phase = 2.0 * std::numbers::pi * rng.uniform();
    p.stripe_amp = 0.08 + 0.1 * rng.uniform();
    return p;
}

Tensor render(const PatternSpec& p, std::size_t side, double noise, Rng* rng) {
    Tensor img({1, side * side});
    const double c = std::cos(p.theta), s = std::sin(p.theta);
    for (std::size_t y = 0; y < side; ++y) {
        for (std::size_t x = 0; x < side; ++x) {
            const double fy = static_cast<double>(y), fx = static_cast<double>(x);
            double v = 0.5 + p.stripe_amp * std::sin(2.0 * std::numbers::pi * p.freq * (fx * c + fy * s) + p.phase);
            for (const auto& b : p.bumps) {
                const double d2 = (fy - b.cy) * (fy - b.cy) + (fx - b.cx) * (fx - b.cx);
                v += b.amp * std::exp(-d2 / (2.0 * b.width * b.width));
            }
            if (rng && noise > 0.0) v += noise * rng->normal();
            img[y * side + x] = std::clamp(v, 0.0, 1.0);
        }
    }
    return img;
}

}  // namespace

Tensor identity_pattern(std::uint64_t seed, std::size_t identity, const PatternOptions& opt) {
    return render(make_spec(seed, identity, opt.side), opt.side, 0.0, nullptr);
}

Tensor identity_sample(std::uint64_t seed, std::size_t identity, std::uint64_t sample, const PatternOptions& opt) {
    PatternSpec p = make_spec(seed, identity, opt.side);
    Rng rng(mix_seed(mix_seed(seed, 0x5A00000000ULL + identity), sample));
    for (auto& b : p.bumps) {
        b.cy += opt.jitter * rng.normal();
        b.cx += opt.jitter * rng.normal();
        b.amp *= 1.0 + opt.amp_jitter * rng.normal();
    }
    p.stripe_amp *= 1.0 + opt.amp_jitter * rng.normal();
    return render(p, opt.side, opt.pixel_noise, &rng);
}

Dataset synth_dataset(std::size_t n_identities, std::size_t per_identity, std::uint64_t seed,
                      std::size_t first_identity, const PatternOptions& opt) {
    if (n_identities == 0) throw ValidationError("synth_dataset: n_identities must be >= 1");
    if (per_identity == 0) throw ValidationError("synth_dataset: per_identity must be >= 1");
    const std::size_t d = opt.side * opt.side;
    Dataset ds;
    ds.images = Tensor({n_identities * per_identity, d});
    std::size_t row = 0;
    // Interleave identities so any prefix covers all of them.
    for (std::size_t k = 0; k < per_identity; ++k) {
        for (std::size_t i = 0; i < n_identities; ++i) {
            const std::size_t id = first_identity + i;
            const Tensor img = identity_sample(seed, id, k, opt);
            std::copy(img.data().begin(), img.data().end(), ds.images.data().begin() + static_cast<long>(row * d));
            ds.identity.push_back(id);
            ++row;
        }
    }
    return ds;
}

Tensor target_pattern(std::uint64_t seed, std::size_t side) {
    Rng rng(mix_seed(seed, 0x7A46E7ULL));
    const double s = static_cast<double>(side);
    const double cy = 0.4 * s + 0.2 * s * rng.uniform();
    const double cx = 0.4 * s + 0.2 * s * rng.uniform();
    const double period = 5.0 + 2.0 * rng.uniform();
    Tensor img({1, side * side});
    for (std::size_t y = 0; y < side; ++y) {
        for (std::size_t x = 0; x < side; ++x) {
            const double r = std::hypot(static_cast<double>(y) - cy, static_cast<double>(x) - cx);
            img[y * side + x] = std::clamp(0.5 + 0.4 * std::cos(2.0 * std::numbers::pi * r / period), 0.0, 1.0);
        }
    }
    return img;
}

Tensor take_rows(const Tensor& t, std::size_t begin, std::size_t end) {
    if (begin > end || end > t.rows()) {
        throw DimensionError("take_rows: [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                             std::to_string(t.rows()) + " rows");
    }
    const std::size_t c = t.cols();
    std::vector<double> data(t.data().begin() + static_cast<long>(begin * c), t.data().begin() + static_cast<long>(end * c));
    return Tensor({end - begin, c}, std::move(data));
}

Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& rows) {
    const std::size_t c = t.cols();
    Tensor out({rows.size(), c});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= t.rows()) throw DimensionError("gather_rows: row " + std::to_string(rows[i]) + " out of range");
        std::copy_n(t.data().begin() + static_cast<long>(rows[i] * c), c, out.data().begin() + static_cast<long>(i * c));
    }
    return out;
}

double mean_pair_distance(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols()) throw DimensionError("mean_pair_distance: column mismatch");
    if (a.rows() == 0 || b.rows() == 0) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) {
            double d = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) d += std::abs(a.at(i, k) - b.at(j, k));
            total += d / static_cast<double>(a.cols());
        }
    return total / static_cast<double>(a.rows() * b.rows());
}

}  // namespace lord
