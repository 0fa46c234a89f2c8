#include "lord/codec.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <tuple>

#include "lord/errors.hpp"
#include "lord/rng.hpp"

namespace lord {

namespace {

// Orthonormal 1-D DCT-II basis value for frequency k at position i.
double dct_basis(std::size_t k, std::size_t i, std::size_t n) {
    const double scale = k == 0 ? std::sqrt(1.0 / static_cast<double>(n)) : std::sqrt(2.0 / static_cast<double>(n));
    return scale * std::cos(std::numbers::pi * (static_cast<double>(i) + 0.5) * static_cast<double>(k) /
                            static_cast<double>(n));
}

}  // namespace

LinearCodec::LinearCodec(std::size_t side, std::size_t latent_dim, std::uint64_t seed) : seed_(seed) {
    const std::size_t pixels = side * side;
    if (latent_dim == 0 || latent_dim > pixels) {
        throw ValidationError("codec: latent dim " + std::to_string(latent_dim) + " must be in [1, " +
                              std::to_string(pixels) + "]");
    }
    // Lowest frequencies first: order by (u+v, u).
    std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> freqs;
    for (std::size_t u = 0; u < side; ++u)
        for (std::size_t v = 0; v < side; ++v) freqs.emplace_back(u + v, u, v);
    std::sort(freqs.begin(), freqs.end());

    Eigen::MatrixXd basis(latent_dim, pixels);
    for (std::size_t r = 0; r < latent_dim; ++r) {
        const auto [_, u, v] = freqs[r];
        for (std::size_t y = 0; y < side; ++y)
            for (std::size_t x = 0; x < side; ++x)
                basis(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(y * side + x)) =
                    dct_basis(u, y, side) * dct_basis(v, x, side);
    }

    Rng rng(seed);
    const auto d = static_cast<Eigen::Index>(latent_dim);
    Eigen::MatrixXd gauss(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j) gauss(i, j) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, d);
    const Eigen::MatrixXd rmat = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < d; ++j)
        if (rmat(j, j) < 0) q.col(j) = -q.col(j);

    const Eigen::MatrixXd enc = q * basis;
    encoder_ = Tensor({latent_dim, pixels});
    decoder_ = Tensor({pixels, latent_dim});
    for (std::size_t r = 0; r < latent_dim; ++r)
        for (std::size_t c = 0; c < pixels; ++c) {
            const double v = enc(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
            encoder_.at(r, c) = v;
            decoder_.at(c, r) = v;
        }
}

LinearCodec::LinearCodec(Tensor encoder, Tensor decoder, std::uint64_t seed)
    : encoder_(std::move(encoder)), decoder_(std::move(decoder)), seed_(seed) {
    if (encoder_.rank() != 2 || decoder_.rank() != 2 || encoder_.rows() != decoder_.cols() ||
        encoder_.cols() != decoder_.rows()) {
        throw DimensionError("codec: encoder " + shape_str(encoder_.shape()) + " and decoder " +
                             shape_str(decoder_.shape()) + " disagree");
    }
}

Var LinearCodec::encode(Var x) const {
    Graph& g = x.graph();
    return linear(add_scalar(scale(x, 2.0), -1.0), g.constant(encoder_));
}

Var LinearCodec::decode(Var z) const {
    Graph& g = z.graph();
    return scale(add_scalar(linear(z, g.constant(decoder_)), 1.0), 0.5);
}

Tensor LinearCodec::encode(const Tensor& x) const {
    Graph g;
    return encode(g.constant(x.detached())).value().detached();
}

Tensor LinearCodec::decode(const Tensor& z) const {
    Graph g;
    return decode(g.constant(z.detached())).value().detached();
}

}  // namespace lord
