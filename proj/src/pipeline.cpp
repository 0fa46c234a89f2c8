#include "lord/pipeline.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "lord/checkpoint.hpp"
#include "lord/errors.hpp"

namespace lord {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    return idx;
}

std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch, Rng& rng) {
    if (batch == 0) throw ValidationError("batch size must be >= 1");
    const auto idx = shuffled(n, rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t b = 0; b < n; b += batch) {
        out.emplace_back(idx.begin() + static_cast<long>(b), idx.begin() + static_cast<long>(std::min(n, b + batch)));
    }
    return out;
}

void check_finite(double v, const char* stage, std::size_t epoch, std::size_t step) {
    if (!std::isfinite(v)) {
        throw TrainingDiverged(std::string(stage) + ": non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                               std::to_string(step));
    }
}

Tensor repeat_rows(const Tensor& x, std::size_t times) {
    Tensor out({x.rows() * times, x.cols()});
    for (std::size_t k = 0; k < times; ++k)
        std::copy(x.data().begin(), x.data().end(), out.data().begin() + static_cast<long>(k * x.size()));
    return out;
}

double mean_of(std::span<const double> v, std::size_t begin, std::size_t end) {
    if (end <= begin) return 0.0;
    double s = 0.0;
    for (std::size_t i = begin; i < end; ++i) s += v[i];
    return s / static_cast<double>(end - begin);
}

Stage2Result finetune_impl(LatentDiffusion& model, AdapterSet* lord, const Tensor& fewshot, const AdapterConfig& acfg,
                           const Stage2Config& cfg, std::uint64_t seed, double pgd_fraction, const char* stage) {
    acfg.validate();
    cfg.validate();
    if (lord) {
        if (lord->kind() != AdapterKind::Lord) throw ValidationError(std::string(stage) + ": expected a LoRD adapter set");
        if (!lord->frozen()) throw ValidationError(std::string(stage) + ": LoRD adapters must be frozen before few-shot fine-tuning");
    }
    if (fewshot.rows() == 0) throw ValidationError(std::string(stage) + ": empty few-shot set");
    const auto t0 = Clock::now();
    Rng init_rng(mix_seed(seed, 1));
    Rng noise_rng(mix_seed(seed, 2));
    Rng attack_rng(mix_seed(seed, 3));

    model.denoiser.set_trainable(false);
    Tensor& tok = model.denoiser.tokens().row(cfg.token);
    tok.set_requires_grad(true);

    Stage2Result res;
    res.lora = AdapterSet::attach_lora(model.denoiser, acfg.layers, acfg.rank, acfg.alpha, init_rng);
    AdapterStack stack;
    LayerHook* hook = &res.lora;
    if (lord) {
        stack = compose_test_stack(model.denoiser, *lord, res.lora);
        hook = &stack;
    }
    std::vector<Tensor*> params = res.lora.parameters();
    params.push_back(&tok);
    AdamState adam(params, AdamOptions{.lr = cfg.lr});

    res.report.stage = stage;
    res.report.seed = seed;
    const std::size_t n_adv =
        static_cast<std::size_t>(std::llround(pgd_fraction * static_cast<double>(fewshot.rows() * cfg.repeats)));
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Tensor batch = repeat_rows(fewshot, cfg.repeats);
        if (n_adv > 0) {
            const Tensor head = pgd_perturb(take_rows(batch, 0, n_adv), model, cfg.token, cfg.pgd2_attack, attack_rng, hook);
            std::copy(head.data().begin(), head.data().end(), batch.data().begin());
        }
        zero_grads(params);
        Graph g;
        Var loss = ldm_loss(g, model, g.constant(std::move(batch)), cfg.token, noise_rng, hook);
        const double l = loss.value().item();
        check_finite(l, stage, epoch, 0);
        g.backward(loss);
        adam.step(params);
        res.report.epochs.push_back(EpochRecord{.epoch = epoch, .ldm = l, .total = l});
    }
    tok.set_requires_grad(false);
    res.lora.set_frozen(true);
    res.report.wall_seconds = seconds_since(t0);
    return res;
}

}  // namespace

void Stage1Config::validate() const {
    if (!(lambda_adv >= 0.0)) throw ValidationError("stage1.lambda_adv must be >= 0");
    if (!(lambda_det >= 0.0)) throw ValidationError("stage1.lambda_det must be >= 0");
    if (!(lr > 0.0)) throw ValidationError("stage1.lr must be > 0");
    if (batch == 0) throw ValidationError("stage1.batch must be >= 1");
    attack.validate();
}

void Stage2Config::validate() const {
    if (!(lr > 0.0)) throw ValidationError("stage2.lr must be > 0");
    if (repeats == 0) throw ValidationError("stage2.repeats must be >= 1");
    if (!(pgd2_fraction >= 0.0 && pgd2_fraction <= 1.0)) throw ValidationError("stage2.pgd2_fraction must lie in [0,1]");
    pgd2_attack.validate();
}

void AdapterConfig::validate() const {
    if (rank == 0) throw ValidationError("adapter.rank must be >= 1");
    if (alpha < static_cast<double>(rank)) {
        throw ValidationError("adapter.alpha (" + std::to_string(alpha) + ") must be >= adapter.rank (" +
                              std::to_string(rank) + ")");
    }
    if (layers.empty()) throw ValidationError("adapter.layers must name at least one layer");
}

double TrainReport::decomposition_error() const {
    double worst = 0.0;
    for (const auto& e : epochs) {
        worst = std::max(worst, std::abs(e.total - (e.ldm + lambda_adv * e.adv + lambda_det * e.bce)));
    }
    return worst;
}

TrainReport pretrain(LatentDiffusion& model, const Tensor& data, const PretrainConfig& cfg, std::uint64_t seed) {
    if (data.rows() == 0) throw ValidationError("pretrain: empty dataset");
    const auto t0 = Clock::now();
    Rng order_rng(mix_seed(seed, 11));
    Rng noise_rng(mix_seed(seed, 12));
    model.denoiser.set_trainable(false);
    std::vector<Tensor*> params = model.denoiser.layer_parameters();
    params.push_back(&model.denoiser.tokens().row(cfg.token));
    for (Tensor* p : params) p->set_requires_grad(true);
    AdamState adam(params, AdamOptions{.lr = cfg.lr});

    TrainReport rep;
    rep.stage = "pretrain";
    rep.seed = seed;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        double sum = 0.0;
        const auto bs = batches(data.rows(), cfg.batch, order_rng);
        for (std::size_t s = 0; s < bs.size(); ++s) {
            zero_grads(params);
            Graph g;
            Var loss = ldm_loss(g, model, g.constant(gather_rows(data, bs[s])), cfg.token, noise_rng);
            const double l = loss.value().item();
            check_finite(l, "pretrain", epoch, s);
            g.backward(loss);
            adam.step(params);
            sum += l;
        }
        const double l = sum / static_cast<double>(bs.size());
        rep.epochs.push_back(EpochRecord{.epoch = epoch, .ldm = l, .total = l});
    }
    model.denoiser.set_trainable(false);
    rep.wall_seconds = seconds_since(t0);
    return rep;
}

Stage1Result stage1_train(LatentDiffusion& model, const Tensor& data, const AdapterConfig& acfg,
                          const Stage1Config& cfg, std::uint64_t seed) {
    acfg.validate();
    cfg.validate();
    if (data.rows() == 0) throw ValidationError("stage1: empty dataset");
    const auto t0 = Clock::now();
    Rng init_rng(mix_seed(seed, 21));
    Rng order_rng(mix_seed(seed, 22));
    Rng noise_rng(mix_seed(seed, 23));
    Rng attack_rng(mix_seed(seed, 24));
    const std::size_t dz = model.codec.latent_dim();

    model.denoiser.set_trainable(false);
    Stage1Result res;
    res.lord = AdapterSet::attach_lord(model.denoiser, acfg.layers, acfg.rank, acfg.alpha, init_rng);
    std::vector<Tensor*> params = res.lord.parameters();
    AdamState adam(params, AdamOptions{.lr = cfg.lr});

    TrainReport& rep = res.report;
    rep.stage = "stage1";
    rep.seed = seed;
    rep.config_hash = cfg.attack.hash();
    rep.lambda_adv = cfg.lambda_adv;
    rep.lambda_det = cfg.lambda_det;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        EpochRecord acc{.epoch = epoch};
        const auto bs = batches(data.rows(), cfg.batch, order_rng);
        for (std::size_t s = 0; s < bs.size(); ++s) {
            const Tensor clean = gather_rows(data, bs[s]);
            const std::size_t n = clean.rows();
            const Tensor perturbed = pgd_perturb(clean, model, cfg.token, cfg.attack, attack_rng, &res.lord);
            const AdversarialBatch adv = build_adversarial_batch(clean, perturbed, cfg.attack);

            zero_grads(params);
            Graph g;
            const NoiseDraw draw = draw_noise(noise_rng, 2 * n, dz, model.schedule);
            Var z0 = model.codec.encode(g.constant(adv.stacked()));
            Var eps = g.constant(draw.eps);
            Var zt = q_sample(z0, draw.t, eps, model.schedule);
            Var pred = model.denoiser.forward(g, zt, draw.t, cfg.token, &res.lord);
            Var l_ldm = mse_loss(slice_rows(pred, 0, n), slice_rows(eps, 0, n));
            Var l_adv = mse_loss(slice_rows(pred, n, 2 * n), slice_rows(eps, n, 2 * n));
            Var l_bce = split_detection_loss(res.lord.lambda_trace(), n);
            Var total = l_ldm + cfg.lambda_adv * l_adv + cfg.lambda_det * l_bce;

            const double tv = total.value().item();
            check_finite(tv, "stage1", epoch, s);
            const auto lam = mean_lambda(res.lord);
            g.backward(total);
            adam.step(params);

            acc.ldm += l_ldm.value().item();
            acc.adv += l_adv.value().item();
            acc.bce += l_bce.value().item();
            acc.total += tv;
            acc.lambda_clean += mean_of(lam, 0, n);
            acc.lambda_perturbed += mean_of(lam, n, 2 * n);
        }
        const double k = static_cast<double>(bs.size());
        acc.ldm /= k;
        acc.adv /= k;
        acc.bce /= k;
        acc.total /= k;
        acc.lambda_clean /= k;
        acc.lambda_perturbed /= k;
        rep.epochs.push_back(acc);
    }
    res.lord.set_frozen(true);
    rep.wall_seconds = seconds_since(t0);
    return res;
}

Stage2Result stage2_finetune(LatentDiffusion& model, AdapterSet* lord, const Tensor& fewshot,
                             const AdapterConfig& acfg, const Stage2Config& cfg, std::uint64_t seed) {
    return finetune_impl(model, lord, fewshot, acfg, cfg, seed, 0.0, "stage2");
}

Stage2Result pgd2_baseline(LatentDiffusion& model, const Tensor& fewshot, const AdapterConfig& acfg,
                           const Stage2Config& cfg, std::uint64_t seed) {
    return finetune_impl(model, nullptr, fewshot, acfg, cfg, seed, cfg.pgd2_fraction, "pgd2");
}

std::uint64_t parameter_checksum(const LatentDiffusion& model, const AdapterSet* adapters, const std::string& skip_token) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    const std::string skip = skip_token.empty() ? "" : "token." + skip_token;
    for (const auto& [name, t] : model.denoiser.named_parameters()) {
        if (name == skip) continue;
        h = fnv1a64(name.data(), name.size(), h);
        h = fnv1a64(t->data().data(), t->size() * sizeof(double), h);
    }
    if (adapters) {
        for (const auto& [name, t] : adapters->named_tensors()) {
            h = fnv1a64(name.data(), name.size(), h);
            h = fnv1a64(t->data().data(), t->size() * sizeof(double), h);
        }
    }
    return h;
}

double frechet_distance(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols()) throw DimensionError("frechet_distance: column mismatch");
    if (a.rows() < 2 || b.rows() < 2) throw ValidationError("frechet_distance needs at least two rows per set");
    const auto d = static_cast<Eigen::Index>(a.cols());
    auto fit = [d](const Tensor& x, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
        const auto n = static_cast<Eigen::Index>(x.rows());
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(x.data().data(), n, d);
        mu = m.colwise().mean().transpose();
        const Eigen::MatrixXd c = m.rowwise() - mu.transpose();
        cov = (c.transpose() * c) / static_cast<double>(n - 1);
    };
    auto psd_sqrt = [](const Eigen::MatrixXd& m) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
        const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
        return Eigen::MatrixXd(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
    };
    Eigen::VectorXd mu_a, mu_b;
    Eigen::MatrixXd ca, cb;
    fit(a, mu_a, ca);
    fit(b, mu_b, cb);
    const Eigen::MatrixXd sa = psd_sqrt(ca);
    const Eigen::MatrixXd cross = psd_sqrt(sa * cb * sa);
    const double fd = (mu_a - mu_b).squaredNorm() + ca.trace() + cb.trace() - 2.0 * cross.trace();
    return std::max(fd, 0.0);
}

SampleMetrics sample_metrics(const Tensor& samples, const Tensor& identity, const Tensor& target,
                             const Tensor& reference) {
    const std::size_t n = samples.rows(), d = samples.cols();
    if (identity.size() != d || target.size() != d) throw DimensionError("sample_metrics: pattern width mismatch");
    SampleMetrics m;
    if (n == 0) return m;
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < d; ++j) {
            const double v = samples.at(r, j);
            m.denoise_mse += (v - identity[j]) * (v - identity[j]);
            m.target_capture += std::abs(v - target[j]);
        }
    }
    m.denoise_mse /= static_cast<double>(n * d);
    m.target_capture /= static_cast<double>(n * d);
    m.frechet = n >= 2 && reference.rows() >= 2 ? frechet_distance(samples, reference) : 0.0;
    return m;
}

double roc_auc(const std::vector<double>& negatives, const std::vector<double>& positives) {
    if (negatives.empty() || positives.empty()) throw ValidationError("roc_auc needs both classes");
    double wins = 0.0;
    for (double p : positives)
        for (double q : negatives) wins += p > q ? 1.0 : (p == q ? 0.5 : 0.0);
    return wins / static_cast<double>(negatives.size() * positives.size());
}

LambdaProbe probe_lambda(LatentDiffusion& model, AdapterSet& lord, const Tensor& clean, const Tensor& perturbed,
                         const std::string& token, std::optional<std::size_t> t, std::uint64_t seed) {
    if (lord.kind() != AdapterKind::Lord) throw ValidationError("probe_lambda: expected a LoRD adapter set");
    if (clean.shape() != perturbed.shape()) throw DimensionError("probe_lambda: clean/perturbed shape mismatch");
    if (t && *t >= model.schedule.steps) throw ValidationError("probe_lambda: timestep out of range");
    Rng rng(seed);
    NoiseDraw draw = draw_noise(rng, clean.rows(), model.codec.latent_dim(), model.schedule);
    if (t) std::fill(draw.t.begin(), draw.t.end(), *t);
    auto run = [&](const Tensor& x) {
        Graph g;
        g.set_params_frozen(true);
        Var zt = q_sample(model.codec.encode(g.constant(x)), draw.t, g.constant(draw.eps), model.schedule);
        model.denoiser.forward(g, zt, draw.t, token, &lord);
        return mean_lambda(lord);
    };
    LambdaProbe p;
    p.clean = run(clean);
    p.perturbed = run(perturbed);
    p.mean_clean = mean_of(p.clean, 0, p.clean.size());
    p.mean_perturbed = mean_of(p.perturbed, 0, p.perturbed.size());
    p.auc = roc_auc(p.clean, p.perturbed);
    return p;
}

}  // namespace lord
