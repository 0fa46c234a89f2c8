#include "lord/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "lord/errors.hpp"

namespace lord {

namespace {

Tensor stack_samples(const std::vector<Tensor>& rows) {
    const std::size_t d = rows.empty() ? 0 : rows.front().size();
    Tensor out({rows.size(), d});
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy(rows[i].data().begin(), rows[i].data().end(), out.data().begin() + static_cast<long>(i * d));
    return out;
}

SampleMetrics median_metrics(const std::vector<SampleMetrics>& v) {
    std::vector<double> a, b, c;
    for (const auto& m : v) {
        a.push_back(m.denoise_mse);
        b.push_back(m.target_capture);
        c.push_back(m.frechet);
    }
    return SampleMetrics{median(a), median(b), median(c)};
}

void log_probe(MetricsLog& log, const std::string& run, std::uint64_t seed, const std::string& tag, const LambdaProbe& p) {
    log.append(run, "stage1", seed, -1, tag + ".lambda_clean", p.mean_clean);
    log.append(run, "stage1", seed, -1, tag + ".lambda_perturbed", p.mean_perturbed);
    log.append(run, "stage1", seed, -1, tag + ".auc", p.auc);
}

std::string fmt(double v) { return format_double(v); }

}  // namespace

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Dataset make_corpus(const RunConfig& cfg) {
    return synth_dataset(cfg.data.n_identities, cfg.data.per_identity, cfg.data.seed, 0, cfg.data.pattern);
}

LatentDiffusion make_base(const RunConfig& cfg, std::uint64_t seed) {
    Rng rng(mix_seed(seed, streams::kModelInit));
    return make_latent_diffusion(cfg.model.diffusion, rng);
}

std::size_t fewshot_identity(const RunConfig& cfg, std::size_t s) { return cfg.data.heldout_identity + s; }

Tensor fewshot_set(const RunConfig& cfg, std::size_t s) {
    std::vector<Tensor> rows;
    for (std::size_t k = 0; k < cfg.data.fewshot; ++k)
        rows.push_back(identity_sample(cfg.data.seed, fewshot_identity(cfg, s), k, cfg.data.pattern));
    return stack_samples(rows);
}

Tensor reference_set(const RunConfig& cfg, std::size_t s, std::size_t n) {
    std::vector<Tensor> rows;
    // Draw indices disjoint from the few-shot ones.
    for (std::size_t k = 0; k < n; ++k)
        rows.push_back(identity_sample(cfg.data.seed, fewshot_identity(cfg, s), 1000 + k, cfg.data.pattern));
    return stack_samples(rows);
}

Tensor attack_target(const RunConfig& cfg) { return target_pattern(cfg.eval.target_seed, cfg.model.diffusion.image_side); }

Tensor attack_fewshot(LatentDiffusion& base, const RunConfig& cfg, const Tensor& clean, std::uint64_t seed) {
    AttackConfig ak = cfg.eval.attack;
    if (ak.mode == AttackMode::TargetedLatent) ak.target_pattern = attack_target(cfg);
    Rng rng(seed);
    return run_attack(clean, base, cfg.eval.attack_token, ak, rng);
}

Tensor mix_fewshot(const Tensor& clean, const Tensor& attacked, double fraction) {
    if (clean.shape() != attacked.shape()) throw DimensionError("mix_fewshot: shape mismatch");
    const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(clean.rows())));
    Tensor out = clean.detached();
    std::copy_n(attacked.data().begin(), k * clean.cols(), out.data().begin());
    return out;
}

const char* scenario_name(Scenario s) {
    switch (s) {
        case Scenario::AttackOnly: return "attack-only";
        case Scenario::Pgd2Defense: return "pgd2-defense";
        case Scenario::Lord: return "lord";
        case Scenario::Clean: return "clean";
        case Scenario::LordClean: return "lord-clean";
    }
    return "?";
}

SampleMetrics run_scenario(const LatentDiffusion& base, const AdapterSet* lord, const RunConfig& cfg, Scenario scenario,
                           const Tensor& fewshot, std::size_t seed_index, std::uint64_t master_seed) {
    const bool uses_lord = scenario == Scenario::Lord || scenario == Scenario::LordClean;
    if (uses_lord && !lord) throw ValidationError(std::string(scenario_name(scenario)) + " scenario needs LoRD adapters");
    LatentDiffusion m = base;
    AdapterSet l = uses_lord ? *lord : AdapterSet();
    const std::uint64_t s2seed = mix_seed(master_seed, streams::kStage2 + seed_index);
    Stage2Result r = scenario == Scenario::Pgd2Defense
                         ? pgd2_baseline(m, fewshot, cfg.adapter, cfg.stage2, s2seed)
                         : stage2_finetune(m, uses_lord ? &l : nullptr, fewshot, cfg.adapter, cfg.stage2, s2seed);
    AdapterStack stack;
    LayerHook* hook = &r.lora;
    if (uses_lord) {
        stack = compose_test_stack(m.denoiser, l, r.lora);
        hook = &stack;
    }
    Rng srng(mix_seed(master_seed, streams::kSampling + seed_index));
    const Tensor samples = denoise_sample(m, cfg.stage2.token, srng, cfg.eval.samples, hook);
    const Tensor ident = identity_pattern(cfg.data.seed, fewshot_identity(cfg, seed_index), cfg.data.pattern);
    return sample_metrics(samples, ident, attack_target(cfg), reference_set(cfg, seed_index, cfg.eval.samples));
}

const ScenarioRow& ReproduceResult::row(Scenario s) const {
    for (const auto& r : table)
        if (r.scenario == s) return r;
    throw ValidationError(std::string("no result row for scenario ") + scenario_name(s));
}

void probe_detection(LatentDiffusion& base, AdapterSet& lord, const RunConfig& cfg, std::uint64_t seed,
                     ReproduceResult& out) {
    // Held-out rows: draw indices past the training ones, same identities.
    std::vector<Tensor> rows;
    for (std::size_t k = 0; k < cfg.data.probe_per_identity; ++k)
        for (std::size_t i = 0; i < cfg.data.n_identities; ++i)
            rows.push_back(identity_sample(cfg.data.seed, i, cfg.data.per_identity + k, cfg.data.pattern));
    const Tensor held = stack_samples(rows);
    rows.clear();
    const std::size_t unseen_ids = std::min<std::size_t>(cfg.data.n_identities, 20);
    for (std::size_t k = 0; rows.size() < held.rows(); ++k)
        for (std::size_t i = 0; i < unseen_ids && rows.size() < held.rows(); ++i)
            rows.push_back(identity_sample(cfg.data.seed, cfg.data.heldout_identity + 5000 + i, k, cfg.data.pattern));
    const Tensor unseen = stack_samples(rows);

    Rng arng(mix_seed(seed, 1));
    const Tensor held_per = pgd_perturb(held, base, cfg.stage1.token, cfg.stage1.attack, arng, &lord);
    const Tensor unseen_per = pgd_perturb(unseen, base, cfg.stage1.token, cfg.stage1.attack, arng, &lord);
    const std::uint64_t pseed = mix_seed(seed, 2);
    out.probe = probe_lambda(base, lord, held, held_per, cfg.stage1.token, cfg.eval.probe_t, pseed);
    out.probe_uniform = probe_lambda(base, lord, held, held_per, cfg.stage1.token, std::nullopt, pseed);
    out.probe_unseen = probe_lambda(base, lord, unseen, unseen_per, cfg.stage1.token, cfg.eval.probe_t, pseed);
}

ReproduceResult reproduce(const RunConfig& cfg, std::uint64_t seed, const Progress& progress) {
    cfg.validate();
    auto say = [&](const std::string& s) {
        if (progress) progress(s);
    };
    ReproduceResult res;
    res.seed = seed;
    res.config_hash = cfg.hash();
    const std::string run = "reproduce-" + hex64(res.config_hash).substr(0, 8) + "-" + std::to_string(seed);

    const Dataset corpus = make_corpus(cfg);
    LatentDiffusion base = make_base(cfg, seed);
    say("pretraining base denoiser (" + std::to_string(cfg.model.pretrain.epochs) + " epochs)");
    res.pretrain = pretrain(base, corpus.images, cfg.model.pretrain, mix_seed(seed, streams::kPretrain));
    for (const auto& e : res.pretrain.epochs)
        res.log.append(run, "pretrain", seed, static_cast<long long>(e.epoch), "ldm", e.ldm);

    say("stage 1: adversarial LoRD training (" + std::to_string(cfg.stage1.epochs) + " epochs)");
    Stage1Result s1 = stage1_train(base, corpus.images, cfg.adapter, cfg.stage1, mix_seed(seed, streams::kStage1));
    res.stage1 = s1.report;
    for (const auto& e : res.stage1.epochs) {
        const auto ep = static_cast<long long>(e.epoch);
        res.log.append(run, "stage1", seed, ep, "ldm", e.ldm);
        res.log.append(run, "stage1", seed, ep, "adv", e.adv);
        res.log.append(run, "stage1", seed, ep, "bce", e.bce);
        res.log.append(run, "stage1", seed, ep, "total", e.total);
        res.log.append(run, "stage1", seed, ep, "lambda_clean", e.lambda_clean);
        res.log.append(run, "stage1", seed, ep, "lambda_perturbed", e.lambda_perturbed);
    }

    say("probing lambda on held-out data");
    probe_detection(base, s1.lord, cfg, mix_seed(seed, streams::kProbe), res);
    log_probe(res.log, run, seed, "probe", res.probe);
    log_probe(res.log, run, seed, "probe_uniform_t", res.probe_uniform);
    log_probe(res.log, run, seed, "probe_unseen", res.probe_unseen);

    const Scenario table_order[] = {Scenario::AttackOnly, Scenario::Pgd2Defense, Scenario::Lord, Scenario::Clean,
                                    Scenario::LordClean};
    std::map<Scenario, std::vector<SampleMetrics>> per;
    res.sweep.resize(cfg.eval.fractions.size());
    for (std::size_t f = 0; f < cfg.eval.fractions.size(); ++f) res.sweep[f].fraction = cfg.eval.fractions[f];
    std::vector<double> id_target;

    for (std::size_t s = 0; s < cfg.eval.seeds; ++s) {
        say("evaluation seed " + std::to_string(s + 1) + "/" + std::to_string(cfg.eval.seeds));
        const Tensor clean = fewshot_set(cfg, s);
        const Tensor attacked = attack_fewshot(base, cfg, clean, mix_seed(seed, streams::kAttack + s));
        const Tensor ident = identity_pattern(cfg.data.seed, fewshot_identity(cfg, s), cfg.data.pattern);
        id_target.push_back(mean_pair_distance(ident, attack_target(cfg)));

        // Runs keyed by (number of attacked rows, uses LoRD) so the sweep end
        // points reuse the table runs.
        std::map<std::pair<std::size_t, bool>, SampleMetrics> cache;
        auto plain_or_lord = [&](double fraction, bool use_lord) {
            const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(clean.rows())));
            auto key = std::make_pair(k, use_lord);
            auto it = cache.find(key);
            if (it != cache.end()) return it->second;
            const Scenario sc = use_lord ? Scenario::Lord : Scenario::AttackOnly;
            const SampleMetrics m = run_scenario(base, &s1.lord, cfg, sc, mix_fewshot(clean, attacked, fraction), s, seed);
            cache.emplace(key, m);
            return m;
        };
        per[Scenario::AttackOnly].push_back(plain_or_lord(1.0, false));
        per[Scenario::Lord].push_back(plain_or_lord(1.0, true));
        per[Scenario::Clean].push_back(plain_or_lord(0.0, false));
        per[Scenario::LordClean].push_back(plain_or_lord(0.0, true));
        per[Scenario::Pgd2Defense].push_back(run_scenario(base, nullptr, cfg, Scenario::Pgd2Defense, attacked, s, seed));
        for (auto& pt : res.sweep) {
            pt.plain.push_back(plain_or_lord(pt.fraction, false).denoise_mse);
            pt.lord.push_back(plain_or_lord(pt.fraction, true).denoise_mse);
        }
    }
    for (Scenario sc : table_order) {
        ScenarioRow row{sc, per[sc], median_metrics(per[sc])};
        for (std::size_t s = 0; s < row.per_seed.size(); ++s) {
            const auto& m = row.per_seed[s];
            res.log.append(run, scenario_name(sc), seed, static_cast<long long>(s), "denoise_mse", m.denoise_mse);
            res.log.append(run, scenario_name(sc), seed, static_cast<long long>(s), "target_capture", m.target_capture);
            res.log.append(run, scenario_name(sc), seed, static_cast<long long>(s), "frechet", m.frechet);
        }
        res.table.push_back(std::move(row));
    }
    for (auto& pt : res.sweep) {
        pt.plain_median = median(pt.plain);
        pt.lord_median = median(pt.lord);
    }
    res.identity_target_distance = median(id_target);
    return res;
}

std::string summary_csv(const ReproduceResult& r) {
    std::string out = "row,scenario,denoise_mse_proxy,target_capture_proxy,frechet_pixel_proxy\n";
    const std::pair<Scenario, const char*> rows[] = {{Scenario::AttackOnly, "Attacking"},
                                                     {Scenario::Pgd2Defense, "PGD-2 defense"},
                                                     {Scenario::Lord, "LoRD"},
                                                     {Scenario::Clean, "Clean reference"}};
    for (const auto& [sc, label] : rows) {
        const auto& m = r.row(sc).median;
        out += std::string(label) + "," + scenario_name(sc) + "," + fmt(m.denoise_mse) + "," + fmt(m.target_capture) + "," +
               fmt(m.frechet) + "\n";
    }
    return out;
}

std::string sweep_csv(const ReproduceResult& r) {
    std::string out = "adversarial_fraction,plain_lora_denoise_mse,lord_denoise_mse\n";
    for (const auto& pt : r.sweep) out += fmt(pt.fraction) + "," + fmt(pt.plain_median) + "," + fmt(pt.lord_median) + "\n";
    return out;
}

std::string clean_csv(const ReproduceResult& r) {
    const double plain = r.row(Scenario::Clean).median.denoise_mse;
    const double lord = r.row(Scenario::LordClean).median.denoise_mse;
    std::string out = "scenario,denoise_mse_proxy,relative_to_plain_lora\n";
    out += "plain-lora-clean," + fmt(plain) + ",1\n";
    out += "lord-clean," + fmt(lord) + "," + fmt(lord / plain) + "\n";
    return out;
}

std::string lambda_csv(const ReproduceResult& r) {
    std::string out = "probe,mean_lambda_clean,mean_lambda_perturbed,auc\n";
    auto line = [&](const char* name, const LambdaProbe& p) {
        out += std::string(name) + "," + fmt(p.mean_clean) + "," + fmt(p.mean_perturbed) + "," + fmt(p.auc) + "\n";
    };
    line("heldout_fixed_t", r.probe);
    line("heldout_uniform_t", r.probe_uniform);
    line("unseen_identities_fixed_t", r.probe_unseen);
    return out;
}

Metadata run_metadata(const RunConfig& cfg, std::uint64_t seed, const std::string& kind) {
    return Metadata{{"kind", kind},
                    {"alpha", format_double(cfg.adapter.alpha)},
                    {"r", std::to_string(cfg.adapter.rank)},
                    {"seed", std::to_string(seed)},
                    {"schedule.steps", std::to_string(cfg.model.diffusion.steps)},
                    {"schedule.beta_start", format_double(cfg.model.diffusion.beta_start)},
                    {"schedule.beta_end", format_double(cfg.model.diffusion.beta_end)},
                    {"config_hash", hex64(cfg.hash())}};
}

Checkpoint model_checkpoint(const LatentDiffusion& model, const RunConfig& cfg, std::uint64_t seed) {
    Checkpoint ck;
    for (const auto& [name, t] : model.denoiser.named_parameters()) ck.tensors.emplace_back(name, t->detached());
    ck.tensors.emplace_back("codec.encoder", model.codec.encoder().detached());
    ck.tensors.emplace_back("codec.decoder", model.codec.decoder().detached());
    ck.metadata = run_metadata(cfg, seed, "model");
    ck.metadata["codec.seed"] = std::to_string(model.codec.seed());
    return ck;
}

LatentDiffusion model_from_checkpoint(const Checkpoint& ckpt, const RunConfig& cfg) {
    auto kind = ckpt.metadata.find("kind");
    if (kind == ckpt.metadata.end() || kind->second != "model") throw ValidationError("checkpoint does not hold a model");
    Rng rng(0);
    LatentDiffusion m = make_latent_diffusion(cfg.model.diffusion, rng);
    for (auto& [name, t] : m.denoiser.named_parameters()) {
        const Tensor& src = ckpt.get(name);
        if (src.shape() != t->shape()) {
            throw DimensionError("checkpoint tensor '" + name + "' is " + shape_str(src.shape()) + ", model expects " +
                                 shape_str(t->shape()));
        }
        std::copy(src.data().begin(), src.data().end(), t->data().begin());
    }
    m.codec = LinearCodec(ckpt.get("codec.encoder").detached(), ckpt.get("codec.decoder").detached(),
                          std::stoull(ckpt.metadata.at("codec.seed")));
    m.schedule = make_schedule(std::stoul(ckpt.metadata.at("schedule.steps")),
                               std::stod(ckpt.metadata.at("schedule.beta_start")),
                               std::stod(ckpt.metadata.at("schedule.beta_end")));
    m.denoiser.set_trainable(false);
    return m;
}

Checkpoint adapter_checkpoint(const AdapterSet& set, const RunConfig& cfg, std::uint64_t seed) {
    Checkpoint ck;
    for (const auto& [name, t] : set.named_tensors()) ck.tensors.emplace_back(name, t->detached());
    ck.metadata = run_metadata(cfg, seed, kind_name(set.kind()));
    return ck;
}

AdapterSet adapter_from_checkpoint(const Checkpoint& ckpt) {
    auto kind = ckpt.metadata.find("kind");
    if (kind == ckpt.metadata.end()) throw ValidationError("checkpoint has no kind metadata");
    AdapterKind k;
    if (kind->second == kind_name(AdapterKind::Lord)) k = AdapterKind::Lord;
    else if (kind->second == kind_name(AdapterKind::Lora)) k = AdapterKind::Lora;
    else throw ValidationError("checkpoint kind '" + kind->second + "' is not an adapter set");
    AdapterSet set = AdapterSet::from_named_tensors(k, ckpt.as_map(), std::stod(ckpt.metadata.at("alpha")),
                                                    std::stoul(ckpt.metadata.at("r")));
    set.set_frozen(true);
    return set;
}

}  // namespace lord
