// Command-line harness: data synthesis, each training stage on its own,
// evaluation, the full experiment matrix and checkpoint verification.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "lord/errors.hpp"
#include "lord/experiment.hpp"

namespace fs = std::filesystem;
using namespace lord;

namespace {

struct Common {
    std::string config;
    std::uint64_t seed = 7;
    std::string out = "out";
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config, "Run configuration file (INI-style sections)");
    sub->add_option("--seed", c.seed, "Master seed")->capture_default_str();
    sub->add_option("--out", c.out, "Output directory")->capture_default_str();
}

RunConfig load_config(const Common& c) {
    RunConfig cfg = c.config.empty() ? RunConfig() : load_run_config(c.config);
    cfg.validate();
    return cfg;
}

fs::path out_path(const Common& c, const std::string& name) {
    fs::create_directories(c.out);
    return fs::path(c.out) / name;
}

Checkpoint read_input(const std::string& path, const std::string& what) {
    if (!fs::exists(path)) throw ValidationError("missing " + what + " checkpoint: " + path);
    return read_checkpoint(path);
}

void say(const std::string& msg) { std::cerr << "[lord] " << msg << "\n"; }

Checkpoint dataset_checkpoint(const Tensor& images, const std::vector<std::size_t>& ids, const RunConfig& cfg,
                              std::uint64_t seed) {
    Checkpoint ck;
    ck.tensors.emplace_back("images", images.detached());
    Tensor id_t({ids.size()});
    for (std::size_t i = 0; i < ids.size(); ++i) id_t.data()[i] = static_cast<double>(ids[i]);
    ck.tensors.emplace_back("identity", std::move(id_t));
    ck.metadata = run_metadata(cfg, seed, "dataset");
    return ck;
}

// Images from a dataset checkpoint, or the configured default when no path is given.
Tensor images_or(const std::string& path, const std::string& what, const Tensor& fallback) {
    if (path.empty()) return fallback;
    return read_input(path, what).get("images").detached();
}

Checkpoint stage2_checkpoint(const Stage2Result& r, const LatentDiffusion& m, const RunConfig& cfg, std::uint64_t seed,
                             const std::string& kind) {
    Checkpoint ck = adapter_checkpoint(r.lora, cfg, seed);
    ck.tensors.emplace_back("token." + cfg.stage2.token, m.denoiser.tokens().row(cfg.stage2.token).detached());
    ck.metadata["scenario"] = kind;
    return ck;
}

void print_metrics(const SampleMetrics& m) {
    std::printf("denoise_mse_proxy     %.6f\n", m.denoise_mse);
    std::printf("target_capture_proxy  %.6f\n", m.target_capture);
    std::printf("frechet_pixel_proxy   %.6f\n", m.frechet);
}

void print_report(const ReproduceResult& r) {
    std::printf("%-16s %14s %14s %14s\n", "scenario", "denoise_mse", "target_capt", "frechet");
    for (const auto& row : r.table) {
        std::printf("%-16s %14.6f %14.6f %14.6f\n", scenario_name(row.scenario), row.median.denoise_mse,
                    row.median.target_capture, row.median.frechet);
    }
    std::printf("\nfraction  plain_mse   lord_mse\n");
    for (const auto& p : r.sweep) std::printf("%8.2f  %9.6f  %9.6f\n", p.fraction, p.plain_median, p.lord_median);
    std::printf("\nlambda probe (held-out, fixed t): clean %.4f perturbed %.4f auc %.4f\n", r.probe.mean_clean,
                r.probe.mean_perturbed, r.probe.auc);
    std::printf("lambda probe (held-out, uniform t): clean %.4f perturbed %.4f auc %.4f\n", r.probe_uniform.mean_clean,
                r.probe_uniform.mean_perturbed, r.probe_uniform.auc);
    std::printf("lambda probe (unseen identities): clean %.4f perturbed %.4f auc %.4f\n", r.probe_unseen.mean_clean,
                r.probe_unseen.mean_perturbed, r.probe_unseen.auc);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Low-rank defense training and evaluation harness"};
    app.require_subcommand(1);

    Common c;
    std::string model_path, lord_path, lora_path, data_path, fewshot_path, ckpt_path;
    std::string attack_kind = "eval";
    std::size_t seed_index = 0;
    bool plain = false;

    auto* gen = app.add_subcommand("gen-data", "Write the synthetic corpus and a few-shot set");
    add_common(gen, c);
    gen->add_option("--seed-index", seed_index, "Evaluation seed index of the few-shot identity");

    auto* pre = app.add_subcommand("pretrain", "Pretrain the base denoiser");
    add_common(pre, c);
    pre->add_option("--data", data_path, "Dataset checkpoint (default: synthesize from config)");

    auto* atk = app.add_subcommand("attack", "Perturb a dataset against a base model");
    add_common(atk, c);
    atk->add_option("--model", model_path, "Base model checkpoint")->required();
    atk->add_option("--data", data_path, "Dataset checkpoint (default: configured few-shot set)");
    atk->add_option("--kind", attack_kind, "eval (few-shot attacker) or train (stage-1 PGD)")
        ->check(CLI::IsMember({"eval", "train"}));
    atk->add_option("--seed-index", seed_index, "Evaluation seed index of the few-shot identity");

    auto* s1 = app.add_subcommand("stage1", "Adversarial LoRD training on the corpus");
    add_common(s1, c);
    s1->add_option("--model", model_path, "Base model checkpoint")->required();
    s1->add_option("--data", data_path, "Dataset checkpoint (default: synthesize from config)");

    auto* s2 = app.add_subcommand("stage2", "Few-shot LoRA fine-tune on top of frozen LoRD");
    add_common(s2, c);
    s2->add_option("--model", model_path, "Base model checkpoint")->required();
    s2->add_option("--lord", lord_path, "Stage-1 LoRD checkpoint (default: <out>/lord.ckpt)");
    s2->add_option("--fewshot", fewshot_path, "Few-shot dataset checkpoint (default: configured few-shot set)");
    s2->add_option("--seed-index", seed_index, "Evaluation seed index of the few-shot identity");
    s2->add_flag("--plain", plain, "Plain LoRA without LoRD");

    auto* pg = app.add_subcommand("baseline-pgd2", "Few-shot LoRA fine-tune with in-loop PGD augmentation");
    add_common(pg, c);
    pg->add_option("--model", model_path, "Base model checkpoint")->required();
    pg->add_option("--fewshot", fewshot_path, "Few-shot dataset checkpoint (default: configured few-shot set)");
    pg->add_option("--seed-index", seed_index, "Evaluation seed index of the few-shot identity");

    auto* ev = app.add_subcommand("eval", "Sample a fine-tuned model and report proxy metrics");
    add_common(ev, c);
    ev->add_option("--model", model_path, "Base model checkpoint")->required();
    ev->add_option("--lora", lora_path, "Stage-2 LoRA checkpoint")->required();
    ev->add_option("--lord", lord_path, "LoRD checkpoint the LoRA was trained on");
    ev->add_option("--seed-index", seed_index, "Evaluation seed index of the few-shot identity");

    auto* rep = app.add_subcommand("reproduce", "Run the full experiment matrix and write CSV reports");
    add_common(rep, c);

    auto* ver = app.add_subcommand("verify-ckpt", "Read a checkpoint and check its integrity");
    ver->add_option("path", ckpt_path, "Checkpoint file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (ver->parsed()) {
            const Checkpoint ck = read_input(ckpt_path, "input");
            std::printf("ok: %zu tensors\n", ck.tensors.size());
            for (const auto& [name, t] : ck.tensors) std::printf("  %-28s %s\n", name.c_str(), shape_str(t.shape()).c_str());
            for (const auto& [k, v] : ck.metadata) std::printf("  %s=%s\n", k.c_str(), v.c_str());
            return 0;
        }

        const RunConfig cfg = load_config(c);

        if (gen->parsed()) {
            const Dataset d = make_corpus(cfg);
            write_checkpoint(out_path(c, "data.ckpt"), dataset_checkpoint(d.images, d.identity, cfg, c.seed));
            const Tensor fs_set = fewshot_set(cfg, seed_index);
            const std::vector<std::size_t> ids(fs_set.rows(), fewshot_identity(cfg, seed_index));
            write_checkpoint(out_path(c, "fewshot.ckpt"), dataset_checkpoint(fs_set, ids, cfg, c.seed));
            say("wrote " + std::to_string(d.images.rows()) + " corpus rows and " + std::to_string(fs_set.rows()) +
                " few-shot rows to " + c.out);
            return 0;
        }

        if (pre->parsed()) {
            const Tensor data = images_or(data_path, "dataset", make_corpus(cfg).images);
            LatentDiffusion m = make_base(cfg, c.seed);
            const TrainReport r = pretrain(m, data, cfg.model.pretrain, mix_seed(c.seed, streams::kPretrain));
            write_checkpoint(out_path(c, "base.ckpt"), model_checkpoint(m, cfg, c.seed));
            say("pretrain final loss " + format_double(r.epochs.empty() ? 0.0 : r.epochs.back().ldm));
            return 0;
        }

        if (atk->parsed()) {
            LatentDiffusion m = model_from_checkpoint(read_input(model_path, "model"), cfg);
            const Tensor clean = images_or(data_path, "dataset", fewshot_set(cfg, seed_index));
            Tensor per;
            AttackConfig used;
            if (attack_kind == "eval") {
                per = attack_fewshot(m, cfg, clean, mix_seed(c.seed, streams::kAttack + seed_index));
                used = cfg.eval.attack;
            } else {
                Rng rng(mix_seed(c.seed, streams::kAttack + seed_index));
                per = pgd_perturb(clean, m, cfg.stage1.token, cfg.stage1.attack, rng);
                used = cfg.stage1.attack;
            }
            const AdversarialBatch b = build_adversarial_batch(clean, per, used);
            Checkpoint ck;
            ck.tensors.emplace_back("clean", b.clean.detached());
            ck.tensors.emplace_back("images", b.perturbed.detached());
            Tensor labels({b.labels.size()});
            std::copy(b.labels.begin(), b.labels.end(), labels.data().begin());
            ck.tensors.emplace_back("labels", std::move(labels));
            ck.metadata = run_metadata(cfg, c.seed, "adversarial");
            ck.metadata["attack_hash"] = hex64(used.hash());
            write_checkpoint(out_path(c, "attacked.ckpt"), ck);
            say("wrote " + std::to_string(per.rows()) + " perturbed rows");
            return 0;
        }

        if (s1->parsed()) {
            LatentDiffusion m = model_from_checkpoint(read_input(model_path, "model"), cfg);
            const Tensor data = images_or(data_path, "dataset", make_corpus(cfg).images);
            Stage1Result r = stage1_train(m, data, cfg.adapter, cfg.stage1, mix_seed(c.seed, streams::kStage1));
            write_checkpoint(out_path(c, "lord.ckpt"), adapter_checkpoint(r.lord, cfg, c.seed));
            const auto& last = r.report.epochs.back();
            say("stage1 final: ldm " + format_double(last.ldm) + " adv " + format_double(last.adv) + " bce " +
                format_double(last.bce));
            return 0;
        }

        if (s2->parsed() || pg->parsed()) {
            const bool pgd2 = pg->parsed();
            LatentDiffusion m = model_from_checkpoint(read_input(model_path, "model"), cfg);
            std::optional<AdapterSet> lord;
            if (!pgd2 && !plain) {
                const std::string p = lord_path.empty() ? (fs::path(c.out) / "lord.ckpt").string() : lord_path;
                lord = adapter_from_checkpoint(read_input(p, "stage-1 LoRD"));
            }
            const Tensor fewshot = images_or(fewshot_path, "few-shot", fewshot_set(cfg, seed_index));
            const std::uint64_t s2seed = mix_seed(c.seed, streams::kStage2 + seed_index);
            const Stage2Result r = pgd2 ? pgd2_baseline(m, fewshot, cfg.adapter, cfg.stage2, s2seed)
                                        : stage2_finetune(m, lord ? &*lord : nullptr, fewshot, cfg.adapter, cfg.stage2,
                                                          s2seed);
            const std::string kind = pgd2 ? "pgd2" : (plain ? "plain" : "lord");
            write_checkpoint(out_path(c, pgd2 ? "pgd2_lora.ckpt" : "lora.ckpt"), stage2_checkpoint(r, m, cfg, c.seed, kind));
            say("stage2 (" + kind + ") final ldm " + format_double(r.report.epochs.back().ldm));
            return 0;
        }

        if (ev->parsed()) {
            LatentDiffusion m = model_from_checkpoint(read_input(model_path, "model"), cfg);
            const Checkpoint lck = read_input(lora_path, "LoRA");
            AdapterSet lora = adapter_from_checkpoint(lck);
            const std::string tok = "token." + cfg.stage2.token;
            if (lck.contains(tok)) {
                const Tensor& row = lck.get(tok);
                Tensor& dst = m.denoiser.tokens().row(cfg.stage2.token);
                if (row.shape() != dst.shape()) throw DimensionError(tok + " shape mismatch");
                std::copy(row.data().begin(), row.data().end(), dst.data().begin());
            }
            std::optional<AdapterSet> lord;
            AdapterStack stack;
            LayerHook* hook = &lora;
            if (!lord_path.empty()) {
                lord = adapter_from_checkpoint(read_input(lord_path, "LoRD"));
                stack = compose_test_stack(m.denoiser, *lord, lora);
                hook = &stack;
            }
            Rng srng(mix_seed(c.seed, streams::kSampling + seed_index));
            const Tensor samples = denoise_sample(m, cfg.stage2.token, srng, cfg.eval.samples, hook);
            const SampleMetrics met =
                sample_metrics(samples, identity_pattern(cfg.data.seed, fewshot_identity(cfg, seed_index), cfg.data.pattern),
                               attack_target(cfg), reference_set(cfg, seed_index, cfg.eval.samples));
            print_metrics(met);
            std::string csv = "metric,value\n";
            csv += "denoise_mse_proxy," + format_double(met.denoise_mse) + "\n";
            csv += "target_capture_proxy," + format_double(met.target_capture) + "\n";
            csv += "frechet_pixel_proxy," + format_double(met.frechet) + "\n";
            write_file_atomic(out_path(c, "eval.csv"), csv);
            return 0;
        }

        if (rep->parsed()) {
            const ReproduceResult r = reproduce(cfg, c.seed, say);
            write_file_atomic(out_path(c, "summary.csv"), summary_csv(r));
            write_file_atomic(out_path(c, "sweep.csv"), sweep_csv(r));
            write_file_atomic(out_path(c, "clean.csv"), clean_csv(r));
            write_file_atomic(out_path(c, "lambda.csv"), lambda_csv(r));
            write_file_atomic(out_path(c, "metrics.csv"), r.log.to_csv());
            print_report(r);
            return 0;
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
