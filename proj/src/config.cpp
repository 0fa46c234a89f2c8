#include "lord/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "lord/checkpoint.hpp"
#include "lord/errors.hpp"
#include "lord/metrics_log.hpp"

namespace lord {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void fail(const std::string& path, const std::string& msg) { throw ValidationError(path + ": " + msg); }

double parse_number(const std::string& path, const std::string& v) {
    auto one = [&](const std::string& s) {
        const std::string t = trim(s);
        double out = 0.0;
        const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
        if (ec != std::errc() || p != t.data() + t.size() || t.empty()) fail(path, "expected a number, got '" + v + "'");
        return out;
    };
    const auto slash = v.find('/');
    if (slash == std::string::npos) return one(v);
    const double den = one(v.substr(slash + 1));
    if (den == 0.0) fail(path, "division by zero in '" + v + "'");
    return one(v.substr(0, slash)) / den;
}

std::uint64_t parse_uint(const std::string& path, const std::string& v) {
    const std::string t = trim(v);
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
    if (ec != std::errc() || p != t.data() + t.size() || t.empty()) fail(path, "expected a non-negative integer, got '" + v + "'");
    return out;
}

bool parse_bool(const std::string& path, const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    fail(path, "expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
    return out;
}

struct Field {
    std::function<void(RunConfig&, const std::string& path, const std::string& value)> set;
    std::function<std::string(const RunConfig&)> get;
};

using Registry = std::map<std::string, std::map<std::string, Field>>;

template <class Get>
Field num_field(Get ref) {
    return {[ref](RunConfig& c, const std::string& p, const std::string& v) { ref(c) = parse_number(p, v); },
            [ref](const RunConfig& c) { return format_double(ref(c)); }};
}

template <class Get>
Field uint_field(Get ref) {
    return {[ref](RunConfig& c, const std::string& p, const std::string& v) {
                ref(c) = static_cast<std::remove_cvref_t<decltype(ref(c))>>(parse_uint(p, v));
            },
            [ref](const RunConfig& c) { return std::to_string(ref(c)); }};
}

template <class Get>
Field bool_field(Get ref) {
    return {[ref](RunConfig& c, const std::string& p, const std::string& v) { ref(c) = parse_bool(p, v); },
            [ref](const RunConfig& c) { return std::string(ref(c) ? "true" : "false"); }};
}

template <class Get>
Field str_field(Get ref) {
    return {[ref](RunConfig& c, const std::string& p, const std::string& v) {
                if (v.empty()) fail(p, "must not be empty");
                ref(c) = v;
            },
            [ref](const RunConfig& c) { return ref(c); }};
}

const Registry& registry() {
    static const Registry reg = [] {
        Registry r;
        auto& d = r["data"];
        d["n_identities"] = uint_field([](auto& c) -> auto& { return c.data.n_identities; });
        d["per_identity"] = uint_field([](auto& c) -> auto& { return c.data.per_identity; });
        d["seed"] = uint_field([](auto& c) -> auto& { return c.data.seed; });
        d["fewshot"] = uint_field([](auto& c) -> auto& { return c.data.fewshot; });
        d["heldout_identity"] = uint_field([](auto& c) -> auto& { return c.data.heldout_identity; });
        d["probe_per_identity"] = uint_field([](auto& c) -> auto& { return c.data.probe_per_identity; });
        d["jitter"] = num_field([](auto& c) -> auto& { return c.data.pattern.jitter; });
        d["amp_jitter"] = num_field([](auto& c) -> auto& { return c.data.pattern.amp_jitter; });
        d["pixel_noise"] = num_field([](auto& c) -> auto& { return c.data.pattern.pixel_noise; });

        auto& m = r["model"];
        m["image_side"] = uint_field([](auto& c) -> auto& { return c.model.diffusion.image_side; });
        m["latent_dim"] = uint_field([](auto& c) -> auto& { return c.model.diffusion.denoiser.latent_dim; });
        m["hidden"] = uint_field([](auto& c) -> auto& { return c.model.diffusion.denoiser.hidden; });
        m["hidden_layers"] = uint_field([](auto& c) -> auto& { return c.model.diffusion.denoiser.hidden_layers; });
        m["time_dim"] = uint_field([](auto& c) -> auto& { return c.model.diffusion.denoiser.time_dim; });
        m["token_dim"] = uint_field([](auto& c) -> auto& { return c.model.diffusion.denoiser.token_dim; });
        m["steps"] = uint_field([](auto& c) -> auto& { return c.model.diffusion.steps; });
        m["beta_start"] = num_field([](auto& c) -> auto& { return c.model.diffusion.beta_start; });
        m["beta_end"] = num_field([](auto& c) -> auto& { return c.model.diffusion.beta_end; });
        m["codec_seed"] = uint_field([](auto& c) -> auto& { return c.model.diffusion.codec_seed; });
        m["pretrain_epochs"] = uint_field([](auto& c) -> auto& { return c.model.pretrain.epochs; });
        m["pretrain_batch"] = uint_field([](auto& c) -> auto& { return c.model.pretrain.batch; });
        m["pretrain_lr"] = num_field([](auto& c) -> auto& { return c.model.pretrain.lr; });

        auto& a = r["adapter"];
        a["alpha"] = num_field([](auto& c) -> auto& { return c.adapter.alpha; });
        a["rank"] = uint_field([](auto& c) -> auto& { return c.adapter.rank; });
        a["layers"] = {[](RunConfig& c, const std::string& p, const std::string& v) {
                           c.adapter.layers = split_list(v);
                           if (c.adapter.layers.empty()) fail(p, "must list at least one layer");
                       },
                       [](const RunConfig& c) { return join(c.adapter.layers); }};

        auto& k = r["attack"];
        k["iterations"] = uint_field([](auto& c) -> auto& { return c.stage1.attack.iterations; });
        k["zeta"] = num_field([](auto& c) -> auto& { return c.stage1.attack.zeta; });
        k["step"] = num_field([](auto& c) -> auto& { return c.stage1.attack.step; });
        k["redraw_noise"] = bool_field([](auto& c) -> auto& { return c.stage1.attack.redraw_noise; });
        k["seed"] = uint_field([](auto& c) -> auto& { return c.stage1.attack.seed; });
        k["eval_mode"] = {[](RunConfig& c, const std::string& p, const std::string& v) {
                              if (v == "untargeted") c.eval.attack.mode = AttackMode::Untargeted;
                              else if (v == "targeted-latent") c.eval.attack.mode = AttackMode::TargetedLatent;
                              else fail(p, "expected untargeted or targeted-latent, got '" + v + "'");
                          },
                          [](const RunConfig& c) {
                              return std::string(c.eval.attack.mode == AttackMode::Untargeted ? "untargeted" : "targeted-latent");
                          }};
        k["eval_iterations"] = uint_field([](auto& c) -> auto& { return c.eval.attack.iterations; });
        k["eval_zeta"] = num_field([](auto& c) -> auto& { return c.eval.attack.zeta; });
        k["eval_step"] = num_field([](auto& c) -> auto& { return c.eval.attack.step; });
        k["target_seed"] = uint_field([](auto& c) -> auto& { return c.eval.target_seed; });
        k["token"] = str_field([](auto& c) -> auto& { return c.eval.attack_token; });

        auto& s1 = r["stage1"];
        s1["lambda_adv"] = num_field([](auto& c) -> auto& { return c.stage1.lambda_adv; });
        s1["lambda_det"] = num_field([](auto& c) -> auto& { return c.stage1.lambda_det; });
        s1["lr"] = num_field([](auto& c) -> auto& { return c.stage1.lr; });
        s1["epochs"] = uint_field([](auto& c) -> auto& { return c.stage1.epochs; });
        s1["batch"] = uint_field([](auto& c) -> auto& { return c.stage1.batch; });

        auto& s2 = r["stage2"];
        s2["lr"] = num_field([](auto& c) -> auto& { return c.stage2.lr; });
        s2["epochs"] = uint_field([](auto& c) -> auto& { return c.stage2.epochs; });
        s2["repeats"] = uint_field([](auto& c) -> auto& { return c.stage2.repeats; });
        s2["pgd2_fraction"] = num_field([](auto& c) -> auto& { return c.stage2.pgd2_fraction; });

        auto& e = r["eval"];
        e["samples"] = uint_field([](auto& c) -> auto& { return c.eval.samples; });
        e["seeds"] = uint_field([](auto& c) -> auto& { return c.eval.seeds; });
        e["probe_t"] = uint_field([](auto& c) -> auto& { return c.eval.probe_t; });
        e["fractions"] = {[](RunConfig& c, const std::string& p, const std::string& v) {
                              c.eval.fractions.clear();
                              for (const auto& item : split_list(v)) c.eval.fractions.push_back(parse_number(p, item));
                              if (c.eval.fractions.empty()) fail(p, "must list at least one fraction");
                          },
                          [](const RunConfig& c) {
                              std::vector<std::string> parts;
                              for (double f : c.eval.fractions) parts.push_back(format_double(f));
                              return join(parts);
                          }};
        return r;
    }();
    return reg;
}

// The PGD-2 baseline reuses the stage-1 attack settings.
void sync_derived(RunConfig& c) { c.stage2.pgd2_attack = c.stage1.attack; }

}  // namespace

RunConfig::RunConfig() {
    stage1.attack.iterations = 2;
    stage1.attack.zeta = 8.0 / 255.0;
    stage1.attack.step = stage1.attack.zeta / 4.0;
    eval.attack.mode = AttackMode::TargetedLatent;
    eval.attack.iterations = 50;
    eval.attack.zeta = 8.0 / 255.0;
    eval.attack.step = eval.attack.zeta / 20.0;
    sync_derived(*this);
}

void RunConfig::validate() const {
    auto check = [](bool ok, const std::string& path, const std::string& msg) {
        if (!ok) fail(path, msg);
    };
    check(data.n_identities >= 1, "data.n_identities", "must be >= 1");
    check(data.per_identity >= 1, "data.per_identity", "must be >= 1");
    check(data.fewshot >= 1, "data.fewshot", "must be >= 1");
    check(data.probe_per_identity >= 1, "data.probe_per_identity", "must be >= 1");
    check(data.heldout_identity >= data.n_identities, "data.heldout_identity", "must not overlap the corpus identities");
    check(data.pattern.jitter >= 0.0, "data.jitter", "must be >= 0");
    check(data.pattern.amp_jitter >= 0.0, "data.amp_jitter", "must be >= 0");
    check(data.pattern.pixel_noise >= 0.0, "data.pixel_noise", "must be >= 0");

    const auto& dc = model.diffusion;
    check(dc.image_side >= 2, "model.image_side", "must be >= 2");
    check(dc.denoiser.latent_dim >= 1 && dc.denoiser.latent_dim <= dc.image_side * dc.image_side, "model.latent_dim",
          "must lie in [1, image_side^2]");
    check(dc.denoiser.hidden >= 1, "model.hidden", "must be >= 1");
    check(dc.denoiser.hidden_layers >= 1, "model.hidden_layers", "must be >= 1");
    check(dc.denoiser.time_dim >= 2 && dc.denoiser.time_dim % 2 == 0, "model.time_dim", "must be even and >= 2");
    check(dc.denoiser.token_dim >= 1, "model.token_dim", "must be >= 1");
    check(dc.steps >= 1, "model.steps", "must be >= 1");
    check(dc.beta_start > 0.0 && dc.beta_start < 1.0, "model.beta_start", "must lie in (0,1)");
    check(dc.beta_end > 0.0 && dc.beta_end < 1.0, "model.beta_end", "must lie in (0,1)");
    check(dc.beta_start <= dc.beta_end, "model.beta_start", "must be <= model.beta_end");
    check(model.pretrain.batch >= 1, "model.pretrain_batch", "must be >= 1");
    check(model.pretrain.lr > 0.0, "model.pretrain_lr", "must be > 0");

    check(adapter.rank >= 1, "adapter.rank", "must be >= 1");
    check(adapter.alpha >= static_cast<double>(adapter.rank), "adapter.alpha",
          "must be >= adapter.rank (got alpha " + format_double(adapter.alpha) + ", rank " + std::to_string(adapter.rank) + ")");
    for (const auto& l : adapter.layers) {
        bool known = false;
        for (std::size_t i = 1; i <= dc.denoiser.hidden_layers; ++i) known |= l == "fc" + std::to_string(i);
        check(known, "adapter.layers", "unknown layer '" + l + "'");
        const std::size_t width = l == "fc1" ? dc.denoiser.latent_dim + dc.denoiser.time_dim + dc.denoiser.token_dim
                                             : dc.denoiser.hidden;
        check(adapter.rank * 4 <= std::min(width, dc.denoiser.hidden), "adapter.rank",
              "must be <= min(d_in, d_out)/4 for layer '" + l + "'");
    }

    check(stage1.attack.zeta >= 0.0 && stage1.attack.zeta <= 1.0, "attack.zeta", "must lie in [0,1]");
    check(stage1.attack.step >= 0.0, "attack.step", "must be >= 0");
    check(eval.attack.zeta >= 0.0 && eval.attack.zeta <= 1.0, "attack.eval_zeta", "must lie in [0,1]");
    check(eval.attack.step >= 0.0, "attack.eval_step", "must be >= 0");
    check(eval.attack_token == "base" || eval.attack_token == "sks", "attack.token", "must be base or sks");

    check(stage1.lambda_adv >= 0.0, "stage1.lambda_adv", "must be >= 0");
    check(stage1.lambda_det >= 0.0, "stage1.lambda_det", "must be >= 0");
    check(stage1.lr > 0.0, "stage1.lr", "must be > 0");
    check(stage1.batch >= 1, "stage1.batch", "must be >= 1");

    check(stage2.lr > 0.0, "stage2.lr", "must be > 0");
    check(stage2.repeats >= 1, "stage2.repeats", "must be >= 1");
    check(stage2.pgd2_fraction >= 0.0 && stage2.pgd2_fraction <= 1.0, "stage2.pgd2_fraction", "must lie in [0,1]");

    check(eval.samples >= 2, "eval.samples", "must be >= 2");
    check(eval.seeds >= 1, "eval.seeds", "must be >= 1");
    check(eval.probe_t < dc.steps, "eval.probe_t", "must be < model.steps");
    for (double f : eval.fractions) check(f >= 0.0 && f <= 1.0, "eval.fractions", "entries must lie in [0,1]");
}

std::string RunConfig::dump() const {
    std::string out;
    for (const auto& [section, fields] : registry()) {
        out += "[" + section + "]\n";
        for (const auto& [key, f] : fields) out += key + " = " + f.get(*this) + "\n";
        out += "\n";
    }
    return out;
}

std::uint64_t RunConfig::hash() const {
    const std::string text = dump();
    return fnv1a64(text.data(), text.size());
}

RunConfig parse_run_config(const std::string& text) {
    RunConfig cfg;
    const Registry& reg = registry();
    std::istringstream in(text);
    std::string line, section;
    std::set<std::string> seen;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find_first_of("#;");
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail("line " + std::to_string(lineno), "malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            if (!reg.contains(section)) fail(section, "unknown section");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) fail("line " + std::to_string(lineno), "expected key = value");
        if (section.empty()) fail("line " + std::to_string(lineno), "key outside of any section");
        const std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        const std::string path = section + "." + key;
        const auto& fields = reg.at(section);
        auto it = fields.find(key);
        if (it == fields.end()) fail(path, "unknown key");
        if (!seen.insert(path).second) fail(path, "duplicate key");
        it->second.set(cfg, path, value);
    }
    sync_derived(cfg);
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("config file not found: " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_run_config(ss.str());
}

}  // namespace lord
