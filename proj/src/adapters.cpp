#include "lord/adapters.hpp"

#include <algorithm>
#include <cmath>

#include "lord/errors.hpp"

namespace lord {

namespace {

void validate_rank(std::size_t d_in, std::size_t d_out, std::size_t rank, double alpha) {
    if (rank == 0) throw ValidationError("adapter rank must be positive");
    if (alpha < static_cast<double>(rank)) {
        throw ValidationError("adapter alpha (" + std::to_string(alpha) + ") must be >= rank (" + std::to_string(rank) + ")");
    }
    if (rank * 4 > std::min(d_in, d_out)) {
        throw ValidationError("adapter rank " + std::to_string(rank) + " too large for a " + std::to_string(d_out) + "x" +
                              std::to_string(d_in) + " layer (limit min/4)");
    }
}

Tensor trainable(Tensor t) {
    t.set_requires_grad(true);
    return t;
}

void check_input(Var x, std::size_t d_in, Var base_out, std::size_t d_out, const char* what) {
    if (x.cols() != d_in || base_out.cols() != d_out || x.rows() != base_out.rows()) {
        throw DimensionError(std::string(what) + ": adapter is " + std::to_string(d_out) + "x" + std::to_string(d_in) +
                             " but input is " + shape_str(x.shape()) + " and base output " +
                             shape_str(base_out.shape()));
    }
}

}  // namespace

LoraAdapter LoraAdapter::create(std::size_t d_in, std::size_t d_out, std::size_t rank, double alpha, Rng& rng) {
    validate_rank(d_in, d_out, rank, alpha);
    LoraAdapter a;
    a.rank = rank;
    a.alpha = alpha;
    a.A = trainable(rng.normal_tensor({rank, d_in}, 1.0 / static_cast<double>(rank)));
    a.B = trainable(Tensor({d_out, rank}));
    return a;
}

void LoraAdapter::validate() const {
    validate_rank(A.cols(), B.rows(), rank, alpha);
    if (A.rows() != rank || B.cols() != rank) {
        throw DimensionError("lora: A " + shape_str(A.shape()) + " / B " + shape_str(B.shape()) + " disagree with rank " +
                             std::to_string(rank));
    }
}

LordAdapter LordAdapter::create(std::size_t d_in, std::size_t d_out, std::size_t rank, double alpha, Rng& rng) {
    validate_rank(d_in, d_out, rank, alpha);
    LordAdapter a;
    a.rank = rank;
    a.alpha = alpha;
    a.A = trainable(rng.normal_tensor({rank, d_in}, 1.0 / static_cast<double>(rank)));
    a.B = trainable(Tensor({d_out, rank}));
    a.B_prime = trainable(Tensor({d_out, rank}));
    a.head.w1 = trainable(rng.normal_tensor({d_out, d_out}, 0.02));
    a.head.b1 = trainable(Tensor({d_out}));
    a.head.w2 = trainable(rng.normal_tensor({1, d_out}, 0.02));
    a.head.b2 = trainable(Tensor({1}));
    return a;
}

void LordAdapter::validate() const {
    validate_rank(A.cols(), B.rows(), rank, alpha);
    const std::size_t d_out = B.rows();
    if (A.rows() != rank || B.cols() != rank || B_prime.shape() != B.shape() ||
        head.w1.shape() != Shape{d_out, d_out} || head.b1.size() != d_out || head.w2.shape() != Shape{1, d_out} ||
        head.b2.size() != 1) {
        throw DimensionError("lord: inconsistent tensor shapes for rank " + std::to_string(rank) + " and width " +
                             std::to_string(d_out));
    }
}

Var lora_forward(Graph& g, LoraAdapter& adapter, Var base_out, Var x) {
    check_input(x, adapter.in_features(), base_out, adapter.out_features(), "lora_forward");
    Var ax = linear(x, g.param(adapter.A));
    Var delta = scale(linear(ax, g.param(adapter.B)), adapter.scaling());
    return add(base_out, delta);
}

LordOutput lord_forward(Graph& g, LordAdapter& adapter, Var base_out, Var x) {
    check_input(x, adapter.in_features(), base_out, adapter.out_features(), "lord_forward");
    const double s = adapter.scaling();
    Var ax = linear(x, g.param(adapter.A));
    Var o1 = scale(linear(ax, g.param(adapter.B)), s);
    Var o2 = scale(linear(ax, g.param(adapter.B_prime)), s);
    // O1 is already one feature vector per sample, so there is nothing left to pool.
    Var hidden = relu(add_bias(linear(o1, g.param(adapter.head.w1)), g.param(adapter.head.b1)));
    Var logit = add_bias(linear(hidden, g.param(adapter.head.w2)), g.param(adapter.head.b2));
    Var lambda = sigmoid(logit);
    const auto& lv = lambda.value();
    adapter.last_lambda.assign(lv.data().begin(), lv.data().end());
    return {add(add(base_out, o1), scale_rows(o2, lambda)), lambda};
}

Tensor merge_lora_into_weights(const LoraAdapter& adapter, const Tensor& W) {
    if (W.rank() != 2 || W.rows() != adapter.out_features() || W.cols() != adapter.in_features()) {
        throw DimensionError("merge: weight " + shape_str(W.shape()) + " vs adapter " +
                             std::to_string(adapter.out_features()) + "x" + std::to_string(adapter.in_features()));
    }
    Tensor ba = matmul(adapter.B, adapter.A);
    Tensor out = W.detached();
    const double s = adapter.scaling();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += s * ba[i];
    return out;
}

const char* kind_name(AdapterKind kind) { return kind == AdapterKind::Lord ? "lord" : "lora"; }

AdapterSet AdapterSet::attach_lora(const Denoiser& model, const std::vector<std::string>& layers, std::size_t rank,
                                   double alpha, Rng& rng) {
    AdapterSet set(AdapterKind::Lora);
    for (const auto& name : layers) {
        const LinearLayer& l = model.layer(name);
        set.add(name, LoraAdapter::create(l.in_features(), l.out_features(), rank, alpha, rng));
    }
    return set;
}

AdapterSet AdapterSet::attach_lord(const Denoiser& model, const std::vector<std::string>& layers, std::size_t rank,
                                   double alpha, Rng& rng) {
    AdapterSet set(AdapterKind::Lord);
    for (const auto& name : layers) {
        const LinearLayer& l = model.layer(name);
        set.add(name, LordAdapter::create(l.in_features(), l.out_features(), rank, alpha, rng));
    }
    return set;
}

void AdapterSet::set_frozen(bool frozen) {
    frozen_ = frozen;
    for (Tensor* t : all_tensors()) t->set_requires_grad(!frozen);
}

std::vector<std::string> AdapterSet::names() const {
    std::vector<std::string> out;
    if (kind_ == AdapterKind::Lord)
        for (const auto& [k, _] : lord_) out.push_back(k);
    else
        for (const auto& [k, _] : lora_) out.push_back(k);
    return out;
}

std::size_t AdapterSet::size() const { return kind_ == AdapterKind::Lord ? lord_.size() : lora_.size(); }

bool AdapterSet::contains(const std::string& layer) const {
    return kind_ == AdapterKind::Lord ? lord_.contains(layer) : lora_.contains(layer);
}

LoraAdapter& AdapterSet::lora(const std::string& layer) {
    auto it = lora_.find(layer);
    if (it == lora_.end()) throw ValidationError("no lora adapter on layer '" + layer + "'");
    return it->second;
}

const LoraAdapter& AdapterSet::lora(const std::string& layer) const {
    auto it = lora_.find(layer);
    if (it == lora_.end()) throw ValidationError("no lora adapter on layer '" + layer + "'");
    return it->second;
}

LordAdapter& AdapterSet::lord(const std::string& layer) {
    auto it = lord_.find(layer);
    if (it == lord_.end()) throw ValidationError("no lord adapter on layer '" + layer + "'");
    return it->second;
}

const LordAdapter& AdapterSet::lord(const std::string& layer) const {
    auto it = lord_.find(layer);
    if (it == lord_.end()) throw ValidationError("no lord adapter on layer '" + layer + "'");
    return it->second;
}

void AdapterSet::add(const std::string& layer, LoraAdapter a) {
    if (kind_ != AdapterKind::Lora) throw ValidationError("cannot add a lora adapter to a lord set");
    if (lora_.contains(layer)) throw ValidationError("duplicate adapter for layer '" + layer + "'");
    a.validate();
    if (frozen_) {
        a.A.set_requires_grad(false);
        a.B.set_requires_grad(false);
    }
    lora_.emplace(layer, std::move(a));
}

void AdapterSet::add(const std::string& layer, LordAdapter a) {
    if (kind_ != AdapterKind::Lord) throw ValidationError("cannot add a lord adapter to a lora set");
    if (lord_.contains(layer)) throw ValidationError("duplicate adapter for layer '" + layer + "'");
    a.validate();
    if (frozen_)
        for (Tensor* t : a.parameters()) t->set_requires_grad(false);
    lord_.emplace(layer, std::move(a));
}

void AdapterSet::check_against(const Denoiser& model) const {
    for (const auto& name : names()) {
        if (!model.has_layer(name)) throw ValidationError("adapter targets unknown layer '" + name + "'");
        const LinearLayer& l = model.layer(name);
        const std::size_t in = kind_ == AdapterKind::Lord ? lord(name).in_features() : lora(name).in_features();
        const std::size_t out = kind_ == AdapterKind::Lord ? lord(name).out_features() : lora(name).out_features();
        if (in != l.in_features() || out != l.out_features()) {
            throw DimensionError("adapter on '" + name + "' is " + std::to_string(out) + "x" + std::to_string(in) +
                                 ", layer is " + shape_str(l.weight.shape()));
        }
    }
}

Var AdapterSet::apply(const std::string& layer, Var input, Var base_out) {
    Graph& g = input.graph();
    if (kind_ == AdapterKind::Lord) {
        auto it = lord_.find(layer);
        if (it == lord_.end()) return base_out;
        LordOutput r = lord_forward(g, it->second, base_out, input);
        trace_.push_back(r.lambda);
        fresh_ = true;
        return r.out;
    }
    auto it = lora_.find(layer);
    if (it == lora_.end()) return base_out;
    return lora_forward(g, it->second, base_out, input);
}

void AdapterSet::begin_pass() {
    trace_.clear();
    fresh_ = false;
}

std::vector<Tensor*> AdapterSet::parameters() {
    if (frozen_) return {};
    return all_tensors();
}

std::vector<Tensor*> AdapterSet::all_tensors() {
    std::vector<Tensor*> out;
    for (auto& [_, a] : lora_)
        for (Tensor* t : a.parameters()) out.push_back(t);
    for (auto& [_, a] : lord_)
        for (Tensor* t : a.parameters()) out.push_back(t);
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> AdapterSet::named_tensors() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (const auto& [name, a] : lora_) {
        out.emplace_back(name + ".lora.A", &a.A);
        out.emplace_back(name + ".lora.B", &a.B);
    }
    for (const auto& [name, a] : lord_) {
        out.emplace_back(name + ".lord.A", &a.A);
        out.emplace_back(name + ".lord.B", &a.B);
        out.emplace_back(name + ".lord.Bp", &a.B_prime);
        out.emplace_back(name + ".lord.head.w1", &a.head.w1);
        out.emplace_back(name + ".lord.head.b1", &a.head.b1);
        out.emplace_back(name + ".lord.head.w2", &a.head.w2);
        out.emplace_back(name + ".lord.head.b2", &a.head.b2);
    }
    return out;
}

AdapterSet AdapterSet::from_named_tensors(AdapterKind kind, const std::map<std::string, Tensor>& tensors, double alpha,
                                          std::size_t rank) {
    const std::string marker = kind == AdapterKind::Lord ? ".lord.A" : ".lora.A";
    auto fetch = [&](const std::string& key) {
        auto it = tensors.find(key);
        if (it == tensors.end()) throw ValidationError("checkpoint is missing tensor '" + key + "'");
        return trainable(it->second.detached());
    };
    AdapterSet set(kind);
    for (const auto& [key, _] : tensors) {
        if (key.size() <= marker.size() || key.compare(key.size() - marker.size(), marker.size(), marker) != 0) continue;
        const std::string layer = key.substr(0, key.size() - marker.size());
        if (kind == AdapterKind::Lora) {
            LoraAdapter a;
            a.alpha = alpha;
            a.rank = rank;
            a.A = fetch(layer + ".lora.A");
            a.B = fetch(layer + ".lora.B");
            set.add(layer, std::move(a));
        } else {
            LordAdapter a;
            a.alpha = alpha;
            a.rank = rank;
            a.A = fetch(layer + ".lord.A");
            a.B = fetch(layer + ".lord.B");
            a.B_prime = fetch(layer + ".lord.Bp");
            a.head.w1 = fetch(layer + ".lord.head.w1");
            a.head.b1 = fetch(layer + ".lord.head.b1");
            a.head.w2 = fetch(layer + ".lord.head.w2");
            a.head.b2 = fetch(layer + ".lord.head.b2");
            set.add(layer, std::move(a));
        }
    }
    if (set.size() == 0) throw ValidationError(std::string("checkpoint holds no ") + kind_name(kind) + " adapters");
    return set;
}

Var AdapterStack::apply(const std::string& layer, Var input, Var base_out) {
    Var out = base_out;
    for (AdapterSet* s : sets_) out = s->apply(layer, input, out);
    return out;
}

void AdapterStack::begin_pass() {
    for (AdapterSet* s : sets_) s->begin_pass();
}

AdapterStack compose_test_stack(const Denoiser& base, AdapterSet& lord, AdapterSet& lora) {
    if (lord.kind() != AdapterKind::Lord) throw ValidationError("test stack: first set must be lord adapters");
    if (lora.kind() != AdapterKind::Lora) throw ValidationError("test stack: second set must be lora adapters");
    if (!lord.frozen()) throw ValidationError("test stack: lord adapters must be frozen");
    if (lord.names() != lora.names()) throw ValidationError("test stack: lord and lora sets attach to different layers");
    lord.check_against(base);
    lora.check_against(base);
    return AdapterStack({&lord, &lora});
}

Var detection_loss(std::span<const Var> lambdas, double label) {
    if (lambdas.empty()) throw ValidationError("detection loss: no lambda values recorded");
    Var total = bce_loss(lambdas[0], label);
    for (std::size_t i = 1; i < lambdas.size(); ++i) total = add(total, bce_loss(lambdas[i], label));
    return scale(total, 1.0 / static_cast<double>(lambdas.size()));
}

Var split_detection_loss(std::span<const Var> lambdas, std::size_t n_clean) {
    if (lambdas.empty()) throw ValidationError("detection loss: no lambda values recorded");
    const std::size_t n = lambdas[0].rows();
    if (n_clean == 0 || n_clean >= n) {
        throw ValidationError("detection loss: need both clean and perturbed rows, got " + std::to_string(n_clean) +
                              " clean of " + std::to_string(n));
    }
    std::vector<Var> clean, perturbed;
    for (Var l : lambdas) {
        clean.push_back(slice_rows(l, 0, n_clean));
        perturbed.push_back(slice_rows(l, n_clean, n));
    }
    return add(detection_loss(clean, 0.0), detection_loss(perturbed, 1.0));
}

std::vector<double> detection_lambda(const AdapterSet& set, double label) {
    if (label != 0.0 && label != 1.0) throw ValidationError("detection label must be 0 or 1");
    if (set.kind() != AdapterKind::Lord) throw ValidationError("detection needs lord adapters");
    if (!set.lambdas_fresh()) throw ValidationError("lambda cache is stale: run a forward pass first");
    std::vector<double> out;
    const auto names = set.names();
    for (const auto& name : names) {
        const auto& lam = set.lord(name).last_lambda;
        if (out.empty()) out.assign(lam.size(), 0.0);
        if (lam.size() != out.size()) throw ValidationError("lambda caches disagree on batch size");
        for (std::size_t i = 0; i < lam.size(); ++i) {
            const double q = std::clamp(lam[i], kBceClamp, 1.0 - kBceClamp);
            out[i] -= label * std::log(q) + (1.0 - label) * std::log(1.0 - q);
        }
    }
    for (double& v : out) v /= static_cast<double>(names.size());
    return out;
}

std::vector<double> mean_lambda(const AdapterSet& set) {
    if (set.kind() != AdapterKind::Lord) throw ValidationError("mean_lambda needs lord adapters");
    if (!set.lambdas_fresh()) throw ValidationError("lambda cache is stale: run a forward pass first");
    std::vector<double> out;
    const auto names = set.names();
    for (const auto& name : names) {
        const auto& lam = set.lord(name).last_lambda;
        if (out.empty()) out.assign(lam.size(), 0.0);
        for (std::size_t i = 0; i < lam.size(); ++i) out[i] += lam[i];
    }
    for (double& v : out) v /= static_cast<double>(names.size());
    return out;
}

}  // namespace lord
