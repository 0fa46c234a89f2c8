#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lord/autograd.hpp"
#include "lord/denoiser.hpp"
#include "lord/rng.hpp"

namespace lord {

// Low-rank update h = W·x + (alpha/r)·B·A·x.
struct LoraAdapter {
    Tensor A;  // r x d_in
    Tensor B;  // d_out x r
    double alpha = 32.0;
    std::size_t rank = 4;

    static LoraAdapter create(std::size_t d_in, std::size_t d_out, std::size_t rank, double alpha, Rng& rng);

    double scaling() const { return alpha / static_cast<double>(rank); }
    std::size_t in_features() const { return A.cols(); }
    std::size_t out_features() const { return B.rows(); }
    std::vector<Tensor*> parameters() { return {&A, &B}; }
    void validate() const;
};

// Two-layer MLP producing the pre-sigmoid balance logit from O1.
struct BalanceHead {
    Tensor w1;  // d_out x d_out
    Tensor b1;  // d_out
    Tensor w2;  // 1 x d_out
    Tensor b2;  // 1
};

// Two-branch adapter sharing A:
//   O1 = (alpha/r)·B·A·x,  O2 = (alpha/r)·B'·A·x,  lambda = sigmoid(head(O1))
//   h  = W·x + O1 + lambda·O2
struct LordAdapter {
    Tensor A;        // r x d_in, shared by both branches
    Tensor B;        // d_out x r
    Tensor B_prime;  // d_out x r
    BalanceHead head;
    double alpha = 32.0;
    std::size_t rank = 4;
    // Lambda per sample from the most recent forward.
    std::vector<double> last_lambda;

    static LordAdapter create(std::size_t d_in, std::size_t d_out, std::size_t rank, double alpha, Rng& rng);

    double scaling() const { return alpha / static_cast<double>(rank); }
    std::size_t in_features() const { return A.cols(); }
    std::size_t out_features() const { return B.rows(); }
    std::vector<Tensor*> parameters() { return {&A, &B, &B_prime, &head.w1, &head.b1, &head.w2, &head.b2}; }
    void validate() const;
};

Var lora_forward(Graph& g, LoraAdapter& adapter, Var base_out, Var x);

struct LordOutput {
    Var out;
    Var lambda;  // n x 1
};

LordOutput lord_forward(Graph& g, LordAdapter& adapter, Var base_out, Var x);

// W + (alpha/r)·B·A; W is not modified.
Tensor merge_lora_into_weights(const LoraAdapter& adapter, const Tensor& W);

enum class AdapterKind { Lora, Lord };
const char* kind_name(AdapterKind kind);

// Adapters keyed by the denoiser sublayer they wrap. Acts as a LayerHook;
// layers without an adapter pass through unchanged.
class AdapterSet : public LayerHook {
public:
    AdapterSet() = default;
    explicit AdapterSet(AdapterKind kind) : kind_(kind) {}

    static AdapterSet attach_lora(const Denoiser& model, const std::vector<std::string>& layers, std::size_t rank,
                                  double alpha, Rng& rng);
    static AdapterSet attach_lord(const Denoiser& model, const std::vector<std::string>& layers, std::size_t rank,
                                  double alpha, Rng& rng);

    AdapterKind kind() const { return kind_; }
    bool frozen() const { return frozen_; }
    void set_frozen(bool frozen);

    std::vector<std::string> names() const;
    std::size_t size() const;
    bool contains(const std::string& layer) const;

    LoraAdapter& lora(const std::string& layer);
    const LoraAdapter& lora(const std::string& layer) const;
    LordAdapter& lord(const std::string& layer);
    const LordAdapter& lord(const std::string& layer) const;
    void add(const std::string& layer, LoraAdapter a);
    void add(const std::string& layer, LordAdapter a);

    // Throws unless every adapter names an existing layer of matching width.
    void check_against(const Denoiser& model) const;

    Var apply(const std::string& layer, Var input, Var base_out) override;

    // Clears the lambda trace and marks cached lambdas stale.
    void begin_pass() override;
    // Lambda nodes (n x 1 each, in layer order) recorded since begin_pass().
    const std::vector<Var>& lambda_trace() const { return trace_; }
    bool lambdas_fresh() const { return fresh_; }

    // Trainable tensors; empty when frozen.
    std::vector<Tensor*> parameters();
    std::vector<Tensor*> all_tensors();

    // "<layer>.lord.A", "<layer>.lord.Bp", "<layer>.lord.head.w1", "<layer>.lora.B", ...
    std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;
    static AdapterSet from_named_tensors(AdapterKind kind, const std::map<std::string, Tensor>& tensors, double alpha,
                                         std::size_t rank);

private:
    AdapterKind kind_ = AdapterKind::Lora;
    bool frozen_ = false;
    std::map<std::string, LoraAdapter> lora_;
    std::map<std::string, LordAdapter> lord_;
    std::vector<Var> trace_;
    bool fresh_ = false;
};

// Applies several adapter sets to the same layer, summing their updates:
// W·x + (LoRD terms) + (LoRA terms).
class AdapterStack : public LayerHook {
public:
    AdapterStack() = default;
    explicit AdapterStack(std::vector<AdapterSet*> sets) : sets_(std::move(sets)) {}

    Var apply(const std::string& layer, Var input, Var base_out) override;
    void begin_pass() override;
    const std::vector<AdapterSet*>& sets() const { return sets_; }

private:
    std::vector<AdapterSet*> sets_;
};

// Test-phase composition of base + frozen LoRD + personalization LoRA.
AdapterStack compose_test_stack(const Denoiser& base, AdapterSet& lord, AdapterSet& lora);

// Mean over adapters of the mean BCE of each adapter's lambda against label.
Var detection_loss(std::span<const Var> lambdas, double label);
// Clean rows [0, n_clean) scored against 0, the rest against 1; the two
// halves are scored separately and summed.
Var split_detection_loss(std::span<const Var> lambdas, std::size_t n_clean);

// Per-sample BCE of the cached lambdas, averaged across adapters.
std::vector<double> detection_lambda(const AdapterSet& set, double label);
// Per-sample lambda averaged across adapters, from the cache.
std::vector<double> mean_lambda(const AdapterSet& set);

}  // namespace lord
