#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "lord/tensor.hpp"

namespace lord {

enum class OpKind {
    Constant,
    Input,
    Param,
    MatMul,
    Linear,
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    Sigmoid,
    Silu,
    Relu,
    Square,
    AddBias,
    ScaleRows,
    ConcatCols,
    ConcatRows,
    SliceRows,
    Sum,
    Mean,
    MseLoss,
    BceLoss,
};

const char* op_name(OpKind kind);

class Graph;

// Handle to a node recorded in a Graph. Cheap to copy; only valid while the
// owning graph is alive.
class Var {
public:
    Var() = default;

    Graph& graph() const { return *graph_; }
    std::size_t id() const { return id_; }
    bool valid() const { return graph_ != nullptr; }

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    bool requires_grad() const;

private:
    friend class Graph;
    Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

    Graph* graph_ = nullptr;
    std::size_t id_ = 0;
};

// Define-by-run tape. Nodes are appended in evaluation order, so every input
// id precedes its consumer and backward is a single reverse sweep.
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, std::size_t self)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Value that never receives a gradient.
    Var constant(Tensor value);
    // Differentiable leaf owned by the graph; read its gradient with grad().
    Var input(Tensor value);
    // Leaf bound to an external parameter. When the parameter requires grad,
    // backward() accumulates into its gradient buffer.
    Var param(Tensor& p);

    // When set, param() records parameters as constants: nothing accumulates
    // into them. Used while attacking a model whose weights must stay fixed.
    void set_params_frozen(bool frozen) { params_frozen_ = frozen; }
    bool params_frozen() const { return params_frozen_; }

    const Tensor& value(Var v) const { return nodes_[v.id()].value; }
    bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
    OpKind kind(Var v) const { return nodes_[v.id()].kind; }
    const std::vector<std::size_t>& inputs(Var v) const { return nodes_[v.id()].inputs; }
    std::size_t size() const { return nodes_.size(); }

    // Gradient of the most recent backward() with respect to a node.
    std::span<const double> grad(Var v) const;

    // Reverse sweep from a scalar loss. Node gradients are reset on each call;
    // bound parameter gradients accumulate across calls.
    void backward(Var loss);

    // Op plumbing used by the free functions below.
    Var record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn fn);
    std::vector<double>& grad_buffer(std::size_t id);
    const std::vector<double>& node_grad(std::size_t id) const { return nodes_[id].grad; }
    const Tensor& node_value(std::size_t id) const { return nodes_[id].value; }
    bool node_requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

private:
    struct Node {
        OpKind kind = OpKind::Constant;
        std::vector<std::size_t> inputs;
        Tensor value;
        std::vector<double> grad;
        bool requires_grad = false;
        Tensor* bound = nullptr;
        BackwardFn backward;
    };

    Var push(Node node);

    std::vector<Node> nodes_;
    bool backward_done_ = false;
    bool params_frozen_ = false;
};

Var matmul(Var a, Var b);
// x·wᵀ with x of shape n×in and w of shape out×in.
Var linear(Var x, Var w);

enum class Elementwise { Add, Sub, Mul };
Var elementwise(Elementwise op, Var a, Var b);
Var elementwise(Elementwise op, Var a, double b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);

Var sigmoid(Var a);
Var silu(Var a);
Var relu(Var a);
Var square(Var a);

// x (n×c) plus a bias of c entries broadcast over rows.
Var add_bias(Var x, Var bias);
// Row i of x (n×c) times s[i], with s of shape n×1.
Var scale_rows(Var x, Var s);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(Var x, std::size_t begin, std::size_t end);

Var sum(Var a);
Var mean(Var a);

Var mse_loss(Var pred, Var target);

inline constexpr double kBceClamp = 1e-7;
// Mean binary cross-entropy of probabilities p against 0/1 labels. p is
// clamped into [kBceClamp, 1 - kBceClamp] before the log.
Var bce_loss(Var p, std::span<const double> labels);
Var bce_loss(Var p, double label);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator*(double s, Var a) { return scale(a, s); }

void backward(Var loss);

// Dense kernel shared by matmul/linear and the adapter merge paths:
// C (m×n) [+]= op(A)·op(B).
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate);

Tensor matmul(const Tensor& a, const Tensor& b);

}  // namespace lord
