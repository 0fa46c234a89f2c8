#include "lord/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "lord/errors.hpp"

namespace lord {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

std::string shapes(const Var& a, const Var& b) { return shape_str(a.shape()) + " and " + shape_str(b.shape()); }

void require_same_graph(Var a, Var b) {
    if (&a.graph() != &b.graph()) throw std::logic_error("operands recorded on different graphs");
}

void require_matrix(Var a, const char* op) {
    if (a.shape().size() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
}

void add_into(std::vector<double>& dst, std::span<const double> src, double s = 1.0) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
}

double sigmoid_scalar(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Saturated outputs are pinned to the nearest doubles inside (0,1) so the
// result is never exactly 0 or 1.
double open_unit(double y) {
    return std::clamp(y, std::numeric_limits<double>::denorm_min(), std::nextafter(1.0, 0.0));
}

template <class F>
Var unary(OpKind kind, Var a, F&& forward_fn, std::function<double(double x, double y)> dydx) {
    const Tensor& av = a.value();
    Tensor out(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = forward_fn(av[i]);
    const std::size_t ia = a.id();
    return a.graph().record(kind, {ia}, std::move(out), [ia, dydx](Graph& g, std::size_t self) {
        const auto& x = g.node_value(ia);
        const auto& y = g.node_value(self);
        const auto& gy = g.node_grad(self);
        auto& gx = g.grad_buffer(ia);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * dydx(x[i], y[i]);
    });
}

}  // namespace

const char* op_name(OpKind kind) {
    switch (kind) {
        case OpKind::Constant: return "constant";
        case OpKind::Input: return "input";
        case OpKind::Param: return "param";
        case OpKind::MatMul: return "matmul";
        case OpKind::Linear: return "linear";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::Scale: return "scale";
        case OpKind::AddScalar: return "add_scalar";
        case OpKind::Sigmoid: return "sigmoid";
        case OpKind::Silu: return "silu";
        case OpKind::Relu: return "relu";
        case OpKind::Square: return "square";
        case OpKind::AddBias: return "add_bias";
        case OpKind::ScaleRows: return "scale_rows";
        case OpKind::ConcatCols: return "concat_cols";
        case OpKind::ConcatRows: return "concat_rows";
        case OpKind::SliceRows: return "slice_rows";
        case OpKind::Sum: return "sum";
        case OpKind::Mean: return "mean";
        case OpKind::MseLoss: return "mse_loss";
        case OpKind::BceLoss: return "bce_loss";
    }
    return "?";
}

const Tensor& Var::value() const { return graph_->value(*this); }
bool Var::requires_grad() const { return graph_->requires_grad(*this); }

Var Graph::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Tensor value) {
    Node n;
    n.kind = OpKind::Constant;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Graph::input(Tensor value) {
    Node n;
    n.kind = OpKind::Input;
    n.value = value.detached();
    n.requires_grad = true;
    return push(std::move(n));
}

Var Graph::param(Tensor& p) {
    Node n;
    n.kind = OpKind::Param;
    n.value = p.detached();
    n.requires_grad = p.requires_grad() && !params_frozen_;
    n.bound = n.requires_grad ? &p : nullptr;
    return push(std::move(n));
}

Var Graph::record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn fn) {
#ifndef NDEBUG
    if (!value.all_finite()) {
        const bool inputs_finite = std::all_of(inputs.begin(), inputs.end(),
                                               [&](std::size_t i) { return nodes_[i].value.all_finite(); });
        if (inputs_finite) throw std::logic_error(std::string("non-finite output from ") + op_name(kind));
    }
#endif
    Node n;
    n.kind = kind;
    n.value = std::move(value);
    n.requires_grad = std::any_of(inputs.begin(), inputs.end(), [&](std::size_t i) { return nodes_[i].requires_grad; });
    if (n.requires_grad) n.backward = std::move(fn);
    n.inputs = std::move(inputs);
    return push(std::move(n));
}

std::vector<double>& Graph::grad_buffer(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
}

std::span<const double> Graph::grad(Var v) const {
    const auto& n = nodes_[v.id()];
    if (!backward_done_) throw ValidationError("grad() requested before backward()");
    if (!n.requires_grad) throw ValidationError("node does not require grad");
    return n.grad;
}

void Graph::backward(Var loss) {
    if (&loss.graph() != this) throw std::logic_error("loss belongs to another graph");
    if (loss.value().size() != 1) {
        throw ValidationError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
    }
    for (auto& n : nodes_) n.grad.clear();
    backward_done_ = true;
    if (!nodes_[loss.id()].requires_grad) return;
    grad_buffer(loss.id())[0] = 1.0;

    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        auto& n = nodes_[i];
        if (!n.requires_grad || n.grad.empty()) continue;
        if (n.backward) n.backward(*this, i);
        if (n.bound) n.bound->accumulate_grad(n.grad);
    }
}

void backward(Var loss) { loss.graph().backward(loss); }

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
          double* c, bool accumulate) {
    const auto M = static_cast<Eigen::Index>(m);
    const auto N = static_cast<Eigen::Index>(n);
    const auto K = static_cast<Eigen::Index>(k);
    MutMap cm(c, M, N);
    if (!accumulate) cm.setZero();
    if (m == 0 || n == 0 || k == 0) return;
    if (!trans_a && !trans_b) {
        cm.noalias() += ConstMap(a, M, K) * ConstMap(b, K, N);
    } else if (!trans_a && trans_b) {
        cm.noalias() += ConstMap(a, M, K) * ConstMap(b, N, K).transpose();
    } else if (trans_a && !trans_b) {
        cm.noalias() += ConstMap(a, K, M).transpose() * ConstMap(b, K, N);
    } else {
        cm.noalias() += ConstMap(a, K, M).transpose() * ConstMap(b, N, K).transpose();
    }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    Tensor out({a.rows(), b.cols()});
    gemm(false, false, a.rows(), b.cols(), a.cols(), a.data().data(), b.data().data(), out.data().data(), false);
    return out;
}

Var matmul(Var a, Var b) {
    require_same_graph(a, b);
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    if (a.cols() != b.rows()) throw DimensionError("matmul: incompatible shapes " + shapes(a, b));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out({m, n});
    gemm(false, false, m, n, k, a.value().data().data(), b.value().data().data(), out.data().data(), false);
    const std::size_t ia = a.id(), ib = b.id();
    return a.graph().record(OpKind::MatMul, {ia, ib}, std::move(out), [=](Graph& g, std::size_t self) {
        const double* gy = g.node_grad(self).data();
        if (g.node_requires_grad(ia)) {
            gemm(false, true, m, k, n, gy, g.node_value(ib).data().data(), g.grad_buffer(ia).data(), true);
        }
        if (g.node_requires_grad(ib)) {
            gemm(true, false, k, n, m, g.node_value(ia).data().data(), gy, g.grad_buffer(ib).data(), true);
        }
    });
}

Var linear(Var x, Var w) {
    require_same_graph(x, w);
    require_matrix(x, "linear");
    require_matrix(w, "linear");
    if (x.cols() != w.cols()) throw DimensionError("linear: input " + shapes(x, w) + " disagree on in-features");
    const std::size_t n = x.rows(), in = x.cols(), out_f = w.rows();
    Tensor out({n, out_f});
    gemm(false, true, n, out_f, in, x.value().data().data(), w.value().data().data(), out.data().data(), false);
    const std::size_t ix = x.id(), iw = w.id();
    return x.graph().record(OpKind::Linear, {ix, iw}, std::move(out), [=](Graph& g, std::size_t self) {
        const double* gy = g.node_grad(self).data();
        if (g.node_requires_grad(ix)) {
            gemm(false, false, n, in, out_f, gy, g.node_value(iw).data().data(), g.grad_buffer(ix).data(), true);
        }
        if (g.node_requires_grad(iw)) {
            gemm(true, false, out_f, in, n, gy, g.node_value(ix).data().data(), g.grad_buffer(iw).data(), true);
        }
    });
}

Var elementwise(Elementwise op, Var a, Var b) {
    require_same_graph(a, b);
    if (a.shape() != b.shape()) {
        if (b.value().size() == 1 && b.shape().empty()) return elementwise(op, a, b.value()[0]);
        throw DimensionError("elementwise: shape mismatch " + shapes(a, b));
    }
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    Tensor out(av.shape());
    OpKind kind = OpKind::Add;
    switch (op) {
        case Elementwise::Add:
            for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
            kind = OpKind::Add;
            break;
        case Elementwise::Sub:
            for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
            kind = OpKind::Sub;
            break;
        case Elementwise::Mul:
            for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
            kind = OpKind::Mul;
            break;
    }
    const std::size_t ia = a.id(), ib = b.id();
    return a.graph().record(kind, {ia, ib}, std::move(out), [=](Graph& g, std::size_t self) {
        const auto& gy = g.node_grad(self);
        if (g.node_requires_grad(ia)) {
            auto& ga = g.grad_buffer(ia);
            if (op == Elementwise::Mul) {
                const auto& bv2 = g.node_value(ib);
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * bv2[i];
            } else {
                add_into(ga, gy);
            }
        }
        if (g.node_requires_grad(ib)) {
            auto& gb = g.grad_buffer(ib);
            if (op == Elementwise::Mul) {
                const auto& av2 = g.node_value(ia);
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i] * av2[i];
            } else {
                add_into(gb, gy, op == Elementwise::Sub ? -1.0 : 1.0);
            }
        }
    });
}

Var elementwise(Elementwise op, Var a, double b) {
    switch (op) {
        case Elementwise::Add: return add_scalar(a, b);
        case Elementwise::Sub: return add_scalar(a, -b);
        case Elementwise::Mul: return scale(a, b);
    }
    return a;
}

Var add(Var a, Var b) { return elementwise(Elementwise::Add, a, b); }
Var sub(Var a, Var b) { return elementwise(Elementwise::Sub, a, b); }
Var mul(Var a, Var b) { return elementwise(Elementwise::Mul, a, b); }

Var scale(Var a, double s) {
    const Tensor& av = a.value();
    Tensor out(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * s;
    const std::size_t ia = a.id();
    return a.graph().record(OpKind::Scale, {ia}, std::move(out),
                            [=](Graph& g, std::size_t self) { add_into(g.grad_buffer(ia), g.node_grad(self), s); });
}

Var add_scalar(Var a, double s) {
    const Tensor& av = a.value();
    Tensor out(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + s;
    const std::size_t ia = a.id();
    return a.graph().record(OpKind::AddScalar, {ia}, std::move(out),
                            [=](Graph& g, std::size_t self) { add_into(g.grad_buffer(ia), g.node_grad(self)); });
}

Var sigmoid(Var a) {
    return unary(OpKind::Sigmoid, a, [](double x) { return open_unit(sigmoid_scalar(x)); }, [](double, double y) { return y * (1.0 - y); });
}

Var silu(Var a) {
    return unary(
        OpKind::Silu, a, [](double x) { return x * sigmoid_scalar(x); },
        [](double x, double) {
            const double s = sigmoid_scalar(x);
            return s * (1.0 + x * (1.0 - s));
        });
}

Var relu(Var a) {
    return unary(
        OpKind::Relu, a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var square(Var a) {
    return unary(
        OpKind::Square, a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var add_bias(Var x, Var bias) {
    require_same_graph(x, bias);
    const std::size_t n = x.rows(), c = x.cols();
    if (bias.value().size() != c) throw DimensionError("add_bias: bias " + shapes(bias, x));
    const Tensor& xv = x.value();
    const Tensor& bv = bias.value();
    Tensor out(xv.shape());
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < c; ++j) out[r * c + j] = xv[r * c + j] + bv[j];
    const std::size_t ix = x.id(), ib = bias.id();
    return x.graph().record(OpKind::AddBias, {ix, ib}, std::move(out), [=](Graph& g, std::size_t self) {
        const auto& gy = g.node_grad(self);
        if (g.node_requires_grad(ix)) add_into(g.grad_buffer(ix), gy);
        if (g.node_requires_grad(ib)) {
            auto& gb = g.grad_buffer(ib);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t j = 0; j < c; ++j) gb[j] += gy[r * c + j];
        }
    });
}

Var scale_rows(Var x, Var s) {
    require_same_graph(x, s);
    const std::size_t n = x.rows(), c = x.cols();
    if (s.value().size() != n) throw DimensionError("scale_rows: scales " + shapes(s, x));
    const Tensor& xv = x.value();
    const Tensor& sv = s.value();
    Tensor out(xv.shape());
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < c; ++j) out[r * c + j] = xv[r * c + j] * sv[r];
    const std::size_t ix = x.id(), is = s.id();
    return x.graph().record(OpKind::ScaleRows, {ix, is}, std::move(out), [=](Graph& g, std::size_t self) {
        const auto& gy = g.node_grad(self);
        if (g.node_requires_grad(ix)) {
            const auto& sv2 = g.node_value(is);
            auto& gx = g.grad_buffer(ix);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += gy[r * c + j] * sv2[r];
        }
        if (g.node_requires_grad(is)) {
            const auto& xv2 = g.node_value(ix);
            auto& gs = g.grad_buffer(is);
            for (std::size_t r = 0; r < n; ++r) {
                double acc = 0.0;
                for (std::size_t j = 0; j < c; ++j) acc += gy[r * c + j] * xv2[r * c + j];
                gs[r] += acc;
            }
        }
    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const std::size_t n = parts[0].rows();
    std::vector<std::size_t> ids, widths;
    std::size_t total = 0;
    for (const Var& p : parts) {
        require_same_graph(parts[0], p);
        if (p.rows() != n) throw DimensionError("concat_cols: row mismatch " + shapes(parts[0], p));
        ids.push_back(p.id());
        widths.push_back(p.cols());
        total += p.cols();
    }
    Tensor out({n, total});
    std::size_t off = 0;
    for (const Var& p : parts) {
        const Tensor& v = p.value();
        const std::size_t w = p.cols();
        for (std::size_t r = 0; r < n; ++r) std::copy_n(v.data().data() + r * w, w, out.data().data() + r * total + off);
        off += w;
    }
    return parts[0].graph().record(OpKind::ConcatCols, ids, std::move(out), [=](Graph& g, std::size_t self) {
        const auto& gy = g.node_grad(self);
        std::size_t o = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            const std::size_t w = widths[k];
            if (g.node_requires_grad(ids[k])) {
                auto& gp = g.grad_buffer(ids[k]);
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t j = 0; j < w; ++j) gp[r * w + j] += gy[r * total + o + j];
            }
            o += w;
        }
    });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    const std::size_t c = parts[0].cols();
    std::vector<std::size_t> ids, sizes;
    std::size_t rows = 0;
    for (const Var& p : parts) {
        require_same_graph(parts[0], p);
        if (p.cols() != c || p.shape().size() != 2) throw DimensionError("concat_rows: column mismatch " + shapes(parts[0], p));
        ids.push_back(p.id());
        sizes.push_back(p.value().size());
        rows += p.rows();
    }
    Tensor out({rows, c});
    std::size_t off = 0;
    for (const Var& p : parts) {
        std::copy(p.value().data().begin(), p.value().data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(off));
        off += p.value().size();
    }
    return parts[0].graph().record(OpKind::ConcatRows, ids, std::move(out), [=](Graph& g, std::size_t self) {
        const auto& gy = g.node_grad(self);
        std::size_t o = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (g.node_requires_grad(ids[k])) {
                auto& gp = g.grad_buffer(ids[k]);
                for (std::size_t i = 0; i < sizes[k]; ++i) gp[i] += gy[o + i];
            }
            o += sizes[k];
        }
    });
}

Var slice_rows(Var x, std::size_t begin, std::size_t end) {
    require_matrix(x, "slice_rows");
    if (begin > end || end > x.rows()) {
        throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                             shape_str(x.shape()));
    }
    const std::size_t c = x.cols();
    const Tensor& xv = x.value();
    Tensor out({end - begin, c});
    std::copy_n(xv.data().begin() + static_cast<std::ptrdiff_t>(begin * c), (end - begin) * c, out.data().begin());
    const std::size_t ix = x.id();
    return x.graph().record(OpKind::SliceRows, {ix}, std::move(out), [=](Graph& g, std::size_t self) {
        const auto& gy = g.node_grad(self);
        auto& gx = g.grad_buffer(ix);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[begin * c + i] += gy[i];
    });
}

Var sum(Var a) {
    const Tensor& av = a.value();
    double s = 0.0;
    for (double v : av.data()) s += v;
    const std::size_t ia = a.id();
    return a.graph().record(OpKind::Sum, {ia}, Tensor::scalar(s), [=](Graph& g, std::size_t self) {
        const double gy = g.node_grad(self)[0];
        for (double& v : g.grad_buffer(ia)) v += gy;
    });
}

Var mean(Var a) {
    const Tensor& av = a.value();
    if (av.size() == 0) throw DimensionError("mean of empty tensor");
    double s = 0.0;
    for (double v : av.data()) s += v;
    const double inv = 1.0 / static_cast<double>(av.size());
    const std::size_t ia = a.id();
    return a.graph().record(OpKind::Mean, {ia}, Tensor::scalar(s * inv), [=](Graph& g, std::size_t self) {
        const double gy = g.node_grad(self)[0] * inv;
        for (double& v : g.grad_buffer(ia)) v += gy;
    });
}

Var mse_loss(Var pred, Var target) {
    require_same_graph(pred, target);
    if (pred.shape() != target.shape()) throw DimensionError("mse_loss: shape mismatch " + shapes(pred, target));
    const Tensor& p = pred.value();
    const Tensor& t = target.value();
    if (p.size() == 0) throw DimensionError("mse_loss on empty tensors");
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = p[i] - t[i];
        s += d * d;
    }
    const double inv = 1.0 / static_cast<double>(p.size());
    const std::size_t ip = pred.id(), it = target.id();
    return pred.graph().record(OpKind::MseLoss, {ip, it}, Tensor::scalar(s * inv), [=](Graph& g, std::size_t self) {
        const double gy = g.node_grad(self)[0] * 2.0 * inv;
        const auto& pv = g.node_value(ip);
        const auto& tv = g.node_value(it);
        if (g.node_requires_grad(ip)) {
            auto& gp = g.grad_buffer(ip);
            for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += gy * (pv[i] - tv[i]);
        }
        if (g.node_requires_grad(it)) {
            auto& gt = g.grad_buffer(it);
            for (std::size_t i = 0; i < gt.size(); ++i) gt[i] -= gy * (pv[i] - tv[i]);
        }
    });
}

Var bce_loss(Var p, std::span<const double> labels) {
    const Tensor& pv = p.value();
    if (labels.size() != pv.size()) {
        throw DimensionError("bce_loss: " + std::to_string(labels.size()) + " labels for probabilities " +
                             shape_str(p.shape()));
    }
    if (pv.size() == 0) throw DimensionError("bce_loss on empty tensor");
    std::vector<double> y(labels.begin(), labels.end());
    double s = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
        if (y[i] != 0.0 && y[i] != 1.0) throw ValidationError("bce_loss: label must be 0 or 1, got " + std::to_string(y[i]));
        const double q = std::clamp(pv[i], kBceClamp, 1.0 - kBceClamp);
        s -= y[i] * std::log(q) + (1.0 - y[i]) * std::log(1.0 - q);
    }
    const double inv = 1.0 / static_cast<double>(pv.size());
    const std::size_t ip = p.id();
    return p.graph().record(OpKind::BceLoss, {ip}, Tensor::scalar(s * inv), [=](Graph& g, std::size_t self) {
        const double gy = g.node_grad(self)[0] * inv;
        const auto& pv2 = g.node_value(ip);
        auto& gp = g.grad_buffer(ip);
        for (std::size_t i = 0; i < gp.size(); ++i) {
            const double q = std::clamp(pv2[i], kBceClamp, 1.0 - kBceClamp);
            gp[i] += gy * (-y[i] / q + (1.0 - y[i]) / (1.0 - q));
        }
    });
}

Var bce_loss(Var p, double label) {
    std::vector<double> labels(p.value().size(), label);
    return bce_loss(p, labels);
}

}  // namespace lord
