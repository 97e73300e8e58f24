#pragma once

#include <functional>
#include <vector>

#include "csai/tensor.hpp"

namespace csai {

/// Handle to a node on a Tape.
struct Var {
    int32_t id = -1;
    bool valid() const { return id >= 0; }
};

/// Reverse-mode tape over Tensor-valued operations. Ops record a backward
/// closure only when some input requires a gradient and grad is enabled, so
/// inference passes pay almost nothing for the tape.
///
/// Shape mismatches throw; there is no implicit broadcasting beyond the
/// explicitly named *_rowvec / *_seq_table ops.
class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool requires_grad = false);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    // elementwise (same shape)
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double c);
    Var add_scalar(Var a, double c);

    // broadcast over trailing feature dim
    Var add_rowvec(Var x, Var v);
    Var mul_rowvec(Var x, Var v);
    // broadcast a [L,C] table over the batch dim of [N,L,C]
    Var add_seq_table(Var x, Var table);

    Var matmul(Var a, Var b);             // [M,K]x[K,N] -> [M,N]
    Var linear(Var x, Var w, Var b);      // x [...,K], w [K,N], optional b [N]
    Var bmm(Var a, Var b);                // [B,M,K]x[B,K,N] -> [B,M,N]
    Var transpose_last2(Var a);           // [B,M,N] -> [B,N,M]
    Var split_heads(Var x, int n_heads);  // [N,L,C] -> [N*h,L,C/h]
    Var merge_heads(Var x, int n_heads);  // [N*h,L,Ch] -> [N,L,Ch*h]

    Var relu(Var a);
    Var sigmoid(Var a);
    Var tanh(Var a);
    Var exp(Var a);
    Var neg(Var a);
    Var abs(Var a);
    Var softplus(Var a);
    Var softmax_lastdim(Var a);
    Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
    // x [N,L,Cin], w [k,Cin,Cout], optional b [Cout]; cross-correlation
    Var conv1d(Var x, Var w, Var b, int stride = 1, int padding = 0);
    Var concat_seq(Var a, Var b);      // along axis 1 of [N,L,C]
    Var concat_lastdim(Var a, Var b);  // along trailing dim
    Var reshape(Var a, std::vector<int64_t> new_shape);
    Var sum_all(Var a);   // -> [1]
    Var mean_all(Var a);  // -> [1]
    Var bce_with_logits_mean(Var logits, Var targets);

    /// Seeds d(loss)/d(loss)=1 and propagates to every reachable node.
    void backward(Var loss);

    const Tensor& value(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }
    /// Gradient of the last backward() w.r.t. v; zeros if v was not reached.
    Tensor grad(Var v) const;
    bool requires_grad(Var v) const { return nodes_[static_cast<size_t>(v.id)].requires_grad; }
    bool grad_enabled() const { return grad_enabled_; }
    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;  // empty until touched by backward
        std::function<void(Tape&, const Tensor&)> back;
        bool requires_grad = false;
    };

    Var make(Tensor value, std::vector<Var> parents,
             std::function<void(Tape&, const Tensor&)> back);
    Tensor& grad_buf(Var v);

    std::vector<Node> nodes_;
    bool grad_enabled_ = true;
};

}  // namespace csai
