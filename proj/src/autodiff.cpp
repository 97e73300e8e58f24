#include "csai/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace csai {

namespace {

void check(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
}

// C[M,N] += A[M,K] * B[K,N]
void gemm_acc(const double* a, const double* b, double* c, int64_t M, int64_t K, int64_t N) {
    for (int64_t i = 0; i < M; ++i) {
        const double* ai = a + i * K;
        double* ci = c + i * N;
        for (int64_t k = 0; k < K; ++k) {
            const double aik = ai[k];
            if (aik == 0.0) continue;
            const double* bk = b + k * N;
            for (int64_t j = 0; j < N; ++j) ci[j] += aik * bk[j];
        }
    }
}

// C[M,N] += A[M,K] * B[N,K]^T
void gemm_bt_acc(const double* a, const double* b, double* c, int64_t M, int64_t K, int64_t N) {
    for (int64_t i = 0; i < M; ++i) {
        const double* ai = a + i * K;
        double* ci = c + i * N;
        for (int64_t j = 0; j < N; ++j) {
            const double* bj = b + j * K;
            double s = 0.0;
            for (int64_t k = 0; k < K; ++k) s += ai[k] * bj[k];
            ci[j] += s;
        }
    }
}

// C[K,N] += A[M,K]^T * B[M,N]
void gemm_at_acc(const double* a, const double* b, double* c, int64_t M, int64_t K, int64_t N) {
    for (int64_t i = 0; i < M; ++i) {
        const double* ai = a + i * K;
        const double* bi = b + i * N;
        for (int64_t k = 0; k < K; ++k) {
            const double aik = ai[k];
            if (aik == 0.0) continue;
            double* ck = c + k * N;
            for (int64_t j = 0; j < N; ++j) ck[j] += aik * bi[j];
        }
    }
}

int64_t trailing_dim(const Tensor& t) { return t.shape.back(); }
int64_t leading_rows(const Tensor& t) { return t.numel() / t.shape.back(); }

}  // namespace

Var Tape::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad && grad_enabled_;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

Var Tape::make(Tensor value, std::vector<Var> parents,
               std::function<void(Tape&, const Tensor&)> back) {
    Node n;
    n.value = std::move(value);
    if (grad_enabled_) {
        for (Var p : parents)
            if (nodes_[static_cast<size_t>(p.id)].requires_grad) {
                n.requires_grad = true;
                break;
            }
    }
    if (n.requires_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

Tensor& Tape::grad_buf(Var v) {
    Node& n = nodes_[static_cast<size_t>(v.id)];
    if (n.grad.data.empty() && n.value.numel() > 0) n.grad = Tensor::zeros(n.value.shape);
    return n.grad;
}

Tensor Tape::grad(Var v) const {
    const Node& n = nodes_[static_cast<size_t>(v.id)];
    if (n.grad.data.empty()) return Tensor::zeros(n.value.shape);
    return n.grad;
}

void Tape::backward(Var loss) {
    check(grad_enabled_, "backward: tape recorded with grad disabled");
    check(value(loss).numel() == 1, "backward: loss must be scalar");
    for (Node& n : nodes_) n.grad = Tensor();
    grad_buf(loss).data[0] = 1.0;
    for (int32_t id = loss.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.requires_grad || !n.back || n.grad.data.empty()) continue;
        n.back(*this, n.grad);
    }
}

Var Tape::add(Var a, Var b) {
    const Tensor &A = value(a), &B = value(b);
    check(A.same_shape(B), "add: shape mismatch");
    Tensor out = A;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += B.data[i];
    return make(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) {
            Tensor& da = t.grad_buf(a);
            for (size_t i = 0; i < g.data.size(); ++i) da.data[i] += g.data[i];
        }
        if (t.requires_grad(b)) {
            Tensor& db = t.grad_buf(b);
            for (size_t i = 0; i < g.data.size(); ++i) db.data[i] += g.data[i];
        }
    });
}

Var Tape::sub(Var a, Var b) {
    const Tensor &A = value(a), &B = value(b);
    check(A.same_shape(B), "sub: shape mismatch");
    Tensor out = A;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= B.data[i];
    return make(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) {
            Tensor& da = t.grad_buf(a);
            for (size_t i = 0; i < g.data.size(); ++i) da.data[i] += g.data[i];
        }
        if (t.requires_grad(b)) {
            Tensor& db = t.grad_buf(b);
            for (size_t i = 0; i < g.data.size(); ++i) db.data[i] -= g.data[i];
        }
    });
}

Var Tape::mul(Var a, Var b) {
    const Tensor &A = value(a), &B = value(b);
    check(A.same_shape(B), "mul: shape mismatch");
    Tensor out = A;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= B.data[i];
    return make(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        const Tensor &A2 = t.value(a), &B2 = t.value(b);
        if (t.requires_grad(a)) {
            Tensor& da = t.grad_buf(a);
            for (size_t i = 0; i < g.data.size(); ++i) da.data[i] += g.data[i] * B2.data[i];
        }
        if (t.requires_grad(b)) {
            Tensor& db = t.grad_buf(b);
            for (size_t i = 0; i < g.data.size(); ++i) db.data[i] += g.data[i] * A2.data[i];
        }
    });
}

Var Tape::scale(Var a, double c) {
    Tensor out = value(a);
    for (double& x : out.data) x *= c;
    return make(std::move(out), {a}, [a, c](Tape& t, const Tensor& g) {
        Tensor& da = t.grad_buf(a);
        for (size_t i = 0; i < g.data.size(); ++i) da.data[i] += c * g.data[i];
    });
}

Var Tape::add_scalar(Var a, double c) {
    Tensor out = value(a);
    for (double& x : out.data) x += c;
    return make(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
        Tensor& da = t.grad_buf(a);
        for (size_t i = 0; i < g.data.size(); ++i) da.data[i] += g.data[i];
    });
}

Var Tape::add_rowvec(Var x, Var v) {
    const Tensor &X = value(x), &V = value(v);
    check(V.rank() == 1 && trailing_dim(X) == V.shape[0], "add_rowvec: shape mismatch");
    Tensor out = X;
    const int64_t C = V.shape[0], R = leading_rows(X);
    for (int64_t r = 0; r < R; ++r)
        for (int64_t c = 0; c < C; ++c) out.data[static_cast<size_t>(r * C + c)] += V.data[static_cast<size_t>(c)];
    return make(std::move(out), {x, v}, [x, v, R, C](Tape& t, const Tensor& g) {
        if (t.requires_grad(x)) {
            Tensor& dx = t.grad_buf(x);
            for (size_t i = 0; i < g.data.size(); ++i) dx.data[i] += g.data[i];
        }
        if (t.requires_grad(v)) {
            Tensor& dv = t.grad_buf(v);
            for (int64_t r = 0; r < R; ++r)
                for (int64_t c = 0; c < C; ++c) dv.data[static_cast<size_t>(c)] += g.data[static_cast<size_t>(r * C + c)];
        }
    });
}

Var Tape::mul_rowvec(Var x, Var v) {
    const Tensor &X = value(x), &V = value(v);
    check(V.rank() == 1 && trailing_dim(X) == V.shape[0], "mul_rowvec: shape mismatch");
    Tensor out = X;
    const int64_t C = V.shape[0], R = leading_rows(X);
    for (int64_t r = 0; r < R; ++r)
        for (int64_t c = 0; c < C; ++c) out.data[static_cast<size_t>(r * C + c)] *= V.data[static_cast<size_t>(c)];
    return make(std::move(out), {x, v}, [x, v, R, C](Tape& t, const Tensor& g) {
        const Tensor &X2 = t.value(x), &V2 = t.value(v);
        if (t.requires_grad(x)) {
            Tensor& dx = t.grad_buf(x);
            for (int64_t r = 0; r < R; ++r)
                for (int64_t c = 0; c < C; ++c)
                    dx.data[static_cast<size_t>(r * C + c)] += g.data[static_cast<size_t>(r * C + c)] * V2.data[static_cast<size_t>(c)];
        }
        if (t.requires_grad(v)) {
            Tensor& dv = t.grad_buf(v);
            for (int64_t r = 0; r < R; ++r)
                for (int64_t c = 0; c < C; ++c)
                    dv.data[static_cast<size_t>(c)] += g.data[static_cast<size_t>(r * C + c)] * X2.data[static_cast<size_t>(r * C + c)];
        }
    });
}

Var Tape::add_seq_table(Var x, Var table) {
    const Tensor &X = value(x), &T = value(table);
    check(X.rank() == 3 && T.rank() == 2 && X.shape[1] == T.shape[0] && X.shape[2] == T.shape[1],
          "add_seq_table: expected x [N,L,C] and table [L,C]");
    Tensor out = X;
    const int64_t N = X.shape[0], LC = T.numel();
    for (int64_t n = 0; n < N; ++n)
        for (int64_t i = 0; i < LC; ++i) out.data[static_cast<size_t>(n * LC + i)] += T.data[static_cast<size_t>(i)];
    return make(std::move(out), {x, table}, [x, table, N, LC](Tape& t, const Tensor& g) {
        if (t.requires_grad(x)) {
            Tensor& dx = t.grad_buf(x);
            for (size_t i = 0; i < g.data.size(); ++i) dx.data[i] += g.data[i];
        }
        if (t.requires_grad(table)) {
            Tensor& dt = t.grad_buf(table);
            for (int64_t n = 0; n < N; ++n)
                for (int64_t i = 0; i < LC; ++i) dt.data[static_cast<size_t>(i)] += g.data[static_cast<size_t>(n * LC + i)];
        }
    });
}

Var Tape::matmul(Var a, Var b) {
    const Tensor &A = value(a), &B = value(b);
    check(A.rank() == 2 && B.rank() == 2 && A.shape[1] == B.shape[0], "matmul: shape mismatch");
    const int64_t M = A.shape[0], K = A.shape[1], N = B.shape[1];
    Tensor out = Tensor::zeros({M, N});
    gemm_acc(A.data.data(), B.data.data(), out.data.data(), M, K, N);
    return make(std::move(out), {a, b}, [a, b, M, K, N](Tape& t, const Tensor& g) {
        const Tensor &A2 = t.value(a), &B2 = t.value(b);
        if (t.requires_grad(a))
            gemm_bt_acc(g.data.data(), B2.data.data(), t.grad_buf(a).data.data(), M, N, K);
        if (t.requires_grad(b))
            gemm_at_acc(A2.data.data(), g.data.data(), t.grad_buf(b).data.data(), M, K, N);
    });
}

Var Tape::linear(Var x, Var w, Var b) {
    const Tensor& X = value(x);
    const Tensor& W = value(w);
    check(W.rank() == 2 && trailing_dim(X) == W.shape[0], "linear: shape mismatch");
    std::vector<int64_t> out_shape = X.shape;
    out_shape.back() = W.shape[1];
    Var flat = reshape(x, {leading_rows(X), trailing_dim(X)});
    Var y = matmul(flat, w);
    if (b.valid()) y = add_rowvec(y, b);
    return reshape(y, std::move(out_shape));
}

Var Tape::bmm(Var a, Var b) {
    const Tensor &A = value(a), &B = value(b);
    check(A.rank() == 3 && B.rank() == 3 && A.shape[0] == B.shape[0] && A.shape[2] == B.shape[1],
          "bmm: shape mismatch");
    const int64_t Bn = A.shape[0], M = A.shape[1], K = A.shape[2], N = B.shape[2];
    Tensor out = Tensor::zeros({Bn, M, N});
    for (int64_t i = 0; i < Bn; ++i)
        gemm_acc(A.data.data() + i * M * K, B.data.data() + i * K * N, out.data.data() + i * M * N, M, K, N);
    return make(std::move(out), {a, b}, [a, b, Bn, M, K, N](Tape& t, const Tensor& g) {
        const Tensor &A2 = t.value(a), &B2 = t.value(b);
        if (t.requires_grad(a)) {
            Tensor& da = t.grad_buf(a);
            for (int64_t i = 0; i < Bn; ++i)
                gemm_bt_acc(g.data.data() + i * M * N, B2.data.data() + i * K * N, da.data.data() + i * M * K, M, N, K);
        }
        if (t.requires_grad(b)) {
            Tensor& db = t.grad_buf(b);
            for (int64_t i = 0; i < Bn; ++i)
                gemm_at_acc(A2.data.data() + i * M * K, g.data.data() + i * M * N, db.data.data() + i * K * N, M, K, N);
        }
    });
}

Var Tape::transpose_last2(Var a) {
    const Tensor& A = value(a);
    check(A.rank() == 3, "transpose_last2: expected rank 3");
    const int64_t B = A.shape[0], M = A.shape[1], N = A.shape[2];
    Tensor out = Tensor::zeros({B, M == 0 ? 0 : N, M});
    out.shape = {B, N, M};
    for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < M; ++i)
            for (int64_t j = 0; j < N; ++j) out.data[static_cast<size_t>((b * N + j) * M + i)] = A.data[static_cast<size_t>((b * M + i) * N + j)];
    return make(std::move(out), {a}, [a, B, M, N](Tape& t, const Tensor& g) {
        Tensor& da = t.grad_buf(a);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t i = 0; i < M; ++i)
                for (int64_t j = 0; j < N; ++j)
                    da.data[static_cast<size_t>((b * M + i) * N + j)] += g.data[static_cast<size_t>((b * N + j) * M + i)];
    });
}

Var Tape::split_heads(Var x, int n_heads) {
    const Tensor& X = value(x);
    check(X.rank() == 3 && X.shape[2] % n_heads == 0, "split_heads: d_model not divisible by n_heads");
    const int64_t N = X.shape[0], L = X.shape[1], C = X.shape[2], Dh = C / n_heads;
    Tensor out = Tensor::zeros({N * n_heads, L, Dh});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t h = 0; h < n_heads; ++h)
            for (int64_t l = 0; l < L; ++l)
                for (int64_t j = 0; j < Dh; ++j)
                    out.data[static_cast<size_t>(((n * n_heads + h) * L + l) * Dh + j)] =
                        X.data[static_cast<size_t>((n * L + l) * C + h * Dh + j)];
    return make(std::move(out), {x}, [x, N, L, C, Dh, n_heads](Tape& t, const Tensor& g) {
        Tensor& dx = t.grad_buf(x);
        for (int64_t n = 0; n < N; ++n)
            for (int64_t h = 0; h < n_heads; ++h)
                for (int64_t l = 0; l < L; ++l)
                    for (int64_t j = 0; j < Dh; ++j)
                        dx.data[static_cast<size_t>((n * L + l) * C + h * Dh + j)] +=
                            g.data[static_cast<size_t>(((n * n_heads + h) * L + l) * Dh + j)];
    });
}

Var Tape::merge_heads(Var x, int n_heads) {
    const Tensor& X = value(x);
    check(X.rank() == 3 && X.shape[0] % n_heads == 0, "merge_heads: bad batch dim");
    const int64_t N = X.shape[0] / n_heads, L = X.shape[1], Dh = X.shape[2], C = Dh * n_heads;
    Tensor out = Tensor::zeros({N, L, C});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t h = 0; h < n_heads; ++h)
            for (int64_t l = 0; l < L; ++l)
                for (int64_t j = 0; j < Dh; ++j)
                    out.data[static_cast<size_t>((n * L + l) * C + h * Dh + j)] =
                        X.data[static_cast<size_t>(((n * n_heads + h) * L + l) * Dh + j)];
    return make(std::move(out), {x}, [x, N, L, C, Dh, n_heads](Tape& t, const Tensor& g) {
        Tensor& dx = t.grad_buf(x);
        for (int64_t n = 0; n < N; ++n)
            for (int64_t h = 0; h < n_heads; ++h)
                for (int64_t l = 0; l < L; ++l)
                    for (int64_t j = 0; j < Dh; ++j)
                        dx.data[static_cast<size_t>(((n * n_heads + h) * L + l) * Dh + j)] +=
                            g.data[static_cast<size_t>((n * L + l) * C + h * Dh + j)];
    });
}

Var Tape::relu(Var a) {
    Tensor out = value(a);
    for (double& x : out.data) x = x > 0.0 ? x : 0.0;
    return make(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
        const Tensor& A = t.value(a);
        Tensor& da = t.grad_buf(a);
        for (size_t i = 0; i < g.data.size(); ++i)
            if (A.data[i] > 0.0) da.data[i] += g.data[i];
    });
}

Var Tape::sigmoid(Var a) {
    Tensor out = value(a);
    for (double& x : out.data) x = 1.0 / (1.0 + std::exp(-x));
    Var r = make(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
        // self value is the node created below; recompute from input
        const Tensor& A = t.value(a);
        Tensor& da = t.grad_buf(a);
        for (size_t i = 0; i < g.data.size(); ++i) {
            const double s = 1.0 / (1.0 + std::exp(-A.data[i]));
            da.data[i] += g.data[i] * s * (1.0 - s);
        }
    });
    return r;
}

Var Tape::tanh(Var a) {
    Tensor out = value(a);
    for (double& x : out.data) x = std::tanh(x);
    return make(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
        const Tensor& A = t.value(a);
        Tensor& da = t.grad_buf(a);
        for (size_t i = 0; i < g.data.size(); ++i) {
            const double y = std::tanh(A.data[i]);
            da.data[i] += g.data[i] * (1.0 - y * y);
        }
    });
}

Var Tape::exp(Var a) {
    Tensor out = value(a);
    for (double& x : out.data) x = std::exp(x);
    return make(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
        const Tensor& A = t.value(a);
        Tensor& da = t.grad_buf(a);
        for (size_t i = 0; i < g.data.size(); ++i) da.data[i] += g.data[i] * std::exp(A.data[i]);
    });
}

Var Tape::neg(Var a) {
    Tensor out = value(a);
    for (double& x : out.data) x = -x;
    return make(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
        Tensor& da = t.grad_buf(a);
        for (size_t i = 0; i < g.data.size(); ++i) da.data[i] -= g.data[i];
    });
}

Var Tape::abs(Var a) {
    Tensor out = value(a);
    for (double& x : out.data) x = std::fabs(x);
    return make(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
        const Tensor& A = t.value(a);
        Tensor& da = t.grad_buf(a);
        for (size_t i = 0; i < g.data.size(); ++i) {
            const double s = A.data[i] > 0.0 ? 1.0 : (A.data[i] < 0.0 ? -1.0 : 0.0);
            da.data[i] += g.data[i] * s;
        }
    });
}

Var Tape::softplus(Var a) {
    Tensor out = value(a);
    for (double& x : out.data) x = x > 30.0 ? x : std::log1p(std::exp(x));
    return make(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
        const Tensor& A = t.value(a);
        Tensor& da = t.grad_buf(a);
        for (size_t i = 0; i < g.data.size(); ++i)
            da.data[i] += g.data[i] / (1.0 + std::exp(-A.data[i]));
    });
}

Var Tape::softmax_lastdim(Var a) {
    const Tensor& A = value(a);
    const int64_t C = trailing_dim(A), R = leading_rows(A);
    Tensor out = A;
    for (int64_t r = 0; r < R; ++r) {
        double* row = out.data.data() + r * C;
        double mx = row[0];
        for (int64_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (int64_t c = 0; c < C; ++c) {
            row[c] = std::exp(row[c] - mx);
            sum += row[c];
        }
        for (int64_t c = 0; c < C; ++c) row[c] /= sum;
    }
    // capture the softmax output by value for the backward pass
    Tensor soft = out;
    return make(std::move(out), {a}, [a, soft = std::move(soft), R, C](Tape& t, const Tensor& g) {
        Tensor& da = t.grad_buf(a);
        for (int64_t r = 0; r < R; ++r) {
            const double* s = soft.data.data() + r * C;
            const double* gr = g.data.data() + r * C;
            double dot = 0.0;
            for (int64_t c = 0; c < C; ++c) dot += gr[c] * s[c];
            double* dr = da.data.data() + r * C;
            for (int64_t c = 0; c < C; ++c) dr[c] += s[c] * (gr[c] - dot);
        }
    });
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps) {
    const Tensor &X = value(x), &G = value(gamma), &Bt = value(beta);
    const int64_t C = trailing_dim(X), R = leading_rows(X);
    check(G.rank() == 1 && G.shape[0] == C && Bt.rank() == 1 && Bt.shape[0] == C,
          "layer_norm: gamma/beta shape mismatch");
    Tensor out = X;
    Tensor xhat = Tensor::zeros(X.shape);
    Tensor inv_std = Tensor::zeros({R});
    for (int64_t r = 0; r < R; ++r) {
        const double* row = X.data.data() + r * C;
        double mu = 0.0;
        for (int64_t c = 0; c < C; ++c) mu += row[c];
        mu /= static_cast<double>(C);
        double var = 0.0;
        for (int64_t c = 0; c < C; ++c) var += (row[c] - mu) * (row[c] - mu);
        var /= static_cast<double>(C);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std.data[static_cast<size_t>(r)] = is;
        for (int64_t c = 0; c < C; ++c) {
            const double xh = (row[c] - mu) * is;
            xhat.data[static_cast<size_t>(r * C + c)] = xh;
            out.data[static_cast<size_t>(r * C + c)] = G.data[static_cast<size_t>(c)] * xh + Bt.data[static_cast<size_t>(c)];
        }
    }
    return make(std::move(out), {x, gamma, beta},
                [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), R, C](
                    Tape& t, const Tensor& g) {
                    const Tensor& G2 = t.value(gamma);
                    if (t.requires_grad(gamma)) {
                        Tensor& dg = t.grad_buf(gamma);
                        for (int64_t r = 0; r < R; ++r)
                            for (int64_t c = 0; c < C; ++c)
                                dg.data[static_cast<size_t>(c)] += g.data[static_cast<size_t>(r * C + c)] * xhat.data[static_cast<size_t>(r * C + c)];
                    }
                    if (t.requires_grad(beta)) {
                        Tensor& db = t.grad_buf(beta);
                        for (int64_t r = 0; r < R; ++r)
                            for (int64_t c = 0; c < C; ++c) db.data[static_cast<size_t>(c)] += g.data[static_cast<size_t>(r * C + c)];
                    }
                    if (t.requires_grad(x)) {
                        Tensor& dx = t.grad_buf(x);
                        std::vector<double> dxh(static_cast<size_t>(C));
                        for (int64_t r = 0; r < R; ++r) {
                            double m1 = 0.0, m2 = 0.0;
                            for (int64_t c = 0; c < C; ++c) {
                                dxh[static_cast<size_t>(c)] = g.data[static_cast<size_t>(r * C + c)] * G2.data[static_cast<size_t>(c)];
                                m1 += dxh[static_cast<size_t>(c)];
                                m2 += dxh[static_cast<size_t>(c)] * xhat.data[static_cast<size_t>(r * C + c)];
                            }
                            m1 /= static_cast<double>(C);
                            m2 /= static_cast<double>(C);
                            const double is = inv_std.data[static_cast<size_t>(r)];
                            for (int64_t c = 0; c < C; ++c)
                                dx.data[static_cast<size_t>(r * C + c)] +=
                                    is * (dxh[static_cast<size_t>(c)] - m1 - xhat.data[static_cast<size_t>(r * C + c)] * m2);
                        }
                    }
                });
}

Var Tape::conv1d(Var x, Var w, Var b, int stride, int padding) {
    const Tensor &X = value(x), &W = value(w);
    check(X.rank() == 3 && W.rank() == 3 && X.shape[2] == W.shape[1], "conv1d: shape mismatch");
    check(stride >= 1 && padding >= 0, "conv1d: bad stride/padding");
    const int64_t N = X.shape[0], L = X.shape[1], Ci = X.shape[2];
    const int64_t K = W.shape[0], Co = W.shape[2];
    const int64_t span = L + 2 * padding - K;
    check(span >= 0 && span % stride == 0, "conv1d: output length is not a positive integer");
    const int64_t Lo = span / stride + 1;
    if (b.valid()) {
        const Tensor& Bv = value(b);
        check(Bv.rank() == 1 && Bv.shape[0] == Co, "conv1d: bias shape mismatch");
    }
    Tensor out = Tensor::zeros({N, Lo, Co});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t lo = 0; lo < Lo; ++lo)
            for (int64_t k = 0; k < K; ++k) {
                const int64_t li = lo * stride + k - padding;
                if (li < 0 || li >= L) continue;
                const double* xr = &X.data[static_cast<size_t>((n * L + li) * Ci)];
                const double* wr = &W.data[static_cast<size_t>(k * Ci * Co)];
                double* orow = &out.data[static_cast<size_t>((n * Lo + lo) * Co)];
                for (int64_t ci = 0; ci < Ci; ++ci) {
                    const double xv = xr[ci];
                    if (xv == 0.0) continue;
                    const double* wc = wr + ci * Co;
                    for (int64_t co = 0; co < Co; ++co) orow[co] += xv * wc[co];
                }
            }
    if (b.valid()) {
        const Tensor& Bv = value(b);
        for (int64_t n = 0; n < N; ++n)
            for (int64_t lo = 0; lo < Lo; ++lo)
                for (int64_t co = 0; co < Co; ++co)
                    out.data[static_cast<size_t>((n * Lo + lo) * Co + co)] += Bv.data[static_cast<size_t>(co)];
    }
    return make(std::move(out), {x, w, b.valid() ? b : x},
                [x, w, b, N, L, Ci, K, Co, Lo, stride, padding](Tape& t, const Tensor& g) {
                    const Tensor &X2 = t.value(x), &W2 = t.value(w);
                    const bool need_x = t.requires_grad(x), need_w = t.requires_grad(w);
                    Tensor* dx = need_x ? &t.grad_buf(x) : nullptr;
                    Tensor* dw = need_w ? &t.grad_buf(w) : nullptr;
                    for (int64_t n = 0; n < N; ++n)
                        for (int64_t lo = 0; lo < Lo; ++lo) {
                            const double* gr = &g.data[static_cast<size_t>((n * Lo + lo) * Co)];
                            for (int64_t k = 0; k < K; ++k) {
                                const int64_t li = lo * stride + k - padding;
                                if (li < 0 || li >= L) continue;
                                for (int64_t ci = 0; ci < Ci; ++ci) {
                                    const double xv = X2.data[static_cast<size_t>((n * L + li) * Ci + ci)];
                                    double acc = 0.0;
                                    for (int64_t co = 0; co < Co; ++co) {
                                        const double gv = gr[co];
                                        if (need_w) dw->data[static_cast<size_t>((k * Ci + ci) * Co + co)] += gv * xv;
                                        acc += gv * W2.data[static_cast<size_t>((k * Ci + ci) * Co + co)];
                                    }
                                    if (need_x) dx->data[static_cast<size_t>((n * L + li) * Ci + ci)] += acc;
                                }
                            }
                        }
                    if (b.valid() && t.requires_grad(b)) {
                        Tensor& db = t.grad_buf(b);
                        for (int64_t n = 0; n < N; ++n)
                            for (int64_t lo = 0; lo < Lo; ++lo)
                                for (int64_t co = 0; co < Co; ++co)
                                    db.data[static_cast<size_t>(co)] += g.data[static_cast<size_t>((n * Lo + lo) * Co + co)];
                    }
                });
}

Var Tape::concat_seq(Var a, Var b) {
    const Tensor &A = value(a), &B = value(b);
    check(A.rank() == 3 && B.rank() == 3 && A.shape[0] == B.shape[0] && A.shape[2] == B.shape[2],
          "concat_seq: shape mismatch");
    const int64_t N = A.shape[0], La = A.shape[1], Lb = B.shape[1], C = A.shape[2];
    Tensor out = Tensor::zeros({N, La + Lb, C});
    for (int64_t n = 0; n < N; ++n) {
        std::copy(A.data.begin() + n * La * C, A.data.begin() + (n + 1) * La * C,
                  out.data.begin() + n * (La + Lb) * C);
        std::copy(B.data.begin() + n * Lb * C, B.data.begin() + (n + 1) * Lb * C,
                  out.data.begin() + n * (La + Lb) * C + La * C);
    }
    return make(std::move(out), {a, b}, [a, b, N, La, Lb, C](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) {
            Tensor& da = t.grad_buf(a);
            for (int64_t n = 0; n < N; ++n)
                for (int64_t i = 0; i < La * C; ++i)
                    da.data[static_cast<size_t>(n * La * C + i)] += g.data[static_cast<size_t>(n * (La + Lb) * C + i)];
        }
        if (t.requires_grad(b)) {
            Tensor& db = t.grad_buf(b);
            for (int64_t n = 0; n < N; ++n)
                for (int64_t i = 0; i < Lb * C; ++i)
                    db.data[static_cast<size_t>(n * Lb * C + i)] += g.data[static_cast<size_t>(n * (La + Lb) * C + La * C + i)];
        }
    });
}

Var Tape::concat_lastdim(Var a, Var b) {
    const Tensor &A = value(a), &B = value(b);
    check(A.rank() == B.rank(), "concat_lastdim: rank mismatch");
    for (int i = 0; i + 1 < A.rank(); ++i)
        check(A.shape[static_cast<size_t>(i)] == B.shape[static_cast<size_t>(i)], "concat_lastdim: shape mismatch");
    const int64_t Ca = trailing_dim(A), Cb = trailing_dim(B), R = leading_rows(A);
    std::vector<int64_t> shape = A.shape;
    shape.back() = Ca + Cb;
    Tensor out = Tensor::zeros(shape);
    for (int64_t r = 0; r < R; ++r) {
        std::copy(A.data.begin() + r * Ca, A.data.begin() + (r + 1) * Ca, out.data.begin() + r * (Ca + Cb));
        std::copy(B.data.begin() + r * Cb, B.data.begin() + (r + 1) * Cb, out.data.begin() + r * (Ca + Cb) + Ca);
    }
    return make(std::move(out), {a, b}, [a, b, R, Ca, Cb](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) {
            Tensor& da = t.grad_buf(a);
            for (int64_t r = 0; r < R; ++r)
                for (int64_t c = 0; c < Ca; ++c) da.data[static_cast<size_t>(r * Ca + c)] += g.data[static_cast<size_t>(r * (Ca + Cb) + c)];
        }
        if (t.requires_grad(b)) {
            Tensor& db = t.grad_buf(b);
            for (int64_t r = 0; r < R; ++r)
                for (int64_t c = 0; c < Cb; ++c) db.data[static_cast<size_t>(r * Cb + c)] += g.data[static_cast<size_t>(r * (Ca + Cb) + Ca + c)];
        }
    });
}

Var Tape::reshape(Var a, std::vector<int64_t> new_shape) {
    const Tensor& A = value(a);
    check(shape_numel(new_shape) == A.numel(), "reshape: numel mismatch");
    Tensor out;
    out.shape = new_shape;
    out.data = A.data;
    return make(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
        Tensor& da = t.grad_buf(a);
        for (size_t i = 0; i < g.data.size(); ++i) da.data[i] += g.data[i];
    });
}

Var Tape::sum_all(Var a) {
    const Tensor& A = value(a);
    double s = 0.0;
    for (double v : A.data) s += v;
    Tensor out = Tensor::from({1}, {s});
    return make(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
        Tensor& da = t.grad_buf(a);
        for (double& v : da.data) v += g.data[0];
    });
}

Var Tape::mean_all(Var a) {
    const int64_t n = value(a).numel();
    check(n > 0, "mean_all: empty tensor");
    return scale(sum_all(a), 1.0 / static_cast<double>(n));
}

Var Tape::bce_with_logits_mean(Var logits, Var targets) {
    const Tensor &Z = value(logits), &Y = value(targets);
    check(Z.same_shape(Y), "bce_with_logits_mean: shape mismatch");
    const int64_t n = Z.numel();
    check(n > 0, "bce_with_logits_mean: empty input");
    double loss = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double z = Z.data[static_cast<size_t>(i)], y = Y.data[static_cast<size_t>(i)];
        loss += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::fabs(z)));
    }
    loss /= static_cast<double>(n);
    Tensor out = Tensor::from({1}, {loss});
    return make(std::move(out), {logits}, [logits, targets, n](Tape& t, const Tensor& g) {
        const Tensor &Z2 = t.value(logits), &Y2 = t.value(targets);
        Tensor& dz = t.grad_buf(logits);
        for (int64_t i = 0; i < n; ++i) {
            const double s = 1.0 / (1.0 + std::exp(-Z2.data[static_cast<size_t>(i)]));
            dz.data[static_cast<size_t>(i)] += g.data[0] * (s - Y2.data[static_cast<size_t>(i)]) / static_cast<double>(n);
        }
    });
}

}  // namespace csai
