#pragma once

// Reverse-mode automatic differentiation over row-major matrices.
//
// A Tape owns every intermediate of one forward pass; parameters enter as
// external leaves so their storage is shared across tapes. The engine is
// templated on the scalar type: training runs in float, gradient checks in
// double. All heavy loops go through the dispatched kernels.

#include <cassert>
#include <cmath>
#include <cstring>
#include <deque>
#include <functional>
#include <vector>

#include "emosllm/kernels/kernels.hpp"
#include "emosllm/rng.hpp"
#include "emosllm/util.hpp"

namespace emosllm {

template <typename T>
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<T> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(std::size_t(r) * c, T(0)) {}

    T* data() { return a.data(); }
    const T* data() const { return a.data(); }
    T* row(int r) { return a.data() + std::size_t(r) * cols; }
    const T* row(int r) const { return a.data() + std::size_t(r) * cols; }
    T& at(int r, int c) { return a[std::size_t(r) * cols + c]; }
    const T& at(int r, int c) const { return a[std::size_t(r) * cols + c]; }
    std::size_t size() const { return a.size(); }
    bool empty() const { return a.empty(); }

    void fill(T v) { std::fill(a.begin(), a.end(), v); }
    void zero() { fill(T(0)); }

    template <typename U>
    Mat<U> cast() const {
        Mat<U> out(rows, cols);
        for (std::size_t i = 0; i < a.size(); ++i) out.a[i] = U(a[i]);
        return out;
    }
};

template <typename T>
std::uint64_t mat_checksum(const Mat<T>& m) {
    std::uint64_t h = fnv1a64(&m.rows, sizeof(m.rows));
    h = fnv1a64(&m.cols, sizeof(m.cols), h);
    return fnv1a64(m.data(), m.size() * sizeof(T), h);
}

template <typename T>
class Tape {
public:
    using Ref = int;

    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    bool grad_enabled() const { return grad_enabled_; }

    const Mat<T>& val(Ref i) const {
        const Node& n = nodes_[std::size_t(i)];
        return n.ext ? *n.ext : n.value;
    }

    // Gradient of a node; empty until backward has flowed into it.
    const Mat<T>& grad(Ref i) const { return nodes_[std::size_t(i)].grad; }

    bool needs_grad(Ref i) const { return nodes_[std::size_t(i)].needs_grad; }
    int param_id(Ref i) const { return nodes_[std::size_t(i)].param_id; }
    std::size_t node_count() const { return nodes_.size(); }

    Ref leaf(const Mat<T>* external, int param_id, bool needs_grad) {
        Node n;
        n.ext = external;
        n.param_id = param_id;
        n.needs_grad = needs_grad && grad_enabled_;
        nodes_.push_back(std::move(n));
        return Ref(nodes_.size() - 1);
    }

    Ref constant(Mat<T> v) {
        Node n;
        n.value = std::move(v);
        n.needs_grad = false;
        nodes_.push_back(std::move(n));
        return Ref(nodes_.size() - 1);
    }

    Ref input(Mat<T> v) {
        Node n;
        n.value = std::move(v);
        n.needs_grad = grad_enabled_;
        nodes_.push_back(std::move(n));
        return Ref(nodes_.size() - 1);
    }

    // out = a * b, a: m x k, b: k x n
    Ref matmul_nn(Ref a, Ref b) {
        const Mat<T>& A = val(a);
        const Mat<T>& B = val(b);
        if (A.cols != B.rows) throw ConfigError("matmul_nn: dimension mismatch");
        Mat<T> out(A.rows, B.cols);
        kernels::gemm_nn(A.data(), B.data(), out.data(), A.rows, A.cols, B.cols, false);
        return make(std::move(out), {a, b}, [this, a, b](Node& self) {
            const Mat<T>& G = self.grad;
            const Mat<T>& A2 = val(a);
            const Mat<T>& B2 = val(b);
            if (needs_grad(a)) {
                Mat<T>& ga = grad_buf(a);
                kernels::gemm_nt(G.data(), B2.data(), ga.data(), G.rows, G.cols, B2.rows, true);
            }
            if (needs_grad(b)) {
                Mat<T>& gb = grad_buf(b);
                kernels::gemm_tn(A2.data(), G.data(), gb.data(), A2.cols, A2.rows, G.cols, true);
            }
        });
    }

    // out = a * b^T, a: m x k, b: n x k
    Ref matmul_nt(Ref a, Ref b) {
        const Mat<T>& A = val(a);
        const Mat<T>& B = val(b);
        if (A.cols != B.cols) throw ConfigError("matmul_nt: dimension mismatch");
        Mat<T> out(A.rows, B.rows);
        kernels::gemm_nt(A.data(), B.data(), out.data(), A.rows, A.cols, B.rows, false);
        return make(std::move(out), {a, b}, [this, a, b](Node& self) {
            const Mat<T>& G = self.grad;
            const Mat<T>& A2 = val(a);
            const Mat<T>& B2 = val(b);
            if (needs_grad(a)) {
                Mat<T>& ga = grad_buf(a);
                kernels::gemm_nn(G.data(), B2.data(), ga.data(), G.rows, G.cols, B2.cols, true);
            }
            if (needs_grad(b)) {
                Mat<T>& gb = grad_buf(b);
                kernels::gemm_tn(G.data(), A2.data(), gb.data(), G.cols, G.rows, A2.cols, true);
            }
        });
    }

    Ref add(Ref a, Ref b) {
        const Mat<T>& A = val(a);
        const Mat<T>& B = val(b);
        if (A.rows != B.rows || A.cols != B.cols) throw ConfigError("add: shape mismatch");
        Mat<T> out(A.rows, A.cols);
        kernels::add(out.data(), A.data(), B.data(), out.size());
        return make(std::move(out), {a, b}, [this, a, b](Node& self) {
            const Mat<T>& G = self.grad;
            if (needs_grad(a)) kernels::axpy(grad_buf(a).data(), T(1), G.data(), G.size());
            if (needs_grad(b)) kernels::axpy(grad_buf(b).data(), T(1), G.data(), G.size());
        });
    }

    Ref mul(Ref a, Ref b) {
        const Mat<T>& A = val(a);
        const Mat<T>& B = val(b);
        if (A.rows != B.rows || A.cols != B.cols) throw ConfigError("mul: shape mismatch");
        Mat<T> out(A.rows, A.cols);
        kernels::mul(out.data(), A.data(), B.data(), out.size());
        return make(std::move(out), {a, b}, [this, a, b](Node& self) {
            const Mat<T>& G = self.grad;
            if (needs_grad(a)) {
                const Mat<T>& B2 = val(b);
                Mat<T>& ga = grad_buf(a);
                for (std::size_t i = 0; i < G.size(); ++i) ga.a[i] += G.a[i] * B2.a[i];
            }
            if (needs_grad(b)) {
                const Mat<T>& A2 = val(a);
                Mat<T>& gb = grad_buf(b);
                for (std::size_t i = 0; i < G.size(); ++i) gb.a[i] += G.a[i] * A2.a[i];
            }
        });
    }

    Ref scale(Ref a, T c) {
        const Mat<T>& A = val(a);
        Mat<T> out(A.rows, A.cols);
        kernels::scale(out.data(), c, A.data(), out.size());
        return make(std::move(out), {a}, [this, a, c](Node& self) {
            if (needs_grad(a))
                kernels::axpy(grad_buf(a).data(), c, self.grad.data(), self.grad.size());
        });
    }

    Ref concat_rows(const std::vector<Ref>& parts) {
        int rows = 0;
        const int cols = val(parts.at(0)).cols;
        for (Ref p : parts) {
            if (val(p).cols != cols) throw ConfigError("concat_rows: column mismatch");
            rows += val(p).rows;
        }
        Mat<T> out(rows, cols);
        int r = 0;
        for (Ref p : parts) {
            const Mat<T>& P = val(p);
            std::memcpy(out.row(r), P.data(), P.size() * sizeof(T));
            r += P.rows;
        }
        return make(std::move(out), parts, [this, parts](Node& self) {
            int r0 = 0;
            for (Ref p : parts) {
                const int pr = val(p).rows;
                if (needs_grad(p)) {
                    Mat<T>& gp = grad_buf(p);
                    kernels::axpy(gp.data(), T(1), self.grad.row(r0), gp.size());
                }
                r0 += pr;
            }
        });
    }

    Ref slice_rows(Ref a, int r0, int r1) {
        const Mat<T>& A = val(a);
        if (r0 < 0 || r1 > A.rows || r0 > r1) throw ConfigError("slice_rows: bad range");
        Mat<T> out(r1 - r0, A.cols);
        std::memcpy(out.data(), A.row(r0), out.size() * sizeof(T));
        return make(std::move(out), {a}, [this, a, r0](Node& self) {
            if (!needs_grad(a)) return;
            Mat<T>& ga = grad_buf(a);
            kernels::axpy(ga.row(r0), T(1), self.grad.data(), self.grad.size());
        });
    }

    // Gathers rows of an embedding table.
    Ref embedding(Ref table, std::vector<int> ids) {
        const Mat<T>& E = val(table);
        for (int id : ids)
            if (id < 0 || id >= E.rows) throw InvalidInputError("embedding: id out of vocabulary");
        Mat<T> out(int(ids.size()), E.cols);
        for (std::size_t r = 0; r < ids.size(); ++r)
            std::memcpy(out.row(int(r)), E.row(ids[r]), std::size_t(E.cols) * sizeof(T));
        return make(std::move(out), {table}, [this, table, ids = std::move(ids)](Node& self) {
            if (!needs_grad(table)) return;
            Mat<T>& ge = grad_buf(table);
            for (std::size_t r = 0; r < ids.size(); ++r)
                kernels::axpy(ge.row(ids[r]), T(1), self.grad.row(int(r)), std::size_t(ge.cols));
        });
    }

    // Per-row RMS normalization with a learned per-feature gain (1 x d).
    Ref rmsnorm(Ref x, Ref gain, T eps = T(1e-6)) {
        const Mat<T>& X = val(x);
        const Mat<T>& G = val(gain);
        if (G.rows != 1 || G.cols != X.cols) throw ConfigError("rmsnorm: gain shape mismatch");
        Mat<T> out(X.rows, X.cols);
        std::vector<T> inv(std::size_t(X.rows));
        const int d = X.cols;
        for (int r = 0; r < X.rows; ++r) {
            const T* xr = X.row(r);
            T ms = kernels::dot(xr, xr, std::size_t(d)) / T(d);
            const T iv = T(1) / std::sqrt(ms + eps);
            inv[std::size_t(r)] = iv;
            T* o = out.row(r);
            for (int j = 0; j < d; ++j) o[j] = xr[j] * iv * G.at(0, j);
        }
        return make(std::move(out), {x, gain},
                    [this, x, gain, inv = std::move(inv), eps](Node& self) {
            const Mat<T>& X2 = val(x);
            const Mat<T>& G2 = val(gain);
            const Mat<T>& dY = self.grad;
            const int d = X2.cols;
            const bool gx = needs_grad(x);
            const bool gg = needs_grad(gain);
            Mat<T>* gxm = gx ? &grad_buf(x) : nullptr;
            Mat<T>* ggm = gg ? &grad_buf(gain) : nullptr;
            for (int r = 0; r < X2.rows; ++r) {
                const T iv = inv[std::size_t(r)];
                const T* xr = X2.row(r);
                const T* dy = dY.row(r);
                if (gg) {
                    T* go = ggm->row(0);
                    for (int j = 0; j < d; ++j) go[j] += dy[j] * xr[j] * iv;
                }
                if (gx) {
                    // y_j = x_j * iv * g_j with iv = (mean x^2 + eps)^-1/2
                    T dot_dyx = T(0);
                    for (int j = 0; j < d; ++j) dot_dyx += dy[j] * G2.at(0, j) * xr[j];
                    const T c = dot_dyx * iv * iv * iv / T(d);
                    T* go = gxm->row(r);
                    for (int j = 0; j < d; ++j) go[j] += dy[j] * G2.at(0, j) * iv - c * xr[j];
                }
            }
        });
    }

    Ref silu(Ref x) {
        const Mat<T>& X = val(x);
        Mat<T> out(X.rows, X.cols);
        std::vector<T> sig(X.size());
        for (std::size_t i = 0; i < X.size(); ++i) {
            const T s = T(1) / (T(1) + std::exp(-X.a[i]));
            sig[i] = s;
            out.a[i] = X.a[i] * s;
        }
        return make(std::move(out), {x}, [this, x, sig = std::move(sig)](Node& self) {
            if (!needs_grad(x)) return;
            const Mat<T>& X2 = val(x);
            Mat<T>& gx = grad_buf(x);
            for (std::size_t i = 0; i < X2.size(); ++i) {
                const T s = sig[i];
                gx.a[i] += self.grad.a[i] * s * (T(1) + X2.a[i] * (T(1) - s));
            }
        });
    }

    // Inverted dropout; identity when rate <= 0.
    Ref dropout(Ref x, double rate, Rng& rng) {
        if (rate <= 0.0) return x;
        const Mat<T>& X = val(x);
        Mat<T> out(X.rows, X.cols);
        std::vector<T> mask(X.size());
        const T keep_scale = T(1.0 / (1.0 - rate));
        for (std::size_t i = 0; i < X.size(); ++i) {
            mask[i] = rng.uniform() < rate ? T(0) : keep_scale;
            out.a[i] = X.a[i] * mask[i];
        }
        return make(std::move(out), {x}, [this, x, mask = std::move(mask)](Node& self) {
            if (!needs_grad(x)) return;
            Mat<T>& gx = grad_buf(x);
            for (std::size_t i = 0; i < mask.size(); ++i) gx.a[i] += self.grad.a[i] * mask[i];
        });
    }

    // Multi-head scaled dot-product attention over already-projected q/k/v
    // (n x d each). With causal=true, position i attends to keys 0..i.
    Ref attention(Ref q, Ref k, Ref v, int heads, bool causal) {
        const Mat<T>& Q = val(q);
        const Mat<T>& K = val(k);
        const Mat<T>& V = val(v);
        const int n = Q.rows;
        const int d = Q.cols;
        if (d % heads != 0) throw ConfigError("attention: dim not divisible by heads");
        if (K.rows != n || V.rows != n || K.cols != d || V.cols != d)
            throw ConfigError("attention: q/k/v shape mismatch");
        const int dh = d / heads;
        const T inv_sqrt = T(1) / std::sqrt(T(dh));

        Mat<T> out(n, d);
        std::vector<Mat<T>> probs;
        const bool save = grad_enabled_ && (needs_grad(q) || needs_grad(k) || needs_grad(v));
        if (save) probs.reserve(std::size_t(heads));

        Mat<T> qh(n, dh), kh(n, dh), vh(n, dh), oh(n, dh);
        for (int h = 0; h < heads; ++h) {
            copy_head(Q, h, dh, qh);
            copy_head(K, h, dh, kh);
            copy_head(V, h, dh, vh);
            Mat<T> p(n, n);
            for (int i = 0; i < n; ++i) {
                const int lim = causal ? i + 1 : n;
                T* pr = p.row(i);
                kernels::gemm_nt(qh.row(i), kh.data(), pr, 1, dh, lim, false);
                for (int j = 0; j < lim; ++j) pr[j] *= inv_sqrt;
                kernels::softmax_row(pr, std::size_t(lim));
                for (int j = lim; j < n; ++j) pr[j] = T(0);
            }
            kernels::gemm_nn(p.data(), vh.data(), oh.data(), n, n, dh, false);
            paste_head(oh, h, dh, out);
            if (save) probs.push_back(std::move(p));
        }

        return make(std::move(out), {q, k, v},
                    [this, q, k, v, heads, dh, inv_sqrt, causal,
                     probs = std::move(probs)](Node& self) {
            const Mat<T>& Q2 = val(q);
            const Mat<T>& K2 = val(k);
            const Mat<T>& V2 = val(v);
            const int n = Q2.rows;
            const bool gq = needs_grad(q), gk = needs_grad(k), gv = needs_grad(v);
            Mat<T>* gqm = gq ? &grad_buf(q) : nullptr;
            Mat<T>* gkm = gk ? &grad_buf(k) : nullptr;
            Mat<T>* gvm = gv ? &grad_buf(v) : nullptr;

            Mat<T> qh(n, dh), kh(n, dh), vh(n, dh), goh(n, dh);
            Mat<T> dp(n, n), ds(n, n), tmp(n, dh);
            for (int h = 0; h < heads; ++h) {
                const Mat<T>& p = probs[std::size_t(h)];
                copy_head(self.grad, h, dh, goh);
                copy_head(V2, h, dh, vh);
                // dP = dO * V^T
                kernels::gemm_nt(goh.data(), vh.data(), dp.data(), n, dh, n, false);
                // dS = P o (dP - rowsum(dP o P))
                for (int i = 0; i < n; ++i) {
                    const int lim = causal ? i + 1 : n;
                    const T* pr = p.row(i);
                    const T* dpr = dp.row(i);
                    T acc = T(0);
                    for (int j = 0; j < lim; ++j) acc += dpr[j] * pr[j];
                    T* dsr = ds.row(i);
                    for (int j = 0; j < lim; ++j) dsr[j] = pr[j] * (dpr[j] - acc);
                    for (int j = lim; j < n; ++j) dsr[j] = T(0);
                }
                if (gv) {
                    // dV = P^T * dO
                    kernels::gemm_tn(p.data(), goh.data(), tmp.data(), n, n, dh, false);
                    add_head(tmp, h, dh, *gvm);
                }
                if (gq) {
                    copy_head(K2, h, dh, kh);
                    kernels::gemm_nn(ds.data(), kh.data(), tmp.data(), n, n, dh, false);
                    for (auto& x : tmp.a) x *= inv_sqrt;
                    add_head(tmp, h, dh, *gqm);
                }
                if (gk) {
                    copy_head(Q2, h, dh, qh);
                    kernels::gemm_tn(ds.data(), qh.data(), tmp.data(), n, n, dh, false);
                    for (auto& x : tmp.a) x *= inv_sqrt;
                    add_head(tmp, h, dh, *gkm);
                }
            }
        });
    }

    // Weighted token cross-entropy over logits rows. weights are applied per
    // row (already normalized by the caller); returns a 1x1 loss node.
    // Optionally reports the raw (unweighted) per-row negative log-likelihood.
    Ref cross_entropy(Ref logits, std::vector<int> targets, std::vector<T> weights,
                      std::vector<T>* per_row_nll = nullptr) {
        const Mat<T>& L = val(logits);
        const int n = L.rows;
        const int vocab = L.cols;
        if (int(targets.size()) != n || int(weights.size()) != n)
            throw ConfigError("cross_entropy: row count mismatch");
        Mat<T> probs(n, vocab);
        T loss = T(0);
        for (int r = 0; r < n; ++r) {
            const int t = targets[std::size_t(r)];
            if (t < 0 || t >= vocab) throw InvalidInputError("cross_entropy: target out of range");
            const T* x = L.row(r);
            T mx = x[0];
            for (int j = 1; j < vocab; ++j) mx = std::max(mx, x[j]);
            T total = T(0);
            T* pr = probs.row(r);
            for (int j = 0; j < vocab; ++j) {
                pr[j] = std::exp(x[j] - mx);
                total += pr[j];
            }
            const T inv = T(1) / total;
            for (int j = 0; j < vocab; ++j) pr[j] *= inv;
            const T nll = std::log(total) + mx - x[t];
            if (per_row_nll) per_row_nll->push_back(nll);
            loss += weights[std::size_t(r)] * nll;
        }
        Mat<T> out(1, 1);
        out.at(0, 0) = loss;
        return make(std::move(out), {logits},
                    [this, logits, targets = std::move(targets), weights = std::move(weights),
                     probs = std::move(probs)](Node& self) {
            if (!needs_grad(logits)) return;
            const T g = self.grad.at(0, 0);
            Mat<T>& gl = grad_buf(logits);
            const int vocab = gl.cols;
            for (int r = 0; r < gl.rows; ++r) {
                const T w = weights[std::size_t(r)] * g;
                if (w == T(0)) continue;
                const T* pr = probs.row(r);
                T* go = gl.row(r);
                for (int j = 0; j < vocab; ++j) go[j] += w * pr[j];
                go[targets[std::size_t(r)]] -= w;
            }
        });
    }

    // Mean squared error between selected rows of pred and the matching rows
    // of a fixed target, averaged over all selected elements.
    Ref mse_rows(Ref pred, Mat<T> target, std::vector<int> rows) {
        const Mat<T>& P = val(pred);
        if (rows.empty()) {
            Mat<T> z(1, 1);
            return constant(std::move(z));
        }
        const T inv = T(1) / T(rows.size() * std::size_t(P.cols));
        T loss = T(0);
        for (int r : rows) {
            const T* pr = P.row(r);
            const T* tr = target.row(r);
            for (int j = 0; j < P.cols; ++j) {
                const T d = pr[j] - tr[j];
                loss += d * d;
            }
        }
        Mat<T> out(1, 1);
        out.at(0, 0) = loss * inv;
        return make(std::move(out), {pred},
                    [this, pred, target = std::move(target), rows = std::move(rows), inv](Node& self) {
            if (!needs_grad(pred)) return;
            const T g = self.grad.at(0, 0) * T(2) * inv;
            const Mat<T>& P2 = val(pred);
            Mat<T>& gp = grad_buf(pred);
            for (int r : rows) {
                const T* pr = P2.row(r);
                const T* tr = target.row(r);
                T* go = gp.row(r);
                for (int j = 0; j < P2.cols; ++j) go[j] += g * (pr[j] - tr[j]);
            }
        });
    }

    // out[t, :] = concat(x[t*stride], ..., x[t*stride + k - 1]); rows past the
    // end of x are zero padded. Used to express strided 1-D convolution as a
    // matrix product.
    Ref unfold_rows(Ref x, int k, int stride) {
        const Mat<T>& X = val(x);
        if (k < 1 || stride < 1) throw ConfigError("unfold_rows: bad window");
        const int nt = (X.rows + stride - 1) / stride;
        Mat<T> out(nt, k * X.cols);
        for (int t = 0; t < nt; ++t) {
            for (int w = 0; w < k; ++w) {
                const int src = t * stride + w;
                if (src < X.rows)
                    std::memcpy(out.row(t) + std::size_t(w) * X.cols, X.row(src),
                                std::size_t(X.cols) * sizeof(T));
            }
        }
        return make(std::move(out), {x}, [this, x, k, stride](Node& self) {
            if (!needs_grad(x)) return;
            Mat<T>& gx = grad_buf(x);
            const int cols = gx.cols;
            for (int t = 0; t < self.grad.rows; ++t) {
                for (int w = 0; w < k; ++w) {
                    const int src = t * stride + w;
                    if (src < gx.rows)
                        kernels::axpy(gx.row(src), T(1),
                                      self.grad.row(t) + std::size_t(w) * cols, std::size_t(cols));
                }
            }
        });
    }

    void backward(Ref loss) {
        Node& last = nodes_[std::size_t(loss)];
        const Mat<T>& lv = last.ext ? *last.ext : last.value;
        if (lv.rows != 1 || lv.cols != 1) throw ConfigError("backward: loss must be 1x1");
        grad_buf(loss).at(0, 0) = T(1);
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            Node& n = nodes_[i];
            if (n.back && !n.grad.empty()) n.back(n);
        }
    }

    // Applies fn(param_id, grad) for every external leaf that received
    // gradient.
    template <typename Fn>
    void harvest_param_grads(Fn&& fn) const {
        for (const Node& n : nodes_)
            if (n.param_id >= 0 && !n.grad.empty()) fn(n.param_id, n.grad);
    }

private:
    struct Node {
        Mat<T> value;
        const Mat<T>* ext = nullptr;
        Mat<T> grad;
        std::function<void(Node&)> back;
        bool needs_grad = false;
        int param_id = -1;
    };

    Mat<T>& grad_buf(Ref i) {
        Node& n = nodes_[std::size_t(i)];
        if (n.grad.empty()) {
            const Mat<T>& v = n.ext ? *n.ext : n.value;
            n.grad = Mat<T>(v.rows, v.cols);
        }
        return n.grad;
    }

    Ref make(Mat<T> value, const std::vector<Ref>& parents, std::function<void(Node&)> back) {
        Node n;
        n.value = std::move(value);
        bool ng = false;
        for (Ref p : parents) ng = ng || nodes_[std::size_t(p)].needs_grad;
        n.needs_grad = ng && grad_enabled_;
        if (n.needs_grad) n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return Ref(nodes_.size() - 1);
    }

    static void copy_head(const Mat<T>& src, int h, int dh, Mat<T>& dst) {
        for (int r = 0; r < src.rows; ++r)
            std::memcpy(dst.row(r), src.row(r) + std::size_t(h) * dh, std::size_t(dh) * sizeof(T));
    }

    static void paste_head(const Mat<T>& src, int h, int dh, Mat<T>& dst) {
        for (int r = 0; r < src.rows; ++r)
            std::memcpy(dst.row(r) + std::size_t(h) * dh, src.row(r), std::size_t(dh) * sizeof(T));
    }

    static void add_head(const Mat<T>& src, int h, int dh, Mat<T>& dst) {
        for (int r = 0; r < src.rows; ++r)
            kernels::axpy(dst.row(r) + std::size_t(h) * dh, T(1), src.row(r), std::size_t(dh));
    }

    std::deque<Node> nodes_;
    bool grad_enabled_;
};

// Named, persistent parameter storage shared by all modules of one model.
template <typename T>
class ParamStore {
public:
    struct Entry {
        std::string name;
        Mat<T> value;
        Mat<T> grad;   // accumulated by the trainer between optimizer steps
        Mat<T> m, v;   // optimizer moments, allocated on first use
        bool trainable = false;
    };

    int add(std::string name, Mat<T> init) {
        Entry e;
        e.name = std::move(name);
        e.grad = Mat<T>(init.rows, init.cols);
        e.value = std::move(init);
        entries_.push_back(std::move(e));
        return int(entries_.size() - 1);
    }

    Entry& operator[](int id) { return entries_[std::size_t(id)]; }
    const Entry& operator[](int id) const { return entries_[std::size_t(id)]; }
    int size() const { return int(entries_.size()); }

    void zero_grads() {
        for (auto& e : entries_) e.grad.zero();
    }

    std::uint64_t checksum(int id) const { return mat_checksum(entries_[std::size_t(id)].value); }

    std::uint64_t checksum_group(const std::vector<int>& ids) const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (int id : ids) {
            const std::uint64_t c = checksum(id);
            h = fnv1a64(&c, sizeof(c), h);
        }
        return h;
    }

private:
    std::vector<Entry> entries_;
};

// Convenience initializers.
template <typename T>
Mat<T> gaussian_mat(int rows, int cols, double stddev, Rng& rng) {
    Mat<T> m(rows, cols);
    for (auto& x : m.a) x = T(rng.gaussian(0.0, stddev));
    return m;
}

template <typename T>
Mat<T> ones_mat(int rows, int cols) {
    Mat<T> m(rows, cols);
    m.fill(T(1));
    return m;
}

}  // namespace emosllm
