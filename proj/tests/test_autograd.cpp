#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <map>

#include "emosllm/autograd.hpp"

using namespace emosllm;

namespace {

using Ref = Tape<double>::Ref;
using LeafFn = std::function<Ref(Tape<double>&, int)>;
using LossFn = std::function<Ref(Tape<double>&, const LeafFn&)>;

// Central-difference comparison of analytic gradients for every element of
// every listed parameter.
void check_grads(ParamStore<double>& store, const std::vector<int>& ids, const LossFn& loss_fn,
                 double h = 1e-5, double tol = 1e-6) {
    Tape<double> tape;
    std::map<int, Ref> made;
    const LeafFn caching_leaf = [&](Tape<double>& t, int pid) {
        const auto it = made.find(pid);
        if (it != made.end()) return it->second;
        const Ref r = t.leaf(&store[pid].value, pid, true);
        made.emplace(pid, r);
        return r;
    };
    const Ref loss = loss_fn(tape, caching_leaf);
    tape.backward(loss);
    std::map<int, Mat<double>> analytic;
    tape.harvest_param_grads([&](int pid, const Mat<double>& g) {
        auto [it, fresh] = analytic.try_emplace(pid, Mat<double>(g.rows, g.cols));
        for (std::size_t i = 0; i < g.size(); ++i) it->second.a[i] += g.a[i];
    });

    const auto eval = [&]() {
        Tape<double> t;
        std::map<int, Ref> cache;
        const LeafFn lf = [&](Tape<double>& tp, int pid) {
            const auto it = cache.find(pid);
            if (it != cache.end()) return it->second;
            const Ref r = tp.leaf(&store[pid].value, pid, true);
            cache.emplace(pid, r);
            return r;
        };
        return t.val(loss_fn(t, lf)).at(0, 0);
    };

    for (int pid : ids) {
        auto& theta = store[pid].value;
        REQUIRE(analytic.count(pid) == 1);
        const Mat<double>& g = analytic.at(pid);
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double saved = theta.a[i];
            theta.a[i] = saved + h;
            const double lp = eval();
            theta.a[i] = saved - h;
            const double lm = eval();
            theta.a[i] = saved;
            const double fd = (lp - lm) / (2.0 * h);
            const double denom = std::max({std::abs(fd), std::abs(g.a[i]), 1e-6});
            CHECK(std::abs(fd - g.a[i]) / denom < tol);
        }
    }
}

int add_param(ParamStore<double>& store, const std::string& name, int r, int c, Rng& rng,
              double stddev = 0.5) {
    const int id = store.add(name, gaussian_mat<double>(r, c, stddev, rng));
    store[id].trainable = true;
    return id;
}

// Reduces any matrix node to a well-conditioned scalar.
Ref to_scalar(Tape<double>& tape, Ref x) {
    const Mat<double>& v = tape.val(x);
    Mat<double> w(v.cols, 1);
    Rng rng(99);
    for (auto& e : w.a) e = rng.gaussian();
    auto proj = tape.matmul_nn(x, tape.constant(std::move(w)));
    auto sq = tape.mul(proj, proj);
    Mat<double> ones(1, v.rows);
    ones.fill(1.0);
    return tape.matmul_nn(tape.constant(std::move(ones)), sq);
}

}  // namespace

TEST_CASE("gradients: matmul variants") {
    Rng rng(1);
    ParamStore<double> store;
    const int a = add_param(store, "a", 3, 4, rng);
    const int b = add_param(store, "b", 4, 5, rng);
    check_grads(store, {a, b}, [&](Tape<double>& t, const LeafFn& L) {
        return to_scalar(t, t.matmul_nn(L(t, a), L(t, b)));
    });

    ParamStore<double> store2;
    const int c = add_param(store2, "c", 3, 4, rng);
    const int d = add_param(store2, "d", 6, 4, rng);
    check_grads(store2, {c, d}, [&](Tape<double>& t, const LeafFn& L) {
        return to_scalar(t, t.matmul_nt(L(t, c), L(t, d)));
    });
}

TEST_CASE("gradients: add, mul, scale, concat, slice") {
    Rng rng(2);
    ParamStore<double> store;
    const int a = add_param(store, "a", 4, 3, rng);
    const int b = add_param(store, "b", 4, 3, rng);
    const int c = add_param(store, "c", 2, 3, rng);
    check_grads(store, {a, b, c}, [&](Tape<double>& t, const LeafFn& L) {
        auto sum = t.add(L(t, a), L(t, b));
        auto prod = t.mul(sum, L(t, b));
        auto cat = t.concat_rows({prod, L(t, c)});
        auto sl = t.slice_rows(cat, 1, 5);
        return to_scalar(t, t.scale(sl, 1.7));
    });
}

TEST_CASE("gradients: embedding gather") {
    Rng rng(3);
    ParamStore<double> store;
    const int table = add_param(store, "emb", 7, 5, rng);
    check_grads(store, {table}, [&](Tape<double>& t, const LeafFn& L) {
        return to_scalar(t, t.embedding(L(t, table), {0, 3, 3, 6, 1}));
    });
}

TEST_CASE("embedding rejects out-of-vocab ids") {
    ParamStore<double> store;
    Rng rng(44);
    const int table = add_param(store, "emb", 4, 2, rng);
    Tape<double> tape;
    auto leaf = tape.leaf(&store[table].value, table, true);
    CHECK_THROWS_AS(tape.embedding(leaf, {0, 4}), InvalidInputError);
    CHECK_THROWS_AS(tape.embedding(leaf, {-1}), InvalidInputError);
}

TEST_CASE("gradients: rmsnorm and silu") {
    Rng rng(4);
    ParamStore<double> store;
    const int x = add_param(store, "x", 5, 8, rng);
    const int g = add_param(store, "g", 1, 8, rng);
    check_grads(store, {x, g}, [&](Tape<double>& t, const LeafFn& L) {
        return to_scalar(t, t.silu(t.rmsnorm(L(t, x), L(t, g))));
    });
}

TEST_CASE("gradients: attention, causal and bidirectional") {
    Rng rng(5);
    for (const bool causal : {true, false}) {
        ParamStore<double> store;
        const int q = add_param(store, "q", 6, 8, rng);
        const int k = add_param(store, "k", 6, 8, rng);
        const int v = add_param(store, "v", 6, 8, rng);
        check_grads(store, {q, k, v}, [&](Tape<double>& t, const LeafFn& L) {
            return to_scalar(t, t.attention(L(t, q), L(t, k), L(t, v), 2, causal));
        });
    }
}

TEST_CASE("gradients: weighted cross entropy") {
    Rng rng(6);
    ParamStore<double> store;
    const int logits = add_param(store, "logits", 4, 9, rng, 1.0);
    check_grads(store, {logits}, [&](Tape<double>& t, const LeafFn& L) {
        return t.cross_entropy(L(t, logits), {2, 0, 8, 5}, {0.5, 0.0, 0.25, 0.25});
    });
}

TEST_CASE("gradients: mse over selected rows") {
    Rng rng(7);
    ParamStore<double> store;
    const int pred = add_param(store, "pred", 5, 4, rng);
    Mat<double> target = gaussian_mat<double>(5, 4, 1.0, rng);
    check_grads(store, {pred}, [&](Tape<double>& t, const LeafFn& L) {
        return t.mse_rows(L(t, pred), target, {0, 2, 4});
    });
}

TEST_CASE("gradients: unfold for strided convolution") {
    Rng rng(8);
    ParamStore<double> store;
    const int x = add_param(store, "x", 17, 3, rng);
    const int w = add_param(store, "w", 12, 4, rng);  // kernel 4 x 3 channels
    check_grads(store, {x, w}, [&](Tape<double>& t, const LeafFn& L) {
        return to_scalar(t, t.matmul_nn(t.unfold_rows(L(t, x), 4, 2), L(t, w)));
    });
}

TEST_CASE("gradients: dropout with a fixed mask") {
    Rng rng(9);
    ParamStore<double> store;
    const int x = add_param(store, "x", 6, 6, rng);
    check_grads(store, {x}, [&](Tape<double>& t, const LeafFn& L) {
        Rng mask_rng(1234);  // same mask at every evaluation
        return to_scalar(t, t.dropout(L(t, x), 0.3, mask_rng));
    });
}

TEST_CASE("gradients: composite transformer-style block") {
    Rng rng(10);
    ParamStore<double> store;
    const int x = add_param(store, "x", 5, 8, rng, 0.3);
    const int n1 = add_param(store, "n1", 1, 8, rng, 0.1);
    const int wq = add_param(store, "wq", 8, 8, rng, 0.35);
    const int wk = add_param(store, "wk", 8, 8, rng, 0.35);
    const int wv = add_param(store, "wv", 8, 8, rng, 0.35);
    const int wo = add_param(store, "wo", 8, 8, rng, 0.35);
    const int wg = add_param(store, "wg", 8, 16, rng, 0.35);
    const int wu = add_param(store, "wu", 8, 16, rng, 0.35);
    const int wd = add_param(store, "wd", 16, 8, rng, 0.25);
    check_grads(store, {x, n1, wq, wk, wv, wo, wg, wu, wd},
                [&](Tape<double>& t, const LeafFn& L) {
        auto h = L(t, x);
        Mat<double> gain(1, 8);
        gain.fill(1.0);
        auto norm = t.rmsnorm(h, t.add(L(t, n1), t.constant(gain)));
        auto att = t.attention(t.matmul_nn(norm, L(t, wq)), t.matmul_nn(norm, L(t, wk)),
                               t.matmul_nn(norm, L(t, wv)), 2, true);
        h = t.add(h, t.matmul_nn(att, L(t, wo)));
        auto gated = t.mul(t.silu(t.matmul_nn(h, L(t, wg))), t.matmul_nn(h, L(t, wu)));
        h = t.add(h, t.matmul_nn(gated, L(t, wd)));
        return to_scalar(t, h);
    });
}

TEST_CASE("backward accumulates when a parameter is used twice") {
    Rng rng(11);
    ParamStore<double> store;
    const int a = add_param(store, "a", 3, 3, rng);
    check_grads(store, {a}, [&](Tape<double>& t, const LeafFn& L) {
        auto x = L(t, a);
        return to_scalar(t, t.matmul_nn(x, x));
    });
}

TEST_CASE("no-grad tape computes values without backward machinery") {
    Rng rng(12);
    ParamStore<double> store;
    const int a = add_param(store, "a", 3, 3, rng);
    Tape<double> tape(/*grad_enabled=*/false);
    auto leaf = tape.leaf(&store[a].value, a, true);
    auto out = tape.matmul_nn(leaf, leaf);
    CHECK(tape.val(out).rows == 3);
    CHECK_FALSE(tape.needs_grad(out));
}
