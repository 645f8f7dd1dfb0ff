// Differentiation tests for the tape autodiff core.  Every op gets a
// central-finite-difference gradient check in double precision plus a
// forward-value check against a test-local reference where the math is
// nontrivial (matmul, conv, attention, normalization).

#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "graph.hpp"
#include "optim.hpp"
#include "rng.hpp"

using dg::Graph;
using dg::ParamStore;
using dg::Parameter;
using dg::RngStream;
using dg::Tensor;

namespace {

Tensor<double> random_tensor(std::vector<int> shape, RngStream& rng, double scale = 1.0) {
    Tensor<double> t(std::move(shape));
    for (double& v : t.data) v = rng.normal() * scale;
    return t;
}

// Builds the graph twice: once with gradients for the analytic result and
// once per finite-difference probe.  `build` must be a pure function of
// the leaf values.
using BuildFn =
    std::function<int(Graph<double>&, const std::vector<int>&)>;

void check_gradients(const std::vector<Tensor<double>>& inputs, const BuildFn& build,
                     double tol = 1e-4) {
    Graph<double> g(true);
    std::vector<int> ids;
    ids.reserve(inputs.size());
    for (const auto& t : inputs) ids.push_back(g.input(t));
    const int loss = build(g, ids);
    REQUIRE(g.val(loss).numel() == 1);
    g.backward(loss);
    std::vector<Tensor<double>> analytic;
    analytic.reserve(ids.size());
    for (int id : ids) analytic.push_back(g.grad_of(id));

    const double h = 1e-5;
    auto eval = [&](size_t ti, size_t k, double delta) {
        std::vector<Tensor<double>> shifted = inputs;
        shifted[ti].data[k] += delta;
        Graph<double> g2(false);
        std::vector<int> ids2;
        ids2.reserve(shifted.size());
        for (auto& t : shifted) ids2.push_back(g2.input(std::move(t)));
        return g2.val(build(g2, ids2)).data[0];
    };
    for (size_t ti = 0; ti < inputs.size(); ++ti) {
        for (size_t k = 0; k < inputs[ti].numel(); ++k) {
            const double fd = (eval(ti, k, h) - eval(ti, k, -h)) / (2 * h);
            const double an = analytic[ti].data[k];
            const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-6});
            INFO("input ", ti, " element ", k, " fd=", fd, " analytic=", an);
            CHECK(std::fabs(fd - an) / denom < tol);
        }
    }
}

// Scalarizes an op output against a fixed random target so every output
// element influences the loss with a distinct weight.
int mse_vs(Graph<double>& g, int out, const Tensor<double>& target) {
    return g.mse_loss(out, g.input(target));
}

}  // namespace

TEST_CASE("elementwise ops: values and gradients") {
    RngStream rng(101);
    const auto x = random_tensor({3, 4}, rng);
    const auto y = random_tensor({3, 4}, rng);
    const auto target = random_tensor({3, 4}, rng);

    SUBCASE("add") {
        Graph<double> g(false);
        const auto& v = g.val(g.add(g.input(x), g.input(y)));
        for (size_t i = 0; i < v.numel(); ++i)
            CHECK(v.data[i] == doctest::Approx(x.data[i] + y.data[i]));
        check_gradients({x, y}, [&](Graph<double>& gg, const std::vector<int>& ids) {
            return mse_vs(gg, gg.add(ids[0], ids[1]), target);
        });
    }
    SUBCASE("scale") {
        check_gradients({x}, [&](Graph<double>& gg, const std::vector<int>& ids) {
            return mse_vs(gg, gg.scale(ids[0], -1.7), target);
        });
    }
    SUBCASE("silu value") {
        Graph<double> g(false);
        const auto& v = g.val(g.silu(g.input(x)));
        for (size_t i = 0; i < v.numel(); ++i) {
            const double s = 1.0 / (1.0 + std::exp(-x.data[i]));
            CHECK(v.data[i] == doctest::Approx(x.data[i] * s));
        }
    }
    SUBCASE("silu gradient") {
        check_gradients({x}, [&](Graph<double>& gg, const std::vector<int>& ids) {
            return mse_vs(gg, gg.silu(ids[0]), target);
        });
    }
    SUBCASE("reshape") {
        check_gradients({x}, [&](Graph<double>& gg, const std::vector<int>& ids) {
            Tensor<double> t2 = target;
            t2.shape = {12};
            return mse_vs(gg, gg.reshape(ids[0], {12}), t2);
        });
    }
    SUBCASE("mse against itself is zero") {
        Graph<double> g(false);
        CHECK(g.val(g.mse_loss(g.input(x), g.input(x))).data[0] == 0.0);
    }
    SUBCASE("mse value") {
        Graph<double> g(false);
        double acc = 0;
        for (size_t i = 0; i < x.numel(); ++i) {
            const double d = x.data[i] - y.data[i];
            acc += d * d;
        }
        CHECK(g.val(g.mse_loss(g.input(x), g.input(y))).data[0] ==
              doctest::Approx(acc / double(x.numel())));
    }
    SUBCASE("add shape mismatch") {
        Graph<double> g(false);
        const int a = g.input(random_tensor({2, 3}, rng));
        const int b = g.input(random_tensor({3, 2}, rng));
        CHECK_THROWS_AS((void)g.add(a, b), dg::Error);
    }
}

TEST_CASE("linear matches hand matmul and differentiates") {
    RngStream rng(102);
    const auto x = random_tensor({4, 5}, rng);
    const auto w = random_tensor({5, 3}, rng);
    const auto b = random_tensor({3}, rng);
    const auto target = random_tensor({4, 3}, rng);

    Graph<double> g(false);
    const auto& v = g.val(g.linear(g.input(x), g.input(w), g.input(b)));
    for (int i = 0; i < 4; ++i)
        for (int m = 0; m < 3; ++m) {
            double acc = b.data[size_t(m)];
            for (int k = 0; k < 5; ++k)
                acc += x.data[size_t(i) * 5 + k] * w.data[size_t(k) * 3 + m];
            CHECK(v.data[size_t(i) * 3 + m] == doctest::Approx(acc).epsilon(1e-12));
        }

    check_gradients({x, w, b}, [&](Graph<double>& gg, const std::vector<int>& ids) {
        return mse_vs(gg, gg.linear(ids[0], ids[1], ids[2]), target);
    });
    check_gradients({x, w}, [&](Graph<double>& gg, const std::vector<int>& ids) {
        return mse_vs(gg, gg.linear(ids[0], ids[1]), target);
    });
}

namespace {

Tensor<double> conv_ref(const Tensor<double>& x, const Tensor<double>& w,
                        const Tensor<double>* b, int stride, int pad) {
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int HO = (H + 2 * pad - kh) / stride + 1;
    const int WO = (W + 2 * pad - kw) / stride + 1;
    Tensor<double> out({O, HO, WO});
    for (int o = 0; o < O; ++o)
        for (int oy = 0; oy < HO; ++oy)
            for (int ox = 0; ox < WO; ++ox) {
                double acc = b ? b->data[size_t(o)] : 0.0;
                for (int c = 0; c < C; ++c)
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            const int iy = oy * stride - pad + ky;
                            const int ix = ox * stride - pad + kx;
                            if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                            acc += x.data[size_t(c * H + iy) * W + ix] *
                                   w.data[size_t(((o * C + c) * kh + ky) * kw + kx)];
                        }
                out.data[size_t((o * HO + oy) * WO + ox)] = acc;
            }
    return out;
}

}  // namespace

TEST_CASE("conv2d matches direct convolution and differentiates") {
    RngStream rng(103);
    struct Case {
        int stride, pad;
    };
    for (const Case c : {Case{1, 0}, Case{1, 1}, Case{2, 1}}) {
        CAPTURE(c.stride);
        CAPTURE(c.pad);
        const auto x = random_tensor({2, 5, 4}, rng);
        const auto w = random_tensor({3, 2, 3, 3}, rng, 0.5);
        const auto b = random_tensor({3}, rng);
        const Tensor<double> ref = conv_ref(x, w, &b, c.stride, c.pad);

        Graph<double> g(false);
        const auto& v =
            g.val(g.conv2d(g.input(x), g.input(w), g.input(b), c.stride, c.pad));
        REQUIRE(v.shape == ref.shape);
        for (size_t i = 0; i < ref.numel(); ++i)
            CHECK(v.data[i] == doctest::Approx(ref.data[i]).epsilon(1e-10));

        const auto target = random_tensor(ref.shape, rng);
        check_gradients({x, w, b},
                        [&](Graph<double>& gg, const std::vector<int>& ids) {
                            return mse_vs(
                                gg, gg.conv2d(ids[0], ids[1], ids[2], c.stride, c.pad),
                                target);
                        });
    }
}

TEST_CASE("1x1 conv equals per-pixel linear map") {
    RngStream rng(104);
    const auto x = random_tensor({3, 4, 4}, rng);
    const auto w = random_tensor({2, 3, 1, 1}, rng);
    Graph<double> g(false);
    const auto& v = g.val(g.conv2d(g.input(x), g.input(w), -1, 1, 0));
    for (int o = 0; o < 2; ++o)
        for (int p = 0; p < 16; ++p) {
            double acc = 0;
            for (int c = 0; c < 3; ++c)
                acc += w.data[size_t(o * 3 + c)] * x.data[size_t(c) * 16 + p];
            CHECK(v.data[size_t(o) * 16 + p] == doctest::Approx(acc));
        }
}

TEST_CASE("group_norm normalizes per group and differentiates") {
    RngStream rng(105);
    const int C = 6, H = 3, W = 2, groups = 3;
    auto x = random_tensor({C, H, W}, rng, 2.0);
    for (double& v : x.data) v += 0.7;  // nonzero mean so normalization does work
    Tensor<double> gamma({C}), beta({C});
    for (double& v : gamma.data) v = 1.0;

    Graph<double> g(false);
    const auto& v = g.val(g.group_norm(g.input(x), g.input(gamma), g.input(beta),
                                       groups, 1e-5));
    const int cg = C / groups, n = cg * H * W;
    for (int grp = 0; grp < groups; ++grp) {
        double mu = 0, var = 0;
        for (int i = 0; i < n; ++i) mu += v.data[size_t(grp * n + i)];
        mu /= n;
        for (int i = 0; i < n; ++i) {
            const double d = v.data[size_t(grp * n + i)] - mu;
            var += d * d;
        }
        var /= n;
        CHECK(std::fabs(mu) < 1e-10);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }

    const auto gamma_r = random_tensor({C}, rng);
    const auto beta_r = random_tensor({C}, rng);
    const auto target = random_tensor({C, H, W}, rng);
    check_gradients({x, gamma_r, beta_r},
                    [&](Graph<double>& gg, const std::vector<int>& ids) {
                        return mse_vs(
                            gg, gg.group_norm(ids[0], ids[1], ids[2], groups, 1e-5),
                            target);
                    });
}

TEST_CASE("layer_norm normalizes per row and differentiates") {
    RngStream rng(106);
    const int N = 4, D = 6;
    auto x = random_tensor({N, D}, rng, 3.0);
    Tensor<double> gamma({D}), beta({D});
    for (double& v : gamma.data) v = 1.0;

    Graph<double> g(false);
    const auto& v = g.val(g.layer_norm(g.input(x), g.input(gamma), g.input(beta), 1e-5));
    for (int i = 0; i < N; ++i) {
        double mu = 0, var = 0;
        for (int d = 0; d < D; ++d) mu += v.data[size_t(i) * D + d];
        mu /= D;
        for (int d = 0; d < D; ++d) {
            const double dd = v.data[size_t(i) * D + d] - mu;
            var += dd * dd;
        }
        CHECK(std::fabs(mu) < 1e-10);
        CHECK(var / D == doctest::Approx(1.0).epsilon(1e-3));
    }

    const auto gamma_r = random_tensor({D}, rng);
    const auto beta_r = random_tensor({D}, rng);
    const auto target = random_tensor({N, D}, rng);
    check_gradients({x, gamma_r, beta_r},
                    [&](Graph<double>& gg, const std::vector<int>& ids) {
                        return mse_vs(gg, gg.layer_norm(ids[0], ids[1], ids[2], 1e-5),
                                      target);
                    });
}

namespace {

// Straightforward per-head attention in loops, used as the oracle.
Tensor<double> attention_ref(const Tensor<double>& q, const Tensor<double>& k,
                             const Tensor<double>& v, int heads,
                             const std::vector<uint8_t>* mask) {
    const int N = q.dim(0), D = q.dim(1), M = k.dim(0), dh = D / heads;
    Tensor<double> out({N, D});
    for (int h = 0; h < heads; ++h)
        for (int i = 0; i < N; ++i) {
            std::vector<double> logits(size_t(M), -std::numeric_limits<double>::infinity());
            for (int j = 0; j < M; ++j) {
                if (mask && (*mask)[size_t(j)]) continue;
                double dot = 0;
                for (int d = 0; d < dh; ++d)
                    dot += q.data[size_t(i) * D + h * dh + d] *
                           k.data[size_t(j) * D + h * dh + d];
                logits[size_t(j)] = dot / std::sqrt(double(dh));
            }
            double mx = -std::numeric_limits<double>::infinity();
            for (double l : logits) mx = std::max(mx, l);
            double sum = 0;
            std::vector<double> p(size_t(M), 0.0);
            for (int j = 0; j < M; ++j) {
                if (std::isinf(logits[size_t(j)])) continue;
                p[size_t(j)] = std::exp(logits[size_t(j)] - mx);
                sum += p[size_t(j)];
            }
            for (int j = 0; j < M; ++j) p[size_t(j)] /= sum;
            for (int d = 0; d < dh; ++d) {
                double acc = 0;
                for (int j = 0; j < M; ++j)
                    acc += p[size_t(j)] * v.data[size_t(j) * D + h * dh + d];
                out.data[size_t(i) * D + h * dh + d] = acc;
            }
        }
    return out;
}

}  // namespace

TEST_CASE("attention matches loop oracle and differentiates") {
    RngStream rng(107);
    const int N = 3, M = 4, D = 6, heads = 2;
    const auto q = random_tensor({N, D}, rng);
    const auto k = random_tensor({M, D}, rng);
    const auto v = random_tensor({M, D}, rng);
    const auto target = random_tensor({N, D}, rng);

    SUBCASE("unmasked value") {
        const Tensor<double> ref = attention_ref(q, k, v, heads, nullptr);
        Graph<double> g(false);
        const auto& out = g.val(g.attention(g.input(q), g.input(k), g.input(v), heads));
        for (size_t i = 0; i < ref.numel(); ++i)
            CHECK(out.data[i] == doctest::Approx(ref.data[i]).epsilon(1e-10));
    }
    SUBCASE("masked value") {
        const std::vector<uint8_t> mask = {0, 1, 0, 1};
        const Tensor<double> ref = attention_ref(q, k, v, heads, &mask);
        Graph<double> g(false);
        const auto& out =
            g.val(g.attention(g.input(q), g.input(k), g.input(v), heads, &mask));
        for (size_t i = 0; i < ref.numel(); ++i)
            CHECK(out.data[i] == doctest::Approx(ref.data[i]).epsilon(1e-10));
    }
    SUBCASE("masked keys have no influence") {
        const std::vector<uint8_t> mask = {0, 1, 0, 0};
        Graph<double> g1(false);
        const Tensor<double> out1 =
            g1.val(g1.attention(g1.input(q), g1.input(k), g1.input(v), heads, &mask));
        auto k2 = k;
        auto v2 = v;
        for (int d = 0; d < D; ++d) {
            k2.data[size_t(1) * D + d] += 13.0;
            v2.data[size_t(1) * D + d] -= 5.0;
        }
        Graph<double> g2(false);
        const Tensor<double> out2 =
            g2.val(g2.attention(g2.input(q), g2.input(k2), g2.input(v2), heads, &mask));
        for (size_t i = 0; i < out1.numel(); ++i)
            CHECK(out1.data[i] == doctest::Approx(out2.data[i]).epsilon(1e-12));
    }
    SUBCASE("all keys masked yields exact zeros with zero gradients") {
        const std::vector<uint8_t> mask = {1, 1, 1, 1};
        Graph<double> g(true);
        const int qi = g.input(q), ki = g.input(k), vi = g.input(v);
        const int out = g.attention(qi, ki, vi, heads, &mask);
        for (double x : g.val(out).data) CHECK(x == 0.0);
        g.backward(mse_vs(g, out, target));
        for (double x : g.grad_of(qi).data) CHECK(x == 0.0);
        for (double x : g.grad_of(ki).data) CHECK(x == 0.0);
        for (double x : g.grad_of(vi).data) CHECK(x == 0.0);
    }
    SUBCASE("gradients unmasked") {
        check_gradients({q, k, v}, [&](Graph<double>& gg, const std::vector<int>& ids) {
            return mse_vs(gg, gg.attention(ids[0], ids[1], ids[2], heads), target);
        });
    }
    SUBCASE("gradients masked") {
        static const std::vector<uint8_t> mask = {0, 1, 1, 0};
        check_gradients({q, k, v}, [&](Graph<double>& gg, const std::vector<int>& ids) {
            return mse_vs(gg, gg.attention(ids[0], ids[1], ids[2], heads, &mask),
                          target);
        });
    }
    SUBCASE("self-attention gradients (q=k=v from one leaf)") {
        check_gradients({q}, [&](Graph<double>& gg, const std::vector<int>& ids) {
            return mse_vs(gg, gg.attention(ids[0], ids[0], ids[0], heads), target);
        });
    }
    SUBCASE("head count must divide width") {
        Graph<double> g(false);
        CHECK_THROWS_AS(
            (void)g.attention(g.input(q), g.input(k), g.input(v), 4), dg::Error);
    }
}

TEST_CASE("structural ops: values, round trips, gradients") {
    RngStream rng(108);
    SUBCASE("concat_rows / concat_cols") {
        const auto a = random_tensor({2, 3}, rng);
        const auto b = random_tensor({4, 3}, rng);
        const auto t1 = random_tensor({6, 3}, rng);
        check_gradients({a, b}, [&](Graph<double>& gg, const std::vector<int>& ids) {
            return mse_vs(gg, gg.concat_rows(ids[0], ids[1]), t1);
        });
        const auto c = random_tensor({2, 5}, rng);
        const auto t2 = random_tensor({2, 8}, rng);
        check_gradients({a, c}, [&](Graph<double>& gg, const std::vector<int>& ids) {
            return mse_vs(gg, gg.concat_cols(ids[0], ids[1]), t2);
        });
        Graph<double> g(false);
        const auto& v = g.val(g.concat_cols(g.input(a), g.input(c)));
        CHECK(v.data[0] == a.data[0]);
        CHECK(v.data[3] == c.data[0]);
        CHECK(v.data[8] == a.data[3]);
    }
    SUBCASE("concat_channels") {
        const auto a = random_tensor({2, 3, 4}, rng);
        const auto b = random_tensor({3, 3, 4}, rng);
        const auto t = random_tensor({5, 3, 4}, rng);
        check_gradients({a, b}, [&](Graph<double>& gg, const std::vector<int>& ids) {
            return mse_vs(gg, gg.concat_channels(ids[0], ids[1]), t);
        });
    }
    SUBCASE("chw_to_tokens round trip") {
        const auto x = random_tensor({3, 4, 5}, rng);
        Graph<double> g(false);
        const int tok = g.chw_to_tokens(g.input(x));
        CHECK(g.val(tok).dim(0) == 20);
        CHECK(g.val(tok).dim(1) == 3);
        const auto& back = g.val(g.tokens_to_chw(tok, 4, 5));
        for (size_t i = 0; i < x.numel(); ++i) CHECK(back.data[i] == x.data[i]);

        const auto t = random_tensor({20, 3}, rng);
        check_gradients({x}, [&](Graph<double>& gg, const std::vector<int>& ids) {
            return mse_vs(gg, gg.chw_to_tokens(ids[0]), t);
        });
        const auto t2 = random_tensor({3, 4, 5}, rng);
        // Use a token matrix leaf directly for tokens_to_chw.
        const auto toks = random_tensor({20, 3}, rng);
        check_gradients({toks}, [&](Graph<double>& gg, const std::vector<int>& ids) {
            return mse_vs(gg, gg.tokens_to_chw(ids[0], 4, 5), t2);
        });
    }
    SUBCASE("upsample_nearest2") {
        const auto x = random_tensor({2, 2, 3}, rng);
        Graph<double> g(false);
        const auto& v = g.val(g.upsample_nearest2(g.input(x)));
        CHECK(v.dim(1) == 4);
        CHECK(v.dim(2) == 6);
        CHECK(v.data[0] == x.data[0]);
        CHECK(v.data[1] == x.data[0]);
        CHECK(v.data[6] == x.data[0]);
        CHECK(v.data[7] == x.data[0]);
        const auto t = random_tensor({2, 4, 6}, rng);
        check_gradients({x}, [&](Graph<double>& gg, const std::vector<int>& ids) {
            return mse_vs(gg, gg.upsample_nearest2(ids[0]), t);
        });
    }
    SUBCASE("mean_rows") {
        const auto x = random_tensor({5, 3}, rng);
        Graph<double> g(false);
        const auto& v = g.val(g.mean_rows(g.input(x)));
        for (int d = 0; d < 3; ++d) {
            double acc = 0;
            for (int i = 0; i < 5; ++i) acc += x.data[size_t(i) * 3 + d];
            CHECK(v.data[size_t(d)] == doctest::Approx(acc / 5.0));
        }
        const auto t = random_tensor({3}, rng);
        check_gradients({x}, [&](Graph<double>& gg, const std::vector<int>& ids) {
            return mse_vs(gg, gg.mean_rows(ids[0]), t);
        });
    }
    SUBCASE("add_channel_vec") {
        const auto x = random_tensor({3, 2, 2}, rng);
        const auto vch = random_tensor({3}, rng);
        Graph<double> g(false);
        const auto& v = g.val(g.add_channel_vec(g.input(x), g.input(vch)));
        for (int c = 0; c < 3; ++c)
            for (int p = 0; p < 4; ++p)
                CHECK(v.data[size_t(c * 4 + p)] ==
                      doctest::Approx(x.data[size_t(c * 4 + p)] + vch.data[size_t(c)]));
        const auto t = random_tensor({3, 2, 2}, rng);
        check_gradients({x, vch}, [&](Graph<double>& gg, const std::vector<int>& ids) {
            return mse_vs(gg, gg.add_channel_vec(ids[0], ids[1]), t);
        });
    }
    SUBCASE("embed_rows gathers and scatters gradient to used rows only") {
        const auto table = random_tensor({5, 4}, rng);
        const std::vector<int> ids = {3, 0, 3};
        Graph<double> g(true);
        const int ti = g.input(table);
        const int out = g.embed_rows(ti, ids);
        for (int d = 0; d < 4; ++d) {
            CHECK(g.val(out).data[size_t(d)] == table.data[size_t(3 * 4 + d)]);
            CHECK(g.val(out).data[size_t(4 + d)] == table.data[size_t(d)]);
        }
        const auto t = random_tensor({3, 4}, rng);
        g.backward(mse_vs(g, out, t));
        const auto& gt = g.grad_of(ti);
        for (int d = 0; d < 4; ++d) {
            CHECK(gt.data[size_t(1 * 4 + d)] == 0.0);
            CHECK(gt.data[size_t(2 * 4 + d)] == 0.0);
            CHECK(gt.data[size_t(4 * 4 + d)] == 0.0);
        }
        check_gradients({table}, [&](Graph<double>& gg, const std::vector<int>& nids) {
            return mse_vs(gg, gg.embed_rows(nids[0], ids), t);
        });
    }
}

TEST_CASE("parameter leaves accumulate into the store") {
    RngStream rng(109);
    ParamStore<double> store;
    Parameter<double>* p = store.add("w", {3, 3});
    p->value = random_tensor({3, 3}, rng);
    const auto x = random_tensor({2, 3}, rng);
    const auto target = random_tensor({2, 3}, rng);

    Graph<double> g(true);
    const int pid = g.param(p);
    CHECK(g.param(p) == pid);  // one node per parameter per graph
    const int xi = g.input(x);
    // Use the parameter twice so both paths accumulate.
    const int y = g.add(g.linear(xi, pid), g.linear(xi, pid));
    g.backward(g.mse_loss(y, g.input(target)));

    // Finite differences directly on the stored value.
    const double h = 1e-5;
    for (size_t k = 0; k < p->value.numel(); ++k) {
        auto eval = [&](double delta) {
            Parameter<double> pp = *p;
            pp.value.data[k] += delta;
            Graph<double> g2(false);
            const int pid2 = g2.param(&pp);
            const int xi2 = g2.input(x);
            const int y2 = g2.add(g2.linear(xi2, pid2), g2.linear(xi2, pid2));
            return g2.val(g2.mse_loss(y2, g2.input(target))).data[0];
        };
        const double fd = (eval(h) - eval(-h)) / (2 * h);
        const double an = p->grad.data[k];
        CHECK(std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1e-8}) <
              1e-4);
    }

    store.zero_grad();
    for (double gg : p->grad.data) CHECK(gg == 0.0);
}

TEST_CASE("graph mode and usage errors") {
    Graph<double> inf(false);
    Tensor<double> one({1});
    one.data[0] = 2.0;
    const int a = inf.input(one);
    CHECK_THROWS_AS(inf.backward(a), dg::Error);
    CHECK_THROWS_AS((void)inf.grad_of(a), dg::Error);

    Graph<double> g(true);
    const int b = g.input(one);
    const int l = g.scale(b, 3.0);
    g.backward(l);
    CHECK(g.grad_of(b).data[0] == 3.0);
    CHECK_THROWS_AS(g.backward(l), dg::Error);  // single-shot tape

    Graph<double> g2(true);
    const int c = g2.input(Tensor<double>({2, 2}));
    CHECK_THROWS_AS(g2.backward(c), dg::Error);  // non-scalar loss
}

TEST_CASE("adamw optimizes, warms up, decays, and clips") {
    SUBCASE("quadratic convergence") {
        ParamStore<double> store;
        Parameter<double>* p = store.add("x", {1});
        p->value.data[0] = 5.0;
        dg::AdamW<double>::Config cfg;
        cfg.learning_rate = 0.1;
        cfg.grad_clip_norm = 0;  // unclipped
        dg::AdamW<double> opt(store, cfg);
        for (int s = 0; s < 400; ++s) {
            store.zero_grad();
            p->grad.data[0] = 2.0 * p->value.data[0];  // d/dx x^2
            opt.step();
        }
        CHECK(std::fabs(p->value.data[0]) < 1e-2);
    }
    SUBCASE("warmup ramps linearly") {
        ParamStore<double> store;
        store.add("x", {1});
        dg::AdamW<double>::Config cfg;
        cfg.learning_rate = 1.0;
        cfg.warmup_steps = 10;
        dg::AdamW<double> opt(store, cfg);
        CHECK(opt.current_lr() == doctest::Approx(0.1));
        for (int s = 0; s < 5; ++s) opt.step();
        CHECK(opt.current_lr() == doctest::Approx(0.6));
        for (int s = 0; s < 10; ++s) opt.step();
        CHECK(opt.current_lr() == doctest::Approx(1.0));
    }
    SUBCASE("decoupled weight decay with zero gradient") {
        ParamStore<double> store;
        Parameter<double>* p = store.add("x", {1});
        p->value.data[0] = 1.0;
        dg::AdamW<double>::Config cfg;
        cfg.learning_rate = 0.5;
        cfg.weight_decay = 0.1;
        dg::AdamW<double> opt(store, cfg);
        opt.step();  // grad == 0, so only decay applies
        CHECK(p->value.data[0] == doctest::Approx(1.0 - 0.5 * 0.1 * 1.0));
    }
    SUBCASE("gradient clipping bounds the applied norm") {
        ParamStore<double> store;
        Parameter<double>* p = store.add("x", {2});
        dg::AdamW<double>::Config cfg;
        cfg.learning_rate = 1e-3;
        cfg.grad_clip_norm = 1.0;
        dg::AdamW<double> opt(store, cfg);
        p->grad.data[0] = 300.0;
        p->grad.data[1] = 400.0;
        const double norm = opt.step();
        CHECK(norm == doctest::Approx(500.0));
        // With bias-corrected Adam and a single step the update magnitude is
        // lr * g/|g| elementwise-normalized; just check it stayed small.
        CHECK(std::fabs(p->value.data[0]) < 2e-3);
        CHECK(std::fabs(p->value.data[1]) < 2e-3);
    }
}
