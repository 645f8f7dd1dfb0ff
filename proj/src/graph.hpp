#ifndef DRIVEGEN_GRAPH_HPP
#define DRIVEGEN_GRAPH_HPP

// Tape-based reverse-mode autodiff over dense tensors.  A Graph is built
// per forward pass; ops append nodes with backward closures, and
// backward() replays the tape in reverse creation order.  With
// grad_enabled=false no closures or gradient buffers are kept, which is
// the inference mode used by the samplers.
//
// Conventions:
//   - matrices are row-major [rows, cols]
//   - image features are [C, H, W]
//   - token matrices are [num_tokens, d]
//   - backward closures ACCUMULATE into input gradients (never assign),
//     so a node feeding several consumers collects all contributions.

#include <cmath>
#include <cstring>
#include <deque>
#include <functional>
#include <vector>

#include "blas_util.hpp"
#include "tensor.hpp"

namespace dg {

template <typename T>
class Graph {
  public:
    using NodeId = int;

    explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool grad_enabled() const { return grad_enabled_; }
    size_t num_nodes() const { return nodes_.size(); }

    // ---- leaves ---------------------------------------------------------

    NodeId input(Tensor<T> v) { return make_node(std::move(v)); }

    NodeId zeros(std::vector<int> shape) { return make_node(Tensor<T>(std::move(shape))); }

    // Parameter leaf; gradients reaching it flow into p->grad.  The same
    // parameter maps to one node per graph.
    NodeId param(Parameter<T>* p) {
        require(p != nullptr, ErrorKind::InvalidArgument, "null parameter");
        for (const auto& [ptr, id] : param_nodes_)
            if (ptr == p) return id;
        Tensor<T> copy = p->value;
        const NodeId id = make_node(std::move(copy));
        if (grad_enabled_) {
            set_back(id, [this, id, p] {
                const Tensor<T>& g = nodes_[size_t(id)].grad;
                for (size_t k = 0; k < g.numel(); ++k) p->grad.data[k] += g.data[k];
            });
        }
        param_nodes_.emplace_back(p, id);
        return id;
    }

    const Tensor<T>& val(NodeId id) const { return nodes_.at(size_t(id)).value; }

    const Tensor<T>& grad_of(NodeId id) const {
        require(grad_enabled_, ErrorKind::InvalidArgument,
                "gradients unavailable in inference mode");
        return nodes_.at(size_t(id)).grad;
    }

    void backward(NodeId loss) {
        require(grad_enabled_, ErrorKind::InvalidArgument,
                "backward requires a gradient-enabled graph");
        require(val(loss).numel() == 1, ErrorKind::Shape, "loss must be scalar");
        require(!ran_backward_, ErrorKind::InvalidArgument,
                "backward may run once per graph");
        ran_backward_ = true;
        nodes_[size_t(loss)].grad.data[0] = T(1);
        for (size_t i = nodes_.size(); i-- > 0;)
            if (nodes_[i].back) nodes_[i].back();
    }

    // ---- elementwise / structural ops ----------------------------------

    NodeId add(NodeId a, NodeId b) {
        require(val(a).same_shape(val(b)), ErrorKind::Shape,
                "add: shape mismatch " + shape_str(val(a)) + " vs " + shape_str(val(b)));
        Tensor<T> out = val(a);
        const T* pb = val(b).ptr();
        for (size_t i = 0; i < out.numel(); ++i) out.data[i] += pb[i];
        const NodeId id = make_node(std::move(out));
        if (grad_enabled_)
            set_back(id, [this, id, a, b] {
                const Tensor<T>& g = nodes_[size_t(id)].grad;
                accumulate(a, g.ptr(), g.numel());
                accumulate(b, g.ptr(), g.numel());
            });
        return id;
    }

    NodeId scale(NodeId a, T s) {
        Tensor<T> out = val(a);
        for (T& v : out.data) v *= s;
        const NodeId id = make_node(std::move(out));
        if (grad_enabled_)
            set_back(id, [this, id, a, s] {
                const Tensor<T>& g = nodes_[size_t(id)].grad;
                Tensor<T>& ga = nodes_[size_t(a)].grad;
                for (size_t i = 0; i < g.numel(); ++i) ga.data[i] += s * g.data[i];
            });
        return id;
    }

    NodeId silu(NodeId a) {
        Tensor<T> out = val(a);
        for (T& v : out.data) v = v / (T(1) + std::exp(-v));
        const NodeId id = make_node(std::move(out));
        if (grad_enabled_)
            set_back(id, [this, id, a] {
                const Tensor<T>& g = nodes_[size_t(id)].grad;
                const Tensor<T>& x = nodes_[size_t(a)].value;
                Tensor<T>& ga = nodes_[size_t(a)].grad;
                for (size_t i = 0; i < g.numel(); ++i) {
                    const T s = T(1) / (T(1) + std::exp(-x.data[i]));
                    ga.data[i] += g.data[i] * s * (T(1) + x.data[i] * (T(1) - s));
                }
            });
        return id;
    }

    NodeId reshape(NodeId a, std::vector<int> shape) {
        Tensor<T> out(shape);
        require(out.numel() == val(a).numel(), ErrorKind::Shape,
                "reshape: element count mismatch");
        out.data = val(a).data;
        const NodeId id = make_node(std::move(out));
        if (grad_enabled_)
            set_back(id, [this, id, a] {
                const Tensor<T>& g = nodes_[size_t(id)].grad;
                accumulate(a, g.ptr(), g.numel());
            });
        return id;
    }

    // x: [C,H,W] plus per-channel vector v: [C] (timestep modulation).
    NodeId add_channel_vec(NodeId x, NodeId v) {
        const Tensor<T>& xv = val(x);
        const Tensor<T>& vv = val(v);
        require(xv.ndim() == 3 && vv.ndim() == 1 && vv.dim(0) == xv.dim(0),
                ErrorKind::Shape, "add_channel_vec: need [C,H,W] and [C]");
        Tensor<T> out = xv;
        const int C = xv.dim(0), HW = xv.dim(1) * xv.dim(2);
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < HW; ++i) out.data[size_t(c * HW + i)] += vv.data[size_t(c)];
        const NodeId id = make_node(std::move(out));
        if (grad_enabled_)
            set_back(id, [this, id, x, v, C, HW] {
                const Tensor<T>& g = nodes_[size_t(id)].grad;
                accumulate(x, g.ptr(), g.numel());
                Tensor<T>& gv = nodes_[size_t(v)].grad;
                for (int c = 0; c < C; ++c) {
                    T s = T(0);
                    for (int i = 0; i < HW; ++i) s += g.data[size_t(c * HW + i)];
                    gv.data[size_t(c)] += s;
                }
            });
        return id;
    }

    NodeId concat_rows(NodeId a, NodeId b) {
        const Tensor<T>& av = val(a);
        const Tensor<T>& bv = val(b);
        require(av.ndim() == 2 && bv.ndim() == 2 && av.dim(1) == bv.dim(1),
                ErrorKind::Shape, "concat_rows: need [Na,D] and [Nb,D]");
        Tensor<T> out({av.dim(0) + bv.dim(0), av.dim(1)});
        std::memcpy(out.ptr(), av.ptr(), av.numel() * sizeof(T));
        std::memcpy(out.ptr() + av.numel(), bv.ptr(), bv.numel() * sizeof(T));
        const NodeId id = make_node(std::move(out));
        if (grad_enabled_)
            set_back(id, [this, id, a, b] {
                const Tensor<T>& g = nodes_[size_t(id)].grad;
                const size_t na = nodes_[size_t(a)].value.numel();
                accumulate(a, g.ptr(), na);
                accumulate(b, g.ptr() + na, g.numel() - na);
            });
        return id;
    }

    NodeId concat_cols(NodeId a, NodeId b) {
        const Tensor<T>& av = val(a);
        const Tensor<T>& bv = val(b);
        require(av.ndim() == 2 && bv.ndim() == 2 && av.dim(0) == bv.dim(0),
                ErrorKind::Shape, "concat_cols: need [N,Da] and [N,Db]");
        const int N = av.dim(0), Da = av.dim(1), Db = bv.dim(1);
        Tensor<T> out({N, Da + Db});
        for (int i = 0; i < N; ++i) {
            std::memcpy(out.ptr() + size_t(i) * (Da + Db), av.ptr() + size_t(i) * Da,
                        size_t(Da) * sizeof(T));
            std::memcpy(out.ptr() + size_t(i) * (Da + Db) + Da, bv.ptr() + size_t(i) * Db,
                        size_t(Db) * sizeof(T));
        }
        const NodeId id = make_node(std::move(out));
        if (grad_enabled_)
            set_back(id, [this, id, a, b, N, Da, Db] {
                const Tensor<T>& g = nodes_[size_t(id)].grad;
                Tensor<T>& ga = nodes_[size_t(a)].grad;
                Tensor<T>& gb = nodes_[size_t(b)].grad;
                for (int i = 0; i < N; ++i) {
                    for (int d = 0; d < Da; ++d)
                        ga.data[size_t(i) * Da + d] += g.data[size_t(i) * (Da + Db) + d];
                    for (int d = 0; d < Db; ++d)
                        gb.data[size_t(i) * Db + d] +=
                            g.data[size_t(i) * (Da + Db) + Da + d];
                }
            });
        return id;
    }

    NodeId concat_channels(NodeId a, NodeId b) {
        const Tensor<T>& av = val(a);
        const Tensor<T>& bv = val(b);
        require(av.ndim() == 3 && bv.ndim() == 3 && av.dim(1) == bv.dim(1) &&
                    av.dim(2) == bv.dim(2),
                ErrorKind::Shape, "concat_channels: spatial dims must match");
        Tensor<T> out({av.dim(0) + bv.dim(0), av.dim(1), av.dim(2)});
        std::memcpy(out.ptr(), av.ptr(), av.numel() * sizeof(T));
        std::memcpy(out.ptr() + av.numel(), bv.ptr(), bv.numel() * sizeof(T));
        const NodeId id = make_node(std::move(out));
        if (grad_enabled_)
            set_back(id, [this, id, a, b] {
                const Tensor<T>& g = nodes_[size_t(id)].grad;
                const size_t na = nodes_[size_t(a)].value.numel();
                accumulate(a, g.ptr(), na);
                accumulate(b, g.ptr() + na, g.numel() - na);
            });
        return id;
    }

    // [C,H,W] -> [H*W, C] token matrix.
    NodeId chw_to_tokens(NodeId x) {
        const Tensor<T>& xv = val(x);
        require(xv.ndim() == 3, ErrorKind::Shape, "chw_to_tokens: need [C,H,W]");
        const int C = xv.dim(0), HW = xv.dim(1) * xv.dim(2);
        Tensor<T> out({HW, C});
        for (int c = 0; c < C; ++c)
            for (int p = 0; p < HW; ++p)
                out.data[size_t(p) * C + c] = xv.data[size_t(c) * HW + p];
        const NodeId id = make_node(std::move(out));
        if (grad_enabled_)
            set_back(id, [this, id, x, C, HW] {
                const Tensor<T>& g = nodes_[size_t(id)].grad;
                Tensor<T>& gx = nodes_[size_t(x)].grad;
                for (int c = 0; c < C; ++c)
                    for (int p = 0; p < HW; ++p)
                        gx.data[size_t(c) * HW + p] += g.data[size_t(p) * C + c];
            });
        return id;
    }

    // [H*W, C] -> [C,H,W].
    NodeId tokens_to_chw(NodeId x, int H, int W) {
        const Tensor<T>& xv = val(x);
        require(xv.ndim() == 2 && xv.dim(0) == H * W, ErrorKind::Shape,
                "tokens_to_chw: token count must equal H*W");
        const int C = xv.dim(1), HW = H * W;
        Tensor<T> out({C, H, W});
        for (int c = 0; c < C; ++c)
            for (int p = 0; p < HW; ++p)
                out.data[size_t(c) * HW + p] = xv.data[size_t(p) * C + c];
        const NodeId id = make_node(std::move(out));
        if (grad_enabled_)
            set_back(id, [this, id, x, C, HW] {
                const Tensor<T>& g = nodes_[size_t(id)].grad;
                Tensor<T>& gx = nodes_[size_t(x)].grad;
                for (int c = 0; c < C; ++c)
                    for (int p = 0; p < HW; ++p)
                        gx.data[size_t(p) * C + c] += g.data[size_t(c) * HW + p];
            });
        return id;
    }

    NodeId upsample_nearest2(NodeId x) {
        const Tensor<T>& xv = val(x);
        require(xv.ndim() == 3, ErrorKind::Shape, "upsample: need [C,H,W]");
        const int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
        Tensor<T> out({C, 2 * H, 2 * W});
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < 2 * H; ++y)
                for (int xw = 0; xw < 2 * W; ++xw)
                    out.data[size_t((c * 2 * H + y) * 2 * W + xw)] =
                        xv.data[size_t((c * H + y / 2) * W + xw / 2)];
        const NodeId id = make_node(std::move(out));
        if (grad_enabled_)
            set_back(id, [this, id, x, C, H, W] {
                const Tensor<T>& g = nodes_[size_t(id)].grad;
                Tensor<T>& gx = nodes_[size_t(x)].grad;
                for (int c = 0; c < C; ++c)
                    for (int y = 0; y < 2 * H; ++y)
                        for (int xw = 0; xw < 2 * W; ++xw)
                            gx.data[size_t((c * H + y / 2) * W + xw / 2)] +=
                                g.data[size_t((c * 2 * H + y) * 2 * W + xw)];
            });
        return id;
    }

    NodeId mean_rows(NodeId x) {
        const Tensor<T>& xv = val(x);
        require(xv.ndim() == 2, ErrorKind::Shape, "mean_rows: need [N,D]");
        const int N = xv.dim(0), D = xv.dim(1);
        Tensor<T> out({D});
        for (int i = 0; i < N; ++i)
            for (int d = 0; d < D; ++d) out.data[size_t(d)] += xv.data[size_t(i) * D + d];
        for (T& v : out.data) v /= T(N);
        const NodeId id = make_node(std::move(out));
        if (grad_enabled_)
            set_back(id, [this, id, x, N, D] {
                const Tensor<T>& g = nodes_[size_t(id)].grad;
                Tensor<T>& gx = nodes_[size_t(x)].grad;
                for (int i = 0; i < N; ++i)
                    for (int d = 0; d < D; ++d)
                        gx.data[size_t(i) * D + d] += g.data[size_t(d)] / T(N);
            });
        return id;
    }

    NodeId embed_rows(NodeId table, std::vector<int> ids) {
        const Tensor<T>& tv = val(table);
        require(tv.ndim() == 2, ErrorKind::Shape, "embed_rows: table must be [V,D]");
        const int V = tv.dim(0), D = tv.dim(1);
        Tensor<T> out({int(ids.size()), D});
        for (size_t i = 0; i < ids.size(); ++i) {
            require(ids[i] >= 0 && ids[i] < V, ErrorKind::InvalidArgument,
                    "embed_rows: id out of range");
            std::memcpy(out.ptr() + i * size_t(D), tv.ptr() + size_t(ids[i]) * D,
                        size_t(D) * sizeof(T));
        }
        const NodeId id = make_node(std::move(out));
        if (grad_enabled_)
            set_back(id, [this, id, table, ids = std::move(ids), D] {
                const Tensor<T>& g = nodes_[size_t(id)].grad;
                Tensor<T>& gt = nodes_[size_t(table)].grad;
                for (size_t i = 0; i < ids.size(); ++i)
                    for (int d = 0; d < D; ++d)
                        gt.data[size_t(ids[i]) * D + d] += g.data[i * size_t(D) + d];
            });
        return id;
    }

    // ---- dense / conv / norm / attention -------------------------------

    // x: [N,K], w: [K,M], optional bias [M] (pass -1 to skip).
    NodeId linear(NodeId x, NodeId w, NodeId bias = -1) {
        const Tensor<T>& xv = val(x);
        const Tensor<T>& wv = val(w);
        require(xv.ndim() == 2 && wv.ndim() == 2 && xv.dim(1) == wv.dim(0),
                ErrorKind::Shape,
                "linear: " + shape_str(xv) + " x " + shape_str(wv));
        const int N = xv.dim(0), K = xv.dim(1), M = wv.dim(1);
        Tensor<T> out({N, M});
        gemm(false, false, N, M, K, T(1), xv.ptr(), K, wv.ptr(), M, T(0), out.ptr(), M);
        if (bias >= 0) {
            const Tensor<T>& bv = val(bias);
            require(bv.ndim() == 1 && bv.dim(0) == M, ErrorKind::Shape,
                    "linear: bias must be [M]");
            for (int i = 0; i < N; ++i)
                for (int m = 0; m < M; ++m) out.data[size_t(i) * M + m] += bv.data[size_t(m)];
        }
        const NodeId id = make_node(std::move(out));
        if (grad_enabled_)
            set_back(id, [this, id, x, w, bias, N, K, M] {
                const Tensor<T>& g = nodes_[size_t(id)].grad;
                const Tensor<T>& xv2 = nodes_[size_t(x)].value;
                const Tensor<T>& wv2 = nodes_[size_t(w)].value;
                // dx += dy * W^T
                gemm(false, true, N, K, M, T(1), g.ptr(), M, wv2.ptr(), M, T(1),
                     nodes_[size_t(x)].grad.ptr(), K);
                // dW += x^T * dy
                gemm(true, false, K, M, N, T(1), xv2.ptr(), K, g.ptr(), M, T(1),
                     nodes_[size_t(w)].grad.ptr(), M);
                if (bias >= 0) {
                    Tensor<T>& gb = nodes_[size_t(bias)].grad;
                    for (int i = 0; i < N; ++i)
                        for (int m = 0; m < M; ++m)
                            gb.data[size_t(m)] += g.data[size_t(i) * M + m];
                }
            });
        return id;
    }

    // x: [C,H,W], w: [O,C,kh,kw], optional bias [O]; square padding.
    NodeId conv2d(NodeId x, NodeId w, NodeId bias, int stride, int pad) {
        const Tensor<T>& xv = val(x);
        const Tensor<T>& wv = val(w);
        require(xv.ndim() == 3 && wv.ndim() == 4 && wv.dim(1) == xv.dim(0),
                ErrorKind::Shape,
                "conv2d: " + shape_str(xv) + " with kernel " + shape_str(wv));
        require(stride >= 1 && pad >= 0, ErrorKind::InvalidArgument,
                "conv2d: bad stride/pad");
        const int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
        const int O = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
        const int HO = (H + 2 * pad - kh) / stride + 1;
        const int WO = (W + 2 * pad - kw) / stride + 1;
        require(HO > 0 && WO > 0, ErrorKind::Shape, "conv2d: empty output");
        const int K = C * kh * kw, P = HO * WO;

        std::vector<T> col(size_t(K) * P);
        im2col(xv.ptr(), C, H, W, kh, kw, stride, pad, HO, WO, col.data());
        Tensor<T> out({O, HO, WO});
        gemm(false, false, O, P, K, T(1), wv.ptr(), K, col.data(), P, T(0), out.ptr(), P);
        if (bias >= 0) {
            const Tensor<T>& bv = val(bias);
            require(bv.ndim() == 1 && bv.dim(0) == O, ErrorKind::Shape,
                    "conv2d: bias must be [O]");
            for (int o = 0; o < O; ++o)
                for (int p = 0; p < P; ++p) out.data[size_t(o) * P + p] += bv.data[size_t(o)];
        }
        const NodeId id = make_node(std::move(out));
        if (grad_enabled_)
            set_back(id, [this, id, x, w, bias, stride, pad, C, H, W, O, kh, kw, HO, WO,
                          K, P] {
                const Tensor<T>& g = nodes_[size_t(id)].grad;
                const Tensor<T>& xv2 = nodes_[size_t(x)].value;
                const Tensor<T>& wv2 = nodes_[size_t(w)].value;
                // The column matrix is recomputed rather than cached: the
                // tape holds many conv nodes and activations dominate memory.
                std::vector<T> col2(size_t(K) * P);
                im2col(xv2.ptr(), C, H, W, kh, kw, stride, pad, HO, WO, col2.data());
                gemm(false, true, O, K, P, T(1), g.ptr(), P, col2.data(), P, T(1),
                     nodes_[size_t(w)].grad.ptr(), K);
                std::vector<T> dcol(size_t(K) * P);
                gemm(true, false, K, P, O, T(1), wv2.ptr(), K, g.ptr(), P, T(0),
                     dcol.data(), P);
                col2im_add(dcol.data(), C, H, W, kh, kw, stride, pad, HO, WO,
                           nodes_[size_t(x)].grad.ptr());
                if (bias >= 0) {
                    Tensor<T>& gb = nodes_[size_t(bias)].grad;
                    for (int o = 0; o < O; ++o)
                        for (int p = 0; p < P; ++p)
                            gb.data[size_t(o)] += g.data[size_t(o) * P + p];
                }
            });
        return id;
    }

    // x: [C,H,W]; gamma/beta: [C].
    NodeId group_norm(NodeId x, NodeId gamma, NodeId beta, int groups, T eps) {
        const Tensor<T>& xv = val(x);
        require(xv.ndim() == 3, ErrorKind::Shape, "group_norm: need [C,H,W]");
        const int C = xv.dim(0), HW = xv.dim(1) * xv.dim(2);
        require(groups >= 1 && C % groups == 0, ErrorKind::Shape,
                "group_norm: groups must divide channels");
        const Tensor<T>& gv = val(gamma);
        const Tensor<T>& bv = val(beta);
        require(gv.ndim() == 1 && gv.dim(0) == C && bv.ndim() == 1 && bv.dim(0) == C,
                ErrorKind::Shape, "group_norm: gamma/beta must be [C]");
        const int cg = C / groups;
        const size_t n = size_t(cg) * HW;

        std::vector<T> mean(size_t(groups), T(0)), invstd(size_t(groups), T(0));
        Tensor<T> out = xv;
        for (int g = 0; g < groups; ++g) {
            const T* px = xv.ptr() + size_t(g) * n;
            T mu = T(0);
            for (size_t i = 0; i < n; ++i) mu += px[i];
            mu /= T(n);
            T var = T(0);
            for (size_t i = 0; i < n; ++i) var += (px[i] - mu) * (px[i] - mu);
            var /= T(n);
            const T is = T(1) / std::sqrt(var + eps);
            mean[size_t(g)] = mu;
            invstd[size_t(g)] = is;
            T* po = out.ptr() + size_t(g) * n;
            for (int c = 0; c < cg; ++c) {
                const T ga = gv.data[size_t(g * cg + c)];
                const T be = bv.data[size_t(g * cg + c)];
                for (int i = 0; i < HW; ++i) {
                    const size_t k = size_t(c) * HW + i;
                    po[k] = (px[k] - mu) * is * ga + be;
                }
            }
        }
        const NodeId id = make_node(std::move(out));
        if (grad_enabled_)
            set_back(id, [this, id, x, gamma, beta, groups, cg, HW, n,
                          mean = std::move(mean), invstd = std::move(invstd)] {
                const Tensor<T>& g = nodes_[size_t(id)].grad;
                const Tensor<T>& xv2 = nodes_[size_t(x)].value;
                const Tensor<T>& gv2 = nodes_[size_t(gamma)].value;
                Tensor<T>& gx = nodes_[size_t(x)].grad;
                Tensor<T>& gg = nodes_[size_t(gamma)].grad;
                Tensor<T>& gb = nodes_[size_t(beta)].grad;
                for (int grp = 0; grp < groups; ++grp) {
                    const T mu = mean[size_t(grp)], is = invstd[size_t(grp)];
                    const T* px = xv2.ptr() + size_t(grp) * n;
                    const T* pg = g.ptr() + size_t(grp) * n;
                    T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
                    for (int c = 0; c < cg; ++c) {
                        const T ga = gv2.data[size_t(grp * cg + c)];
                        for (int i = 0; i < HW; ++i) {
                            const size_t k = size_t(c) * HW + i;
                            const T xhat = (px[k] - mu) * is;
                            const T dxhat = pg[k] * ga;
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xhat;
                            gg.data[size_t(grp * cg + c)] += pg[k] * xhat;
                            gb.data[size_t(grp * cg + c)] += pg[k];
                        }
                    }
                    T* pgx = gx.ptr() + size_t(grp) * n;
                    for (int c = 0; c < cg; ++c) {
                        const T ga = gv2.data[size_t(grp * cg + c)];
                        for (int i = 0; i < HW; ++i) {
                            const size_t k = size_t(c) * HW + i;
                            const T xhat = (px[k] - mu) * is;
                            const T dxhat = pg[k] * ga;
                            pgx[k] += is * (dxhat - (sum_dxhat + xhat * sum_dxhat_xhat) / T(n));
                        }
                    }
                }
            });
        return id;
    }

    // x: [N,D]; gamma/beta: [D]; normalized per row.
    NodeId layer_norm(NodeId x, NodeId gamma, NodeId beta, T eps) {
        const Tensor<T>& xv = val(x);
        require(xv.ndim() == 2, ErrorKind::Shape, "layer_norm: need [N,D]");
        const int N = xv.dim(0), D = xv.dim(1);
        const Tensor<T>& gv = val(gamma);
        const Tensor<T>& bv = val(beta);
        require(gv.ndim() == 1 && gv.dim(0) == D && bv.ndim() == 1 && bv.dim(0) == D,
                ErrorKind::Shape, "layer_norm: gamma/beta must be [D]");
        std::vector<T> mean(size_t(N), T(0)), invstd(size_t(N), T(0));
        Tensor<T> out = xv;
        for (int i = 0; i < N; ++i) {
            const T* px = xv.ptr() + size_t(i) * D;
            T mu = T(0);
            for (int d = 0; d < D; ++d) mu += px[d];
            mu /= T(D);
            T var = T(0);
            for (int d = 0; d < D; ++d) var += (px[d] - mu) * (px[d] - mu);
            var /= T(D);
            const T is = T(1) / std::sqrt(var + eps);
            mean[size_t(i)] = mu;
            invstd[size_t(i)] = is;
            T* po = out.ptr() + size_t(i) * D;
            for (int d = 0; d < D; ++d)
                po[d] = (px[d] - mu) * is * gv.data[size_t(d)] + bv.data[size_t(d)];
        }
        const NodeId id = make_node(std::move(out));
        if (grad_enabled_)
            set_back(id, [this, id, x, gamma, beta, N, D, mean = std::move(mean),
                          invstd = std::move(invstd)] {
                const Tensor<T>& g = nodes_[size_t(id)].grad;
                const Tensor<T>& xv2 = nodes_[size_t(x)].value;
                const Tensor<T>& gv2 = nodes_[size_t(gamma)].value;
                Tensor<T>& gx = nodes_[size_t(x)].grad;
                Tensor<T>& gg = nodes_[size_t(gamma)].grad;
                Tensor<T>& gb = nodes_[size_t(beta)].grad;
                for (int i = 0; i < N; ++i) {
                    const T mu = mean[size_t(i)], is = invstd[size_t(i)];
                    const T* px = xv2.ptr() + size_t(i) * D;
                    const T* pg = g.ptr() + size_t(i) * D;
                    T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
                    for (int d = 0; d < D; ++d) {
                        const T xhat = (px[d] - mu) * is;
                        const T dxhat = pg[d] * gv2.data[size_t(d)];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                        gg.data[size_t(d)] += pg[d] * xhat;
                        gb.data[size_t(d)] += pg[d];
                    }
                    T* pgx = gx.ptr() + size_t(i) * D;
                    for (int d = 0; d < D; ++d) {
                        const T xhat = (px[d] - mu) * is;
                        const T dxhat = pg[d] * gv2.data[size_t(d)];
                        pgx[d] += is * (dxhat - (sum_dxhat + xhat * sum_dxhat_xhat) / T(D));
                    }
                }
            });
        return id;
    }

    // Multi-head scaled dot-product attention.  q: [N,D]; k, v: [M,D].
    // masked_out[j] = true removes key j from every query's softmax.  If
    // every key is masked the output is exactly zero (the "no keys"
    // convention used for empty condition sets).
    NodeId attention(NodeId q, NodeId k, NodeId v, int heads,
                     const std::vector<uint8_t>* masked_out = nullptr) {
        const Tensor<T>& qv = val(q);
        const Tensor<T>& kv = val(k);
        const Tensor<T>& vv = val(v);
        require(qv.ndim() == 2 && kv.ndim() == 2 && vv.ndim() == 2, ErrorKind::Shape,
                "attention: q,k,v must be matrices");
        const int N = qv.dim(0), D = qv.dim(1), M = kv.dim(0);
        require(kv.dim(1) == D && vv.dim(1) == D && vv.dim(0) == M, ErrorKind::Shape,
                "attention: k/v shape mismatch");
        require(heads >= 1 && D % heads == 0, ErrorKind::Shape,
                "attention: heads must divide d");
        std::vector<uint8_t> mask;
        if (masked_out) {
            require(int(masked_out->size()) == M, ErrorKind::Shape,
                    "attention: mask length must equal key count");
            mask = *masked_out;
        }
        bool all_masked = masked_out != nullptr;
        for (uint8_t m : mask) all_masked = all_masked && m;
        if (all_masked) return zeros({N, D});

        const int dh = D / heads;
        const T att_scale = T(1) / std::sqrt(T(dh));
        // probs: [heads][N,M], kept for backward.
        std::vector<T> probs(size_t(heads) * N * M);
        Tensor<T> out({N, D});
        for (int h = 0; h < heads; ++h) {
            T* ph = probs.data() + size_t(h) * N * M;
            gemm(false, true, N, M, dh, att_scale, qv.ptr() + size_t(h) * dh, D,
                 kv.ptr() + size_t(h) * dh, D, T(0), ph, M);
            for (int i = 0; i < N; ++i) {
                T* row = ph + size_t(i) * M;
                T mx = -std::numeric_limits<T>::infinity();
                for (int j = 0; j < M; ++j) {
                    if (!mask.empty() && mask[size_t(j)]) continue;
                    mx = std::max(mx, row[j]);
                }
                T sum = T(0);
                for (int j = 0; j < M; ++j) {
                    if (!mask.empty() && mask[size_t(j)]) {
                        row[j] = T(0);
                        continue;
                    }
                    row[j] = std::exp(row[j] - mx);
                    sum += row[j];
                }
                for (int j = 0; j < M; ++j) row[j] /= sum;
            }
            gemm(false, false, N, dh, M, T(1), ph, M, vv.ptr() + size_t(h) * dh, D,
                 T(0), out.ptr() + size_t(h) * dh, D);
        }
        const NodeId id = make_node(std::move(out));
        if (grad_enabled_)
            set_back(id, [this, id, q, k, v, heads, N, M, D, dh, att_scale,
                          probs = std::move(probs)] {
                const Tensor<T>& g = nodes_[size_t(id)].grad;
                const Tensor<T>& qv2 = nodes_[size_t(q)].value;
                const Tensor<T>& kv2 = nodes_[size_t(k)].value;
                const Tensor<T>& vv2 = nodes_[size_t(v)].value;
                Tensor<T>& gq = nodes_[size_t(q)].grad;
                Tensor<T>& gk = nodes_[size_t(k)].grad;
                Tensor<T>& gv2 = nodes_[size_t(v)].grad;
                std::vector<T> dP(size_t(N) * M), dS(size_t(N) * M);
                for (int h = 0; h < heads; ++h) {
                    const T* ph = probs.data() + size_t(h) * N * M;
                    // dV += P^T dOh
                    gemm(true, false, M, dh, N, T(1), ph, M, g.ptr() + size_t(h) * dh,
                         D, T(1), gv2.ptr() + size_t(h) * dh, D);
                    // dP = dOh V^T
                    gemm(false, true, N, M, dh, T(1), g.ptr() + size_t(h) * dh, D,
                         vv2.ptr() + size_t(h) * dh, D, T(0), dP.data(), M);
                    // softmax backward: dS = P o (dP - rowsum(dP o P));
                    // masked keys have P = 0 and so contribute nothing.
                    for (int i = 0; i < N; ++i) {
                        const T* prow = ph + size_t(i) * M;
                        const T* dprow = dP.data() + size_t(i) * M;
                        T dot = T(0);
                        for (int j = 0; j < M; ++j) dot += prow[j] * dprow[j];
                        T* dsrow = dS.data() + size_t(i) * M;
                        for (int j = 0; j < M; ++j)
                            dsrow[j] = prow[j] * (dprow[j] - dot);
                    }
                    // dq += dS k * scale ; dk += dS^T q * scale
                    gemm(false, false, N, dh, M, att_scale, dS.data(), M,
                         kv2.ptr() + size_t(h) * dh, D, T(1), gq.ptr() + size_t(h) * dh,
                         D);
                    gemm(true, false, M, dh, N, att_scale, dS.data(), M,
                         qv2.ptr() + size_t(h) * dh, D, T(1), gk.ptr() + size_t(h) * dh,
                         D);
                }
            });
        return id;
    }

    NodeId mse_loss(NodeId a, NodeId b) {
        require(val(a).same_shape(val(b)), ErrorKind::Shape, "mse_loss: shape mismatch");
        const Tensor<T>& av = val(a);
        const Tensor<T>& bv = val(b);
        const size_t n = av.numel();
        T acc = T(0);
        for (size_t i = 0; i < n; ++i) {
            const T d = av.data[i] - bv.data[i];
            acc += d * d;
        }
        Tensor<T> out({1});
        out.data[0] = acc / T(n);
        const NodeId id = make_node(std::move(out));
        if (grad_enabled_)
            set_back(id, [this, id, a, b, n] {
                const T gy = nodes_[size_t(id)].grad.data[0];
                const Tensor<T>& av2 = nodes_[size_t(a)].value;
                const Tensor<T>& bv2 = nodes_[size_t(b)].value;
                Tensor<T>& ga = nodes_[size_t(a)].grad;
                Tensor<T>& gb = nodes_[size_t(b)].grad;
                const T c = gy * T(2) / T(n);
                for (size_t i = 0; i < n; ++i) {
                    const T d = c * (av2.data[i] - bv2.data[i]);
                    ga.data[i] += d;
                    gb.data[i] -= d;
                }
            });
        return id;
    }

  private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        std::function<void()> back;
    };

    NodeId make_node(Tensor<T> value) {
        Node n;
        if (grad_enabled_) n.grad = Tensor<T>(value.shape);
        n.value = std::move(value);
        nodes_.push_back(std::move(n));
        return NodeId(nodes_.size() - 1);
    }

    void set_back(NodeId id, std::function<void()> fn) {
        nodes_[size_t(id)].back = std::move(fn);
    }

    void accumulate(NodeId target, const T* src, size_t n) {
        Tensor<T>& g = nodes_[size_t(target)].grad;
        for (size_t i = 0; i < n; ++i) g.data[i] += src[i];
    }

    static void im2col(const T* x, int C, int H, int W, int kh, int kw, int stride,
                       int pad, int HO, int WO, T* col) {
        for (int c = 0; c < C; ++c)
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) {
                    T* dst = col + (size_t((c * kh + ky) * kw + kx)) * (size_t(HO) * WO);
                    for (int oy = 0; oy < HO; ++oy) {
                        const int iy = oy * stride - pad + ky;
                        for (int ox = 0; ox < WO; ++ox) {
                            const int ix = ox * stride - pad + kx;
                            dst[size_t(oy) * WO + ox] =
                                (iy >= 0 && iy < H && ix >= 0 && ix < W)
                                    ? x[size_t(c * H + iy) * W + ix]
                                    : T(0);
                        }
                    }
                }
    }

    static void col2im_add(const T* col, int C, int H, int W, int kh, int kw,
                           int stride, int pad, int HO, int WO, T* dx) {
        for (int c = 0; c < C; ++c)
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) {
                    const T* src =
                        col + (size_t((c * kh + ky) * kw + kx)) * (size_t(HO) * WO);
                    for (int oy = 0; oy < HO; ++oy) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= H) continue;
                        for (int ox = 0; ox < WO; ++ox) {
                            const int ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= W) continue;
                            dx[size_t(c * H + iy) * W + ix] += src[size_t(oy) * WO + ox];
                        }
                    }
                }
    }

    bool grad_enabled_;
    bool ran_backward_ = false;
    // deque: references returned by val()/grad_of() stay valid as later
    // ops append nodes.
    std::deque<Node> nodes_;
    std::vector<std::pair<Parameter<T>*, NodeId>> param_nodes_;
};

}  // namespace dg

#endif
