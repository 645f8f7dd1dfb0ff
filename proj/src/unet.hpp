#ifndef DRIVEGEN_UNET_HPP
#define DRIVEGEN_UNET_HPP

// Multi-view denoising UNet.  Per transformer block the order is:
// self-attention -> cross-attention over the view's condition tokens ->
// cross-view attention to neighbor views -> feed-forward.  Cross-view
// output projections and the map-branch level projections are
// zero-initialized, so a freshly built full model computes exactly what
// the base UNet (no cross-view, no map branch) computes.

#include <string>
#include <vector>

#include "encoders.hpp"
#include "layers.hpp"

namespace dg {

enum class AttendedViews { one, two, all };

inline const char* to_string(AttendedViews m) {
    switch (m) {
        case AttendedViews::one: return "one";
        case AttendedViews::two: return "two";
        default: return "all";
    }
}

inline AttendedViews attended_views_from_string(const std::string& s) {
    if (s == "one") return AttendedViews::one;
    if (s == "two") return AttendedViews::two;
    if (s == "all") return AttendedViews::all;
    fail(ErrorKind::Format, "unknown attended_views \"" + s + "\"");
}

struct UNetConfig {
    int image_w = 80, image_h = 48;
    int in_channels = 3;
    int base_channels = 32;
    std::vector<int> channel_mult = {1, 2, 4};
    std::vector<int> attention_levels = {1, 2};
    int num_heads = 4;
    int d_emb = 64;
    int max_boxes = 16;
    int fourier_bands = 4;
    int norm_groups = 8;
    AttendedViews attended_views = AttendedViews::two;
    bool cross_view = true;
    bool map_branch = true;
    bool box_encoder = true;
    bool visibility_filter = true;

    int num_levels() const { return int(channel_mult.size()); }
    int channels_at(int level) const {
        return base_channels * channel_mult[size_t(level)];
    }
    bool attention_at(int level) const {
        for (int l : attention_levels)
            if (l == level) return true;
        return false;
    }

    void validate() const {
        require(num_levels() >= 1, ErrorKind::InvalidArgument, "need at least one level");
        require(base_channels >= 1 && in_channels >= 1, ErrorKind::InvalidArgument,
                "channel counts must be positive");
        const int down = 1 << (num_levels() - 1);
        require(image_w % down == 0 && image_h % down == 0, ErrorKind::Shape,
                "image size must be divisible by 2^(levels-1)");
        require(d_emb >= 2 && d_emb % 2 == 0, ErrorKind::Shape, "d_emb must be even");
        require(num_heads >= 1 && d_emb % num_heads == 0, ErrorKind::Shape,
                "heads must divide d_emb");
        for (int l : attention_levels)
            require(l >= 0 && l < num_levels(), ErrorKind::InvalidArgument,
                    "attention level out of range");
        for (int l = 0; l < num_levels(); ++l) {
            require(channel_mult[size_t(l)] >= 1, ErrorKind::InvalidArgument,
                    "channel multiplier must be positive");
            require(channels_at(l) % norm_groups == 0, ErrorKind::Shape,
                    "norm groups must divide channels at every level");
            if (attention_at(l))
                require(channels_at(l) % num_heads == 0, ErrorKind::Shape,
                        "heads must divide channels at attention levels");
        }
        require(max_boxes >= 1, ErrorKind::InvalidArgument, "max_boxes must be >= 1");
        require(fourier_bands >= 1, ErrorKind::InvalidArgument,
                "fourier_bands must be >= 1");
    }
};

// Neighbor views on the circular rig.  mode=one -> left only; two ->
// (left, right); all -> every other view in ascending index order.
inline std::vector<int> neighbors(int view_index, int num_views, AttendedViews mode) {
    require(num_views >= 2, ErrorKind::InvalidArgument,
            "neighbors requires at least two views");
    require(view_index >= 0 && view_index < num_views, ErrorKind::InvalidArgument,
            "view index out of range");
    switch (mode) {
        case AttendedViews::one:
            return {(view_index + num_views - 1) % num_views};
        case AttendedViews::two:
            return {(view_index + num_views - 1) % num_views,
                    (view_index + 1) % num_views};
        default: {
            std::vector<int> out;
            for (int v = 0; v < num_views; ++v)
                if (v != view_index) out.push_back(v);
            return out;
        }
    }
}

// Per-view conditioning, already lowered into graph nodes.
struct EncodedView {
    int cond_tokens = -1;             // [S, d_emb] scene tokens then box tokens
    std::vector<uint8_t> masked_out;  // per cond token; empty = attend everything
    std::vector<int> map_feats;       // per level [C_l, H_l, W_l]; empty = no map branch
};

template <typename T>
struct ResBlock {
    GroupNormP<T> gn1, gn2;
    Conv<T> conv1, conv2;
    Linear<T> tproj;  // applied to silu(time embedding)
    Conv<T> skip;     // 1x1 when channel count changes
    bool has_time = false, has_skip = false;

    static ResBlock create(ParamStore<T>& ps, uint64_t seed, const std::string& name,
                           int in_ch, int out_ch, int time_dim, int groups) {
        ResBlock b;
        b.gn1 = GroupNormP<T>::create(ps, name + ".gn1", in_ch, groups);
        b.conv1 = Conv<T>::create(ps, seed, name + ".conv1", in_ch, out_ch, 3, 1, 1);
        b.gn2 = GroupNormP<T>::create(ps, name + ".gn2", out_ch, groups);
        b.conv2 = Conv<T>::create(ps, seed, name + ".conv2", out_ch, out_ch, 3, 1, 1);
        b.has_time = time_dim > 0;
        if (b.has_time)
            b.tproj = Linear<T>::create(ps, seed, name + ".tproj", time_dim, out_ch);
        b.has_skip = in_ch != out_ch;
        if (b.has_skip)
            b.skip = Conv<T>::create(ps, seed, name + ".skip", in_ch, out_ch, 1, 1, 0);
        return b;
    }

    // t_base: [1, time_dim] node (ignored unless the block has time).
    int forward(Graph<T>& g, int x, int t_base) const {
        int h = conv1.forward(g, g.silu(gn1.forward(g, x)));
        if (has_time) {
            const int tv = tproj.forward(g, g.silu(t_base));
            h = g.add_channel_vec(h, g.reshape(tv, {g.val(tv).dim(1)}));
        }
        h = conv2.forward(g, g.silu(gn2.forward(g, h)));
        return g.add(h, has_skip ? skip.forward(g, x) : x);
    }
};

template <typename T>
struct TransformerBlock {
    int ch = 0, heads = 1;
    bool cross_view = false;
    LayerNormP<T> ln1, ln2, ln3, ln4;
    Linear<T> sq, sk, sv, so;   // self-attention
    Linear<T> cq, ck, cv, co;   // cross-attention over condition tokens
    Linear<T> xq, xk, xv;       // cross-view, shared across directions
    std::vector<Linear<T>> xo;  // per-direction output projections, zero-init
    Linear<T> ff1, ff2;

    static TransformerBlock create(ParamStore<T>& ps, uint64_t seed,
                                   const std::string& name, int ch, int d_emb,
                                   int heads, bool cross_view, int n_directions) {
        TransformerBlock b;
        b.ch = ch;
        b.heads = heads;
        b.cross_view = cross_view;
        b.ln1 = LayerNormP<T>::create(ps, name + ".ln1", ch);
        b.sq = Linear<T>::create(ps, seed, name + ".sq", ch, ch);
        b.sk = Linear<T>::create(ps, seed, name + ".sk", ch, ch);
        b.sv = Linear<T>::create(ps, seed, name + ".sv", ch, ch);
        b.so = Linear<T>::create(ps, seed, name + ".so", ch, ch);
        b.ln2 = LayerNormP<T>::create(ps, name + ".ln2", ch);
        b.cq = Linear<T>::create(ps, seed, name + ".cq", ch, ch);
        b.ck = Linear<T>::create(ps, seed, name + ".ck", d_emb, ch);
        b.cv = Linear<T>::create(ps, seed, name + ".cv", d_emb, ch);
        b.co = Linear<T>::create(ps, seed, name + ".co", ch, ch);
        if (cross_view) {
            b.ln3 = LayerNormP<T>::create(ps, name + ".ln3", ch);
            b.xq = Linear<T>::create(ps, seed, name + ".xq", ch, ch);
            b.xk = Linear<T>::create(ps, seed, name + ".xk", ch, ch);
            b.xv = Linear<T>::create(ps, seed, name + ".xv", ch, ch);
            for (int d = 0; d < n_directions; ++d)
                b.xo.push_back(Linear<T>::create(ps, seed,
                                                 name + ".xo" + std::to_string(d), ch,
                                                 ch, true, /*zero_init=*/true));
        }
        b.ln4 = LayerNormP<T>::create(ps, name + ".ln4", ch);
        b.ff1 = Linear<T>::create(ps, seed, name + ".ff1", ch, 2 * ch);
        b.ff2 = Linear<T>::create(ps, seed, name + ".ff2", 2 * ch, ch);
        return b;
    }

    // Lockstep forward over all views; cross-view attention is the one
    // stage that reads other views' states.  neighbor_lists[v] is empty
    // or absent topology disables cross-view mixing for that call.
    std::vector<int> forward_views(Graph<T>& g, const std::vector<int>& x_views,
                                   const std::vector<EncodedView>& conds,
                                   const std::vector<std::vector<int>>& neighbor_lists,
                                   int H, int W) const {
        const int V = int(x_views.size());
        require(int(conds.size()) == V, ErrorKind::Shape,
                "condition count must match view count");
        std::vector<int> tok(size_t(V), -1);
        for (int v = 0; v < V; ++v) {
            tok[size_t(v)] = g.chw_to_tokens(x_views[size_t(v)]);
            const int a = ln1.forward(g, tok[size_t(v)]);
            const int s = g.attention(sq.forward(g, a), sk.forward(g, a),
                                      sv.forward(g, a), heads);
            tok[size_t(v)] = g.add(tok[size_t(v)], so.forward(g, s));

            const int b = ln2.forward(g, tok[size_t(v)]);
            const EncodedView& c = conds[size_t(v)];
            const std::vector<uint8_t>* mask =
                c.masked_out.empty() ? nullptr : &c.masked_out;
            const int x = g.attention(cq.forward(g, b), ck.forward(g, c.cond_tokens),
                                      cv.forward(g, c.cond_tokens), heads, mask);
            tok[size_t(v)] = g.add(tok[size_t(v)], co.forward(g, x));
        }
        const bool do_cv = cross_view && !neighbor_lists.empty() && V >= 2;
        if (do_cv) {
            require(int(neighbor_lists.size()) == V, ErrorKind::Shape,
                    "neighbor topology must cover every view");
            std::vector<int> qs(size_t(V), -1), ks(size_t(V), -1), vs(size_t(V), -1);
            for (int v = 0; v < V; ++v) {
                const int n = ln3.forward(g, tok[size_t(v)]);
                qs[size_t(v)] = xq.forward(g, n);
                ks[size_t(v)] = xk.forward(g, n);
                vs[size_t(v)] = xv.forward(g, n);
            }
            std::vector<int> updated(size_t(V), -1);
            for (int v = 0; v < V; ++v) {
                int h = tok[size_t(v)];
                const auto& nbrs = neighbor_lists[size_t(v)];
                require(nbrs.size() <= xo.size(), ErrorKind::Shape,
                        "more neighbors than cross-view directions");
                for (size_t d = 0; d < nbrs.size(); ++d) {
                    const int nb = nbrs[d];
                    const int o = g.attention(qs[size_t(v)], ks[size_t(nb)],
                                              vs[size_t(nb)], heads);
                    h = g.add(h, xo[d].forward(g, o));
                }
                updated[size_t(v)] = h;
            }
            tok = updated;
        }
        std::vector<int> out(size_t(V), -1);
        for (int v = 0; v < V; ++v) {
            const int f = ln4.forward(g, tok[size_t(v)]);
            tok[size_t(v)] = g.add(tok[size_t(v)], ff2.forward(g, g.silu(ff1.forward(g, f))));
            out[size_t(v)] = g.tokens_to_chw(tok[size_t(v)], H, W);
        }
        return out;
    }
};

// Additive map branch: mirrors the UNet encoder's downsampling path over
// a resampled map image, with one cross-attention over the condition
// tokens per level.  Each level's output passes a zero-initialized 1x1
// projection, so the branch contributes exactly zero at initialization.
template <typename T>
struct MapCrossBlock {
    int heads = 1;
    LayerNormP<T> ln;
    Linear<T> q, k, v, o;

    static MapCrossBlock create(ParamStore<T>& ps, uint64_t seed,
                                const std::string& name, int ch, int d_emb, int heads) {
        MapCrossBlock b;
        b.heads = heads;
        b.ln = LayerNormP<T>::create(ps, name + ".ln", ch);
        b.q = Linear<T>::create(ps, seed, name + ".q", ch, ch);
        b.k = Linear<T>::create(ps, seed, name + ".k", d_emb, ch);
        b.v = Linear<T>::create(ps, seed, name + ".v", d_emb, ch);
        b.o = Linear<T>::create(ps, seed, name + ".o", ch, ch);
        return b;
    }

    int forward(Graph<T>& g, int x_chw, int cond_tokens,
                const std::vector<uint8_t>* mask, int H, int W) const {
        int tok = g.chw_to_tokens(x_chw);
        const int a = ln.forward(g, tok);
        const int att = g.attention(q.forward(g, a), k.forward(g, cond_tokens),
                                    v.forward(g, cond_tokens), heads, mask);
        tok = g.add(tok, o.forward(g, att));
        return g.tokens_to_chw(tok, H, W);
    }
};

template <typename T>
struct MapEncoder {
    UNetConfig cfg;
    int map_channels = 0;
    Conv<T> in_conv;
    std::vector<ResBlock<T>> res;         // one per level
    std::vector<MapCrossBlock<T>> xattn;  // one per level
    std::vector<Conv<T>> down;            // level l-1 -> l, stride 2
    std::vector<Conv<T>> out_proj;        // zero-init 1x1 per level

    static MapEncoder create(ParamStore<T>& ps, uint64_t seed, const UNetConfig& cfg,
                             int map_channels) {
        // Map-branch attention heads must divide channels at every level,
        // since the branch attends at levels the main UNet may not.
        for (int l = 0; l < cfg.num_levels(); ++l)
            require(cfg.channels_at(l) % cfg.num_heads == 0, ErrorKind::Shape,
                    "heads must divide channels for the map branch");
        MapEncoder m;
        m.cfg = cfg;
        m.map_channels = map_channels;
        m.in_conv = Conv<T>::create(ps, seed, "map.in", map_channels,
                                    cfg.channels_at(0), 3, 1, 1);
        for (int l = 0; l < cfg.num_levels(); ++l) {
            const std::string lv = "map.enc" + std::to_string(l);
            if (l > 0)
                m.down.push_back(Conv<T>::create(ps, seed, lv + ".down",
                                                 cfg.channels_at(l - 1),
                                                 cfg.channels_at(l), 3, 2, 1));
            m.res.push_back(ResBlock<T>::create(ps, seed, lv + ".res", cfg.channels_at(l),
                                                cfg.channels_at(l), 0, cfg.norm_groups));
            m.xattn.push_back(MapCrossBlock<T>::create(ps, seed, lv + ".xattn",
                                                       cfg.channels_at(l), cfg.d_emb,
                                                       cfg.num_heads));
            m.out_proj.push_back(Conv<T>::create(ps, seed, lv + ".out",
                                                 cfg.channels_at(l), cfg.channels_at(l),
                                                 1, 1, 0, /*zero_init=*/true));
        }
        return m;
    }

    // map_image: [map_channels, image_h, image_w] node.
    std::vector<int> forward(Graph<T>& g, int map_image, int cond_tokens,
                             const std::vector<uint8_t>* mask) const {
        std::vector<int> pyramid;
        int h = in_conv.forward(g, map_image);
        int H = cfg.image_h, W = cfg.image_w;
        for (int l = 0; l < cfg.num_levels(); ++l) {
            if (l > 0) {
                h = down[size_t(l - 1)].forward(g, h);
                H /= 2;
                W /= 2;
            }
            h = res[size_t(l)].forward(g, h, -1);
            h = xattn[size_t(l)].forward(g, h, cond_tokens, mask, H, W);
            pyramid.push_back(out_proj[size_t(l)].forward(g, h));
        }
        return pyramid;
    }
};

template <typename T>
struct UNet {
    UNetConfig cfg;
    int num_views = 1;
    int time_dim = 0;
    Linear<T> time1, time2;
    Conv<T> in_conv;
    std::vector<ResBlock<T>> enc_res;
    std::vector<TransformerBlock<T>> enc_attn;  // indexed by level; only some valid
    std::vector<uint8_t> enc_has_attn;
    std::vector<Conv<T>> down;  // into level l (l >= 1)
    std::vector<Conv<T>> up;    // into level l (l <= L-2), applied after upsample
    std::vector<ResBlock<T>> dec_res;
    std::vector<TransformerBlock<T>> dec_attn;
    std::vector<uint8_t> dec_has_attn;
    GroupNormP<T> out_norm;
    Conv<T> out_conv;  // zero-init: freshly built model predicts zero noise

    static UNet create(ParamStore<T>& ps, uint64_t seed, const UNetConfig& cfg,
                       int num_views) {
        cfg.validate();
        UNet u;
        u.cfg = cfg;
        u.num_views = num_views;
        u.time_dim = 4 * cfg.base_channels;
        u.time1 = Linear<T>::create(ps, seed, "time.l1", cfg.base_channels, u.time_dim);
        u.time2 = Linear<T>::create(ps, seed, "time.l2", u.time_dim, u.time_dim);
        u.in_conv = Conv<T>::create(ps, seed, "unet.in", cfg.in_channels,
                                    cfg.channels_at(0), 3, 1, 1);
        const bool cv = cfg.cross_view && num_views >= 2;
        const int n_dirs = cv ? int(neighbors(0, std::max(num_views, 2),
                                              cfg.attended_views).size())
                              : 0;
        const int L = cfg.num_levels();
        for (int l = 0; l < L; ++l) {
            const std::string lv = "unet.enc" + std::to_string(l);
            if (l > 0)
                u.down.push_back(Conv<T>::create(ps, seed, lv + ".down",
                                                 cfg.channels_at(l - 1),
                                                 cfg.channels_at(l), 3, 2, 1));
            u.enc_res.push_back(ResBlock<T>::create(ps, seed, lv + ".res",
                                                    cfg.channels_at(l),
                                                    cfg.channels_at(l), u.time_dim,
                                                    cfg.norm_groups));
            u.enc_has_attn.push_back(cfg.attention_at(l) ? 1 : 0);
            u.enc_attn.push_back(
                cfg.attention_at(l)
                    ? TransformerBlock<T>::create(ps, seed, lv + ".attn",
                                                  cfg.channels_at(l), cfg.d_emb,
                                                  cfg.num_heads, cv, n_dirs)
                    : TransformerBlock<T>{});
        }
        for (int l = L - 2; l >= 0; --l) {
            const std::string lv = "unet.dec" + std::to_string(l);
            u.up.push_back(Conv<T>::create(ps, seed, lv + ".up", cfg.channels_at(l + 1),
                                           cfg.channels_at(l), 3, 1, 1));
            u.dec_res.push_back(ResBlock<T>::create(ps, seed, lv + ".res",
                                                    2 * cfg.channels_at(l),
                                                    cfg.channels_at(l), u.time_dim,
                                                    cfg.norm_groups));
            u.dec_has_attn.push_back(cfg.attention_at(l) ? 1 : 0);
            u.dec_attn.push_back(
                cfg.attention_at(l)
                    ? TransformerBlock<T>::create(ps, seed, lv + ".attn",
                                                  cfg.channels_at(l), cfg.d_emb,
                                                  cfg.num_heads, cv, n_dirs)
                    : TransformerBlock<T>{});
        }
        u.out_norm = GroupNormP<T>::create(ps, "unet.out.norm", cfg.channels_at(0),
                                           cfg.norm_groups);
        u.out_conv = Conv<T>::create(ps, seed, "unet.out.conv", cfg.channels_at(0),
                                     cfg.in_channels, 3, 1, 1, /*zero_init=*/true);
        return u;
    }

    // Sinusoidal timestep features, the input to the time MLP.
    Tensor<T> timestep_features(int t) const {
        Tensor<T> f({1, cfg.base_channels});
        const auto row = sinusoid_features(double(t), cfg.base_channels);
        for (int i = 0; i < cfg.base_channels; ++i) f.data[size_t(i)] = T(row[size_t(i)]);
        return f;
    }

    std::vector<int> forward(Graph<T>& g, const std::vector<int>& x_views, int t,
                             const std::vector<EncodedView>& conds) const {
        const int V = int(x_views.size());
        require(V >= 1 && V == int(conds.size()), ErrorKind::Shape,
                "views and conditions must align");
        for (int v = 0; v < V; ++v) {
            const Tensor<T>& xv = g.val(x_views[size_t(v)]);
            require(xv.ndim() == 3 && xv.dim(0) == cfg.in_channels &&
                        xv.dim(1) == cfg.image_h && xv.dim(2) == cfg.image_w,
                    ErrorKind::Shape, "latent shape mismatch at view " +
                                          std::to_string(v) + ": " + shape_str(xv));
        }
        const bool cv = cfg.cross_view && V >= 2;
        std::vector<std::vector<int>> topology;
        if (cv)
            for (int v = 0; v < V; ++v)
                topology.push_back(neighbors(v, V, cfg.attended_views));

        const int t_base =
            time2.forward(g, g.silu(time1.forward(g, g.input(timestep_features(t)))));

        const int L = cfg.num_levels();
        std::vector<int> h(size_t(V), -1);
        for (int v = 0; v < V; ++v) h[size_t(v)] = in_conv.forward(g, x_views[size_t(v)]);
        // skips[l][v], for levels 0..L-2
        std::vector<std::vector<int>> skips;
        skips.resize(size_t(std::max(0, L - 1)));
        int H = cfg.image_h, W = cfg.image_w;
        for (int l = 0; l < L; ++l) {
            if (l > 0) {
                for (int v = 0; v < V; ++v)
                    h[size_t(v)] = down[size_t(l - 1)].forward(g, h[size_t(v)]);
                H /= 2;
                W /= 2;
            }
            for (int v = 0; v < V; ++v)
                h[size_t(v)] = enc_res[size_t(l)].forward(g, h[size_t(v)], t_base);
            if (enc_has_attn[size_t(l)])
                h = enc_attn[size_t(l)].forward_views(g, h, conds, topology, H, W);
            if (l < L - 1) skips[size_t(l)] = h;
        }
        // Bottleneck map injection, then decode upward.
        add_map_level(g, h, conds, L - 1);
        for (int l = L - 2; l >= 0; --l) {
            const size_t di = size_t(L - 2 - l);
            H *= 2;
            W *= 2;
            for (int v = 0; v < V; ++v)
                h[size_t(v)] =
                    up[di].forward(g, g.upsample_nearest2(h[size_t(v)]));
            add_map_level(g, h, conds, l);
            for (int v = 0; v < V; ++v) {
                const int cat = g.concat_channels(skips[size_t(l)][size_t(v)], h[size_t(v)]);
                h[size_t(v)] = dec_res[di].forward(g, cat, t_base);
            }
            if (dec_has_attn[di])
                h = dec_attn[di].forward_views(g, h, conds, topology, H, W);
        }
        std::vector<int> out(size_t(V), -1);
        for (int v = 0; v < V; ++v)
            out[size_t(v)] =
                out_conv.forward(g, g.silu(out_norm.forward(g, h[size_t(v)])));
        return out;
    }

  private:
    void add_map_level(Graph<T>& g, std::vector<int>& h,
                       const std::vector<EncodedView>& conds, int level) const {
        for (size_t v = 0; v < h.size(); ++v) {
            if (conds[v].map_feats.empty()) continue;
            require(int(conds[v].map_feats.size()) == cfg.num_levels(), ErrorKind::Shape,
                    "map pyramid must cover every level");
            h[v] = g.add(h[v], conds[v].map_feats[size_t(level)]);
        }
    }
};

}  // namespace dg

#endif
