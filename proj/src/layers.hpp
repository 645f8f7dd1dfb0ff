#ifndef DRIVEGEN_LAYERS_HPP
#define DRIVEGEN_LAYERS_HPP

// Small reusable layer wrappers over the autodiff graph.  Parameters are
// initialized from an RNG stream derived from the parameter NAME, not
// from creation order, so two models that share a subset of layer names
// start with identical weights for that subset (used heavily by the
// zero-init equivalence tests and the ablation variants).

#include <string>

#include "graph.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace dg {

inline uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// stddev <= 0 leaves the parameter at zero.
template <typename T>
Parameter<T>* make_param(ParamStore<T>& ps, uint64_t seed, const std::string& name,
                         std::vector<int> shape, double stddev) {
    Parameter<T>* p = ps.add(name, std::move(shape));
    if (stddev > 0) {
        RngStream rng(derive_seed(seed, fnv1a64(name)));
        fill_normal(p->value, rng, stddev);
    }
    return p;
}

template <typename T>
Parameter<T>* make_ones_param(ParamStore<T>& ps, const std::string& name, int n) {
    Parameter<T>* p = ps.add(name, {n});
    for (T& v : p->value.data) v = T(1);
    return p;
}

template <typename T>
struct Linear {
    Parameter<T>* w = nullptr;
    Parameter<T>* b = nullptr;  // optional

    static Linear create(ParamStore<T>& ps, uint64_t seed, const std::string& name,
                         int in, int out, bool bias = true, bool zero_init = false) {
        Linear l;
        const double stddev = zero_init ? 0.0 : 1.0 / std::sqrt(double(in));
        l.w = make_param(ps, seed, name + ".w", {in, out}, stddev);
        if (bias) l.b = ps.add(name + ".b", {out});
        return l;
    }

    int forward(Graph<T>& g, int x) const {
        return g.linear(x, g.param(w), b ? g.param(b) : -1);
    }
};

// linear -> silu -> linear
template <typename T>
struct Mlp2 {
    Linear<T> l1, l2;

    static Mlp2 create(ParamStore<T>& ps, uint64_t seed, const std::string& name,
                       int in, int hidden, int out) {
        Mlp2 m;
        m.l1 = Linear<T>::create(ps, seed, name + ".l1", in, hidden);
        m.l2 = Linear<T>::create(ps, seed, name + ".l2", hidden, out);
        return m;
    }

    int forward(Graph<T>& g, int x) const {
        return l2.forward(g, g.silu(l1.forward(g, x)));
    }
};

template <typename T>
struct LayerNormP {
    Parameter<T>* gamma = nullptr;
    Parameter<T>* beta = nullptr;

    static LayerNormP create(ParamStore<T>& ps, const std::string& name, int d) {
        LayerNormP n;
        n.gamma = make_ones_param(ps, name + ".g", d);
        n.beta = ps.add(name + ".b", {d});
        return n;
    }

    int forward(Graph<T>& g, int x) const {
        return g.layer_norm(x, g.param(gamma), g.param(beta), T(1e-5));
    }
};

template <typename T>
struct GroupNormP {
    Parameter<T>* gamma = nullptr;
    Parameter<T>* beta = nullptr;
    int groups = 8;

    static GroupNormP create(ParamStore<T>& ps, const std::string& name, int channels,
                             int groups) {
        require(groups >= 1 && channels % groups == 0, ErrorKind::Shape,
                "channels " + std::to_string(channels) + " not divisible by " +
                    std::to_string(groups) + " norm groups");
        GroupNormP n;
        n.groups = groups;
        n.gamma = make_ones_param(ps, name + ".g", channels);
        n.beta = ps.add(name + ".b", {channels});
        return n;
    }

    int forward(Graph<T>& g, int x) const {
        return g.group_norm(x, g.param(gamma), g.param(beta), groups, T(1e-5));
    }
};

template <typename T>
struct Conv {
    Parameter<T>* w = nullptr;
    Parameter<T>* b = nullptr;
    int stride = 1, pad = 0;

    static Conv create(ParamStore<T>& ps, uint64_t seed, const std::string& name,
                       int in_ch, int out_ch, int k, int stride, int pad,
                       bool zero_init = false) {
        Conv c;
        c.stride = stride;
        c.pad = pad;
        const int fan_in = in_ch * k * k;
        const double stddev = zero_init ? 0.0 : 1.0 / std::sqrt(double(fan_in));
        c.w = make_param(ps, seed, name + ".w", {out_ch, in_ch, k, k}, stddev);
        c.b = ps.add(name + ".b", {out_ch});
        return c;
    }

    int forward(Graph<T>& g, int x) const {
        return g.conv2d(x, g.param(w), g.param(b), stride, pad);
    }
};

}  // namespace dg

#endif
