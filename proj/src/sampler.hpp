#ifndef DRIVEGEN_SAMPLER_HPP
#define DRIVEGEN_SAMPLER_HPP

// Forward process, training objective, classifier-free guidance, and
// reverse samplers (ancestral + DDIM).  The training loss pins its RNG
// draw order -- (1) shared timestep, (2) scene-drop coin, (3) per-view
// noise in view order, (4) box-augmentation coins inside condition
// encoding -- so checkpoint resume can replay a run exactly.

#include <cmath>
#include <functional>
#include <vector>

#include "model.hpp"
#include "render.hpp"
#include "schedule.hpp"

namespace dg {

// ---- image <-> latent -----------------------------------------------------
// Latents are [3, H, W] planar in [-1, 1]; Image is interleaved 8-bit.
// The mapping byte -> latent -> byte is exact.

template <typename T>
Tensor<T> image_to_latent(const Image& img) {
    Tensor<T> out({3, img.h, img.w});
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            const uint8_t* p = img.px(x, y);
            for (int c = 0; c < 3; ++c)
                out.data[size_t((c * img.h + y) * img.w + x)] =
                    T(p[c] / 127.5 - 1.0);
        }
    return out;
}

template <typename T>
Image latent_to_image(const Tensor<T>& lat) {
    require(lat.ndim() == 3 && lat.dim(0) == 3, ErrorKind::Shape,
            "latent must be [3, H, W], got " + shape_str(lat));
    const int H = lat.dim(1), W = lat.dim(2);
    Image img(W, H);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            uint8_t* p = img.px(x, y);
            for (int c = 0; c < 3; ++c) {
                double v = double(lat.data[size_t((c * H + y) * W + x)]);
                v = std::min(1.0, std::max(-1.0, v));
                p[c] = uint8_t(std::lround((v + 1.0) * 127.5));
            }
        }
    return img;
}

// ---- forward process ------------------------------------------------------

template <typename T>
Tensor<T> q_sample(const Tensor<T>& x0, const Tensor<T>& eps, double alpha_bar) {
    require(x0.shape == eps.shape, ErrorKind::Shape,
            "q_sample: x0 and noise shapes differ");
    require(alpha_bar >= 0.0 && alpha_bar <= 1.0, ErrorKind::InvalidArgument,
            "alpha_bar outside [0,1]");
    const T a = T(std::sqrt(alpha_bar)), b = T(std::sqrt(1.0 - alpha_bar));
    Tensor<T> out(x0.shape);
    for (size_t i = 0; i < out.numel(); ++i)
        out.data[i] = a * x0.data[i] + b * eps.data[i];
    return out;
}

template <typename T>
Tensor<T> q_sample(const Tensor<T>& x0, const Tensor<T>& eps, int t,
                   const NoiseSchedule& s) {
    return q_sample(x0, eps, s.alpha_bar(t));
}

// ---- training objective ---------------------------------------------------

struct TrainingSample {
    int loss = -1;  // scalar graph node
    int t = 1;
    bool scene_dropped = false;
};

// Generic core: `denoise(g, x_nodes, t, scene_dropped) -> eps_hat nodes`
// supplies the model forward (or a stub in tests).  One shared t for the
// sample, an independent noise per view, and a single gamma_s coin for
// the whole scene-level condition; loss is the MSE between noise and
// prediction averaged over all views.
template <typename T, typename DenoiseFn>
TrainingSample training_loss_with(Graph<T>& g, DenoiseFn&& denoise,
                                  const std::vector<Tensor<T>>& images,
                                  const NoiseSchedule& sched, RngStream& rng,
                                  double gamma_s) {
    require(!images.empty(), ErrorKind::InvalidArgument, "no views in sample");
    require(gamma_s >= 0.0 && gamma_s <= 1.0, ErrorKind::InvalidArgument,
            "gamma_s must lie in [0,1]");
    TrainingSample out;
    out.t = 1 + int(rng.uniform_int(uint64_t(sched.num_steps())));
    out.scene_dropped = gamma_s > 0.0 && rng.bernoulli(gamma_s);

    std::vector<int> eps_nodes, x_nodes;
    for (const auto& img : images) {
        Tensor<T> eps(img.shape);
        for (T& v : eps.data) v = T(rng.normal());
        x_nodes.push_back(g.input(q_sample(img, eps, out.t, sched)));
        eps_nodes.push_back(g.input(std::move(eps)));
    }
    const std::vector<int> eps_hat = denoise(g, x_nodes, out.t, out.scene_dropped);
    require(eps_hat.size() == images.size(), ErrorKind::Shape,
            "denoiser returned wrong view count");
    const T inv_views = T(1.0 / double(images.size()));
    int acc = -1;
    for (size_t v = 0; v < images.size(); ++v) {
        const int l = g.mse_loss(eps_hat[v], eps_nodes[v]);
        acc = (acc < 0) ? l : g.add(acc, l);
    }
    out.loss = g.scale(acc, inv_views);
    return out;
}

template <typename T>
TrainingSample training_loss(Graph<T>& g, const Model<T>& model,
                             const SceneInputs& scene,
                             const std::vector<Tensor<T>>& images,
                             const NoiseSchedule& sched, RngStream& rng,
                             double gamma_s, double augment_rate) {
    return training_loss_with(
        g,
        [&](Graph<T>& gg, const std::vector<int>& x_nodes, int t, bool dropped) {
            CondOptions opt;
            opt.drop_scene = dropped;
            opt.augment_rate = augment_rate;
            opt.rng = &rng;
            const auto conds = model.encode_conditions(gg, scene, opt);
            return model.unet_forward(gg, x_nodes, t, conds);
        },
        images, sched, rng, gamma_s);
}

// ---- classifier-free guidance ---------------------------------------------

// `denoise(unconditional) -> per-view eps_hat` runs one full forward pass
// with either the real or the null conditions.  scale 1 and 0 skip the
// unused branch entirely, making those cases bit-exact single passes.
template <typename T>
std::vector<Tensor<T>> cfg_predict(
    const std::function<std::vector<Tensor<T>>(bool unconditional)>& denoise,
    double scale) {
    require(std::isfinite(scale) && scale >= 0.0, ErrorKind::InvalidArgument,
            "guidance scale must be finite and >= 0");
    if (scale == 1.0) return denoise(false);
    if (scale == 0.0) return denoise(true);
    std::vector<Tensor<T>> cond = denoise(false);
    std::vector<Tensor<T>> uncond = denoise(true);
    require(cond.size() == uncond.size(), ErrorKind::Shape,
            "guidance branches returned different view counts");
    for (size_t v = 0; v < cond.size(); ++v) {
        require(cond[v].shape == uncond[v].shape, ErrorKind::Shape,
                "guidance branches returned different shapes");
        for (size_t i = 0; i < cond[v].numel(); ++i)
            uncond[v].data[i] =
                uncond[v].data[i] + T(scale) * (cond[v].data[i] - uncond[v].data[i]);
    }
    return uncond;
}

// ---- reverse steps --------------------------------------------------------

template <typename T>
Tensor<T> ddpm_step(const Tensor<T>& x_t, const Tensor<T>& eps_hat, int t,
                    const NoiseSchedule& s, RngStream& rng) {
    require(x_t.shape == eps_hat.shape, ErrorKind::Shape,
            "ddpm_step: shape mismatch");
    const double beta = s.beta(t);
    const double ab_t = s.alpha_bar(t);
    const double coef = beta / std::sqrt(1.0 - ab_t);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(1.0 - beta);
    Tensor<T> out(x_t.shape);
    for (size_t i = 0; i < out.numel(); ++i)
        out.data[i] = T(inv_sqrt_alpha) *
                      (x_t.data[i] - T(coef) * eps_hat.data[i]);
    if (t > 1) {
        // Posterior variance beta-tilde; the final step adds no noise.
        const double ab_prev = s.alpha_bar(t - 1);
        const double sigma = std::sqrt((1.0 - ab_prev) / (1.0 - ab_t) * beta);
        for (T& v : out.data) v += T(sigma * rng.normal());
    }
    return out;
}

template <typename T>
Tensor<T> ddim_step(const Tensor<T>& x_t, const Tensor<T>& eps_hat, int t,
                    int t_prev, const NoiseSchedule& s, double eta,
                    RngStream* rng = nullptr) {
    require(x_t.shape == eps_hat.shape, ErrorKind::Shape,
            "ddim_step: shape mismatch");
    require(t >= 1 && t <= s.num_steps(), ErrorKind::InvalidArgument,
            "ddim_step: t outside [1, T]");
    require(t_prev >= 0 && t_prev < t, ErrorKind::InvalidArgument,
            "ddim_step requires 0 <= t_prev < t");
    require(eta >= 0.0, ErrorKind::InvalidArgument, "eta must be >= 0");
    require(eta == 0.0 || rng != nullptr, ErrorKind::InvalidArgument,
            "stochastic ddim needs an RNG stream");
    const double ab_t = s.alpha_bar(t), ab_prev = s.alpha_bar(t_prev);
    const double sigma =
        eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab_t)) *
        std::sqrt(1.0 - ab_t / ab_prev);
    const double x0_coef = 1.0 / std::sqrt(ab_t);
    const double x0_eps = std::sqrt(1.0 - ab_t) / std::sqrt(ab_t);
    const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
    const double sq_prev = std::sqrt(ab_prev);
    Tensor<T> out(x_t.shape);
    for (size_t i = 0; i < out.numel(); ++i) {
        const double x0 = x0_coef * double(x_t.data[i]) -
                          x0_eps * double(eps_hat.data[i]);
        out.data[i] = T(sq_prev * x0 + dir * double(eps_hat.data[i]));
    }
    if (eta > 0.0)
        for (T& v : out.data) v += T(sigma * rng->normal());
    return out;
}

// Evenly spaced descending DDIM ladder T = t_0 > t_1 > ... > t_S = 0.
inline std::vector<int> ddim_timesteps(int num_train_steps, int sample_steps) {
    require(sample_steps >= 1 && sample_steps <= num_train_steps,
            ErrorKind::InvalidArgument,
            "sample steps must lie in [1, schedule steps]");
    std::vector<int> ts;
    for (int i = sample_steps; i >= 0; --i) {
        const int t = int(std::llround(double(i) * num_train_steps /
                                       double(sample_steps)));
        if (ts.empty() || t < ts.back()) ts.push_back(t);
    }
    require(ts.front() == num_train_steps && ts.back() == 0, ErrorKind::Numeric,
            "ddim ladder must span [T, 0]");
    return ts;
}

// ---- full sampling --------------------------------------------------------

struct SampleOptions {
    int steps = 50;
    double cfg_scale = 2.0;
    bool map_null_zero = true;  // unconditional map: zeros (true) or shared
    bool identical_noise = false;  // same x_T across views (off: independent)
    double eta = 0.0;
    uint64_t seed = 0;
};

// Deterministic in (weights, scene, options).  Returns per-view latents
// clipped to [-1, 1]; convert with latent_to_image for 8-bit output.
template <typename T>
std::vector<Tensor<T>> sample_latents(const Model<T>& model,
                                      const SceneInputs& scene,
                                      const NoiseSchedule& sched,
                                      const SampleOptions& opt) {
    const UNetConfig& cfg = model.config();
    const int V = model.num_views();

    CondOptions cond_opt;  // defaults: the conditional pass
    const auto pc_cond = model.precompute_conditions(scene, cond_opt);
    typename Model<T>::Precomputed pc_uncond;
    if (opt.cfg_scale != 1.0) {
        CondOptions un;
        un.unconditional = true;
        un.map_null_zero = opt.map_null_zero;
        pc_uncond = model.precompute_conditions(scene, un);
    }

    RngStream rng(opt.seed);
    std::vector<Tensor<T>> x;
    for (int v = 0; v < V; ++v) {
        if (opt.identical_noise && v > 0) {
            x.push_back(x[0]);
            continue;
        }
        Tensor<T> n({cfg.in_channels, cfg.image_h, cfg.image_w});
        for (T& q : n.data) q = T(rng.normal());
        x.push_back(std::move(n));
    }

    const auto ladder = ddim_timesteps(sched.num_steps(), opt.steps);
    for (size_t k = 0; k + 1 < ladder.size(); ++k) {
        const int t = ladder[k], t_prev = ladder[k + 1];
        const auto eps_hat = cfg_predict<T>(
            [&](bool uncond) {
                return model.denoise(x, t, uncond ? pc_uncond : pc_cond);
            },
            opt.cfg_scale);
        for (int v = 0; v < V; ++v)
            x[size_t(v)] = ddim_step(x[size_t(v)], eps_hat[size_t(v)], t, t_prev,
                                     sched, opt.eta, opt.eta > 0 ? &rng : nullptr);
    }
    for (auto& xv : x)
        for (T& q : xv.data) q = std::min(T(1), std::max(T(-1), q));
    return x;
}

}  // namespace dg

#endif
