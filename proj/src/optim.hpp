#ifndef DRIVEGEN_OPTIM_HPP
#define DRIVEGEN_OPTIM_HPP

// AdamW with decoupled weight decay, linear learning-rate warmup, and
// global-norm gradient clipping.  Moment buffers are keyed by parameter
// creation order, the same order the checkpoint format uses.

#include <cmath>
#include <vector>

#include "tensor.hpp"

namespace dg {

template <typename T>
class AdamW {
  public:
    struct Config {
        T learning_rate = T(8e-5);
        T beta1 = T(0.9);
        T beta2 = T(0.999);
        T eps = T(1e-8);
        T weight_decay = T(0);
        T grad_clip_norm = T(1.0);  // <= 0 disables clipping
        int warmup_steps = 0;
    };

    AdamW(ParamStore<T>& params, Config cfg) : params_(params), cfg_(cfg) {
        for (const auto& p : params_.all()) {
            m_.emplace_back(p->value.shape);
            v_.emplace_back(p->value.shape);
        }
    }

    int step_count() const { return step_; }

    // Learning rate that the *next* step() call will apply.
    T current_lr() const {
        const int s = step_ + 1;
        T lr = cfg_.learning_rate;
        if (cfg_.warmup_steps > 0 && s < cfg_.warmup_steps)
            lr *= T(s) / T(cfg_.warmup_steps);
        return lr;
    }

    // Returns the pre-clip global gradient norm (useful for logging).
    T step() {
        const auto& ps = params_.all();
        double sq = 0;
        for (const auto& p : ps)
            for (const T g : p->grad.data) sq += double(g) * double(g);
        const T norm = T(std::sqrt(sq));
        T clip_scale = T(1);
        if (cfg_.grad_clip_norm > T(0) && norm > cfg_.grad_clip_norm)
            clip_scale = cfg_.grad_clip_norm / norm;

        const T lr = current_lr();
        ++step_;
        const T bc1 = T(1) - std::pow(cfg_.beta1, T(step_));
        const T bc2 = T(1) - std::pow(cfg_.beta2, T(step_));
        for (size_t i = 0; i < ps.size(); ++i) {
            Parameter<T>* p = ps[i].get();
            Tensor<T>& m = m_[i];
            Tensor<T>& v = v_[i];
            for (size_t k = 0; k < p->value.numel(); ++k) {
                const T g = p->grad.data[k] * clip_scale;
                m.data[k] = cfg_.beta1 * m.data[k] + (T(1) - cfg_.beta1) * g;
                v.data[k] = cfg_.beta2 * v.data[k] + (T(1) - cfg_.beta2) * g * g;
                const T mhat = m.data[k] / bc1;
                const T vhat = v.data[k] / bc2;
                p->value.data[k] -=
                    lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                          cfg_.weight_decay * p->value.data[k]);
            }
        }
        return norm;
    }

    // Optimizer state for checkpoints: step counter plus both moment
    // buffers in parameter order.
    int serialized_step() const { return step_; }
    void set_step(int s) { step_ = s; }
    const std::vector<Tensor<T>>& moment1() const { return m_; }
    const std::vector<Tensor<T>>& moment2() const { return v_; }
    std::vector<Tensor<T>>& moment1() { return m_; }
    std::vector<Tensor<T>>& moment2() { return v_; }

  private:
    ParamStore<T>& params_;
    Config cfg_;
    int step_ = 0;
    std::vector<Tensor<T>> m_, v_;
};

}  // namespace dg

#endif
