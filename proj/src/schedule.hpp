#ifndef DRIVEGEN_SCHEDULE_HPP
#define DRIVEGEN_SCHEDULE_HPP

// Diffusion noise schedule.  Timesteps are 1-based: t runs over [1, T],
// and alpha_bar(0) = 1 is the clean-image boundary used by the final
// sampler step.

#include <cmath>
#include <string>
#include <vector>

#include "common.hpp"

namespace dg {

struct ScheduleConfig {
    int num_steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    std::string kind = "linear";
};

class NoiseSchedule {
  public:
    int num_steps() const { return int(beta_.size()); }

    double beta(int t) const {
        check_t(t);
        return beta_[size_t(t - 1)];
    }
    double alpha(int t) const {
        check_t(t);
        return 1.0 - beta_[size_t(t - 1)];
    }
    // Defined for t in [0, T]; alpha_bar(0) = 1.
    double alpha_bar(int t) const {
        require(t >= 0 && t <= num_steps(), ErrorKind::InvalidArgument,
                "timestep " + std::to_string(t) + " outside [0, " +
                    std::to_string(num_steps()) + "]");
        return t == 0 ? 1.0 : alpha_bar_[size_t(t - 1)];
    }

    friend NoiseSchedule make_schedule(const ScheduleConfig& cfg);

  private:
    void check_t(int t) const {
        require(t >= 1 && t <= num_steps(), ErrorKind::InvalidArgument,
                "timestep " + std::to_string(t) + " outside [1, " +
                    std::to_string(num_steps()) + "]");
    }

    std::vector<double> beta_, alpha_bar_;
};

inline NoiseSchedule make_schedule(const ScheduleConfig& cfg) {
    require(cfg.num_steps >= 1, ErrorKind::InvalidArgument,
            "schedule needs at least one step");
    require(cfg.kind == "linear", ErrorKind::InvalidArgument,
            "unknown schedule kind \"" + cfg.kind + "\"");
    require(cfg.beta_start > 0.0 && cfg.beta_end < 1.0 &&
                cfg.beta_start <= cfg.beta_end,
            ErrorKind::InvalidArgument, "betas must satisfy 0 < start <= end < 1");
    NoiseSchedule s;
    const int T = cfg.num_steps;
    s.beta_.resize(size_t(T));
    s.alpha_bar_.resize(size_t(T));
    double prod = 1.0;
    for (int t = 1; t <= T; ++t) {
        const double frac = (T == 1) ? 0.0 : double(t - 1) / double(T - 1);
        const double b = cfg.beta_start + (cfg.beta_end - cfg.beta_start) * frac;
        s.beta_[size_t(t - 1)] = b;
        prod *= 1.0 - b;
        s.alpha_bar_[size_t(t - 1)] = prod;
    }
    return s;
}

}  // namespace dg

#endif
