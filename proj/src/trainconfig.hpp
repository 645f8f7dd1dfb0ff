#ifndef DRIVEGEN_TRAINCONFIG_HPP
#define DRIVEGEN_TRAINCONFIG_HPP

// Training run configuration and its strict JSON round trip: every field
// has a default, unknown keys are rejected at every nesting level, and
// to-JSON emits the complete config (the "config echo" stored in
// checkpoints and reports).

#include <string>

#include "dataset.hpp"
#include "schedule.hpp"
#include "unet.hpp"

namespace dg {

struct TrainConfig {
    std::string dataset;  // dataset directory (may be overridden by the CLI)
    uint64_t seed = 1;
    int total_steps = 1000;
    int batch_scenes = 8;
    double learning_rate = 8e-5;
    int warmup_steps = 300;
    double weight_decay = 0.0;
    double grad_clip_norm = 1.0;  // <= 0 disables clipping
    double scene_drop_rate = 0.2;
    double augment_rate = 0.1;
    int log_every = 10;
    int checkpoint_every = 500;
    ScheduleConfig schedule;
    UNetConfig model;

    void validate() const;
};

Json unet_config_to_json(const UNetConfig& c);
UNetConfig unet_config_from_json(const Json& j);

Json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const Json& j);

TrainConfig load_train_config(const std::string& path);

}  // namespace dg

#endif
