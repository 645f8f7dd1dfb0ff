#ifndef DRIVEGEN_TRAINLOOP_HPP
#define DRIVEGEN_TRAINLOOP_HPP

// Training loop: builds the model from a config plus a dataset, runs
// optimizer steps over randomly drawn training scenes, logs metrics, and
// writes/resumes checkpoints.
//
// Determinism contract: a (config, dataset) pair fixes the whole
// trajectory.  Per step the data RNG draws, in order: one scene index
// per batch slot, and within each slot the draws made by the training
// objective (timestep, scene-drop coin, per-view noise, box-augmentation
// coins).  Resuming from a checkpoint restores this stream exactly.

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "checkpoint.hpp"
#include "dataset.hpp"
#include "sampler.hpp"

namespace dg {

std::vector<std::string> object_class_names(const WorldConfig& world);

// Channel count of the conditioning grid: road classes, plus one box
// footprint channel per object class when the box encoder is disabled
// (the map then carries the objects the tokens no longer do).
int conditioning_map_channels(const WorldConfig& world, bool box_encoder_on);

// Spec of the conditioning grid (world map extents and resolution,
// channel count per conditioning_map_channels).
BEVMapSpec conditioning_map_spec(const WorldConfig& world, bool box_encoder_on);

BEVMap conditioning_map(const SceneRecord& scene, const WorldConfig& world,
                        bool box_encoder_on);

struct TrainLogEntry {
    int64_t step = 0;   // 0-based; the entry describes the step just taken
    double loss = 0.0;
    double lr = 0.0;
    double wall_ms = 0.0;
};

std::string log_entry_json(const TrainLogEntry& e);

class Trainer {
  public:
    // Fresh run: model identity (views, map spec, vocabulary, class
    // names) comes from the dataset, weights from config.seed.
    Trainer(const TrainConfig& cfg, const Dataset& data);

    // Resume: everything but the dataset comes from the checkpoint.
    Trainer(const std::string& ckpt_path, const Dataset& data);

    // One optimizer step over batch_scenes drawn scenes; errors with
    // ErrorKind::Numeric if the loss stops being finite.
    TrainLogEntry run_step();

    int64_t step() const { return step_; }
    const TrainConfig& config() const { return cfg_; }
    Model<float>& model() { return *model_; }
    const Model<float>& model() const { return *model_; }
    const NoiseSchedule& schedule() const { return sched_; }
    const Dataset& dataset() const { return *data_; }

    void save(const std::string& path) const;

  private:
    struct CachedScene {
        std::vector<Tensor<float>> latents;  // one [3,H,W] tensor per view
        BEVMap map;
    };

    void check_dataset_compat() const;
    const CachedScene& cached(int scene_idx);
    SceneInputs inputs_for(int scene_idx, const CachedScene& c) const;

    TrainConfig cfg_;
    const Dataset* data_;
    NoiseSchedule sched_;
    std::unique_ptr<Model<float>> model_;
    std::unique_ptr<AdamW<float>> opt_;
    RngStream rng_;
    int64_t step_ = 0;
    std::unordered_map<int, CachedScene> cache_;
};

// Runs from the trainer's current step to config.total_steps, appending
// to <out_dir>/metrics.jsonl and writing <out_dir>/ckpt_<step>.bin every
// checkpoint_every steps plus a final <out_dir>/ckpt_final.bin, whose
// path is returned.  `progress` (optional) gets each log entry.
std::string run_training(Trainer& trainer, const std::string& out_dir,
                         void (*progress)(const TrainLogEntry&) = nullptr);

}  // namespace dg

#endif
