#ifndef DRIVEGEN_CHECKPOINT_HPP
#define DRIVEGEN_CHECKPOINT_HPP

// Checkpoint file format.  A checkpoint restores training exactly: model
// weights, optimizer moments, the data-order RNG, and the full config
// echo, so a resumed run follows the same trajectory bit for bit.
//
// Layout (all integers/floats little-endian, strings u64-length-prefixed):
//
//   magic "DGCKPT\n"
//   u32    format version (currently 1)
//   string header JSON (config echo, step, model identity, RNG state)
//   u64    parameter count
//   per parameter: string name, u32 ndim, i32 dims..., f32 values
//   u8     has_optimizer
//   if set: per parameter f32 first moments, then per parameter f32
//           second moments (same order and shapes as the parameters)
//   magic "END\n"

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "model.hpp"
#include "optim.hpp"
#include "trainconfig.hpp"

namespace dg {

struct Checkpoint {
    TrainConfig config;
    int64_t step = 0;

    // Model identity beyond UNetConfig: what the dataset determined.
    int num_views = 1;
    BEVMapSpec map_spec;
    int map_channels = 3;
    uint64_t init_seed = 1;
    std::vector<std::string> vocab_words;
    int vocab_max_len = 0;
    std::vector<std::string> class_names;

    std::vector<std::pair<std::string, Tensor<float>>> weights;

    bool has_optimizer = false;
    std::vector<Tensor<float>> moment1, moment2;
    int opt_step = 0;

    std::string rng_state;  // empty means "fresh stream"
};

void write_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::string& path);

// Captures the live training state (weights copied, not referenced).
Checkpoint snapshot(const TrainConfig& config, int64_t step, const Model<float>& model,
                    const AdamW<float>* opt, const std::string& rng_state);

// Rebuilds the model from the stored identity and overwrites its
// parameters with the stored weights; name or shape drift is an error.
std::unique_ptr<Model<float>> build_model(const Checkpoint& ck);

// Copies stored moments and step count into a freshly built optimizer.
void apply_optimizer_state(const Checkpoint& ck, const Model<float>& model,
                           AdamW<float>& opt);

}  // namespace dg

#endif
