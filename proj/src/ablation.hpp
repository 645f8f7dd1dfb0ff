#ifndef DRIVEGEN_ABLATION_HPP
#define DRIVEGEN_ABLATION_HPP

// Ablation harness: trains (or reuses) one model variant per axis and
// scores it with the full metric suite.  Every variant inherits the base
// config's dataset, seed and step budget; apply_variant changes exactly
// one field, so two variants' config echoes differ only on the ablated
// axis and their runs are comparable step for step.

#include <string>
#include <vector>

#include "metrics.hpp"
#include "trainloop.hpp"

namespace dg {

enum class AblationVariant {
    full,
    no_box_encoder,  // boxes leave the token set and enter the map
    no_fviz,         // visibility filter off: every box token in every view
    views_one,       // cross-view attention sees one neighbor
    views_two,       // both neighbors (the default)
    views_all,       // every other view
    cfg_scale_sweep, // full model, guidance-scale grid at eval time
};

// Command-line spellings: full, no-box-encoder, no-fviz, views-1,
// views-2, views-all, cfg-sweep.
std::string variant_name(AblationVariant v);
AblationVariant parse_variant(const std::string& name);

// The base config with exactly the ablated field changed; full and
// cfg_scale_sweep return it untouched.
TrainConfig apply_variant(AblationVariant v, TrainConfig base);

struct AblationRun {
    std::string label;        // variant name, plus the grid point for sweeps
    std::string report_path;  // where the report JSON landed
    MetricsReport report;
};

// Guidance scales evaluated by cfg_scale_sweep, each with both map-null
// modes (zeroed map vs the real map on the unconditional branch).
extern const std::vector<double> kCfgSweepScales;

// Runs one variant end to end under <out_dir>/<variant-name>/:
// trains into the directory unless a ckpt_final.bin with a matching
// config echo is already there (a mismatched one is an error), then
// evaluates and writes report JSONs.  Sweep grid points are written as
// they complete, so a failure partway leaves the earlier reports on
// disk.  eval_base supplies the split and sampler settings; the sweep
// overrides cfg_scale and map-null mode per grid point.
std::vector<AblationRun> run_ablation(AblationVariant v, const TrainConfig& base,
                                      const Dataset& data, const std::string& out_dir,
                                      const EvalOptions& eval_base);

}  // namespace dg

#endif
