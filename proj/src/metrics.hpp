#ifndef DRIVEGEN_METRICS_HPP
#define DRIVEGEN_METRICS_HPP

// Controllability, cross-view consistency, and reconstruction metrics
// measured against the toy-world renderer, plus the aggregate report.
//
// Region extraction: for each (view, box) with the visibility predicate
// true, the probe region is the convex hull of the corners projected
// from in-front of the near plane, clipped to image bounds, rasterized
// over pixel centers (the renderer's own fill rule).  A region is
// *counted* only when it is pure under the renderer: all eight corners
// clear the near plane and no box drawn later in painter order can touch
// it.  Occluded, clipped, out-of-frame, and degenerate regions are
// skipped and tallied, which keeps the metrics exact on oracle renders:
// controllability is then 1.0 and consistency 0.0 by construction.

#include <array>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "render.hpp"
#include "sampler.hpp"
#include "schedule.hpp"

namespace dg {

// Andrew monotone chain; returns the hull in counterclockwise order
// (fewer than 3 input points, or collinear input, yields what it can).
std::vector<Vec2> convex_hull(std::vector<Vec2> pts);

struct BoxRegion {
    bool counted = false;     // pure probe region
    std::vector<int> pixels;  // y * w + x, filled only when counted
};

// One entry per (view, box), aligned with the rig and scene.boxes.
std::vector<std::vector<BoxRegion>> probe_regions(const SceneRecord& scene,
                                                  const RenderConfig& rc);

// Mean RGB over the region in [0,1] per channel.
std::array<double, 3> region_mean(const Image& img, const std::vector<int>& pixels);

// Nearest palette entry by squared RGB distance ([0,1] scale, ties to
// the lowest class id).
int nearest_class_color(const std::array<double, 3>& rgb,
                        const std::vector<Rgb>& palette);

struct ControllabilityResult {
    std::vector<int> counted;  // per object class
    std::vector<int> matched;
    int skipped = 0;  // visible boxes whose region was not pure

    int total_counted() const;
    int total_matched() const;
    // -1 marks "absent" (no counted samples for that class / at all).
    double class_accuracy(int cid) const;
    double overall_accuracy() const;
};

ControllabilityResult controllability_score(const std::vector<Image>& generated,
                                            const SceneRecord& scene,
                                            const RenderConfig& rc);

struct ConsistencyResult {
    int pairs = 0;       // (box, adjacent view pair) samples
    double total = 0.0;  // summed L2 distance between the two views' means

    double mean_discrepancy() const { return pairs > 0 ? total / pairs : -1.0; }
};

ConsistencyResult consistency_score(const std::vector<Image>& generated,
                                    const SceneRecord& scene,
                                    const RenderConfig& rc);

struct ReconstructionResult {
    double mse = 0.0;      // mean over all pixels, [0,1] scale
    size_t values = 0;     // number of scalar comparisons

    // +infinity for identical inputs; callers serialize that as "inf".
    double psnr() const;
};

ReconstructionResult reconstruction_metrics(const std::vector<Image>& generated,
                                            const std::vector<Image>& oracle);

// Accuracy a constant gray image would score on these counted samples:
// every region classifies to gray's nearest palette entry.
double gray_baseline(const ControllabilityResult& r, const std::vector<Rgb>& palette);

// ---- aggregate report ------------------------------------------------------

struct MetricsReport {
    std::vector<std::string> class_names;
    ControllabilityResult controllability;
    ConsistencyResult consistency;
    double mse_total = 0.0;  // summed per-image MSE
    int images_compared = 0;
    int num_scenes = 0;
    Json config_echo;

    bool has_controllability = false;
    bool has_consistency = false;
    bool has_reconstruction = false;

    double mean_mse() const {
        return images_compared > 0 ? mse_total / images_compared : -1.0;
    }
};

Json report_to_json(const MetricsReport& r);

struct EvalOptions {
    std::string split = "val";  // "val" | "train" | "all"
    bool controllability = true;
    bool consistency = true;
    bool reconstruction = true;
    SampleOptions sampling;  // per-scene seed derives from sampling.seed
    int max_scenes = 0;      // 0 = every scene in the split
};

// Samples every selected scene with the model and scores the results
// against the oracle renderer.
MetricsReport evaluate_model(const Model<float>& model, const Dataset& data,
                             const NoiseSchedule& sched, const EvalOptions& opt);

}  // namespace dg

#endif
