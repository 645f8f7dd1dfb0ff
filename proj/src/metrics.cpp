#include "metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "trainloop.hpp"

namespace dg {

std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
    std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
        return a.x < b.x || (a.x == b.x && a.y < b.y);
    });
    pts.erase(std::unique(pts.begin(), pts.end(),
                          [](const Vec2& a, const Vec2& b) {
                              return a.x == b.x && a.y == b.y;
                          }),
              pts.end());
    const size_t n = pts.size();
    if (n < 3) return pts;
    auto cross = [](const Vec2& o, const Vec2& a, const Vec2& b) {
        return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
    };
    std::vector<Vec2> hull(2 * n);
    size_t k = 0;
    for (size_t i = 0; i < n; ++i) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    for (size_t i = n - 1, lower = k + 1; i-- > 0;) {
        while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k - 1);
    return hull;
}

namespace {

// Pixel centers inside the hull of the in-front projected corners,
// clipped to image bounds.  Empty when fewer than 3 corners project.
std::vector<int> hull_pixels(const Corners& corners, const CameraPose& pose,
                             int w, int h) {
    std::vector<Vec2> proj;
    for (const Vec3& c : corners) {
        const Vec3 p = world_to_camera(c, pose);
        if (p.z > kBoxNearPlane) proj.push_back(project(p, pose.intrinsics));
    }
    const std::vector<Vec2> hull = convex_hull(std::move(proj));
    if (hull.size() < 3) return {};
    double xmin = hull[0].x, xmax = hull[0].x, ymin = hull[0].y, ymax = hull[0].y;
    for (const Vec2& p : hull) {
        xmin = std::min(xmin, p.x);
        xmax = std::max(xmax, p.x);
        ymin = std::min(ymin, p.y);
        ymax = std::max(ymax, p.y);
    }
    const int x0 = std::max(0, int(std::floor(xmin - 0.5)));
    const int x1 = std::min(w - 1, int(std::ceil(xmax)));
    const int y0 = std::max(0, int(std::floor(ymin - 0.5)));
    const int y1 = std::min(h - 1, int(std::ceil(ymax)));
    std::vector<int> pixels;
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
            if (point_in_polygon(Vec2{x + 0.5, y + 0.5}, hull))
                pixels.push_back(y * w + x);
    return pixels;
}

bool all_corners_front(const Corners& corners, const CameraPose& pose) {
    for (const Vec3& c : corners)
        if (world_to_camera(c, pose).z <= kBoxNearPlane) return false;
    return true;
}

// Both lists come out of a row-major scan, so they are sorted.
bool sorted_overlap(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.empty() || b.empty()) return false;
    if (a.back() < b.front() || b.back() < a.front()) return false;
    size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] == b[j]) return true;
        if (a[i] < b[j])
            ++i;
        else
            ++j;
    }
    return false;
}

std::vector<std::pair<int, int>> adjacent_view_pairs(int num_views) {
    std::vector<std::pair<int, int>> pairs;
    if (num_views == 2) {
        pairs.emplace_back(0, 1);
    } else if (num_views >= 3) {
        for (int v = 0; v < num_views; ++v)
            pairs.emplace_back(v, (v + 1) % num_views);
    }
    return pairs;
}

}  // namespace

std::vector<std::vector<BoxRegion>> probe_regions(const SceneRecord& scene,
                                                  const RenderConfig& rc) {
    const int V = scene.rig.num_views();
    const int B = int(scene.boxes.size());
    std::vector<std::vector<BoxRegion>> out;
    out.assign(size_t(V), std::vector<BoxRegion>(size_t(B)));
    std::vector<Corners> corners;
    corners.reserve(size_t(B));
    for (const Box3D& b : scene.boxes) corners.push_back(box_corners(b));

    for (int v = 0; v < V; ++v) {
        const CameraPose& pose = scene.rig.poses[size_t(v)];
        std::vector<bool> visible(size_t(B), false);
        std::vector<double> depth(size_t(B), 0.0);
        std::vector<std::vector<int>> pixels;
        pixels.resize(size_t(B));
        for (int b = 0; b < B; ++b) {
            visible[size_t(b)] = box_visible(scene.boxes[size_t(b)], pose);
            depth[size_t(b)] = world_to_camera(scene.boxes[size_t(b)].center, pose).z;
            if (visible[size_t(b)])
                pixels[size_t(b)] =
                    hull_pixels(corners[size_t(b)], pose, rc.image_w, rc.image_h);
        }
        // Purity is decided for every box before any pixel list moves out,
        // since each box's check reads the other boxes' lists.
        std::vector<bool> pure(size_t(B), false);
        for (int b = 0; b < B; ++b) {
            if (!visible[size_t(b)]) continue;
            if (pixels[size_t(b)].empty()) continue;  // out of frame or degenerate
            if (!all_corners_front(corners[size_t(b)], pose)) continue;
            // Painter order is far to near with a stable tie-break, so a
            // later-drawn box can overpaint this region.
            bool overdrawn = false;
            for (int j = 0; j < B && !overdrawn; ++j) {
                if (j == b || !visible[size_t(j)]) continue;
                const bool draws_later =
                    depth[size_t(j)] < depth[size_t(b)] ||
                    (depth[size_t(j)] == depth[size_t(b)] && j > b);
                if (!draws_later) continue;
                overdrawn = sorted_overlap(pixels[size_t(b)], pixels[size_t(j)]);
            }
            pure[size_t(b)] = !overdrawn;
        }
        for (int b = 0; b < B; ++b) {
            if (!pure[size_t(b)]) continue;
            out[size_t(v)][size_t(b)].counted = true;
            out[size_t(v)][size_t(b)].pixels = std::move(pixels[size_t(b)]);
        }
    }
    return out;
}

std::array<double, 3> region_mean(const Image& img, const std::vector<int>& pixels) {
    require(!pixels.empty(), ErrorKind::InvalidArgument, "empty region");
    // Integer accumulation keeps the mean of a single-color region exact
    // (n*c / (255*n) rounds identically for every n), so pure regions
    // compare equal across views.
    std::array<int64_t, 3> sum{0, 0, 0};
    for (int idx : pixels) {
        require(idx >= 0 && idx < img.w * img.h, ErrorKind::Shape,
                "region pixel outside the image");
        const uint8_t* p = img.data.data() + 3 * size_t(idx);
        for (int c = 0; c < 3; ++c) sum[size_t(c)] += p[c];
    }
    std::array<double, 3> mean;
    for (int c = 0; c < 3; ++c)
        mean[size_t(c)] = double(sum[size_t(c)]) / (255.0 * double(pixels.size()));
    return mean;
}

int nearest_class_color(const std::array<double, 3>& rgb,
                        const std::vector<Rgb>& palette) {
    require(!palette.empty(), ErrorKind::InvalidArgument, "empty palette");
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int c = 0; c < int(palette.size()); ++c) {
        double d = 0.0;
        for (int k = 0; k < 3; ++k) {
            const double diff = rgb[size_t(k)] - palette[size_t(c)][size_t(k)] / 255.0;
            d += diff * diff;
        }
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

int ControllabilityResult::total_counted() const {
    int n = 0;
    for (int c : counted) n += c;
    return n;
}

int ControllabilityResult::total_matched() const {
    int n = 0;
    for (int m : matched) n += m;
    return n;
}

double ControllabilityResult::class_accuracy(int cid) const {
    const int n = counted[size_t(cid)];
    return n > 0 ? double(matched[size_t(cid)]) / n : -1.0;
}

double ControllabilityResult::overall_accuracy() const {
    const int n = total_counted();
    return n > 0 ? double(total_matched()) / n : -1.0;
}

ControllabilityResult controllability_score(const std::vector<Image>& generated,
                                            const SceneRecord& scene,
                                            const RenderConfig& rc) {
    require(int(generated.size()) == scene.rig.num_views(), ErrorKind::Shape,
            "need one generated image per rig view");
    for (const Image& img : generated)
        require(img.w == rc.image_w && img.h == rc.image_h, ErrorKind::Shape,
                "generated image size does not match the render config");
    ControllabilityResult res;
    res.counted.assign(rc.object_colors.size(), 0);
    res.matched.assign(rc.object_colors.size(), 0);
    const auto regions = probe_regions(scene, rc);
    for (int v = 0; v < scene.rig.num_views(); ++v) {
        for (size_t b = 0; b < scene.boxes.size(); ++b) {
            if (!box_visible(scene.boxes[b], scene.rig.poses[size_t(v)])) continue;
            const BoxRegion& r = regions[size_t(v)][b];
            if (!r.counted) {
                ++res.skipped;
                continue;
            }
            const int cid = scene.boxes[b].class_id;
            const int pred = nearest_class_color(
                region_mean(generated[size_t(v)], r.pixels), rc.object_colors);
            ++res.counted[size_t(cid)];
            if (pred == cid) ++res.matched[size_t(cid)];
        }
    }
    return res;
}

ConsistencyResult consistency_score(const std::vector<Image>& generated,
                                    const SceneRecord& scene,
                                    const RenderConfig& rc) {
    require(int(generated.size()) == scene.rig.num_views(), ErrorKind::Shape,
            "need one generated image per rig view");
    ConsistencyResult res;
    const auto regions = probe_regions(scene, rc);
    for (const auto& [va, vb] : adjacent_view_pairs(scene.rig.num_views())) {
        for (size_t b = 0; b < scene.boxes.size(); ++b) {
            const BoxRegion& ra = regions[size_t(va)][b];
            const BoxRegion& rb = regions[size_t(vb)][b];
            if (!ra.counted || !rb.counted) continue;
            const auto ma = region_mean(generated[size_t(va)], ra.pixels);
            const auto mb = region_mean(generated[size_t(vb)], rb.pixels);
            double d = 0.0;
            for (int k = 0; k < 3; ++k) {
                const double diff = ma[size_t(k)] - mb[size_t(k)];
                d += diff * diff;
            }
            res.total += std::sqrt(d);
            ++res.pairs;
        }
    }
    return res;
}

double ReconstructionResult::psnr() const {
    if (mse <= 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

ReconstructionResult reconstruction_metrics(const std::vector<Image>& generated,
                                            const std::vector<Image>& oracle) {
    require(generated.size() == oracle.size(), ErrorKind::Shape,
            "view count mismatch");
    require(!generated.empty(), ErrorKind::InvalidArgument, "no images to compare");
    ReconstructionResult res;
    double total = 0.0;
    for (size_t v = 0; v < generated.size(); ++v) {
        const Image& a = generated[v];
        const Image& b = oracle[v];
        require(a.w == b.w && a.h == b.h, ErrorKind::Shape, "image size mismatch");
        require(a.data.size() == b.data.size(), ErrorKind::Shape,
                "image buffer mismatch");
        for (size_t i = 0; i < a.data.size(); ++i) {
            const double d = (double(a.data[i]) - double(b.data[i])) / 255.0;
            total += d * d;
        }
        res.values += a.data.size();
    }
    res.mse = total / double(res.values);
    return res;
}

double gray_baseline(const ControllabilityResult& r, const std::vector<Rgb>& palette) {
    const int n = r.total_counted();
    if (n == 0) return -1.0;
    const int g = nearest_class_color({0.5, 0.5, 0.5}, palette);
    return double(r.counted[size_t(g)]) / n;
}

// ---- aggregate report ------------------------------------------------------

namespace {

Json json_or_absent(double v) {
    return v < 0.0 ? Json(nullptr) : Json(v);
}

}  // namespace

Json report_to_json(const MetricsReport& r) {
    Json j;
    j["num_scenes"] = r.num_scenes;
    j["config"] = r.config_echo.is_null() ? Json::object() : r.config_echo;
    if (r.has_controllability) {
        Json c;
        c["overall_accuracy"] = json_or_absent(r.controllability.overall_accuracy());
        c["samples"] = r.controllability.total_counted();
        c["skipped"] = r.controllability.skipped;
        Json per = Json::object();
        for (size_t i = 0; i < r.class_names.size(); ++i) {
            Json e;
            e["accuracy"] = json_or_absent(r.controllability.class_accuracy(int(i)));
            e["counted"] = r.controllability.counted[i];
            e["matched"] = r.controllability.matched[i];
            per[r.class_names[i]] = e;
        }
        c["per_class"] = per;
        j["controllability"] = c;
    }
    if (r.has_consistency) {
        Json c;
        c["mean_discrepancy"] =
            json_or_absent(r.consistency.mean_discrepancy());
        c["pairs"] = r.consistency.pairs;
        j["consistency"] = c;
    }
    if (r.has_reconstruction) {
        Json c;
        const double mse = r.mean_mse();
        c["mse"] = json_or_absent(mse);
        if (mse < 0.0)
            c["psnr"] = nullptr;
        else if (mse == 0.0)
            c["psnr"] = "inf";
        else
            c["psnr"] = 10.0 * std::log10(1.0 / mse);
        c["images"] = r.images_compared;
        j["reconstruction"] = c;
    }
    return j;
}

MetricsReport evaluate_model(const Model<float>& model, const Dataset& data,
                             const NoiseSchedule& sched, const EvalOptions& opt) {
    require(opt.split == "val" || opt.split == "train" || opt.split == "all",
            ErrorKind::InvalidArgument, "unknown split \"" + opt.split + "\"");
    const RenderConfig rc = RenderConfig::from_world(data.config);
    require(model.config().image_w == rc.image_w &&
                model.config().image_h == rc.image_h,
            ErrorKind::Shape, "model image size does not match the dataset");
    require(model.num_views() == data.config.num_views, ErrorKind::Shape,
            "model rig size does not match the dataset");

    MetricsReport rep;
    rep.class_names = object_class_names(data.config);
    rep.controllability.counted.assign(rep.class_names.size(), 0);
    rep.controllability.matched.assign(rep.class_names.size(), 0);
    rep.has_controllability = opt.controllability;
    rep.has_consistency = opt.consistency;
    rep.has_reconstruction = opt.reconstruction;

    std::vector<int> scene_ids;
    for (int i = 0; i < int(data.scenes.size()); ++i) {
        if (opt.split == "val" && !data.is_val(i)) continue;
        if (opt.split == "train" && data.is_val(i)) continue;
        scene_ids.push_back(i);
        if (opt.max_scenes > 0 && int(scene_ids.size()) >= opt.max_scenes) break;
    }
    require(!scene_ids.empty(), ErrorKind::InvalidArgument,
            "no scenes in split \"" + opt.split + "\"");

    for (int idx : scene_ids) {
        const SceneRecord& sc = data.scenes[size_t(idx)];
        const BEVMap map =
            conditioning_map(sc, data.config, model.config().box_encoder);
        SceneInputs in;
        in.prompt = build_prompt(sc);
        in.poses = sc.rig.poses;
        in.boxes = sc.boxes;
        if (model.config().map_branch) in.map = &map;

        SampleOptions so = opt.sampling;
        so.seed = derive_seed(opt.sampling.seed, uint64_t(idx));
        const auto latents = sample_latents(model, in, sched, so);
        std::vector<Image> images;
        images.reserve(latents.size());
        for (const auto& lat : latents) images.push_back(latent_to_image(lat));

        if (opt.controllability) {
            const ControllabilityResult c = controllability_score(images, sc, rc);
            for (size_t k = 0; k < rep.class_names.size(); ++k) {
                rep.controllability.counted[k] += c.counted[k];
                rep.controllability.matched[k] += c.matched[k];
            }
            rep.controllability.skipped += c.skipped;
        }
        if (opt.consistency) {
            const ConsistencyResult c = consistency_score(images, sc, rc);
            rep.consistency.total += c.total;
            rep.consistency.pairs += c.pairs;
        }
        if (opt.reconstruction) {
            const auto oracle = render_scene(sc, rc);
            for (size_t v = 0; v < images.size(); ++v) {
                rep.mse_total +=
                    reconstruction_metrics({images[v]}, {oracle[v]}).mse;
                ++rep.images_compared;
            }
        }
        ++rep.num_scenes;
    }

    Json echo;
    echo["split"] = opt.split;
    echo["steps"] = opt.sampling.steps;
    echo["cfg_scale"] = opt.sampling.cfg_scale;
    echo["map_null"] = opt.sampling.map_null_zero ? "zero" : "shared";
    echo["eta"] = opt.sampling.eta;
    echo["seed"] = opt.sampling.seed;
    echo["num_scenes"] = rep.num_scenes;
    rep.config_echo["eval"] = echo;
    return rep;
}

}  // namespace dg
