#include "scene.hpp"

#include <cmath>
#include <cstdio>

#include "common.hpp"

namespace dg {

const char* to_string(TimeOfDay t) {
    return t == TimeOfDay::day ? "day" : "night";
}

const char* to_string(Weather w) {
    return w == Weather::sunny ? "sunny" : "rain";
}

TimeOfDay time_of_day_from_string(const std::string& s) {
    if (s == "day") return TimeOfDay::day;
    if (s == "night") return TimeOfDay::night;
    fail(ErrorKind::Format, "unknown time_of_day \"" + s + "\"");
}

Weather weather_from_string(const std::string& s) {
    if (s == "sunny") return Weather::sunny;
    if (s == "rain") return Weather::rain;
    fail(ErrorKind::Format, "unknown weather \"" + s + "\"");
}

WorldConfig WorldConfig::defaults() {
    WorldConfig c;
    c.map.extent_x = 40.0;
    c.map.extent_y = 40.0;
    c.map.grid_w = 64;
    c.map.grid_h = 64;
    c.map.num_classes = 3;
    c.object_classes = {
        {"car", {0, 80, 255}, {4.5, 2.0, 1.6}, {0.6, 0.2, 0.2}},
        {"bus", {255, 200, 0}, {10.0, 2.9, 3.2}, {1.0, 0.2, 0.3}},
        {"truck", {0, 200, 80}, {7.0, 2.5, 2.8}, {1.0, 0.3, 0.3}},
        {"pedestrian", {255, 40, 40}, {0.6, 0.6, 1.75}, {0.1, 0.1, 0.2}},
    };
    c.road_classes = {
        {"drivable_area", {60, 60, 60}},
        {"lane_divider", {230, 230, 230}},
        {"crossing", {150, 110, 180}},
    };
    c.locations = {"toytown", "riverside", "hillcrest", "junction"};
    c.background_colors[size_t(TimeOfDay::day)][size_t(Weather::sunny)] = {170, 200, 230};
    c.background_colors[size_t(TimeOfDay::day)][size_t(Weather::rain)] = {130, 140, 150};
    c.background_colors[size_t(TimeOfDay::night)][size_t(Weather::sunny)] = {25, 25, 60};
    c.background_colors[size_t(TimeOfDay::night)][size_t(Weather::rain)] = {15, 15, 30};
    return c;
}

void WorldConfig::validate() const {
    require(num_views >= 1, ErrorKind::InvalidArgument, "num_views must be >= 1");
    require(image_w > 0 && image_h > 0, ErrorKind::InvalidArgument,
            "image size must be positive");
    require(fov_deg > 10.0 && fov_deg < 170.0, ErrorKind::InvalidArgument,
            "fov_deg out of range (10, 170)");
    require(max_boxes >= 0, ErrorKind::InvalidArgument, "max_boxes must be >= 0");
    require(min_box_distance > 0.0 && min_box_distance < max_box_distance,
            ErrorKind::InvalidArgument, "box distance range is empty");
    map.validate();
    require(map.num_classes == int(road_classes.size()), ErrorKind::InvalidArgument,
            "map.num_classes must equal the number of road classes");
    require(!object_classes.empty(), ErrorKind::InvalidArgument,
            "at least one object class is required");
    require(!road_classes.empty(), ErrorKind::InvalidArgument,
            "at least one road class is required");
    require(!locations.empty(), ErrorKind::InvalidArgument,
            "at least one location is required");
    for (const auto& oc : object_classes) {
        require(!oc.name.empty(), ErrorKind::InvalidArgument, "empty object class name");
        require(oc.size_mean.x > 0 && oc.size_mean.y > 0 && oc.size_mean.z > 0,
                ErrorKind::InvalidArgument, "object size_mean must be positive");
        require(oc.size_jitter.x >= 0 && oc.size_jitter.y >= 0 && oc.size_jitter.z >= 0,
                ErrorKind::InvalidArgument, "object size_jitter must be non-negative");
        require(oc.size_jitter.x < oc.size_mean.x && oc.size_jitter.y < oc.size_mean.y &&
                    oc.size_jitter.z < oc.size_mean.z,
                ErrorKind::InvalidArgument, "object size_jitter must stay below size_mean");
    }
    for (const auto& rc : road_classes)
        require(!rc.name.empty(), ErrorKind::InvalidArgument, "empty road class name");
    require(val_scenes >= 0, ErrorKind::InvalidArgument, "val_scenes must be >= 0");
}

void CameraRig::validate() const {
    require(!poses.empty(), ErrorKind::InvalidArgument, "rig has no cameras");
    require(poses.size() == yaws.size(), ErrorKind::InvalidArgument,
            "rig poses/yaws size mismatch");
    for (const auto& p : poses) p.validate();
    for (size_t i = 1; i < yaws.size(); ++i)
        require(yaws[i] > yaws[i - 1], ErrorKind::InvalidArgument,
                "rig yaws must be strictly increasing");
    if (yaws.size() > 1)
        require(yaws.back() - yaws.front() < 2.0 * M_PI, ErrorKind::InvalidArgument,
                "rig yaws must span less than a full turn");
}

CameraRig make_rig(const WorldConfig& config) {
    const int n = config.num_views;
    CameraIntrinsics intr;
    intr.width = config.image_w;
    intr.height = config.image_h;
    intr.fx = (config.image_w / 2.0) / std::tan(config.fov_deg * M_PI / 180.0 / 2.0);
    intr.fy = intr.fx;  // square pixels
    intr.cx = config.image_w / 2.0;
    intr.cy = config.image_h / 2.0;

    CameraRig rig;
    for (int k = 0; k < n; ++k) {
        double yaw;
        if (n >= 6) {
            // Full circular coverage, evenly spaced.
            yaw = -M_PI + (k + 0.5) * (2.0 * M_PI / n);
        } else {
            // Forward-facing fan with 60 degree spacing.
            yaw = (k - (n - 1) / 2.0) * (60.0 * M_PI / 180.0);
        }
        rig.yaws.push_back(yaw);
        rig.poses.push_back(
            CameraPose::looking(intr, Vec3{0.0, 0.0, config.camera_height}, yaw));
    }
    rig.validate();
    return rig;
}

namespace {

// Polygon from a centerline polyline swept by a half width.  Left edge
// walked forward, right edge walked backward, so the result is a simple
// loop for gently curving centerlines.
ClassedPolygon sweep_polygon(int class_id, const std::vector<Vec2>& center,
                             double half_width) {
    const size_t n = center.size();
    std::vector<Vec2> normals(n);
    for (size_t i = 0; i < n; ++i) {
        const Vec2 a = center[i > 0 ? i - 1 : 0];
        const Vec2 b = center[i + 1 < n ? i + 1 : n - 1];
        double dx = b.x - a.x, dy = b.y - a.y;
        const double len = std::hypot(dx, dy);
        if (len > 1e-12) {
            dx /= len;
            dy /= len;
        }
        normals[i] = Vec2{-dy, dx};
    }
    ClassedPolygon poly;
    poly.class_id = class_id;
    for (size_t i = 0; i < n; ++i)
        poly.vertices.push_back(Vec2{center[i].x + normals[i].x * half_width,
                                     center[i].y + normals[i].y * half_width});
    for (size_t i = n; i-- > 0;)
        poly.vertices.push_back(Vec2{center[i].x - normals[i].x * half_width,
                                     center[i].y - normals[i].y * half_width});
    return poly;
}

struct Strip {
    std::vector<Vec2> center;  // sampled centerline, ordered
};

// A straight or constant-curvature centerline through `anchor` heading `yaw`.
Strip make_strip(const Vec2& anchor, double yaw, double length, bool curved,
                 double radius, double turn_sign) {
    Strip s;
    const int segments = 12;
    if (!curved) {
        const Vec2 d{std::cos(yaw), std::sin(yaw)};
        for (int i = 0; i <= segments; ++i) {
            const double t = length * (double(i) / segments - 0.5);
            s.center.push_back(Vec2{anchor.x + d.x * t, anchor.y + d.y * t});
        }
        return s;
    }
    // Circle center sits at distance `radius` to the side of the anchor.
    const Vec2 n{-std::sin(yaw) * turn_sign, std::cos(yaw) * turn_sign};
    const Vec2 c{anchor.x + n.x * radius, anchor.y + n.y * radius};
    const double phi0 = std::atan2(anchor.y - c.y, anchor.x - c.x);
    const double span = length / radius;  // arc angle covered
    for (int i = 0; i <= segments; ++i) {
        const double phi = phi0 + turn_sign * span * (double(i) / segments - 0.5);
        s.center.push_back(
            Vec2{c.x + radius * std::cos(phi), c.y + radius * std::sin(phi)});
    }
    return s;
}

}  // namespace

SceneRecord sample_scene(uint64_t seed, const WorldConfig& config) {
    config.validate();
    RngStream rng(seed);
    SceneRecord scene;
    {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "scene_%016llx",
                      static_cast<unsigned long long>(seed));
        scene.scene_id = buf;
    }

    // Draw order is part of the format: attributes, then roads, then the
    // crossing, then box attempts (7 draws each).  Changing it changes
    // every dataset generated from a given seed.
    scene.attributes.location =
        config.locations[rng.uniform_int(config.locations.size())];
    scene.attributes.time_of_day = TimeOfDay(rng.uniform_int(2));
    scene.attributes.weather = Weather(rng.uniform_int(2));

    const double extent = std::max(config.map.extent_x, config.map.extent_y);
    const int num_strips = 1 + int(rng.uniform_int(3));
    std::vector<Strip> strips;
    std::vector<double> strip_half_widths;
    for (int i = 0; i < num_strips; ++i) {
        const double yaw = rng.uniform(-M_PI, M_PI);
        Vec2 anchor;
        if (i == 0) {
            // The first strip passes close to the ego position.
            const double off = rng.uniform(-2.0, 2.0);
            anchor = Vec2{-std::sin(yaw) * off, std::cos(yaw) * off};
        } else {
            anchor.x = rng.uniform(-0.3 * config.map.extent_x, 0.3 * config.map.extent_x);
            anchor.y = rng.uniform(-0.3 * config.map.extent_y, 0.3 * config.map.extent_y);
        }
        const double half_width = rng.uniform(3.0, 5.0);
        const bool curved = rng.bernoulli(0.4);
        double radius = 0.0, turn_sign = 1.0;
        if (curved) {
            radius = rng.uniform(15.0, 60.0);
            turn_sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
        }
        Strip s = make_strip(anchor, yaw, 1.2 * extent, curved, radius, turn_sign);
        strips.push_back(s);
        strip_half_widths.push_back(half_width);
        scene.road_elements.push_back(sweep_polygon(0, s.center, half_width));
        scene.road_elements.push_back(sweep_polygon(1, s.center, 0.15));
    }

    if (rng.bernoulli(0.5)) {
        // Pedestrian crossing: a band across the first strip, some way
        // ahead of its midpoint.
        const Strip& s = strips[0];
        const double frac = rng.uniform(0.55, 0.9);  // along the polyline
        const double fidx = frac * (s.center.size() - 1);
        const size_t i0 = std::min(size_t(fidx), s.center.size() - 2);
        const double t = fidx - double(i0);
        const Vec2 a = s.center[i0], b = s.center[i0 + 1];
        const Vec2 p{a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t};
        double dx = b.x - a.x, dy = b.y - a.y;
        const double len = std::hypot(dx, dy);
        dx /= len;
        dy /= len;
        const double band = 0.75;  // half width of the crossing band
        const double reach = strip_half_widths[0] + 0.5;
        ClassedPolygon cross;
        cross.class_id = 2;
        cross.vertices = {
            Vec2{p.x - dx * band - dy * reach, p.y - dy * band + dx * reach},
            Vec2{p.x + dx * band - dy * reach, p.y + dy * band + dx * reach},
            Vec2{p.x + dx * band + dy * reach, p.y + dy * band - dx * reach},
            Vec2{p.x - dx * band + dy * reach, p.y - dy * band - dx * reach},
        };
        scene.road_elements.push_back(cross);
    }

    // Boxes: rejection sampling.  A candidate is kept only if its center
    // lies on drivable area, it stays inside the map extent, and its
    // circular footprint clears every accepted box (so rendered cuboids
    // never interpenetrate).  Each attempt makes exactly 7 draws.
    const int target = std::min(config.max_boxes, 3 + int(rng.uniform_int(
                                    uint64_t(std::max(1, config.max_boxes - 2)))));
    std::vector<double> radii;
    int attempts = 0;
    while (int(scene.boxes.size()) < target && attempts < 40 * std::max(1, target)) {
        ++attempts;
        Box3D box;
        box.class_id = int(rng.uniform_int(config.object_classes.size()));
        const double ang = rng.uniform(-M_PI, M_PI);
        const double dist = rng.uniform(config.min_box_distance, config.max_box_distance);
        box.yaw = rng.uniform(-M_PI, M_PI);
        const ObjectClassSpec& oc = config.object_classes[size_t(box.class_id)];
        box.size = Vec3{oc.size_mean.x + oc.size_jitter.x * rng.uniform(-1.0, 1.0),
                        oc.size_mean.y + oc.size_jitter.y * rng.uniform(-1.0, 1.0),
                        oc.size_mean.z + oc.size_jitter.z * rng.uniform(-1.0, 1.0)};
        box.center = Vec3{dist * std::cos(ang), dist * std::sin(ang), box.size.z / 2.0};
        const Vec2 foot{box.center.x, box.center.y};
        bool on_road = false;
        for (const auto& e : scene.road_elements)
            if (e.class_id == 0 && point_in_polygon(foot, e.vertices)) {
                on_road = true;
                break;
            }
        if (!on_road) continue;
        const double rad = 0.5 * std::hypot(box.size.x, box.size.y);
        if (std::abs(box.center.x) + rad > config.map.extent_x / 2.0 ||
            std::abs(box.center.y) + rad > config.map.extent_y / 2.0)
            continue;
        bool clash = false;
        for (size_t j = 0; j < scene.boxes.size() && !clash; ++j) {
            const double d = std::hypot(box.center.x - scene.boxes[j].center.x,
                                        box.center.y - scene.boxes[j].center.y);
            clash = d < rad + radii[j];
        }
        if (clash) continue;
        scene.boxes.push_back(box);
        radii.push_back(rad);
    }

    scene.rig = make_rig(config);
    return scene;
}

std::string build_prompt(const SceneRecord& scene) {
    return "A driving scene image at " + scene.attributes.location + ". " +
           to_string(scene.attributes.weather) + ", " +
           to_string(scene.attributes.time_of_day) + ".";
}

BEVMap rasterize_scene_map(const SceneRecord& scene, const BEVMapSpec& spec) {
    return rasterize_map(scene.road_elements, spec);
}

}  // namespace dg
