#ifndef DRIVEGEN_SCENE_HPP
#define DRIVEGEN_SCENE_HPP

// Procedural toy world: scene records, the camera rig, and the seeded
// scene sampler that stands in for a real driving dataset.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "geometry.hpp"
#include "rng.hpp"

namespace dg {

enum class TimeOfDay { day = 0, night = 1 };
enum class Weather { sunny = 0, rain = 1 };

const char* to_string(TimeOfDay t);
const char* to_string(Weather w);
TimeOfDay time_of_day_from_string(const std::string& s);
Weather weather_from_string(const std::string& s);

struct SceneAttributes {
    std::string location;
    TimeOfDay time_of_day = TimeOfDay::day;
    Weather weather = Weather::sunny;
};

using Rgb = std::array<uint8_t, 3>;

struct ObjectClassSpec {
    std::string name;
    Rgb color{0, 0, 0};
    Vec3 size_mean;    // length, width, height in meters
    Vec3 size_jitter;  // uniform +- per component
};

struct RoadClassSpec {
    std::string name;
    Rgb color{0, 0, 0};
};

struct WorldConfig {
    int num_views = 3;
    int image_w = 80;
    int image_h = 48;
    double fov_deg = 70.0;      // horizontal field of view
    double camera_height = 1.6;
    int max_boxes = 12;         // upper bound on boxes per scene
    double min_box_distance = 4.0;
    double max_box_distance = 14.0;
    BEVMapSpec map;             // num_classes is always road_classes.size()
    std::vector<ObjectClassSpec> object_classes;
    std::vector<RoadClassSpec> road_classes;
    std::vector<std::string> locations;
    // Indexed by [time_of_day][weather].
    std::array<std::array<Rgb, 2>, 2> background_colors{};
    int val_scenes = 0;         // 0 -> one tenth of the generated scenes

    static WorldConfig defaults();
    void validate() const;

    Rgb background(TimeOfDay t, Weather w) const {
        return background_colors[size_t(t)][size_t(w)];
    }
};

// Poses ordered by strictly increasing yaw; index adjacency is angular
// adjacency on a circular topology.
struct CameraRig {
    std::vector<CameraPose> poses;
    std::vector<double> yaws;  // ego yaw per pose, same order

    int num_views() const { return int(poses.size()); }
    void validate() const;
};

CameraRig make_rig(const WorldConfig& config);

struct SceneRecord {
    std::string scene_id;
    std::vector<ClassedPolygon> road_elements;
    std::vector<Box3D> boxes;
    SceneAttributes attributes;
    CameraRig rig;
};

// Deterministic in (seed, config).
SceneRecord sample_scene(uint64_t seed, const WorldConfig& config);

// "A driving scene image at {location}. {weather}, {time_of_day}."
std::string build_prompt(const SceneRecord& scene);

BEVMap rasterize_scene_map(const SceneRecord& scene, const BEVMapSpec& spec);

}  // namespace dg

#endif
