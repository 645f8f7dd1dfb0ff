#include "dataset.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "common.hpp"
#include "rng.hpp"

namespace dg {

namespace fs = std::filesystem;

namespace {

void dump_value(const Json& j, std::string& out) {
    switch (j.type()) {
        case Json::value_t::object: {
            out += '{';
            bool first = true;
            for (auto it = j.begin(); it != j.end(); ++it) {
                if (!first) out += ',';
                first = false;
                out += Json(it.key()).dump();
                out += ':';
                dump_value(it.value(), out);
            }
            out += '}';
            break;
        }
        case Json::value_t::array: {
            out += '[';
            bool first = true;
            for (const auto& v : j) {
                if (!first) out += ',';
                first = false;
                dump_value(v, out);
            }
            out += ']';
            break;
        }
        case Json::value_t::number_float: {
            const double v = j.get<double>();
            require(std::isfinite(v), ErrorKind::Numeric,
                    "refusing to serialize a non-finite float");
            char buf[40];
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            out += buf;
            // Keep a float marker so the value parses back as a float.
            if (out.find_first_of(".eE", out.size() - std::strlen(buf)) ==
                std::string::npos)
                out += ".0";
            break;
        }
        default:
            out += j.dump();
    }
}

}  // namespace

std::string dump_json(const Json& j) {
    std::string out;
    dump_value(j, out);
    return out;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), ErrorKind::Io, "cannot open " + path + " for writing");
    f.write(content.data(), std::streamsize(content.size()));
    require(f.good(), ErrorKind::Io, "short write to " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), ErrorKind::Io, "cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    require(f.good() || f.eof(), ErrorKind::Io, "failed reading " + path);
    return ss.str();
}

Json parse_json(const std::string& text, const std::string& context) {
    Json j = Json::parse(text, nullptr, false);
    require(!j.is_discarded(), ErrorKind::Format, context + ": invalid JSON");
    return j;
}

void check_keys(const Json& j, const std::vector<std::string>& allowed,
                const std::string& context) {
    require(j.is_object(), ErrorKind::Format, context + ": expected a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const auto& k : allowed) known = known || it.key() == k;
        require(known, ErrorKind::Format,
                context + ": unknown key \"" + it.key() + "\"");
    }
}

namespace {

Json rgb_to_json(const Rgb& c) { return Json::array({c[0], c[1], c[2]}); }

Rgb rgb_from_json(const Json& j, const std::string& ctx) {
    require(j.is_array() && j.size() == 3, ErrorKind::Format,
            ctx + ": color must be a 3-element array");
    Rgb c;
    for (int i = 0; i < 3; ++i) {
        const int v = j[size_t(i)].get<int>();
        require(v >= 0 && v <= 255, ErrorKind::Format, ctx + ": color out of range");
        c[size_t(i)] = uint8_t(v);
    }
    return c;
}

Json vec3_to_json(const Vec3& v) { return Json::array({v.x, v.y, v.z}); }

Vec3 vec3_from_json(const Json& j, const std::string& ctx) {
    require(j.is_array() && j.size() == 3, ErrorKind::Format,
            ctx + ": expected a 3-element array");
    return Vec3{j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

template <typename T>
T get_field(const Json& j, const char* key, const std::string& ctx) {
    require(j.contains(key), ErrorKind::Format,
            ctx + ": missing key \"" + std::string(key) + "\"");
    try {
        return j.at(key).get<T>();
    } catch (const Json::exception&) {
        fail(ErrorKind::Format, ctx + ": bad value for \"" + std::string(key) + "\"");
    }
}

const char* kBgKeys[2][2] = {{"day_sunny", "day_rain"}, {"night_sunny", "night_rain"}};

}  // namespace

Json world_config_to_json(const WorldConfig& c) {
    Json j;
    j["num_views"] = c.num_views;
    j["image_w"] = c.image_w;
    j["image_h"] = c.image_h;
    j["fov_deg"] = c.fov_deg;
    j["camera_height"] = c.camera_height;
    j["max_boxes"] = c.max_boxes;
    j["min_box_distance"] = c.min_box_distance;
    j["max_box_distance"] = c.max_box_distance;
    j["map"] = Json{{"extent_x", c.map.extent_x},
                    {"extent_y", c.map.extent_y},
                    {"grid_w", c.map.grid_w},
                    {"grid_h", c.map.grid_h}};
    Json ocs = Json::array();
    for (const auto& oc : c.object_classes)
        ocs.push_back(Json{{"name", oc.name},
                           {"color", rgb_to_json(oc.color)},
                           {"size_mean", vec3_to_json(oc.size_mean)},
                           {"size_jitter", vec3_to_json(oc.size_jitter)}});
    j["object_classes"] = ocs;
    Json rcs = Json::array();
    for (const auto& rc : c.road_classes)
        rcs.push_back(Json{{"name", rc.name}, {"color", rgb_to_json(rc.color)}});
    j["road_classes"] = rcs;
    j["locations"] = c.locations;
    Json bg;
    for (int t = 0; t < 2; ++t)
        for (int w = 0; w < 2; ++w)
            bg[kBgKeys[t][w]] = rgb_to_json(c.background_colors[size_t(t)][size_t(w)]);
    j["background_colors"] = bg;
    j["val_scenes"] = c.val_scenes;
    return j;
}

WorldConfig world_config_from_json(const Json& j) {
    const std::string ctx = "world config";
    check_keys(j, {"num_views", "image_w", "image_h", "fov_deg", "camera_height",
                   "max_boxes", "min_box_distance", "max_box_distance", "map",
                   "object_classes", "road_classes", "locations",
                   "background_colors", "val_scenes"},
               ctx);
    WorldConfig c;
    c.num_views = get_field<int>(j, "num_views", ctx);
    c.image_w = get_field<int>(j, "image_w", ctx);
    c.image_h = get_field<int>(j, "image_h", ctx);
    c.fov_deg = get_field<double>(j, "fov_deg", ctx);
    c.camera_height = get_field<double>(j, "camera_height", ctx);
    c.max_boxes = get_field<int>(j, "max_boxes", ctx);
    c.min_box_distance = get_field<double>(j, "min_box_distance", ctx);
    c.max_box_distance = get_field<double>(j, "max_box_distance", ctx);
    require(j.contains("map"), ErrorKind::Format, ctx + ": missing key \"map\"");
    const Json& m = j.at("map");
    check_keys(m, {"extent_x", "extent_y", "grid_w", "grid_h"}, ctx + ".map");
    c.map.extent_x = get_field<double>(m, "extent_x", ctx);
    c.map.extent_y = get_field<double>(m, "extent_y", ctx);
    c.map.grid_w = get_field<int>(m, "grid_w", ctx);
    c.map.grid_h = get_field<int>(m, "grid_h", ctx);
    require(j.contains("object_classes"), ErrorKind::Format,
            ctx + ": missing key \"object_classes\"");
    for (const auto& o : j.at("object_classes")) {
        check_keys(o, {"name", "color", "size_mean", "size_jitter"},
                   ctx + ".object_classes");
        ObjectClassSpec oc;
        oc.name = get_field<std::string>(o, "name", ctx);
        oc.color = rgb_from_json(o.at("color"), ctx);
        oc.size_mean = vec3_from_json(o.at("size_mean"), ctx);
        oc.size_jitter = vec3_from_json(o.at("size_jitter"), ctx);
        c.object_classes.push_back(oc);
    }
    require(j.contains("road_classes"), ErrorKind::Format,
            ctx + ": missing key \"road_classes\"");
    for (const auto& r : j.at("road_classes")) {
        check_keys(r, {"name", "color"}, ctx + ".road_classes");
        RoadClassSpec rc;
        rc.name = get_field<std::string>(r, "name", ctx);
        rc.color = rgb_from_json(r.at("color"), ctx);
        c.road_classes.push_back(rc);
    }
    c.map.num_classes = int(c.road_classes.size());
    c.locations = get_field<std::vector<std::string>>(j, "locations", ctx);
    require(j.contains("background_colors"), ErrorKind::Format,
            ctx + ": missing key \"background_colors\"");
    const Json& bg = j.at("background_colors");
    check_keys(bg, {"day_sunny", "day_rain", "night_sunny", "night_rain"},
               ctx + ".background_colors");
    for (int t = 0; t < 2; ++t)
        for (int w = 0; w < 2; ++w) {
            require(bg.contains(kBgKeys[t][w]), ErrorKind::Format,
                    ctx + ": missing background color " + kBgKeys[t][w]);
            c.background_colors[size_t(t)][size_t(w)] =
                rgb_from_json(bg.at(kBgKeys[t][w]), ctx);
        }
    c.val_scenes = get_field<int>(j, "val_scenes", ctx);
    c.validate();
    return c;
}

namespace {

int class_index(const std::string& name, const std::vector<std::string>& names,
                const std::string& ctx) {
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return int(i);
    fail(ErrorKind::Format, ctx + ": unknown class \"" + name + "\"");
}

}  // namespace

Json scene_to_json(const SceneRecord& scene, const WorldConfig& config) {
    Json j;
    j["scene_id"] = scene.scene_id;
    Json roads = Json::array();
    for (const auto& e : scene.road_elements) {
        require(e.class_id >= 0 && e.class_id < int(config.road_classes.size()),
                ErrorKind::InvalidArgument, "road element class out of range");
        Json verts = Json::array();
        for (const auto& v : e.vertices) verts.push_back(Json::array({v.x, v.y}));
        roads.push_back(Json{{"class", config.road_classes[size_t(e.class_id)].name},
                             {"vertices", verts}});
    }
    j["road_elements"] = roads;
    Json boxes = Json::array();
    for (const auto& b : scene.boxes) {
        require(b.class_id >= 0 && b.class_id < int(config.object_classes.size()),
                ErrorKind::InvalidArgument, "box class out of range");
        boxes.push_back(Json{{"class", config.object_classes[size_t(b.class_id)].name},
                             {"center", vec3_to_json(b.center)},
                             {"size", vec3_to_json(b.size)},
                             {"yaw", b.yaw}});
    }
    j["boxes"] = boxes;
    j["attributes"] = Json{{"location", scene.attributes.location},
                           {"time_of_day", to_string(scene.attributes.time_of_day)},
                           {"weather", to_string(scene.attributes.weather)}};
    Json rig = Json::array();
    for (const auto& p : scene.rig.poses) {
        Json rot = Json::array();
        for (double v : p.rotation.m) rot.push_back(v);
        rig.push_back(Json{{"fx", p.intrinsics.fx},
                           {"fy", p.intrinsics.fy},
                           {"cx", p.intrinsics.cx},
                           {"cy", p.intrinsics.cy},
                           {"width", p.intrinsics.width},
                           {"height", p.intrinsics.height},
                           {"rotation", rot},
                           {"translation", vec3_to_json(p.translation)}});
    }
    j["rig"] = rig;
    return j;
}

SceneRecord scene_from_json(const Json& j, const WorldConfig& config) {
    const std::string ctx = "scene record";
    check_keys(j, {"scene_id", "road_elements", "boxes", "attributes", "rig"}, ctx);
    std::vector<std::string> road_names, object_names;
    for (const auto& r : config.road_classes) road_names.push_back(r.name);
    for (const auto& o : config.object_classes) object_names.push_back(o.name);

    SceneRecord scene;
    scene.scene_id = get_field<std::string>(j, "scene_id", ctx);
    require(j.contains("road_elements"), ErrorKind::Format,
            ctx + ": missing road_elements");
    for (const auto& e : j.at("road_elements")) {
        check_keys(e, {"class", "vertices"}, ctx + ".road_elements");
        ClassedPolygon poly;
        poly.class_id =
            class_index(get_field<std::string>(e, "class", ctx), road_names, ctx);
        for (const auto& v : e.at("vertices")) {
            require(v.is_array() && v.size() == 2, ErrorKind::Format,
                    ctx + ": polygon vertex must be [x, y]");
            poly.vertices.push_back(Vec2{v[0].get<double>(), v[1].get<double>()});
        }
        scene.road_elements.push_back(poly);
    }
    require(j.contains("boxes"), ErrorKind::Format, ctx + ": missing boxes");
    for (const auto& b : j.at("boxes")) {
        check_keys(b, {"class", "center", "size", "yaw"}, ctx + ".boxes");
        Box3D box;
        box.class_id =
            class_index(get_field<std::string>(b, "class", ctx), object_names, ctx);
        box.center = vec3_from_json(b.at("center"), ctx);
        box.size = vec3_from_json(b.at("size"), ctx);
        box.yaw = get_field<double>(b, "yaw", ctx);
        box.validate();
        scene.boxes.push_back(box);
    }
    require(j.contains("attributes"), ErrorKind::Format, ctx + ": missing attributes");
    const Json& a = j.at("attributes");
    check_keys(a, {"location", "time_of_day", "weather"}, ctx + ".attributes");
    scene.attributes.location = get_field<std::string>(a, "location", ctx);
    scene.attributes.time_of_day =
        time_of_day_from_string(get_field<std::string>(a, "time_of_day", ctx));
    scene.attributes.weather =
        weather_from_string(get_field<std::string>(a, "weather", ctx));
    require(j.contains("rig"), ErrorKind::Format, ctx + ": missing rig");
    for (const auto& p : j.at("rig")) {
        check_keys(p, {"fx", "fy", "cx", "cy", "width", "height", "rotation",
                       "translation"},
                   ctx + ".rig");
        CameraPose pose;
        pose.intrinsics.fx = get_field<double>(p, "fx", ctx);
        pose.intrinsics.fy = get_field<double>(p, "fy", ctx);
        pose.intrinsics.cx = get_field<double>(p, "cx", ctx);
        pose.intrinsics.cy = get_field<double>(p, "cy", ctx);
        pose.intrinsics.width = get_field<int>(p, "width", ctx);
        pose.intrinsics.height = get_field<int>(p, "height", ctx);
        const Json& rot = p.at("rotation");
        require(rot.is_array() && rot.size() == 9, ErrorKind::Format,
                ctx + ": rotation must have 9 entries");
        for (int i = 0; i < 9; ++i) pose.rotation.m[size_t(i)] = rot[size_t(i)].get<double>();
        pose.translation = vec3_from_json(p.at("translation"), ctx);
        pose.validate();
        scene.rig.poses.push_back(pose);
        // Recover the ego yaw from the camera forward direction (row 2
        // of R maps back to ego +z via the transpose).
        scene.rig.yaws.push_back(
            std::atan2(pose.rotation.m[7], pose.rotation.m[6]));
    }
    scene.rig.validate();
    return scene;
}

std::string Dataset::image_path(int scene_idx, int view) const {
    require(scene_idx >= 0 && scene_idx < int(scenes.size()), ErrorKind::InvalidArgument,
            "scene index out of range");
    return dir + "/images/" + scenes[size_t(scene_idx)].scene_id + "_" +
           std::to_string(view) + ".ppm";
}

Image Dataset::load_image(int scene_idx, int view) const {
    require(view >= 0 && view < config.num_views, ErrorKind::InvalidArgument,
            "view index out of range");
    return read_ppm(image_path(scene_idx, view));
}

int Dataset::find_scene(const std::string& scene_id) const {
    for (size_t i = 0; i < scenes.size(); ++i)
        if (scenes[i].scene_id == scene_id) return int(i);
    return -1;
}

void write_dataset(const std::string& dir, const WorldConfig& config, int val_scenes,
                   const std::vector<SceneRecord>& scenes,
                   const std::vector<std::vector<Image>>& images) {
    config.validate();
    const int num_scenes = int(scenes.size());
    require(num_scenes > 0, ErrorKind::InvalidArgument, "dataset needs scenes");
    require(images.size() == scenes.size(), ErrorKind::InvalidArgument,
            "one image list per scene required");
    const int val = val_scenes > 0 ? val_scenes : num_scenes / 10;
    require(val < num_scenes, ErrorKind::InvalidArgument,
            "val_scenes must leave at least one training scene");

    fs::create_directories(fs::path(dir) / "images");

    Json manifest;
    manifest["format_version"] = 1;
    manifest["num_scenes"] = num_scenes;
    manifest["val_scenes"] = val;
    manifest["config"] = world_config_to_json(config);
    write_text_file(dir + "/manifest.json", dump_json(manifest) + "\n");

    std::string jsonl;
    for (int i = 0; i < num_scenes; ++i) {
        const SceneRecord& scene = scenes[size_t(i)];
        jsonl += dump_json(scene_to_json(scene, config));
        jsonl += '\n';
        const auto& views = images[size_t(i)];
        require(int(views.size()) == scene.rig.num_views(), ErrorKind::InvalidArgument,
                "image count does not match rig for " + scene.scene_id);
        for (size_t v = 0; v < views.size(); ++v)
            write_ppm(dir + "/images/" + scene.scene_id + "_" + std::to_string(v) +
                          ".ppm",
                      views[v]);
    }
    write_text_file(dir + "/scenes.jsonl", jsonl);
}

void generate_dataset(const std::string& out_dir, const WorldConfig& config,
                      uint64_t seed, int num_scenes) {
    config.validate();
    RenderConfig rc = RenderConfig::from_world(config);
    rc.validate();
    require(num_scenes > 0, ErrorKind::InvalidArgument, "num_scenes must be positive");

    std::vector<SceneRecord> scenes;
    std::vector<std::vector<Image>> images;
    scenes.reserve(size_t(num_scenes));
    images.reserve(size_t(num_scenes));
    for (int i = 0; i < num_scenes; ++i) {
        SceneRecord scene = sample_scene(derive_seed(seed, uint64_t(i)), config);
        char id[32];
        std::snprintf(id, sizeof(id), "scene_%06d", i);
        scene.scene_id = id;
        images.push_back(render_scene(scene, rc));
        scenes.push_back(std::move(scene));
    }
    write_dataset(out_dir, config, config.val_scenes, scenes, images);
}

Dataset read_dataset(const std::string& dir) {
    require(fs::exists(fs::path(dir) / "manifest.json"), ErrorKind::Io,
            "no manifest.json in " + dir + "; not a dataset directory");
    Dataset ds;
    ds.dir = dir;
    const Json manifest =
        parse_json(read_text_file(dir + "/manifest.json"), dir + "/manifest.json");
    check_keys(manifest, {"format_version", "num_scenes", "val_scenes", "config"},
               "manifest");
    const int version = get_field<int>(manifest, "format_version", "manifest");
    require(version == 1, ErrorKind::Format,
            "unsupported dataset format_version " + std::to_string(version));
    require(manifest.contains("config"), ErrorKind::Format, "manifest: missing config");
    ds.config = world_config_from_json(manifest.at("config"));
    ds.val_scenes = get_field<int>(manifest, "val_scenes", "manifest");
    const int expected = get_field<int>(manifest, "num_scenes", "manifest");

    std::istringstream lines(read_text_file(dir + "/scenes.jsonl"));
    std::string line;
    int lineno = 0;
    while (std::getline(lines, line)) {
        ++lineno;
        if (line.empty()) continue;
        const Json j =
            parse_json(line, dir + "/scenes.jsonl line " + std::to_string(lineno));
        ds.scenes.push_back(scene_from_json(j, ds.config));
    }
    require(int(ds.scenes.size()) == expected, ErrorKind::Format,
            "manifest promises " + std::to_string(expected) + " scenes but " +
                dir + "/scenes.jsonl holds " + std::to_string(ds.scenes.size()));
    require(ds.val_scenes >= 0 && ds.val_scenes < int(ds.scenes.size()),
            ErrorKind::Format, "manifest val_scenes out of range");
    return ds;
}

}  // namespace dg
