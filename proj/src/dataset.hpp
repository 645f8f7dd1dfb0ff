#ifndef DRIVEGEN_DATASET_HPP
#define DRIVEGEN_DATASET_HPP

// On-disk dataset layout and the JSON round trip for world configs and
// scene records:
//
//   <dir>/manifest.json    format version, counts, config echo
//   <dir>/scenes.jsonl     one scene record per line
//   <dir>/images/<scene_id>_<view>.ppm
//
// Floats are written with full precision (binary64 round trip); writers
// are deterministic byte for byte given (seed, config).

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "render.hpp"
#include "scene.hpp"

namespace dg {

using Json = nlohmann::json;

// JSON serialization with %.17g floats and sorted keys.
std::string dump_json(const Json& j);
void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);
Json parse_json(const std::string& text, const std::string& context);

// Rejects unknown keys so config typos fail loudly.
void check_keys(const Json& j, const std::vector<std::string>& allowed,
                const std::string& context);

Json world_config_to_json(const WorldConfig& c);
WorldConfig world_config_from_json(const Json& j);
Json scene_to_json(const SceneRecord& scene, const WorldConfig& config);
SceneRecord scene_from_json(const Json& j, const WorldConfig& config);

struct Dataset {
    std::string dir;
    WorldConfig config;
    int val_scenes = 0;  // the trailing val_scenes scenes form the val split
    std::vector<SceneRecord> scenes;

    int train_count() const { return int(scenes.size()) - val_scenes; }
    bool is_val(int scene_idx) const { return scene_idx >= train_count(); }
    std::string image_path(int scene_idx, int view) const;
    Image load_image(int scene_idx, int view) const;
    int find_scene(const std::string& scene_id) const;  // -1 if absent
};

// Writes manifest, records and images; images[i] holds the rig views of
// scenes[i]. val_scenes <= 0 defaults to one tenth of the scenes.
void write_dataset(const std::string& dir, const WorldConfig& config, int val_scenes,
                   const std::vector<SceneRecord>& scenes,
                   const std::vector<std::vector<Image>>& images);

// Reads manifest and records; images stay on disk until load_image.
Dataset read_dataset(const std::string& dir);

// Samples, renders and writes `num_scenes` scenes under `out_dir`.
void generate_dataset(const std::string& out_dir, const WorldConfig& config,
                      uint64_t seed, int num_scenes);

}  // namespace dg

#endif
