#ifndef DRIVEGEN_RENDER_HPP
#define DRIVEGEN_RENDER_HPP

// Flat-shaded reference renderer for the toy world.  Ground plane and BEV
// road classes are resolved per pixel by ray casting; boxes are painted as
// solid-color cuboids far-to-near with back-face culling.  No lighting --
// object and road colors are constant so color identifies class.

#include <string>
#include <vector>

#include "geometry.hpp"
#include "scene.hpp"

namespace dg {

// Box faces are drawn only when every corner clears this camera-frame
// depth; the metrics' region extraction keys off the same threshold.
constexpr double kBoxNearPlane = 0.05;

struct RenderConfig {
    int image_w = 0;
    int image_h = 0;
    std::vector<Rgb> object_colors;  // by object class id
    std::vector<Rgb> road_colors;    // by road class id
    std::array<std::array<Rgb, 2>, 2> background_colors{};  // [time][weather]
    BEVMapSpec map_spec;

    static RenderConfig from_world(const WorldConfig& w);
    // Rejects palettes whose object colors are not pairwise separated by
    // at least 64 in some channel; the controllability probe needs that.
    void validate() const;
};

struct Image {
    int w = 0;
    int h = 0;
    std::vector<uint8_t> data;  // rgb, row-major, 3 * w * h bytes

    Image() = default;
    Image(int w_, int h_) : w(w_), h(h_), data(size_t(3) * w_ * h_, 0) {}
    uint8_t* px(int x, int y) { return data.data() + 3 * (size_t(y) * w + x); }
    const uint8_t* px(int x, int y) const {
        return data.data() + 3 * (size_t(y) * w + x);
    }
};

Image render_view(const SceneRecord& scene, const BEVMap& map,
                  const CameraPose& camera, const RenderConfig& config);
// Convenience overload that rasterizes the scene's road map itself.
Image render_view(const SceneRecord& scene, const CameraPose& camera,
                  const RenderConfig& config);
// One image per rig pose, in rig order, sharing one map rasterization.
std::vector<Image> render_rig(const SceneRecord& scene, const CameraRig& rig,
                              const RenderConfig& config);
// All views of the scene's own rig.
std::vector<Image> render_scene(const SceneRecord& scene, const RenderConfig& config);

void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);

}  // namespace dg

#endif
