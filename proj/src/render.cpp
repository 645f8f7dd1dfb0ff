#include "render.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "common.hpp"

namespace dg {

RenderConfig RenderConfig::from_world(const WorldConfig& w) {
    RenderConfig rc;
    rc.image_w = w.image_w;
    rc.image_h = w.image_h;
    for (const auto& oc : w.object_classes) rc.object_colors.push_back(oc.color);
    for (const auto& r : w.road_classes) rc.road_colors.push_back(r.color);
    rc.background_colors = w.background_colors;
    rc.map_spec = w.map;
    return rc;
}

void RenderConfig::validate() const {
    require(image_w > 0 && image_h > 0, ErrorKind::InvalidArgument,
            "render image size must be positive");
    require(!object_colors.empty(), ErrorKind::InvalidArgument,
            "render config needs object colors");
    require(!road_colors.empty(), ErrorKind::InvalidArgument,
            "render config needs road colors");
    map_spec.validate();
    require(map_spec.num_classes == int(road_colors.size()), ErrorKind::InvalidArgument,
            "map_spec.num_classes must match road color count");
    for (size_t i = 0; i < object_colors.size(); ++i) {
        for (size_t j = i + 1; j < object_colors.size(); ++j) {
            int sep = 0;
            for (int c = 0; c < 3; ++c)
                sep = std::max(sep, std::abs(int(object_colors[i][c]) -
                                             int(object_colors[j][c])));
            require(sep >= 64, ErrorKind::InvalidArgument,
                    "object colors " + std::to_string(i) + " and " + std::to_string(j) +
                        " are closer than 64 in every channel");
        }
    }
}

namespace {

constexpr double kZNear = kBoxNearPlane;

struct Face {
    int idx[4];         // corner indices forming a loop
    Vec3 normal_local;  // outward normal before yaw/center
};

// Corner index bit k set means positive half extent on axis k (x,y,z).
const Face kFaces[6] = {
    {{0, 2, 6, 4}, {-1.0, 0.0, 0.0}}, {{1, 3, 7, 5}, {1.0, 0.0, 0.0}},
    {{0, 1, 5, 4}, {0.0, -1.0, 0.0}}, {{2, 3, 7, 6}, {0.0, 1.0, 0.0}},
    {{0, 1, 3, 2}, {0.0, 0.0, -1.0}}, {{4, 5, 7, 6}, {0.0, 0.0, 1.0}},
};

// Even-odd scanline fill over pixel centers, clamped to the image.
void fill_quad(Image& img, const Vec2 pts[4], const Rgb& color) {
    double ymin = pts[0].y, ymax = pts[0].y;
    for (int i = 1; i < 4; ++i) {
        ymin = std::min(ymin, pts[i].y);
        ymax = std::max(ymax, pts[i].y);
    }
    const int y0 = std::max(0, int(std::ceil(ymin - 0.5)));
    const int y1 = std::min(img.h - 1, int(std::floor(ymax - 0.5)));
    for (int y = y0; y <= y1; ++y) {
        const double yc = y + 0.5;
        double xs[4];
        int nxs = 0;
        for (int i = 0; i < 4; ++i) {
            const Vec2& a = pts[i];
            const Vec2& b = pts[(i + 1) % 4];
            if ((a.y <= yc) == (b.y <= yc)) continue;
            xs[nxs++] = a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y);
        }
        std::sort(xs, xs + nxs);
        for (int i = 0; i + 1 < nxs; i += 2) {
            const int x0 = std::max(0, int(std::ceil(xs[i] - 0.5)));
            const int x1 = std::min(img.w - 1, int(std::floor(xs[i + 1] - 0.5)));
            for (int x = x0; x <= x1; ++x) {
                uint8_t* p = img.px(x, y);
                p[0] = color[0];
                p[1] = color[1];
                p[2] = color[2];
            }
        }
    }
}

}  // namespace

Image render_view(const SceneRecord& scene, const BEVMap& map,
                  const CameraPose& camera, const RenderConfig& config) {
    config.validate();
    camera.validate();
    require(camera.intrinsics.width == config.image_w &&
                camera.intrinsics.height == config.image_h,
            ErrorKind::Shape, "camera intrinsics do not match render size");
    require(map.spec.num_classes == int(config.road_colors.size()), ErrorKind::Shape,
            "map channel count does not match road color count");
    for (const auto& b : scene.boxes)
        require(b.class_id >= 0 && b.class_id < int(config.object_colors.size()),
                ErrorKind::InvalidArgument, "box class id out of palette range");

    const CameraIntrinsics& K = camera.intrinsics;
    const Mat3 Rt = camera.rotation.transposed();
    const Vec3 C = camera.center();
    const Rgb bg =
        config.background_colors[size_t(scene.attributes.time_of_day)]
                                [size_t(scene.attributes.weather)];

    Image img(config.image_w, config.image_h);

    // Ground pass: cast a ray through each pixel center and intersect the
    // z=0 plane; road class channels override the background, highest
    // class index on top.
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            const Vec3 dir_cam{(x + 0.5 - K.cx) / K.fx, (y + 0.5 - K.cy) / K.fy, 1.0};
            const Vec3 dir = Rt.apply(dir_cam);
            Rgb color = bg;
            if (dir.z < -1e-9) {
                const double t = -C.z / dir.z;
                const Vec3 g{C.x + dir.x * t, C.y + dir.y * t, 0.0};
                int ci, cj;
                if (map.spec.cell_of(Vec2{g.x, g.y}, ci, cj)) {
                    for (int k = 0; k < map.spec.num_classes; ++k)
                        if (map.at(ci, cj, k)) color = config.road_colors[size_t(k)];
                }
            }
            uint8_t* p = img.px(x, y);
            p[0] = color[0];
            p[1] = color[1];
            p[2] = color[2];
        }
    }

    // Box pass: painter's algorithm over boxes (sampling keeps them
    // disjoint), back-face culling within each box.
    std::vector<size_t> order(scene.boxes.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<double> depth(scene.boxes.size());
    for (size_t i = 0; i < scene.boxes.size(); ++i)
        depth[i] = world_to_camera(scene.boxes[i].center, camera).z;
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return depth[a] > depth[b]; });

    for (size_t oi : order) {
        const Box3D& box = scene.boxes[oi];
        if (!box_visible(box, camera)) continue;
        const Corners corners = box_corners(box);
        Vec3 cam[8];
        for (int i = 0; i < 8; ++i) cam[i] = world_to_camera(corners[i], camera);
        const Mat3 yaw_rot = Mat3::rot_z(box.yaw);
        const Rgb color = config.object_colors[size_t(box.class_id)];
        for (const Face& f : kFaces) {
            Vec3 center_cam{0.0, 0.0, 0.0};
            bool in_front = true;
            for (int i = 0; i < 4; ++i) {
                const Vec3& p = cam[f.idx[i]];
                in_front = in_front && p.z > kZNear;
                center_cam = center_cam + p * 0.25;
            }
            if (!in_front) continue;
            const Vec3 n_cam = camera.rotation.apply(yaw_rot.apply(f.normal_local));
            if (n_cam.dot(center_cam) >= -1e-9) continue;  // facing away
            Vec2 pts[4];
            for (int i = 0; i < 4; ++i) {
                const Vec3& p = cam[f.idx[i]];
                pts[i] = Vec2{K.fx * p.x / p.z + K.cx, K.fy * p.y / p.z + K.cy};
            }
            fill_quad(img, pts, color);
        }
    }
    return img;
}

Image render_view(const SceneRecord& scene, const CameraPose& camera,
                  const RenderConfig& config) {
    const BEVMap map = rasterize_scene_map(scene, config.map_spec);
    return render_view(scene, map, camera, config);
}

std::vector<Image> render_rig(const SceneRecord& scene, const CameraRig& rig,
                              const RenderConfig& config) {
    rig.validate();
    const BEVMap map = rasterize_scene_map(scene, config.map_spec);
    std::vector<Image> views;
    views.reserve(rig.poses.size());
    for (const auto& pose : rig.poses)
        views.push_back(render_view(scene, map, pose, config));
    return views;
}

std::vector<Image> render_scene(const SceneRecord& scene, const RenderConfig& config) {
    return render_rig(scene, scene.rig, config);
}

void write_ppm(const std::string& path, const Image& img) {
    require(img.w > 0 && img.h > 0 &&
                img.data.size() == size_t(3) * img.w * img.h,
            ErrorKind::InvalidArgument, "malformed image");
    std::ofstream out(path, std::ios::binary);
    require(out.good(), ErrorKind::Io, "cannot open " + path + " for writing");
    out << "P6\n" << img.w << " " << img.h << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.data.data()),
              std::streamsize(img.data.size()));
    require(out.good(), ErrorKind::Io, "short write to " + path);
}

namespace {

// Next whitespace-delimited token, skipping '#' comments per the PPM spec.
std::string ppm_token(std::istream& in, const std::string& path) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(char(c));
    }
    require(!tok.empty(), ErrorKind::Format, "truncated PPM header in " + path);
    return tok;
}

}  // namespace

Image read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorKind::Io, "cannot open " + path);
    require(ppm_token(in, path) == "P6", ErrorKind::Format,
            path + " is not a binary PPM (P6) file");
    Image img;
    try {
        img.w = std::stoi(ppm_token(in, path));
        img.h = std::stoi(ppm_token(in, path));
        const int maxval = std::stoi(ppm_token(in, path));
        require(maxval == 255, ErrorKind::Format,
                path + ": only maxval 255 is supported");
    } catch (const std::invalid_argument&) {
        fail(ErrorKind::Format, path + ": non-numeric PPM header field");
    }
    require(img.w > 0 && img.h > 0, ErrorKind::Format, path + ": bad PPM size");
    // The header ends with exactly one whitespace byte, already consumed
    // by the tokenizer.
    img.data.resize(size_t(3) * img.w * img.h);
    in.read(reinterpret_cast<char*>(img.data.data()), std::streamsize(img.data.size()));
    require(in.gcount() == std::streamsize(img.data.size()), ErrorKind::Format,
            path + ": truncated PPM pixel data");
    return img;
}

}  // namespace dg
