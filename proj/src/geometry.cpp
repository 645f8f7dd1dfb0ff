#include "geometry.hpp"

#include <cmath>
#include <string>

namespace dg {

Mat3 Mat3::rot_z(double angle) {
    double c = std::cos(angle), s = std::sin(angle);
    Mat3 r;
    r.m = {c, -s, 0, s, c, 0, 0, 0, 1};
    return r;
}

void CameraIntrinsics::validate() const {
    require(fx > 0 && fy > 0, ErrorKind::InvalidArgument, "intrinsics: focal lengths must be > 0");
    require(width > 0 && height > 0, ErrorKind::InvalidArgument, "intrinsics: image size must be > 0");
    require(cx >= 0 && cx < width, ErrorKind::InvalidArgument, "intrinsics: cx out of [0, width)");
    require(cy >= 0 && cy < height, ErrorKind::InvalidArgument, "intrinsics: cy out of [0, height)");
}

void CameraPose::validate() const {
    intrinsics.validate();
    // R * R^T = I within 1e-6.
    const Mat3& r = rotation;
    for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) {
            double dot = 0;
            for (int k = 0; k < 3; ++k) dot += r.at(a, k) * r.at(b, k);
            double expect = (a == b) ? 1.0 : 0.0;
            require(std::abs(dot - expect) < 1e-6, ErrorKind::InvalidArgument,
                    "pose: rotation is not orthonormal");
        }
    }
    double det = r.m[0] * (r.m[4] * r.m[8] - r.m[5] * r.m[7]) -
                 r.m[1] * (r.m[3] * r.m[8] - r.m[5] * r.m[6]) +
                 r.m[2] * (r.m[3] * r.m[7] - r.m[4] * r.m[6]);
    require(std::abs(det - 1.0) < 1e-6, ErrorKind::InvalidArgument,
            "pose: rotation determinant must be +1");
}

Vec3 CameraPose::center() const {
    Vec3 t = rotation.transposed().apply(translation);
    return {-t.x, -t.y, -t.z};
}

CameraPose CameraPose::looking(const CameraIntrinsics& intr, const Vec3& position, double yaw) {
    double c = std::cos(yaw), s = std::sin(yaw);
    CameraPose pose;
    pose.intrinsics = intr;
    // Rows are the camera axes (right, down, forward) in ego coordinates.
    pose.rotation.m = {s, -c, 0,
                       0, 0, -1,
                       c, s, 0};
    Vec3 rc = pose.rotation.apply(position);
    pose.translation = {-rc.x, -rc.y, -rc.z};
    return pose;
}

void Box3D::validate() const {
    require(size.x > 0 && size.y > 0 && size.z > 0, ErrorKind::InvalidArgument,
            "box: size components must be > 0");
}

Corners box_corners(const Box3D& box) {
    Mat3 rot = Mat3::rot_z(box.yaw);
    Corners out;
    for (int i = 0; i < 8; ++i) {
        Vec3 local{((i & 1) ? 0.5 : -0.5) * box.size.x,
                   ((i & 2) ? 0.5 : -0.5) * box.size.y,
                   ((i & 4) ? 0.5 : -0.5) * box.size.z};
        out[size_t(i)] = rot.apply(local) + box.center;
    }
    return out;
}

Vec2 project(const Vec3& p, const CameraIntrinsics& intr) {
    require(p.z > 0, ErrorKind::Domain, "project: point has non-positive depth");
    return {intr.fx * p.x / p.z + intr.cx, intr.fy * p.y / p.z + intr.cy};
}

bool box_visible(const Box3D& box, const CameraPose& pose) {
    for (const Vec3& c : box_corners(box)) {
        if (world_to_camera(c, pose).z > 0) return true;
    }
    return false;
}

std::vector<double> fourier_embed(const Vec3& v, int num_bands) {
    require(num_bands >= 1, ErrorKind::InvalidArgument, "fourier_embed: num_bands must be >= 1");
    std::vector<double> out;
    out.reserve(size_t(num_bands) * 6);
    const double comps[3] = {v.x, v.y, v.z};
    for (int k = 0; k < num_bands; ++k) {
        double f = std::ldexp(M_PI, k);  // 2^k * pi
        for (double c : comps) out.push_back(std::sin(f * c));
        for (double c : comps) out.push_back(std::cos(f * c));
    }
    return out;
}

PoseMatrix flatten_pose(const CameraPose& pose) {
    const CameraIntrinsics& in = pose.intrinsics;
    PoseMatrix pm;
    pm[0] = {in.fx, 0.0, in.cx};
    pm[1] = {0.0, in.fy, in.cy};
    pm[2] = {0.0, 0.0, 1.0};
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) pm[size_t(3 + r)][size_t(c)] = pose.rotation.at(r, c);
    pm[6] = {pose.translation.x, pose.translation.y, pose.translation.z};
    return pm;
}

CameraPose unflatten_pose(const PoseMatrix& pm, int width, int height) {
    CameraPose pose;
    pose.intrinsics = {pm[0][0], pm[1][1], pm[0][2], pm[1][2], width, height};
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) pose.rotation.at(r, c) = pm[size_t(3 + r)][size_t(c)];
    pose.translation = {pm[6][0], pm[6][1], pm[6][2]};
    return pose;
}

std::vector<double> pose_features(const CameraPose& pose, int num_bands) {
    PoseMatrix pm = flatten_pose(pose);
    std::vector<double> out;
    out.reserve(size_t(num_bands) * 6 * 7);
    for (const auto& row : pm) {
        auto f = fourier_embed({row[0], row[1], row[2]}, num_bands);
        out.insert(out.end(), f.begin(), f.end());
    }
    return out;
}

void BEVMapSpec::validate() const {
    require(extent_x > 0 && extent_y > 0, ErrorKind::InvalidArgument, "map spec: extents must be > 0");
    require(grid_w > 0 && grid_h > 0, ErrorKind::InvalidArgument, "map spec: grid dims must be > 0");
    require(num_classes > 0, ErrorKind::InvalidArgument, "map spec: num_classes must be > 0");
}

bool BEVMapSpec::cell_of(const Vec2& p, int& i, int& j) const {
    double u = (p.x + extent_x / 2) / extent_x * grid_w;
    double v = (p.y + extent_y / 2) / extent_y * grid_h;
    i = int(std::floor(u));
    j = int(std::floor(v));
    return i >= 0 && i < grid_w && j >= 0 && j < grid_h;
}

bool point_in_polygon(const Vec2& p, const std::vector<Vec2>& poly) {
    size_t n = poly.size();
    if (n < 3) return false;
    bool inside = false;
    for (size_t a = 0, b = n - 1; a < n; b = a++) {
        const Vec2& pa = poly[a];
        const Vec2& pb = poly[b];
        // On-edge check keeps the boundary inside regardless of winding.
        double cross = (pb.x - pa.x) * (p.y - pa.y) - (pb.y - pa.y) * (p.x - pa.x);
        if (std::abs(cross) < 1e-12 &&
            p.x >= std::min(pa.x, pb.x) - 1e-12 && p.x <= std::max(pa.x, pb.x) + 1e-12 &&
            p.y >= std::min(pa.y, pb.y) - 1e-12 && p.y <= std::max(pa.y, pb.y) + 1e-12) {
            return true;
        }
        if ((pa.y > p.y) != (pb.y > p.y)) {
            double x_int = pa.x + (p.y - pa.y) / (pb.y - pa.y) * (pb.x - pa.x);
            if (p.x < x_int) inside = !inside;
        }
    }
    return inside;
}

BEVMap rasterize_map(const std::vector<ClassedPolygon>& elements, const BEVMapSpec& spec) {
    spec.validate();
    BEVMap map;
    map.spec = spec;
    map.data.assign(size_t(spec.grid_w) * spec.grid_h * spec.num_classes, 0);
    for (const ClassedPolygon& el : elements) {
        require(el.class_id >= 0 && el.class_id < spec.num_classes, ErrorKind::InvalidArgument,
                "rasterize_map: class_id " + std::to_string(el.class_id) + " out of range");
        for (int i = 0; i < spec.grid_w; ++i) {
            for (int j = 0; j < spec.grid_h; ++j) {
                if (map.at(i, j, el.class_id)) continue;
                if (point_in_polygon(spec.cell_center(i, j), el.vertices)) {
                    map.at(i, j, el.class_id) = 1;
                }
            }
        }
    }
    return map;
}

}  // namespace dg
