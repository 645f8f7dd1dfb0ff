#ifndef DRIVEGEN_GEOMETRY_HPP
#define DRIVEGEN_GEOMETRY_HPP

// Camera models, box geometry, visibility filtering, Fourier features and
// BEV rasterization. Everything here is a pure function at double precision.
//
// Conventions:
//   ego frame:    x forward, y left, z up; origin at the ego vehicle.
//   camera frame: +z forward (optical axis), +x right, +y down.
//   p_cam = R * p_ego + T.

#include <array>
#include <cstdint>
#include <vector>

#include "common.hpp"

namespace dg {

struct Vec2 {
    double x = 0.0, y = 0.0;
};

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
};

// Row-major 3x3.
struct Mat3 {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    double at(int r, int c) const { return m[r * 3 + c]; }
    double& at(int r, int c) { return m[r * 3 + c]; }

    Vec3 apply(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
                m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }

    Mat3 transposed() const {
        Mat3 t;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) t.at(r, c) = at(c, r);
        return t;
    }

    static Mat3 rot_z(double angle);
};

struct CameraIntrinsics {
    double fx = 1.0, fy = 1.0;   // focal lengths, pixels
    double cx = 0.0, cy = 0.0;   // principal point, pixels
    int width = 1, height = 1;   // image size, pixels

    void validate() const;
};

struct CameraPose {
    CameraIntrinsics intrinsics;
    Mat3 rotation;     // ego -> camera
    Vec3 translation;  // ego -> camera, meters

    void validate() const;

    // Camera center in ego coordinates: -R^T * T.
    Vec3 center() const;

    // Level camera at `position` looking along ego yaw `yaw` (0 = +x).
    static CameraPose looking(const CameraIntrinsics& intr, const Vec3& position, double yaw);
};

struct Box3D {
    int class_id = 0;
    Vec3 center;        // ego frame, meters
    Vec3 size;          // length (x), width (y), height (z), meters
    double yaw = 0.0;   // rotation about ego z, radians in [-pi, pi]

    void validate() const;
};

// The 8 cuboid corners in ego frame. Corner ordering is fixed by local-frame
// sign bits before rotation: bit 0 = x, bit 1 = y, bit 2 = z; a set bit
// selects the positive half-extent.
using Corners = std::array<Vec3, 8>;
Corners box_corners(const Box3D& box);

inline Vec3 world_to_camera(const Vec3& p, const CameraPose& pose) {
    return pose.rotation.apply(p) + pose.translation;
}

// Pinhole projection of a camera-frame point; requires z > 0.
Vec2 project(const Vec3& point_cam, const CameraIntrinsics& intr);

// A box is visible to a view iff any of its 8 corners has positive depth
// in the camera frame. Field of view is deliberately not considered.
bool box_visible(const Box3D& box, const CameraPose& pose);

// [sin(2^k pi v), cos(2^k pi v)] per band k, applied elementwise; 6L values.
std::vector<double> fourier_embed(const Vec3& v, int num_bands);

// Pose parameters stacked as a 7x3 matrix: rows 0-2 the expanded intrinsic
// matrix, rows 3-5 the rotation, row 6 the translation.
using PoseMatrix = std::array<std::array<double, 3>, 7>;
PoseMatrix flatten_pose(const CameraPose& pose);
CameraPose unflatten_pose(const PoseMatrix& pm, int width, int height);

// Fourier features of all 7 pose rows, concatenated (7 * 6L values).
std::vector<double> pose_features(const CameraPose& pose, int num_bands);

struct BEVMapSpec {
    double extent_x = 40.0;  // meters covered along ego x, centered on ego
    double extent_y = 40.0;
    int grid_w = 64;         // cells along x
    int grid_h = 64;         // cells along y
    int num_classes = 3;

    void validate() const;

    // Center of cell (i, j) in ego coordinates.
    Vec2 cell_center(int i, int j) const {
        return {-extent_x / 2 + (i + 0.5) * extent_x / grid_w,
                -extent_y / 2 + (j + 0.5) * extent_y / grid_h};
    }

    bool cell_of(const Vec2& p, int& i, int& j) const;
};

struct BEVMap {
    BEVMapSpec spec;
    std::vector<uint8_t> data;  // grid_w * grid_h * num_classes, values in {0,1}

    uint8_t at(int i, int j, int k) const {
        return data[size_t((i * spec.grid_h + j) * spec.num_classes + k)];
    }
    uint8_t& at(int i, int j, int k) {
        return data[size_t((i * spec.grid_h + j) * spec.num_classes + k)];
    }
};

struct ClassedPolygon {
    int class_id = 0;
    std::vector<Vec2> vertices;  // simple polygon, any winding
};

// Even-odd test against a simple polygon; boundary points count as inside.
bool point_in_polygon(const Vec2& p, const std::vector<Vec2>& poly);

// Cell (i, j, k) = 1 iff the cell center lies inside any polygon of class k.
BEVMap rasterize_map(const std::vector<ClassedPolygon>& elements, const BEVMapSpec& spec);

}  // namespace dg

#endif
