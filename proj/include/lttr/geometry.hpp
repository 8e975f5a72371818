#pragma once

#include <array>
#include <vector>

#include "lttr/errors.hpp"

namespace lttr {

using Vec3 = std::array<double, 3>;
using Vec2 = std::array<double, 2>;
using PointCloud = std::vector<Vec3>;

// Wraps to (-pi, pi].
double wrap_angle(double a);

// size holds the extents along the box's local axes; local +x is the
// heading direction.
struct Box3D {
  Vec3 center{0.0, 0.0, 0.0};
  Vec3 size{1.0, 1.0, 1.0};
  double yaw = 0.0;
};

void validate_box(const Box3D& b);

Vec3 box_to_local(const Box3D& b, const Vec3& p_world);
Vec3 box_to_world(const Box3D& b, const Vec3& p_local);
// Closed-interval containment in the box frame.
bool box_contains(const Box3D& b, const Vec3& p_world);

// BEV footprint corners, counter-clockwise.
std::array<Vec2, 4> box_corners_bev(const Box3D& b);

double polygon_area(const std::vector<Vec2>& poly);
// Sutherland-Hodgman; clip must be convex and counter-clockwise.
std::vector<Vec2> clip_polygon(const std::vector<Vec2>& subject,
                               const std::vector<Vec2>& clip);

double bev_intersection_area(const Box3D& a, const Box3D& b);
// Rotated-box volume IoU: exact BEV polygon intersection times z overlap.
double iou3d(const Box3D& a, const Box3D& b);
double center_distance(const Box3D& a, const Box3D& b);

}  // namespace lttr
