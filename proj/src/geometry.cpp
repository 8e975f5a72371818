#include "lttr/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace lttr {

double wrap_angle(double a) {
  const double two_pi = 2.0 * M_PI;
  double r = std::fmod(a + M_PI, two_pi);
  if (r <= 0.0) r += two_pi;
  return r - M_PI;
}

void validate_box(const Box3D& b) {
  for (double s : b.size)
    if (!(s > 0.0)) throw ConfigError("box size components must be positive");
  for (double c : b.center)
    if (!std::isfinite(c)) throw ConfigError("box center must be finite");
  if (!std::isfinite(b.yaw)) throw ConfigError("box yaw must be finite");
}

Vec3 box_to_local(const Box3D& b, const Vec3& p) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double dx = p[0] - b.center[0];
  const double dy = p[1] - b.center[1];
  return {c * dx + s * dy, -s * dx + c * dy, p[2] - b.center[2]};
}

Vec3 box_to_world(const Box3D& b, const Vec3& p) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  return {b.center[0] + c * p[0] - s * p[1],
          b.center[1] + s * p[0] + c * p[1], b.center[2] + p[2]};
}

bool box_contains(const Box3D& b, const Vec3& p) {
  const Vec3 q = box_to_local(b, p);
  return std::fabs(q[0]) <= b.size[0] * 0.5 &&
         std::fabs(q[1]) <= b.size[1] * 0.5 &&
         std::fabs(q[2]) <= b.size[2] * 0.5;
}

std::array<Vec2, 4> box_corners_bev(const Box3D& b) {
  const double hx = b.size[0] * 0.5, hy = b.size[1] * 0.5;
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const std::array<Vec2, 4> local{{{hx, hy}, {-hx, hy}, {-hx, -hy}, {hx, -hy}}};
  std::array<Vec2, 4> out;
  for (int i = 0; i < 4; ++i)
    out[i] = {b.center[0] + c * local[i][0] - s * local[i][1],
              b.center[1] + s * local[i][0] + c * local[i][1]};
  return out;
}

double polygon_area(const std::vector<Vec2>& poly) {
  if (poly.size() < 3) return 0.0;
  double a = 0.0;
  for (size_t i = 0; i < poly.size(); ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % poly.size()];
    a += p[0] * q[1] - q[0] * p[1];
  }
  return std::fabs(a) * 0.5;
}

std::vector<Vec2> clip_polygon(const std::vector<Vec2>& subject,
                               const std::vector<Vec2>& clip) {
  std::vector<Vec2> out = subject;
  for (size_t i = 0; i < clip.size() && !out.empty(); ++i) {
    const Vec2& a = clip[i];
    const Vec2& b = clip[(i + 1) % clip.size()];
    const double ex = b[0] - a[0], ey = b[1] - a[1];
    auto inside = [&](const Vec2& p) {
      return ex * (p[1] - a[1]) - ey * (p[0] - a[0]) >= 0.0;
    };
    auto intersect = [&](const Vec2& p, const Vec2& q) -> Vec2 {
      const double dpx = q[0] - p[0], dpy = q[1] - p[1];
      const double denom = ex * dpy - ey * dpx;
      const double t = (ey * (p[0] - a[0]) - ex * (p[1] - a[1])) / denom;
      return {p[0] + t * dpx, p[1] + t * dpy};
    };
    std::vector<Vec2> in;
    in.swap(out);
    for (size_t j = 0; j < in.size(); ++j) {
      const Vec2& cur = in[j];
      const Vec2& prev = in[(j + in.size() - 1) % in.size()];
      const bool cin = inside(cur), pin = inside(prev);
      if (cin) {
        if (!pin) out.push_back(intersect(prev, cur));
        out.push_back(cur);
      } else if (pin) {
        out.push_back(intersect(prev, cur));
      }
    }
  }
  return out;
}

double bev_intersection_area(const Box3D& a, const Box3D& b) {
  const auto ca = box_corners_bev(a);
  const auto cb = box_corners_bev(b);
  const std::vector<Vec2> sa(ca.begin(), ca.end());
  const std::vector<Vec2> sb(cb.begin(), cb.end());
  return polygon_area(clip_polygon(sa, sb));
}

double iou3d(const Box3D& a, const Box3D& b) {
  validate_box(a);
  validate_box(b);
  const double area = bev_intersection_area(a, b);
  const double za0 = a.center[2] - a.size[2] * 0.5;
  const double za1 = a.center[2] + a.size[2] * 0.5;
  const double zb0 = b.center[2] - b.size[2] * 0.5;
  const double zb1 = b.center[2] + b.size[2] * 0.5;
  const double dz = std::min(za1, zb1) - std::max(za0, zb0);
  const double inter = dz > 0.0 ? area * dz : 0.0;
  const double va = a.size[0] * a.size[1] * a.size[2];
  const double vb = b.size[0] * b.size[1] * b.size[2];
  const double uni = va + vb - inter;
  const double iou = inter / uni;
  return std::min(1.0, std::max(0.0, iou));
}

double center_distance(const Box3D& a, const Box3D& b) {
  const double dx = a.center[0] - b.center[0];
  const double dy = a.center[1] - b.center[1];
  const double dz = a.center[2] - b.center[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

}  // namespace lttr
