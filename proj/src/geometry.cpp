#include "flowtwin/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace flowtwin::geom {

namespace {

double cross(const Vec2d& o, const Vec2d& a, const Vec2d& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

int sign(double v, double eps = 1e-12) { return v > eps ? 1 : (v < -eps ? -1 : 0); }

bool on_segment(const Vec2d& p, const Vec2d& a, const Vec2d& b) {
  return std::min(a.x(), b.x()) - 1e-12 <= p.x() && p.x() <= std::max(a.x(), b.x()) + 1e-12 &&
         std::min(a.y(), b.y()) - 1e-12 <= p.y() && p.y() <= std::max(a.y(), b.y()) + 1e-12;
}

}  // namespace

bool segments_cross(const Vec2d& p1, const Vec2d& p2, const Vec2d& q1, const Vec2d& q2) {
  const int d1 = sign(cross(q1, q2, p1));
  const int d2 = sign(cross(q1, q2, p2));
  const int d3 = sign(cross(p1, p2, q1));
  const int d4 = sign(cross(p1, p2, q2));
  return d1 * d2 < 0 && d3 * d4 < 0;
}

bool segments_intersect(const Vec2d& p1, const Vec2d& p2, const Vec2d& q1, const Vec2d& q2) {
  const int d1 = sign(cross(q1, q2, p1));
  const int d2 = sign(cross(q1, q2, p2));
  const int d3 = sign(cross(p1, p2, q1));
  const int d4 = sign(cross(p1, p2, q2));
  if (d1 * d2 < 0 && d3 * d4 < 0) return true;
  if (d1 == 0 && on_segment(p1, q1, q2)) return true;
  if (d2 == 0 && on_segment(p2, q1, q2)) return true;
  if (d3 == 0 && on_segment(q1, p1, p2)) return true;
  if (d4 == 0 && on_segment(q2, p1, p2)) return true;
  return false;
}

bool segment_intersects_polygon(const Vec2d& a, const Vec2d& b, const Polygon& polygon) {
  if (contains(polygon, a) || contains(polygon, b)) return true;
  const std::size_t n = polygon.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    if (segments_intersect(a, b, polygon[j], polygon[i])) return true;
  }
  return false;
}

bool is_simple(const Polygon& polygon) {
  const std::size_t n = polygon.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2d& a1 = polygon[i];
    const Vec2d& a2 = polygon[(i + 1) % n];
    if ((a2 - a1).norm() <= 0.0) return false;
    for (std::size_t j = i + 1; j < n; ++j) {
      // Adjacent edges share a vertex by construction.
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;
      if (segments_intersect(a1, a2, polygon[j], polygon[(j + 1) % n])) return false;
    }
  }
  return true;
}

double signed_area(const Polygon& polygon) {
  double a = 0.0;
  const std::size_t n = polygon.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    a += polygon[j].x() * polygon[i].y() - polygon[i].x() * polygon[j].y();
  }
  return 0.5 * a;
}

Vec2d centroid(const Polygon& polygon) {
  const double a = signed_area(polygon);
  if (std::abs(a) < 1e-12) {
    Vec2d c = Vec2d::Zero();
    for (const auto& p : polygon) c += p;
    return c / static_cast<double>(polygon.size());
  }
  Vec2d c = Vec2d::Zero();
  const std::size_t n = polygon.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const double f = polygon[j].x() * polygon[i].y() - polygon[i].x() * polygon[j].y();
    c += (polygon[j] + polygon[i]) * f;
  }
  return c / (6.0 * a);
}

bool interiors_overlap(const Polygon& a, const Polygon& b) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      if (segments_cross(a[i], a[(i + 1) % a.size()], b[j], b[(j + 1) % b.size()])) return true;
    }
  }
  if (contains(a, centroid(b)) || contains(b, centroid(a))) return true;
  return false;
}

}  // namespace flowtwin::geom
