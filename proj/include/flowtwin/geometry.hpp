#pragma once

#include "flowtwin/common.hpp"

#include <algorithm>
#include <span>
#include <vector>

namespace flowtwin::geom {

using Polygon = std::vector<Vec2d>;

// Crossing-number test. Boundary handling is half-open, so a point on an edge
// shared by two adjacent polygons is attributed to exactly one of them.
template <typename S>
bool contains(std::span<const Vec2<S>> polygon, const Vec2<S>& p) {
  bool inside = false;
  const std::size_t n = polygon.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const auto& a = polygon[i];
    const auto& b = polygon[j];
    if ((a.y() > p.y()) != (b.y() > p.y())) {
      const S x_cross = (b.x() - a.x()) * (p.y() - a.y()) / (b.y() - a.y()) + a.x();
      if (p.x() < x_cross) inside = !inside;
    }
  }
  return inside;
}

inline bool contains(const Polygon& polygon, const Vec2d& p) {
  return contains<double>(std::span<const Vec2d>(polygon), p);
}

template <typename S>
Vec2<S> closest_point_on_segment(const Vec2<S>& p, const Vec2<S>& a, const Vec2<S>& b) {
  const Vec2<S> ab = b - a;
  const S len2 = ab.squaredNorm();
  if (len2 <= S(0)) return a;
  S t = (p - a).dot(ab) / len2;
  t = std::clamp(t, S(0), S(1));
  return a + t * ab;
}

// True when the open segments cross at a single interior point.
bool segments_cross(const Vec2d& p1, const Vec2d& p2, const Vec2d& q1, const Vec2d& q2);

// Closed-segment intersection, including touching and collinear overlap.
bool segments_intersect(const Vec2d& p1, const Vec2d& p2, const Vec2d& q1, const Vec2d& q2);

bool segment_intersects_polygon(const Vec2d& a, const Vec2d& b, const Polygon& polygon);

bool is_simple(const Polygon& polygon);

double signed_area(const Polygon& polygon);

Vec2d centroid(const Polygon& polygon);

// Conservative overlap check for two simple polygons: any proper edge crossing
// or a vertex/centroid of one strictly inside the other.
bool interiors_overlap(const Polygon& a, const Polygon& b);

}  // namespace flowtwin::geom
