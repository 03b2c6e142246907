#pragma once

#include <algorithm>
#include <cmath>
#include <optional>

namespace cgmoe {

struct Point2
{
    double x = 0.0;
    double y = 0.0;

    friend Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
    friend Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
    friend Point2 operator*(double s, Point2 a) { return {s * a.x, s * a.y}; }
    friend bool operator==(Point2 a, Point2 b) = default;
};

inline double dot(Point2 a, Point2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Point2 a, Point2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Point2 a) { return std::hypot(a.x, a.y); }
inline double distance(Point2 a, Point2 b) { return norm(a - b); }
inline bool is_finite(Point2 a) { return std::isfinite(a.x) && std::isfinite(a.y); }

struct Rect
{
    Point2 min;
    Point2 max;

    bool contains(Point2 p) const
    {
        return p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y;
    }
    double width() const { return max.x - min.x; }
    double height() const { return max.y - min.y; }
};

/// Mirror image of `p` across the infinite line through `a` and `b`.
inline Point2 reflect_across(Point2 p, Point2 a, Point2 b)
{
    const Point2 d = b - a;
    const double t = dot(p - a, d) / dot(d, d);
    const Point2 foot = a + t * d;
    return 2.0 * foot - p;
}

/// Signed area test: >0 if `p` is left of a->b.
inline double side_of(Point2 p, Point2 a, Point2 b) { return cross(b - a, p - a); }

/// Parameters (s along p0->p1, t along q0->q1) of the intersection of two segments'
/// supporting lines; nullopt when parallel.
struct LineHit
{
    double s;
    double t;
};

inline std::optional<LineHit> intersect_lines(Point2 p0, Point2 p1, Point2 q0, Point2 q1)
{
    const Point2 r = p1 - p0;
    const Point2 q = q1 - q0;
    const double denom = cross(r, q);
    if (std::abs(denom) <= 1e-300)
        return std::nullopt;
    const Point2 w = q0 - p0;
    return LineHit{cross(w, q) / denom, cross(w, r) / denom};
}

/// Distance from `p` to segment [a, b].
inline double distance_to_segment(Point2 p, Point2 a, Point2 b)
{
    const Point2 d = b - a;
    double t = dot(p - a, d) / dot(d, d);
    t = std::clamp(t, 0.0, 1.0);
    return distance(p, a + t * d);
}

} // namespace cgmoe
