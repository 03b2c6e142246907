#pragma once

// 2D ray tracer: direct path plus first- and second-order specular reflections
// found with the image method. Path gains follow a log-distance law and are
// summed incoherently.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "cgmoe/error.hpp"
#include "cgmoe/geometry.hpp"

namespace cgmoe {

struct Wall
{
    Point2 a;
    Point2 b;
    double reflection_loss_db = 6.0;
    double transmission_loss_db = 10.0;  // may be +inf (opaque)
};

struct Environment
{
    std::vector<Wall> walls;
    std::vector<Point2> sources;
    std::size_t reference_source = 0;
    Rect region;
    double reference_gain_db = -30.0;
    double pathloss_exponent = 2.0;
    int max_reflection_order = 2;
    double propagation_speed = 3.0e8;
    /// Pilot paths weaker than this are not detected; -inf disables the cut.
    double pilot_sensitivity_db = -std::numeric_limits<double>::infinity();

    std::size_t source_count() const { return sources.size(); }

    void validate() const
    {
        require(region.max.x > region.min.x && region.max.y > region.min.y, "invalid_scene",
                "region must have positive area");
        require(sources.size() >= 2, "invalid_scene", "at least two pilot sources are required");
        require(reference_source < sources.size(), "invalid_scene", "reference source index out of range");
        for (std::size_t i = 0; i < sources.size(); i++)
            require(is_finite(sources[i]) && region.contains(sources[i]), "invalid_scene",
                    "source " + std::to_string(i) + " lies outside the region");
        for (std::size_t i = 0; i < sources.size(); i++)
            for (const Wall &w : walls)
                require(distance_to_segment(sources[i], w.a, w.b) > 1e-9, "invalid_scene",
                        "source " + std::to_string(i) + " lies on a wall");
        require(max_reflection_order == 2, "invalid_scene", "max_reflection_order must be 2");
        require(pathloss_exponent > 0.0, "invalid_scene", "pathloss exponent must be positive");
        require(propagation_speed > 0.0, "invalid_scene", "propagation speed must be positive");
        require(std::isfinite(reference_gain_db), "invalid_scene", "reference gain must be finite");
        for (std::size_t i = 0; i < walls.size(); i++)
        {
            const Wall &w = walls[i];
            const std::string tag = "wall " + std::to_string(i);
            require(is_finite(w.a) && is_finite(w.b), "invalid_scene", tag + " has non-finite endpoints");
            require(!(w.a == w.b), "invalid_scene", tag + " has coincident endpoints");
            require(w.reflection_loss_db >= 0.0 && std::isfinite(w.reflection_loss_db), "invalid_scene",
                    tag + " reflection loss must be finite and non-negative");
            require(w.transmission_loss_db >= 0.0, "invalid_scene",
                    tag + " transmission loss must be non-negative");
        }
    }
};

struct PathComponent
{
    double delay = 0.0;      // seconds
    double amplitude = 0.0;  // linear
    double length = 0.0;     // meters
    int reflections = 0;
};

struct ImpulseResponse
{
    std::vector<PathComponent> paths;  // sorted by delay

    bool empty() const { return paths.empty(); }
    double total_power() const
    {
        double p = 0.0;
        for (const auto &c : paths)
            p += c.amplitude * c.amplitude;
        return p;
    }
};

inline constexpr double min_path_length = 0.1;
inline constexpr double no_coverage_db = -std::numeric_limits<double>::infinity();

inline double path_gain_db(const Environment &env, double length, double interaction_loss_db)
{
    return env.reference_gain_db - 10.0 * env.pathloss_exponent * std::log10(std::max(length, min_path_length))
            - interaction_loss_db;
}

namespace detail {

constexpr double on_wall_tolerance = 1e-9;
constexpr double leg_eps = 1e-12;

/// Sum of transmission losses for walls crossed by the open segment p->q,
/// ignoring the walls listed in `skip`.
inline double leg_loss(const Environment &env, Point2 p, Point2 q, std::array<int, 2> skip)
{
    double loss = 0.0;
    for (int i = 0; i < static_cast<int>(env.walls.size()); i++)
    {
        if (i == skip[0] || i == skip[1])
            continue;
        const Wall &w = env.walls[i];
        const auto hit = intersect_lines(p, q, w.a, w.b);
        if (!hit)
            continue;
        if (hit->s > leg_eps && hit->s < 1.0 - leg_eps && hit->t >= 0.0 && hit->t <= 1.0)
            loss += w.transmission_loss_db;
    }
    return loss;
}

/// Specular point on wall `w` for the ray from `image` toward `target`, if it
/// lies strictly between them and on the wall segment.
inline std::optional<Point2> specular_point(const Wall &w, Point2 image, Point2 target)
{
    const auto hit = intersect_lines(image, target, w.a, w.b);
    if (!hit || hit->s <= leg_eps || hit->s >= 1.0 - leg_eps || hit->t < 0.0 || hit->t > 1.0)
        return std::nullopt;
    return w.a + hit->t * (w.b - w.a);
}

inline void push_path(const Environment &env, std::vector<PathComponent> &out, double length, double loss_db,
        int reflections)
{
    if (!std::isfinite(loss_db))
        return;
    const double gain_db = path_gain_db(env, length, loss_db);
    out.push_back({length / env.propagation_speed, std::pow(10.0, gain_db / 20.0), length, reflections});
}

inline void check_endpoint(const Environment &env, Point2 p, const char *name)
{
    require(is_finite(p), "invalid_point", std::string(name) + " is not finite");
    require(env.region.contains(p), "invalid_point", std::string(name) + " lies outside the region");
    for (const Wall &w : env.walls)
        require(distance_to_segment(p, w.a, w.b) > on_wall_tolerance, "invalid_point",
                std::string(name) + " lies on a wall");
}

} // namespace detail

/// All propagation paths between `a` and `b` (direct, 1st and 2nd order reflections).
inline ImpulseResponse trace_paths(const Environment &env, Point2 a, Point2 b)
{
    detail::check_endpoint(env, a, "endpoint a");
    detail::check_endpoint(env, b, "endpoint b");
    require(!(a == b), "invalid_point", "endpoints coincide");

    ImpulseResponse ir;
    auto &paths = ir.paths;
    const int n = static_cast<int>(env.walls.size());

    detail::push_path(env, paths, distance(a, b), detail::leg_loss(env, a, b, {-1, -1}), 0);

    for (int i = 0; i < n; i++)
    {
        const Wall &wi = env.walls[i];
        const Point2 a1 = reflect_across(a, wi.a, wi.b);
        if (const auto p1 = detail::specular_point(wi, a1, b))
        {
            const double loss = wi.reflection_loss_db + detail::leg_loss(env, a, *p1, {i, -1})
                    + detail::leg_loss(env, *p1, b, {i, -1});
            detail::push_path(env, paths, distance(a, *p1) + distance(*p1, b), loss, 1);
        }
        for (int j = 0; j < n; j++)
        {
            if (j == i)
                continue;
            const Wall &wj = env.walls[j];
            const Point2 a12 = reflect_across(a1, wj.a, wj.b);
            const auto p2 = detail::specular_point(wj, a12, b);
            if (!p2)
                continue;
            const auto p1 = detail::specular_point(wi, a1, *p2);
            if (!p1)
                continue;
            const double loss = wi.reflection_loss_db + wj.reflection_loss_db
                    + detail::leg_loss(env, a, *p1, {i, -1}) + detail::leg_loss(env, *p1, *p2, {i, j})
                    + detail::leg_loss(env, *p2, b, {j, -1});
            detail::push_path(env, paths, distance(a, *p1) + distance(*p1, *p2) + distance(*p2, b), loss, 2);
        }
    }
    std::sort(paths.begin(), paths.end(), [](const PathComponent &x, const PathComponent &y) {
        if (x.delay != y.delay)
            return x.delay < y.delay;
        return x.amplitude > y.amplitude;
    });
    return ir;
}

/// Incoherent channel gain in dB; no_coverage_db when every path is blocked.
inline double channel_gain_db(const Environment &env, Point2 a, Point2 b)
{
    const double power = trace_paths(env, a, b).total_power();
    if (!(power > 0.0))
        return no_coverage_db;
    return 10.0 * std::log10(power);
}

/// Pilot received at `loc` from source `m`, with sub-sensitivity paths removed.
inline ImpulseResponse pilot_response(const Environment &env, std::size_t m, Point2 loc)
{
    ImpulseResponse ir = trace_paths(env, env.sources.at(m), loc);
    if (std::isfinite(env.pilot_sensitivity_db))
    {
        const double floor = std::pow(10.0, env.pilot_sensitivity_db / 20.0);
        std::erase_if(ir.paths, [floor](const PathComponent &c) { return c.amplitude < floor; });
    }
    return ir;
}

/// True when `p` can serve as a terminal location (inside the region, off every wall).
inline bool is_valid_terminal_location(const Environment &env, Point2 p)
{
    if (!is_finite(p) || !env.region.contains(p))
        return false;
    for (const Wall &w : env.walls)
        if (distance_to_segment(p, w.a, w.b) <= detail::on_wall_tolerance)
            return false;
    for (const Point2 &s : env.sources)
        if (s == p)
            return false;
    return true;
}

} // namespace cgmoe
