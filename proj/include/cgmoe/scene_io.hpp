#pragma once

// JSON scene files. Layout:
//
//   {
//     "schema_version": 1,
//     "region": {"x_min": 0, "y_min": 0, "x_max": 60, "y_max": 60},
//     "walls": [{"a": [x, y], "b": [x, y],
//                "reflection_loss_db": 6, "transmission_loss_db": 10}],
//     "sources": [[x, y], ...],
//     "reference_source": 0,
//     "reference_gain_db": -30,
//     "pathloss_exponent": 2,
//     "max_reflection_order": 2,
//     "propagation_speed": 3e8,
//     "pilot_sensitivity_db": null
//   }
//
// "transmission_loss_db" may be the string "inf" for an opaque wall.
// Every key except "region", "walls" and "sources" is optional.

#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include <json.hpp>

#include "cgmoe/error.hpp"
#include "cgmoe/propagation.hpp"

namespace cgmoe {

inline constexpr int scene_schema_version = 1;

namespace detail {

inline Point2 point_from_json(const nlohmann::json &j)
{
    require(j.is_array() && j.size() == 2 && j[0].is_number() && j[1].is_number(), "invalid_scene",
            "points must be [x, y] arrays");
    return {j[0].get<double>(), j[1].get<double>()};
}

inline double loss_from_json(const nlohmann::json &j)
{
    if (j.is_string())
    {
        require(j.get<std::string>() == "inf", "invalid_scene", "loss strings other than \"inf\" are not allowed");
        return std::numeric_limits<double>::infinity();
    }
    require(j.is_number(), "invalid_scene", "losses must be numbers");
    return j.get<double>();
}

inline nlohmann::json loss_to_json(double v)
{
    if (std::isinf(v))
        return "inf";
    return v;
}

} // namespace detail

inline Environment scene_from_json(const nlohmann::json &j)
{
    require(j.is_object(), "invalid_scene", "scene must be a JSON object");
    const int version = j.value("schema_version", scene_schema_version);
    require(version == scene_schema_version, "invalid_scene",
            "unsupported scene schema_version " + std::to_string(version));
    Environment env;
    try
    {
        const auto &r = j.at("region");
        env.region = {{r.at("x_min").get<double>(), r.at("y_min").get<double>()},
                      {r.at("x_max").get<double>(), r.at("y_max").get<double>()}};
        for (const auto &w : j.at("walls"))
        {
            Wall wall;
            wall.a = detail::point_from_json(w.at("a"));
            wall.b = detail::point_from_json(w.at("b"));
            if (w.contains("reflection_loss_db"))
                wall.reflection_loss_db = detail::loss_from_json(w["reflection_loss_db"]);
            if (w.contains("transmission_loss_db"))
                wall.transmission_loss_db = detail::loss_from_json(w["transmission_loss_db"]);
            env.walls.push_back(wall);
        }
        for (const auto &s : j.at("sources"))
            env.sources.push_back(detail::point_from_json(s));
        env.reference_source = j.value("reference_source", std::size_t{0});
        env.reference_gain_db = j.value("reference_gain_db", env.reference_gain_db);
        env.pathloss_exponent = j.value("pathloss_exponent", env.pathloss_exponent);
        env.max_reflection_order = j.value("max_reflection_order", env.max_reflection_order);
        env.propagation_speed = j.value("propagation_speed", env.propagation_speed);
        if (j.contains("pilot_sensitivity_db") && !j["pilot_sensitivity_db"].is_null())
            env.pilot_sensitivity_db = j["pilot_sensitivity_db"].get<double>();
    } catch (const nlohmann::json::exception &e)
    {
        throw Error("invalid_scene", std::string("malformed scene: ") + e.what());
    }
    env.validate();
    return env;
}

inline nlohmann::json scene_to_json(const Environment &env)
{
    nlohmann::json j;
    j["schema_version"] = scene_schema_version;
    j["region"] = {{"x_min", env.region.min.x}, {"y_min", env.region.min.y},
                   {"x_max", env.region.max.x}, {"y_max", env.region.max.y}};
    j["walls"] = nlohmann::json::array();
    for (const Wall &w : env.walls)
        j["walls"].push_back({{"a", {w.a.x, w.a.y}}, {"b", {w.b.x, w.b.y}},
                              {"reflection_loss_db", detail::loss_to_json(w.reflection_loss_db)},
                              {"transmission_loss_db", detail::loss_to_json(w.transmission_loss_db)}});
    j["sources"] = nlohmann::json::array();
    for (const Point2 &s : env.sources)
        j["sources"].push_back({s.x, s.y});
    j["reference_source"] = env.reference_source;
    j["reference_gain_db"] = env.reference_gain_db;
    j["pathloss_exponent"] = env.pathloss_exponent;
    j["max_reflection_order"] = env.max_reflection_order;
    j["propagation_speed"] = env.propagation_speed;
    if (std::isfinite(env.pilot_sensitivity_db))
        j["pilot_sensitivity_db"] = env.pilot_sensitivity_db;
    else
        j["pilot_sensitivity_db"] = nullptr;
    return j;
}

inline Environment load_scene(const std::string &path)
{
    std::ifstream in(path);
    require(static_cast<bool>(in), "io_error", "cannot open scene file " + path);
    nlohmann::json j;
    try
    {
        in >> j;
    } catch (const nlohmann::json::exception &e)
    {
        throw Error("invalid_scene", path + ": " + e.what());
    }
    return scene_from_json(j);
}

/// FNV-1a hash of the canonical scene document, hex encoded.
inline std::string scene_fingerprint(const Environment &env)
{
    const std::string text = scene_to_json(env).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const unsigned char c : text)
    {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

} // namespace cgmoe
