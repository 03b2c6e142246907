#pragma once

// Per-terminal information vectors: center-of-mass (CoM) cross-correlation
// features from pilot responses, synthetic location estimates with an
// uncertainty scalar, and full training/test datasets built on the ray tracer.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "cgmoe/error.hpp"
#include "cgmoe/propagation.hpp"
#include "cgmoe/rng.hpp"

namespace cgmoe {

inline constexpr double default_lag_step = 1e-8;
inline constexpr double missing_feature = std::numeric_limits<double>::quiet_NaN();

struct SensorRecord
{
    std::size_t id = 0;
    std::vector<double> features;  // NaN marks a source without coverage
    std::optional<Point2> location_estimate;
    std::optional<double> uncertainty;
    Point2 true_location;  // simulation only

    bool has_complete_features() const
    {
        if (features.empty())
            return false;
        for (const double f : features)
            if (std::isnan(f))
                return false;
        return true;
    }
    bool has_location() const { return location_estimate.has_value() && uncertainty.has_value(); }
};

struct PairSample
{
    std::size_t tx = 0;
    std::size_t rx = 0;
    double observed_gain = 0.0;        // dB, noisy
    std::array<double, 2> error_pair{};  // [e_t, e_r]
    double true_gain = 0.0;            // dB, simulation only
};

struct DatasetConfig
{
    std::size_t pair_count = 1000;
    std::size_t terminal_count = 0;  // 0: same as pair_count
    double sigma_x = 7.0;
    double sigma_e = 0.3;
    double sigma_c = 2.0;
    double lag_step = default_lag_step;
    std::uint64_t seed = 0;

    std::size_t terminals() const { return terminal_count ? terminal_count : std::max<std::size_t>(2, pair_count); }

    void validate() const
    {
        require(pair_count >= 1, "invalid_config", "pair_count must be at least 1");
        require(terminals() >= 2, "invalid_config", "at least two terminals are required");
        require(sigma_x >= 0.0 && sigma_e >= 0.0 && sigma_c >= 0.0, "invalid_config", "sigmas must be non-negative");
        require(lag_step > 0.0, "invalid_config", "lag_step must be positive");
    }
};

struct Dataset
{
    std::vector<SensorRecord> records;
    std::vector<PairSample> pairs;

    std::size_t feature_count() const { return records.empty() ? 0 : records.front().features.size(); }
};

/// CoM of the binned cross-correlation between `h_m` and `h_ref`, in seconds.
inline double com_feature(const ImpulseResponse &h_m, const ImpulseResponse &h_ref, double lag_step)
{
    require(lag_step > 0.0, "invalid_argument", "lag_step must be positive");
    require(!h_m.empty() && !h_ref.empty(), "degenerate_pilot", "empty pilot response");
    std::map<long long, double> bins;
    for (const auto &p : h_m.paths)
        for (const auto &q : h_ref.paths)
            bins[std::llround((p.delay - q.delay) / lag_step)] += p.amplitude * q.amplitude;
    double weight_sum = 0.0;
    double moment = 0.0;
    for (const auto &[k, r] : bins)
    {
        const double w = r * r;
        weight_sum += w;
        moment += static_cast<double>(k) * lag_step * w;
    }
    require(weight_sum > 0.0, "degenerate_pilot", "degenerate pilot pair: all-zero correlation");
    return moment / weight_sum;
}

/// One CoM per source, relative to the reference source; NaN where a pilot is missing.
inline std::vector<double> extract_feature_vector(const Environment &env, Point2 loc, double lag_step)
{
    require(env.region.contains(loc), "invalid_point", "location outside the region");
    std::vector<double> phi(env.source_count(), missing_feature);
    const ImpulseResponse ref = pilot_response(env, env.reference_source, loc);
    if (ref.empty())
        return phi;
    for (std::size_t m = 0; m < env.source_count(); m++)
    {
        const ImpulseResponse h = m == env.reference_source ? ref : pilot_response(env, m, loc);
        if (!h.empty())
            phi[m] = com_feature(h, ref, lag_step);
    }
    return phi;
}

/// Noisy location estimate and its uncertainty measure (clamped at zero).
inline std::pair<Point2, double> synth_localization(Point2 true_loc, double sigma_x, double sigma_e, Rng &rng)
{
    require(sigma_x >= 0.0 && sigma_e >= 0.0, "invalid_argument", "sigmas must be non-negative");
    Point2 est = true_loc;
    if (sigma_x > 0.0)
    {
        std::normal_distribution<double> nx(0.0, sigma_x);
        est.x += nx(rng);
        est.y += nx(rng);
    }
    double e = distance(est, true_loc);
    if (sigma_e > 0.0)
        e += std::normal_distribution<double>(0.0, sigma_e)(rng);
    return {est, std::max(0.0, e)};
}

namespace detail {

inline Point2 draw_terminal_location(const Environment &env, Rng &rng)
{
    std::uniform_real_distribution<double> ux(env.region.min.x, env.region.max.x);
    std::uniform_real_distribution<double> uy(env.region.min.y, env.region.max.y);
    for (int attempt = 0; attempt < 1000; attempt++)
    {
        const Point2 p{ux(rng), uy(rng)};
        if (is_valid_terminal_location(env, p))
            return p;
    }
    throw Error("region_too_small", "could not place a terminal off the walls inside the region");
}

} // namespace detail

/// A sensing terminal at `loc` with features and a synthetic location estimate.
inline SensorRecord make_sensor_record(const Environment &env, std::size_t id, Point2 loc, double sigma_x,
        double sigma_e, double lag_step, Rng &noise_rng)
{
    SensorRecord rec;
    rec.id = id;
    rec.true_location = loc;
    rec.features = extract_feature_vector(env, loc, lag_step);
    const auto [est, e] = synth_localization(loc, sigma_x, sigma_e, noise_rng);
    rec.location_estimate = est;
    rec.uncertainty = e;
    return rec;
}

/// Terminals uniform over the region, pairs uniform over distinct terminals.
/// Every random stream is derived from cfg.seed, so the output is a pure
/// function of (env, cfg).
inline Dataset generate_dataset(const Environment &env, const DatasetConfig &cfg)
{
    cfg.validate();
    env.validate();
    Dataset ds;
    const std::size_t terminals = cfg.terminals();
    ds.records.reserve(terminals);
    for (std::size_t i = 0; i < terminals; i++)
    {
        Rng loc_rng(derive_seed(cfg.seed, {stream::terminal_location, i}));
        Rng noise_rng(derive_seed(cfg.seed, {stream::terminal_noise, i}));
        const Point2 loc = detail::draw_terminal_location(env, loc_rng);
        ds.records.push_back(make_sensor_record(env, i, loc, cfg.sigma_x, cfg.sigma_e, cfg.lag_step, noise_rng));
    }

    Rng pair_rng(derive_seed(cfg.seed, {stream::pair_draw}));
    Rng gain_rng(derive_seed(cfg.seed, {stream::gain_noise}));
    std::uniform_int_distribution<std::size_t> pick_tx(0, terminals - 1);
    std::uniform_int_distribution<std::size_t> pick_rx(0, terminals - 2);
    std::normal_distribution<double> gain_noise(0.0, cfg.sigma_c > 0.0 ? cfg.sigma_c : 1.0);
    ds.pairs.reserve(cfg.pair_count);
    std::size_t rejected = 0;
    while (ds.pairs.size() < cfg.pair_count)
    {
        const std::size_t t = pick_tx(pair_rng);
        std::size_t r = pick_rx(pair_rng);
        if (r >= t)
            r++;
        const SensorRecord &rt = ds.records[t];
        const SensorRecord &rr = ds.records[r];
        const double gain = rt.true_location == rr.true_location
                ? no_coverage_db
                : channel_gain_db(env, rt.true_location, rr.true_location);
        if (!std::isfinite(gain))
        {
            require(++rejected < 100 * cfg.pair_count + 1000, "no_coverage",
                    "too many terminal pairs without coverage");
            continue;
        }
        PairSample s;
        s.tx = t;
        s.rx = r;
        s.true_gain = gain;
        s.observed_gain = gain + (cfg.sigma_c > 0.0 ? gain_noise(gain_rng) : 0.0);
        s.error_pair = {*rt.uncertainty, *rr.uncertainty};
        ds.pairs.push_back(s);
    }
    return ds;
}

} // namespace cgmoe
