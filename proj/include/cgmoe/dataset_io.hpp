#pragma once

// Dataset CSV files.
//
//   records.csv  id,true_x,true_y,est_x,est_y,e,phi_1,...,phi_M
//   pairs.csv    tx,rx,c_obs,e_t,e_r,c_true
//
// Empty fields mark absent values (missing feature, missing location).
// Numbers are written with 17 significant digits so a round trip is exact.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cgmoe/error.hpp"
#include "cgmoe/features.hpp"

namespace cgmoe {

namespace csv {

inline std::string num(double v)
{
    if (std::isnan(v))
        return "";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::vector<std::string> split(const std::string &line)
{
    std::vector<std::string> out;
    std::string cur;
    for (const char c : line)
    {
        if (c == ',')
        {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r')
            cur.push_back(c);
    }
    out.push_back(cur);
    return out;
}

inline double parse(const std::string &s)
{
    if (s.empty())
        return std::nan("");
    try
    {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        require(used == s.size(), "invalid_csv", "bad number '" + s + "'");
        return v;
    } catch (const std::logic_error &)
    {
        throw Error("invalid_csv", "bad number '" + s + "'");
    }
}

} // namespace csv

inline void write_records_csv(std::ostream &os, const std::vector<SensorRecord> &records)
{
    const std::size_t m = records.empty() ? 0 : records.front().features.size();
    os << "id,true_x,true_y,est_x,est_y,e";
    for (std::size_t k = 1; k <= m; k++)
        os << ",phi_" << k;
    os << '\n';
    for (const auto &r : records)
    {
        require(r.features.size() == m, "invalid_dataset", "records disagree on feature count");
        os << r.id << ',' << csv::num(r.true_location.x) << ',' << csv::num(r.true_location.y) << ',';
        if (r.location_estimate)
            os << csv::num(r.location_estimate->x) << ',' << csv::num(r.location_estimate->y);
        else
            os << ',';
        os << ',' << (r.uncertainty ? csv::num(*r.uncertainty) : "");
        for (const double f : r.features)
            os << ',' << csv::num(f);
        os << '\n';
    }
}

inline void write_pairs_csv(std::ostream &os, const std::vector<PairSample> &pairs)
{
    os << "tx,rx,c_obs,e_t,e_r,c_true\n";
    for (const auto &p : pairs)
        os << p.tx << ',' << p.rx << ',' << csv::num(p.observed_gain) << ',' << csv::num(p.error_pair[0]) << ','
           << csv::num(p.error_pair[1]) << ',' << csv::num(p.true_gain) << '\n';
}

inline std::vector<SensorRecord> read_records_csv(std::istream &is)
{
    std::string line;
    require(static_cast<bool>(std::getline(is, line)), "invalid_csv", "records file is empty");
    const auto header = csv::split(line);
    require(header.size() >= 6 && header[0] == "id", "invalid_csv", "unexpected records header");
    const std::size_t m = header.size() - 6;
    std::vector<SensorRecord> out;
    while (std::getline(is, line))
    {
        if (line.empty())
            continue;
        const auto f = csv::split(line);
        require(f.size() == header.size(), "invalid_csv", "record row has wrong field count");
        SensorRecord r;
        r.id = static_cast<std::size_t>(std::stoull(f[0]));
        r.true_location = {csv::parse(f[1]), csv::parse(f[2])};
        const double ex = csv::parse(f[3]);
        const double ey = csv::parse(f[4]);
        if (!std::isnan(ex) && !std::isnan(ey))
            r.location_estimate = Point2{ex, ey};
        const double e = csv::parse(f[5]);
        if (!std::isnan(e))
        {
            require(e >= 0.0, "invalid_csv", "uncertainty must be non-negative");
            r.uncertainty = e;
        }
        r.features.resize(m);
        for (std::size_t k = 0; k < m; k++)
            r.features[k] = csv::parse(f[6 + k]);
        require(r.id == out.size(), "invalid_csv", "record ids must be 0..N-1 in order");
        out.push_back(std::move(r));
    }
    return out;
}

inline std::vector<PairSample> read_pairs_csv(std::istream &is, std::size_t record_count)
{
    std::string line;
    require(static_cast<bool>(std::getline(is, line)), "invalid_csv", "pairs file is empty");
    require(csv::split(line).size() == 6, "invalid_csv", "unexpected pairs header");
    std::vector<PairSample> out;
    while (std::getline(is, line))
    {
        if (line.empty())
            continue;
        const auto f = csv::split(line);
        require(f.size() == 6, "invalid_csv", "pair row has wrong field count");
        PairSample p;
        p.tx = static_cast<std::size_t>(std::stoull(f[0]));
        p.rx = static_cast<std::size_t>(std::stoull(f[1]));
        require(p.tx < record_count && p.rx < record_count && p.tx != p.rx, "invalid_csv", "bad pair indices");
        p.observed_gain = csv::parse(f[2]);
        p.error_pair = {csv::parse(f[3]), csv::parse(f[4])};
        p.true_gain = csv::parse(f[5]);
        require(p.error_pair[0] >= 0.0 && p.error_pair[1] >= 0.0, "invalid_csv", "error pair must be non-negative");
        out.push_back(p);
    }
    return out;
}

inline void save_dataset(const Dataset &ds, const std::string &records_path, const std::string &pairs_path)
{
    std::ofstream r(records_path);
    std::ofstream p(pairs_path);
    require(r && p, "io_error", "cannot write dataset files");
    write_records_csv(r, ds.records);
    write_pairs_csv(p, ds.pairs);
}

inline Dataset load_dataset(const std::string &records_path, const std::string &pairs_path)
{
    std::ifstream r(records_path);
    std::ifstream p(pairs_path);
    require(r && p, "io_error", "cannot open dataset files " + records_path + ", " + pairs_path);
    Dataset ds;
    ds.records = read_records_csv(r);
    ds.pairs = read_pairs_csv(p, ds.records.size());
    return ds;
}

} // namespace cgmoe
