#pragma once

// JSON documents for trained models.
//
//   MoE:    {"schema": "cgmoe.model", "schema_version": 1,
//            "environment_fingerprint": "...",
//            "hyperparams": {"lambda_l", "sigma_l", "lambda_p", "sigma_p"},
//            "experts": {"locb": EXPERT, "locf": EXPERT},
//            "gating": {"g": [...], "error_pairs": [[e_hi, e_lo], ...],
//                       "knn_k": 5, "r_max": ...},
//            "objective_trace": [...], "sweeps": n, "converged": bool,
//            "rejected_gating_steps": n}
//   EXPERT: {"kind": "locb" | "locf", "ridge": ..., "width": ...,
//            "dimension": d, "inputs": [row-major, size*d], "coefficients": [...]}
//   Standalone expert file: {"schema": "cgmoe.expert", "schema_version": 1,
//            "environment_fingerprint": "...", "expert": EXPERT}

#include <fstream>
#include <string>

#include <json.hpp>

#include "cgmoe/error.hpp"
#include "cgmoe/trainer.hpp"

namespace cgmoe {

inline constexpr int model_schema_version = 1;

inline nlohmann::json expert_to_json(const KernelExpert &e)
{
    nlohmann::json j;
    j["kind"] = to_string(e.kind);
    j["ridge"] = e.hyperparams.ridge;
    j["width"] = e.hyperparams.width;
    j["dimension"] = e.dimension();
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(e.inputs.size()));
    for (Eigen::Index i = 0; i < e.inputs.rows(); i++)
        for (Eigen::Index d = 0; d < e.inputs.cols(); d++)
            flat.push_back(e.inputs(i, d));
    j["inputs"] = flat;
    j["coefficients"] = std::vector<double>(e.coefficients.data(), e.coefficients.data() + e.coefficients.size());
    return j;
}

inline KernelExpert expert_from_json(const nlohmann::json &j)
{
    try
    {
        KernelExpert e;
        const auto kind = j.at("kind").get<std::string>();
        require(kind == "locb" || kind == "locf", "invalid_model", "unknown expert kind " + kind);
        e.kind = kind == "locb" ? ExpertKind::locb : ExpertKind::locf;
        e.hyperparams = {j.at("ridge").get<double>(), j.at("width").get<double>()};
        e.hyperparams.validate();
        const auto dim = j.at("dimension").get<Eigen::Index>();
        const auto flat = j.at("inputs").get<std::vector<double>>();
        const auto coef = j.at("coefficients").get<std::vector<double>>();
        require(dim > 0 && static_cast<Eigen::Index>(flat.size()) == dim * static_cast<Eigen::Index>(coef.size()),
                "invalid_model", "expert inputs do not match coefficient count");
        const Eigen::Index n = static_cast<Eigen::Index>(coef.size());
        e.inputs.resize(n, dim);
        for (Eigen::Index i = 0; i < n; i++)
            for (Eigen::Index d = 0; d < dim; d++)
                e.inputs(i, d) = flat[static_cast<std::size_t>(i * dim + d)];
        e.coefficients = Eigen::Map<const Vector>(coef.data(), n);
        return e;
    } catch (const nlohmann::json::exception &ex)
    {
        throw Error("invalid_model", std::string("malformed expert: ") + ex.what());
    }
}

inline nlohmann::json model_to_json(const MoEModel &m)
{
    nlohmann::json j;
    j["schema"] = "cgmoe.model";
    j["schema_version"] = model_schema_version;
    j["environment_fingerprint"] = m.environment_fingerprint;
    j["hyperparams"] = {{"lambda_l", m.hyperparams.locb.ridge}, {"sigma_l", m.hyperparams.locb.width},
                        {"lambda_p", m.hyperparams.locf.ridge}, {"sigma_p", m.hyperparams.locf.width}};
    j["experts"] = {{"locb", expert_to_json(m.locb)}, {"locf", expert_to_json(m.locf)}};
    nlohmann::json errors = nlohmann::json::array();
    for (const auto &e : m.gating.error_pairs)
        errors.push_back({e[0], e[1]});
    j["gating"] = {{"g", m.gating.g}, {"error_pairs", errors}, {"knn_k", m.gating.knn_k}, {"r_max", m.gating.r_max}};
    j["objective_trace"] = m.objective_trace;
    j["sweeps"] = m.sweeps;
    j["converged"] = m.converged;
    j["rejected_gating_steps"] = m.rejected_gating_steps;
    return j;
}

inline MoEModel model_from_json(const nlohmann::json &j)
{
    try
    {
        require(j.at("schema").get<std::string>() == "cgmoe.model", "invalid_model", "not a mixture model document");
        require(j.at("schema_version").get<int>() == model_schema_version, "invalid_model", "unsupported model schema_version");
        MoEModel m;
        m.environment_fingerprint = j.value("environment_fingerprint", "");
        const auto &h = j.at("hyperparams");
        m.hyperparams.locb = {h.at("lambda_l").get<double>(), h.at("sigma_l").get<double>()};
        m.hyperparams.locf = {h.at("lambda_p").get<double>(), h.at("sigma_p").get<double>()};
        m.locb = expert_from_json(j.at("experts").at("locb"));
        m.locf = expert_from_json(j.at("experts").at("locf"));
        const auto &gj = j.at("gating");
        m.gating.g = gj.at("g").get<std::vector<double>>();
        for (const auto &e : gj.at("error_pairs"))
            m.gating.error_pairs.push_back({e.at(0).get<double>(), e.at(1).get<double>()});
        m.gating.knn_k = gj.at("knn_k").get<int>();
        m.gating.r_max = gj.at("r_max").get<double>();
        require(m.gating.g.size() == m.gating.error_pairs.size(), "invalid_model", "gating arrays differ in length");
        require(m.gating.knn_k >= 1, "invalid_model", "knn_k must be positive");
        for (const double v : m.gating.g)
            require(v >= 0.0 && v <= 1.0, "invalid_model", "gating values must lie in [0, 1]");
        m.objective_trace = j.value("objective_trace", std::vector<double>{});
        m.sweeps = j.value("sweeps", 0);
        m.converged = j.value("converged", false);
        m.rejected_gating_steps = j.value("rejected_gating_steps", 0);
        return m;
    } catch (const nlohmann::json::exception &ex)
    {
        throw Error("invalid_model", std::string("malformed model: ") + ex.what());
    }
}

inline nlohmann::json standalone_expert_to_json(const KernelExpert &e, const std::string &fingerprint)
{
    return {{"schema", "cgmoe.expert"}, {"schema_version", model_schema_version},
            {"environment_fingerprint", fingerprint}, {"expert", expert_to_json(e)}};
}

inline KernelExpert standalone_expert_from_json(const nlohmann::json &j)
{
    require(j.value("schema", "") == "cgmoe.expert", "invalid_model", "not a standalone expert document");
    require(j.value("schema_version", 0) == model_schema_version, "invalid_model", "unsupported expert schema_version");
    require(j.contains("expert"), "invalid_model", "missing expert");
    return expert_from_json(j["expert"]);
}

inline nlohmann::json read_json_file(const std::string &path)
{
    std::ifstream in(path);
    require(static_cast<bool>(in), "io_error", "cannot open " + path);
    try
    {
        nlohmann::json j;
        in >> j;
        return j;
    } catch (const nlohmann::json::exception &ex)
    {
        throw Error("invalid_json", path + ": " + ex.what());
    }
}

inline void write_json_file(const std::string &path, const nlohmann::json &j)
{
    std::ofstream out(path);
    require(static_cast<bool>(out), "io_error", "cannot write " + path);
    out << j.dump(1) << '\n';
}

} // namespace cgmoe
