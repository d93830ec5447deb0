#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "efficiency.hpp"
#include "error.hpp"
#include "estimators.hpp"
#include "flow_size.hpp"
#include "likelihood.hpp"
#include "simulator.hpp"
#include "traffic_model.hpp"

// JSON forms:
//   model  {"family": "gamma", "params": [0.6, 526.32]}
//   pmf    {"kind": "zeta", "shape": 2.012085, "min_size": 1, "truncation_mass": 0.99999999}
//          {"kind": "zipf", "shape": 1, "support": [11, 101, 1001]}
//          {"kind": "empirical", "support": [...], "mass": [...]}
//          {"kind": "point", "size": 2}

namespace flowlik {

using Json = nlohmann::json;

inline Json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

namespace detail {

template <class T>
T get_or(const Json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

template <class T>
T get_req(const Json& j, const char* key) {
    if (!j.contains(key)) throw ConfigError(std::string("missing key '") + key + "'");
    return get_or<T>(j, key, T{});
}

} // namespace detail

inline PacketModel model_from_json(const Json& j) {
    if (!j.is_object()) throw ConfigError("model must be a JSON object");
    PacketModel m;
    m.family = family_from_string(detail::get_req<std::string>(j, "family"));
    auto p = detail::get_req<std::vector<double>>(j, "params");
    if (p.size() != m.dim()) throw ConfigError("model '" + to_string(m.family) + "' takes " + std::to_string(m.dim()) + " params");
    m.params.resize(static_cast<Eigen::Index>(p.size()));
    for (std::size_t i = 0; i < p.size(); ++i) m.params[static_cast<Eigen::Index>(i)] = p[i];
    m.validate();
    return m;
}

inline Json to_json(const PacketModel& m) {
    std::vector<double> p(m.params.data(), m.params.data() + m.params.size());
    return {{"family", to_string(m.family)}, {"params", p}};
}

inline FlowSizePmf pmf_from_json(const Json& j) {
    if (!j.is_object()) throw ConfigError("pmf must be a JSON object");
    auto kind = detail::get_req<std::string>(j, "kind");
    if (kind == "zeta")
        return FlowSizePmf::zeta(detail::get_req<double>(j, "shape"), detail::get_or<long>(j, "min_size", 1),
                                 detail::get_or<double>(j, "truncation_mass", 1.0 - 1e-8));
    if (kind == "zipf")
        return FlowSizePmf::zipf(detail::get_req<double>(j, "shape"), detail::get_req<std::vector<long>>(j, "support"));
    if (kind == "empirical")
        return FlowSizePmf::empirical(detail::get_req<std::vector<long>>(j, "support"),
                                      detail::get_req<std::vector<double>>(j, "mass"));
    if (kind == "point") return FlowSizePmf::point(detail::get_req<long>(j, "size"));
    throw ConfigError("unknown pmf kind '" + kind + "'");
}

inline Json to_json(const FlowSizePmf& p) {
    if (p.kind() == PmfKind::Zeta)
        return {{"kind", "zeta"}, {"shape", p.shape()}, {"min_size", p.min_size()}, {"truncation_mass", p.truncation_mass()}};
    return {{"kind", "empirical"}, {"support", p.support()}, {"mass", p.mass()}};
}

inline SessionConfig session_from_json(const Json& j) {
    SessionConfig c;
    c.flow_rate = detail::get_or<double>(j, "flow_rate", c.flow_rate);
    if (j.contains("packet_model")) c.packet_model = model_from_json(j.at("packet_model"));
    if (j.contains("flow_size_pmf")) c.flow_size_pmf = pmf_from_json(j.at("flow_size_pmf"));
    c.n_flows = detail::get_or<long>(j, "n_flows", c.n_flows);
    c.thinning_q = detail::get_or<double>(j, "thinning_q", c.thinning_q);
    c.seed = detail::get_or<std::uint64_t>(j, "seed", c.seed);
    c.validate();
    return c;
}

inline Json to_json(const SessionConfig& c) {
    return {{"flow_rate", c.flow_rate},   {"packet_model", to_json(c.packet_model)},
            {"flow_size_pmf", to_json(c.flow_size_pmf)}, {"n_flows", c.n_flows},
            {"thinning_q", c.thinning_q}, {"seed", c.seed}};
}

inline Json to_json(const FitResult& r) {
    Json params = Json::object(), se = Json::object();
    for (std::size_t i = 0; i < r.names.size(); ++i) {
        params[r.names[i]] = r.params[i];
        if (i < r.stderrs.size() && std::isfinite(r.stderrs[i])) se[r.names[i]] = r.stderrs[i];
    }
    return {{"estimator", r.estimator},
            {"family", to_string(r.family)},
            {"params", params},
            {"stderr", se},
            {"loglik", std::isfinite(r.loglik) ? Json(r.loglik) : Json()},
            {"n_obs", r.n_obs},
            {"n_evals", r.n_evals},
            {"converged", r.converged},
            {"data_bytes", r.data_bytes},
            {"wall_time_s", r.wall_time},
            {"warnings", r.warnings}};
}

inline Json matrix_json(const Eigen::MatrixXd& m) {
    Json rows = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        std::vector<double> r(static_cast<std::size_t>(m.cols()));
        for (Eigen::Index k = 0; k < m.cols(); ++k) r[static_cast<std::size_t>(k)] = m(i, k);
        rows.push_back(r);
    }
    return rows;
}

inline Json to_json(const InfoSummary& s) {
    Json j = {{"H", matrix_json(s.H)},
              {"I", matrix_json(s.I)},
              {"det_ratio", s.det_ratio},
              {"log_mbar_mgf_plus", s.log_mgf_plus},
              {"log_mbar_mgf_minus", s.log_mgf_minus},
              {"q", s.q},
              {"mc_samples", s.samples},
              {"richardson_used", s.richardson_used}};
    if (std::isfinite(s.log_mgf_plus_exact)) {
        j["log_mbar_mgf_plus_exact"] = s.log_mgf_plus_exact;
        j["log_mbar_mgf_minus_exact"] = s.log_mgf_minus_exact;
    }
    return j;
}

inline Json to_json(const NMinResult& r) {
    return {{"n_min", r.n_min},
            {"lower", r.lower},
            {"upper", r.upper},
            {"joint_condition", r.joint_condition},
            {"warnings", r.warnings}};
}

} // namespace flowlik
