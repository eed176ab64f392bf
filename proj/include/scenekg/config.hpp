#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>

#include "scenekg/error.hpp"
#include "scenekg/geometry.hpp"
#include "scenekg/json_io.hpp"

namespace scenekg {

/// Whether a pooled candidate was seen in its own frame or filled in from
/// neighboring frames.
enum class EvidenceType { observed = 0, recovered = 1 };

inline std::string_view to_string(EvidenceType g) { return g == EvidenceType::observed ? "observed" : "recovered"; }

inline EvidenceType evidence_type_from_string(std::string_view s) {
    if (s == "observed") return EvidenceType::observed;
    if (s == "recovered") return EvidenceType::recovered;
    fail(ErrorKind::parse, "evidence_type must be observed or recovered, got '" + std::string(s) + "'");
}

/// Weights and thresholds of the refinement energy.
struct EnergyParams {
    std::array<double, 2> a{1.0, 1.0};   // confidence scale per evidence type
    std::array<double, 2> b{0.0, 0.0};   // offset per evidence type
    double alpha_src = 0.5;
    double lambda_dup = 4.0;
    double lambda_tmp = 0.5;
    double beta_tmp = 1.0;
    double beta_ctx = 0.5;
    double m_tmp = 0.4;
    double m_ctx = 1.0;
    double dup_sigma = 1.0;
    double tmp_sep = 4.0;
    double w_attr = 1.0;  // weight of the motion-plausibility term

    double scale(EvidenceType g) const { return a[static_cast<int>(g)]; }
    double offset(EvidenceType g) const { return b[static_cast<int>(g)]; }

    friend bool operator==(const EnergyParams&, const EnergyParams&) = default;

    void validate() const {
        for (double v : {a[0], a[1], b[0], b[1], alpha_src, lambda_dup, lambda_tmp, beta_tmp, beta_ctx, m_tmp,
                         m_ctx, dup_sigma, tmp_sep, w_attr})
            if (!std::isfinite(v)) fail(ErrorKind::config, "energy parameters must be finite");
        if (lambda_dup < 0 || lambda_tmp < 0 || beta_tmp < 0 || beta_ctx < 0 || m_ctx < 0 || w_attr < 0)
            fail(ErrorKind::config, "energy weights must be non-negative");
        if (m_tmp < 0 || m_tmp > 1) fail(ErrorKind::config, "energy.m_tmp must lie in [0, 1]");
        if (dup_sigma <= 0 || tmp_sep <= 0) fail(ErrorKind::config, "energy.dup_sigma and energy.tmp_sep must be positive");
    }

    /// Every magnitude (not the thresholds) multiplied by `s`.
    EnergyParams scaled(double s) const {
        EnergyParams p = *this;
        for (auto& v : p.a) v *= s;
        for (auto& v : p.b) v *= s;
        p.alpha_src *= s;
        p.lambda_dup *= s;
        p.lambda_tmp *= s;
        p.beta_tmp *= s;
        p.beta_ctx *= s;
        p.w_attr *= s;
        return p;
    }
};

enum class SameStatusMode { representative, pair_exists };

struct EngineConfig {
    double assoc_distance = 2.0;
    std::map<std::string, double> assoc_distance_by_class;
    double yaw_gate = pi / 4.0;
    int temporal_window = 2;
    int max_gap = 2;
    double tracklet_gate = 3.0;
    double density_radius = 3.0;
    EnergyParams energy;
    int k_exact = 18;
    int restarts = 16;
    std::uint64_t seed = 0;
    SectorBoundaries relation_boundaries;  // fixed; not read from config files
    SameStatusMode same_status_mode = SameStatusMode::representative;
    double speed_threshold = 0.5;
    double motion_slope = 4.0;
    int step_budget = 16;
    double planner_timeout_s = 10.0;
    int planner_retries = 2;
    double match_threshold = 2.0;

    double association_distance(const std::string& category) const {
        auto it = assoc_distance_by_class.find(category);
        return it == assoc_distance_by_class.end() ? assoc_distance : it->second;
    }

    void validate() const {
        auto positive = [](double v, const char* name) {
            if (!(v > 0) || !std::isfinite(v)) fail(ErrorKind::config, std::string(name) + " must be positive");
        };
        positive(assoc_distance, "assoc_distance");
        for (const auto& [c, d] : assoc_distance_by_class) positive(d, "assoc_distance per class");
        positive(yaw_gate, "yaw_gate");
        positive(tracklet_gate, "tracklet_gate");
        positive(density_radius, "density_radius");
        positive(motion_slope, "motion_slope");
        positive(planner_timeout_s, "planner_timeout_s");
        positive(match_threshold, "match_threshold");
        if (!(speed_threshold >= 0)) fail(ErrorKind::config, "speed_threshold must be non-negative");
        if (temporal_window < 0) fail(ErrorKind::config, "temporal_window must be non-negative");
        if (max_gap < 0) fail(ErrorKind::config, "max_gap must be non-negative");
        if (k_exact < 1 || k_exact > 24) fail(ErrorKind::config, "k_exact must lie in [1, 24]");
        if (restarts < 0) fail(ErrorKind::config, "restarts must be non-negative");
        if (step_budget < 1) fail(ErrorKind::config, "step_budget must be positive");
        if (planner_retries < 0) fail(ErrorKind::config, "planner_retries must be non-negative");
        relation_boundaries.validate();
        energy.validate();
    }
};

namespace detail {

template <class Fn>
void for_each_energy_key(EnergyParams& p, Fn&& fn) {
    fn("energy.a.observed", p.a[0]);
    fn("energy.a.recovered", p.a[1]);
    fn("energy.b.observed", p.b[0]);
    fn("energy.b.recovered", p.b[1]);
    fn("energy.alpha_src", p.alpha_src);
    fn("energy.lambda_dup", p.lambda_dup);
    fn("energy.lambda_tmp", p.lambda_tmp);
    fn("energy.beta_tmp", p.beta_tmp);
    fn("energy.beta_ctx", p.beta_ctx);
    fn("energy.m_tmp", p.m_tmp);
    fn("energy.m_ctx", p.m_ctx);
    fn("energy.dup_sigma", p.dup_sigma);
    fn("energy.tmp_sep", p.tmp_sep);
    fn("energy.w_attr", p.w_attr);
}

template <class Fn>
void for_each_real_key(EngineConfig& c, Fn&& fn) {
    fn("assoc_distance", c.assoc_distance);
    fn("yaw_gate", c.yaw_gate);
    fn("tracklet_gate", c.tracklet_gate);
    fn("density_radius", c.density_radius);
    fn("speed_threshold", c.speed_threshold);
    fn("motion_slope", c.motion_slope);
    fn("planner_timeout_s", c.planner_timeout_s);
    fn("match_threshold", c.match_threshold);
}

template <class Fn>
void for_each_int_key(EngineConfig& c, Fn&& fn) {
    fn("temporal_window", c.temporal_window);
    fn("max_gap", c.max_gap);
    fn("k_exact", c.k_exact);
    fn("restarts", c.restarts);
    fn("step_budget", c.step_budget);
    fn("planner_retries", c.planner_retries);
}

inline constexpr std::string_view per_class_prefix = "assoc_distance.";

}  // namespace detail

/// Canonical flat config document: every key, fixed order, one per line.
inline std::string config_to_text(const EngineConfig& cfg) {
    EngineConfig c = cfg;
    std::string out = "{\n";
    auto line = [&](std::string_view key, const std::string& value) {
        out += "  " + quote(key) + ": " + value + ",\n";
    };
    detail::for_each_real_key(c, [&](const char* k, double& v) { line(k, format_double(v)); });
    for (const auto& [cls, d] : c.assoc_distance_by_class)
        line(std::string(detail::per_class_prefix) + cls, format_double(d));
    detail::for_each_int_key(c, [&](const char* k, int& v) { line(k, std::to_string(v)); });
    line("seed", std::to_string(c.seed));
    line("same_status_mode", quote(c.same_status_mode == SameStatusMode::representative ? "representative" : "pair-exists"));
    detail::for_each_energy_key(c.energy, [&](const char* k, double& v) { line(k, format_double(v)); });
    out.erase(out.size() - 2);  // trailing ",\n"
    return out + "\n}\n";
}

inline std::string energy_params_to_text(const EnergyParams& params) {
    EnergyParams p = params;
    std::string out = "{\n";
    detail::for_each_energy_key(p, [&](const char* k, double& v) { out += "  " + quote(k) + ": " + format_double(v) + ",\n"; });
    out.erase(out.size() - 2);
    return out + "\n}\n";
}

/// Applies the keys of `doc` on top of `base`. Unknown keys are an error.
inline EngineConfig apply_config(const json& doc, EngineConfig base = {}) {
    if (!doc.is_object()) fail(ErrorKind::config, "config document must be an object");
    for (const auto& [key, value] : doc.items()) {
        bool handled = false;
        auto as_real = [&]() {
            if (!value.is_number()) fail(ErrorKind::config, "config key '" + key + "' must be a number");
            return value.get<double>();
        };
        auto as_int = [&]() {
            if (!value.is_number_integer()) fail(ErrorKind::config, "config key '" + key + "' must be an integer");
            return value.get<std::int64_t>();
        };
        detail::for_each_real_key(base, [&](const char* k, double& v) {
            if (key == k) { v = as_real(); handled = true; }
        });
        detail::for_each_int_key(base, [&](const char* k, int& v) {
            if (key == k) { v = static_cast<int>(as_int()); handled = true; }
        });
        detail::for_each_energy_key(base.energy, [&](const char* k, double& v) {
            if (key == k) { v = as_real(); handled = true; }
        });
        if (key == "seed") {
            const auto s = as_int();
            if (s < 0) fail(ErrorKind::config, "seed must be non-negative");
            base.seed = static_cast<std::uint64_t>(s);
            handled = true;
        } else if (key == "same_status_mode") {
            if (!value.is_string()) fail(ErrorKind::config, "same_status_mode must be a string");
            const auto m = value.get<std::string>();
            if (m == "representative") base.same_status_mode = SameStatusMode::representative;
            else if (m == "pair-exists") base.same_status_mode = SameStatusMode::pair_exists;
            else fail(ErrorKind::config, "same_status_mode must be representative or pair-exists");
            handled = true;
        } else if (key.rfind(detail::per_class_prefix, 0) == 0 && key.size() > detail::per_class_prefix.size()) {
            base.assoc_distance_by_class[key.substr(detail::per_class_prefix.size())] = as_real();
            handled = true;
        }
        if (!handled) fail(ErrorKind::config, "unknown config key '" + key + "'");
    }
    base.validate();
    return base;
}

inline EngineConfig parse_config(std::string_view text, EngineConfig base = {}) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        fail(ErrorKind::config, std::string("malformed config: ") + e.what());
    }
    return apply_config(doc, std::move(base));
}

inline EngineConfig load_config(const std::string& path, EngineConfig base = {}) {
    return parse_config(read_file(path), std::move(base));
}

inline std::string config_hash(const EngineConfig& cfg) { return hex64(fnv1a(config_to_text(cfg))); }

}  // namespace scenekg
