#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "scenekg/error.hpp"
#include "scenekg/geometry.hpp"
#include "scenekg/json_io.hpp"

namespace scenekg {

enum class Motion { moving, static_ };

inline std::string_view to_string(Motion m) { return m == Motion::moving ? "moving" : "static"; }

/// Closed label vocabularies shared by every module: object categories,
/// statuses, and the six directional relations.
class Schema {
public:
    Schema() = default;

    /// Validates uniqueness and the status/motion mapping. `default_static`
    /// maps a category to the status a non-moving, unlabeled object gets.
    Schema(std::vector<std::string> categories, std::vector<std::string> statuses,
           std::map<std::string, Motion> status_motion, std::map<std::string, std::string> default_static,
           std::string moving_status)
        : categories_(std::move(categories)),
          statuses_(std::move(statuses)),
          status_motion_(std::move(status_motion)),
          default_static_(std::move(default_static)),
          moving_status_(std::move(moving_status)) {
        relations_.assign(relation_names.begin(), relation_names.end());
        validate();
    }

    const std::vector<std::string>& categories() const { return categories_; }
    const std::vector<std::string>& statuses() const { return statuses_; }
    const std::vector<std::string>& relations() const { return relations_; }
    const std::map<std::string, Motion>& status_motion_map() const { return status_motion_; }
    const std::map<std::string, std::string>& default_static_statuses() const { return default_static_; }
    const std::string& moving_status() const { return moving_status_; }

    bool has_category(std::string_view c) const { return contains(categories_, c); }
    bool has_status(std::string_view s) const { return contains(statuses_, s); }

    void require_category(std::string_view c) const {
        if (!has_category(c)) fail(ErrorKind::schema, "unknown category '" + std::string(c) + "'");
    }
    void require_status(std::string_view s) const {
        if (!has_status(s)) fail(ErrorKind::schema, "unknown status '" + std::string(s) + "'");
    }

    Motion motion_of(const std::string& status) const {
        auto it = status_motion_.find(status);
        if (it == status_motion_.end()) fail(ErrorKind::schema, "unknown status '" + status + "'");
        return it->second;
    }

    std::optional<std::string> default_static_status(const std::string& category) const {
        auto it = default_static_.find(category);
        if (it == default_static_.end()) return std::nullopt;
        return it->second;
    }

    friend bool operator==(const Schema&, const Schema&) = default;

    std::string to_json() const {
        ObjectWriter motion;
        for (const auto& s : statuses_) motion.field(s, to_string(status_motion_.at(s)));
        ObjectWriter defaults;
        for (const auto& c : categories_)
            if (auto d = default_static_status(c)) defaults.field(c, *d);
        return ObjectWriter()
            .field("categories", categories_)
            .field("statuses", statuses_)
            .field("relations", relations_)
            .raw("status_motion", motion.str())
            .raw("default_static_status", defaults.str())
            .field("moving_status", moving_status_)
            .str();
    }

    static Schema from_json(const json& j) {
        auto labels = [&](const char* key) {
            const json& arr = require(j, key);
            if (!arr.is_array()) fail(ErrorKind::schema, std::string("schema field '") + key + "' must be a list");
            std::vector<std::string> out;
            for (const auto& v : arr) {
                if (!v.is_string()) fail(ErrorKind::schema, std::string("schema field '") + key + "' must hold strings");
                out.push_back(v.get<std::string>());
            }
            return out;
        };
        auto rel = labels("relations");
        if (!std::equal(rel.begin(), rel.end(), relation_names.begin(), relation_names.end()))
            fail(ErrorKind::schema, "schema relations must be exactly front, front_left, back_left, back, back_right, front_right");
        std::map<std::string, Motion> motion;
        for (const auto& [k, v] : require(j, "status_motion").items()) {
            const std::string m = v.get<std::string>();
            if (m != "moving" && m != "static") fail(ErrorKind::schema, "motion class must be moving or static, got '" + m + "'");
            motion[k] = m == "moving" ? Motion::moving : Motion::static_;
        }
        std::map<std::string, std::string> defaults;
        for (const auto& [k, v] : require(j, "default_static_status").items()) defaults[k] = v.get<std::string>();
        return Schema(labels("categories"), labels("statuses"), std::move(motion), std::move(defaults),
                      get_string(j, "moving_status"));
    }

private:
    static bool contains(const std::vector<std::string>& v, std::string_view s) {
        return std::find(v.begin(), v.end(), s) != v.end();
    }

    static void require_unique(const std::vector<std::string>& v, const char* what) {
        std::vector<std::string> sorted = v;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
            fail(ErrorKind::schema, std::string("duplicate label in ") + what);
        for (const auto& s : v)
            if (s.empty()) fail(ErrorKind::schema, std::string("empty label in ") + what);
    }

    void validate() const {
        require_unique(categories_, "categories");
        require_unique(statuses_, "statuses");
        for (const auto& s : statuses_)
            if (!status_motion_.count(s)) fail(ErrorKind::schema, "status '" + s + "' has no motion class");
        for (const auto& [s, m] : status_motion_)
            if (!has_status(s)) fail(ErrorKind::schema, "motion map names unknown status '" + s + "'");
        for (const auto& [c, s] : default_static_) {
            if (!has_category(c)) fail(ErrorKind::schema, "default status given for unknown category '" + c + "'");
            if (!has_status(s)) fail(ErrorKind::schema, "default status '" + s + "' is not a status");
            if (status_motion_.at(s) != Motion::static_)
                fail(ErrorKind::schema, "default static status '" + s + "' maps to moving");
        }
        if (!has_status(moving_status_) || status_motion_.at(moving_status_) != Motion::moving)
            fail(ErrorKind::schema, "moving_status must be a status with motion class moving");
    }

    std::vector<std::string> categories_;
    std::vector<std::string> statuses_;
    std::vector<std::string> relations_;
    std::map<std::string, Motion> status_motion_;
    std::map<std::string, std::string> default_static_;
    std::string moving_status_;
};

/// Driving-scene vocabulary used by the tools and synthetic worlds.
inline Schema default_schema() {
    return Schema(
        {"car", "truck", "bus", "pedestrian", "cyclist", "motorcycle", "barrier", "traffic_cone"},
        {"moving", "stopped", "parked", "standing", "static"},
        {{"moving", Motion::moving},
         {"stopped", Motion::static_},
         {"parked", Motion::static_},
         {"standing", Motion::static_},
         {"static", Motion::static_}},
        {{"car", "parked"},
         {"truck", "parked"},
         {"bus", "stopped"},
         {"pedestrian", "standing"},
         {"cyclist", "stopped"},
         {"motorcycle", "parked"},
         {"barrier", "static"},
         {"traffic_cone", "static"}},
        "moving");
}

}  // namespace scenekg
