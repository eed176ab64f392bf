#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>

#include "scenekg/error.hpp"

namespace scenekg {

constexpr double pi = std::numbers::pi;

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
    friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
    friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
    friend bool operator==(const Vec2&, const Vec2&) = default;

    double norm() const { return std::hypot(x, y); }
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
    friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
    friend Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
    friend bool operator==(const Vec3&, const Vec3&) = default;

    Vec2 bev() const { return {x, y}; }
    double norm() const { return std::sqrt(x * x + y * y + z * z); }
};

inline double bev_distance(const Vec3& a, const Vec3& b) { return (a.bev() - b.bev()).norm(); }

/// Wraps any finite angle into (-pi, pi].
inline double normalize_angle(double theta) {
    if (!std::isfinite(theta)) fail(ErrorKind::invalid_argument, "normalize_angle: non-finite angle");
    double r = std::fmod(theta, 2.0 * pi);
    if (r <= -pi) r += 2.0 * pi;
    if (r > pi) r -= 2.0 * pi;
    return r;
}

/// Oriented 3D box; size is (length, width, height).
struct Box3d {
    Vec3 center;
    Vec3 size{1.0, 1.0, 1.0};
    double yaw = 0.0;

    friend bool operator==(const Box3d&, const Box3d&) = default;

    static Box3d make(Vec3 center, Vec3 size, double yaw) {
        if (!(size.x > 0.0 && size.y > 0.0 && size.z > 0.0))
            fail(ErrorKind::invalid_argument, "box sizes must be strictly positive");
        return Box3d{center, size, normalize_angle(yaw)};
    }
};

/// Ego pose for one frame. The heading is a unit vector on the ground plane.
struct EgoState {
    Vec3 position;
    Vec2 heading{1.0, 0.0};
    int frame = 0;
    double timestamp = 0.0;

    friend bool operator==(const EgoState&, const EgoState&) = default;

    /// Normalizes `heading`; a zero or non-finite heading is rejected.
    static EgoState make(Vec3 position, Vec2 heading, int frame, double timestamp) {
        const double n = heading.norm();
        if (!std::isfinite(n) || n < 1e-12)
            fail(ErrorKind::invalid_argument, "ego heading must be a non-zero finite vector");
        return EgoState{position, Vec2{heading.x / n, heading.y / n}, frame, timestamp};
    }

    double heading_angle() const { return std::atan2(heading.y, heading.x); }
};

/// Angle from `heading` to (target - anchor), counter-clockwise positive,
/// in (-pi, pi].
inline double signed_ego_angle(Vec2 anchor, Vec2 target, Vec2 heading) {
    const Vec2 d = target - anchor;
    if (d.norm() < 1e-12)
        fail(ErrorKind::degenerate_geometry, "signed_ego_angle: anchor and target coincide");
    const double a = std::atan2(cross(heading, d), dot(heading, d));
    return a <= -pi ? pi : a;
}

/// The six ego-centric directional relations, in counter-clockwise order
/// starting from straight ahead.
enum class Relation { front, front_left, back_left, back, back_right, front_right };

inline constexpr std::array<Relation, 6> all_relations{
    Relation::front, Relation::front_left, Relation::back_left,
    Relation::back, Relation::back_right, Relation::front_right};

inline constexpr std::array<std::string_view, 6> relation_names{
    "front", "front_left", "back_left", "back", "back_right", "front_right"};

inline std::string_view to_string(Relation r) { return relation_names[static_cast<int>(r)]; }

inline std::optional<Relation> relation_from_string(std::string_view s) {
    for (std::size_t i = 0; i < relation_names.size(); ++i)
        if (relation_names[i] == s) return static_cast<Relation>(i);
    return std::nullopt;
}

/// Sector boundaries in degrees. Each sector is closed on its
/// counter-clockwise end.
struct SectorBoundaries {
    double inner = 30.0;
    double middle = 90.0;
    double outer = 150.0;

    void validate() const {
        if (!(0.0 < inner && inner < middle && middle < outer && outer < 180.0))
            fail(ErrorKind::config, "relation boundaries must satisfy 0 < b1 < b2 < b3 < 180");
    }
};

inline Relation quantize_angle(double theta, const SectorBoundaries& b = {}) {
    if (!std::isfinite(theta) || theta <= -pi || theta > pi)
        fail(ErrorKind::invalid_argument, "quantize_angle: angle outside (-pi, pi]");
    const double b1 = b.inner * pi / 180.0;
    const double b2 = b.middle * pi / 180.0;
    const double b3 = b.outer * pi / 180.0;
    if (theta > -b1 && theta <= b1) return Relation::front;
    if (theta > b1 && theta <= b2) return Relation::front_left;
    if (theta > b2 && theta <= b3) return Relation::back_left;
    if (theta > b3 || theta <= -b3) return Relation::back;
    if (theta > -b3 && theta <= -b2) return Relation::back_right;
    return Relation::front_right;
}

// Ego <-> global transforms on plain points. Headings rotate about +z.

inline Vec2 rotate(Vec2 v, Vec2 heading) {
    return {heading.x * v.x - heading.y * v.y, heading.y * v.x + heading.x * v.y};
}

inline Vec2 unrotate(Vec2 v, Vec2 heading) {
    return {heading.x * v.x + heading.y * v.y, -heading.y * v.x + heading.x * v.y};
}

inline Vec3 point_to_global(const Vec3& p, const EgoState& ego) {
    const Vec2 r = rotate(p.bev(), ego.heading);
    return {r.x + ego.position.x, r.y + ego.position.y, p.z + ego.position.z};
}

inline Vec3 point_to_ego(const Vec3& p, const EgoState& ego) {
    const Vec2 r = unrotate(Vec2{p.x - ego.position.x, p.y - ego.position.y}, ego.heading);
    return {r.x, r.y, p.z - ego.position.z};
}

}  // namespace scenekg
