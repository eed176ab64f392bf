#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "scenekg/dsl.hpp"
#include "scenekg/error.hpp"
#include "scenekg/geometry.hpp"
#include "scenekg/ingestion.hpp"
#include "scenekg/json_io.hpp"
#include "scenekg/scene_kg.hpp"
#include "scenekg/schema.hpp"

namespace scenekg {

struct ClassProfile {
    double weight = 1.0;
    Vec3 size{1.0, 1.0, 1.0};
    double p_moving = 0.0;
    double speed_min = 0.0;
    double speed_max = 0.0;
    std::vector<std::string> static_statuses;  // empty: schema default
};

/// Forced runs of consecutive misses.
struct OcclusionSpec {
    double probability = 0.0;  // per entity
    int duration = 1;          // frames
};

struct DetectorProfile {
    std::string id;
    double miss_base = 0.1;
    double miss_slope = 0.0;  // per meter of ego distance
    double fp_rate = 0.0;     // mean false positives per frame (Poisson)
    double pos_sigma = 0.0;
    double yaw_sigma = 0.0;
    double label_confusion = 0.0;
    double duplicate_prob = 0.0;    // chance of an extra split detection of a true object
    double duplicate_offset = 1.0;  // meters, sigma of the split detection's offset
    std::array<double, 2> conf_true{8.0, 2.0};
    std::array<double, 2> conf_false{2.0, 5.0};
    bool reports_status = true;
    bool reports_velocity = true;
    OcclusionSpec occlusion;
};

struct WorldSpec {
    std::uint64_t seed = 0;
    int frames = 9;
    double dt = 0.5;
    int entity_min = 15;
    int entity_max = 25;
    std::map<std::string, ClassProfile> classes;
    std::array<double, 2> x_range{-40.0, 40.0};
    std::array<double, 2> y_range{-40.0, 40.0};
    double min_separation = 3.0;
    double ego_heading_deg = 0.0;
    double ego_speed = 0.0;
    OcclusionSpec occlusion;
    std::vector<DetectorProfile> detectors;

    int query_frame() const { return frames / 2; }

    void validate(const Schema& schema) const {
        auto prob = [](double p, const std::string& what) {
            if (!(p >= 0.0 && p <= 1.0)) fail(ErrorKind::spec, what + " must lie in [0, 1]");
        };
        if (frames < 1) fail(ErrorKind::spec, "frames must be at least 1");
        if (!(dt > 0)) fail(ErrorKind::spec, "dt must be positive");
        if (entity_min < 0 || entity_max < entity_min) fail(ErrorKind::spec, "entity count range is invalid");
        if (classes.empty()) fail(ErrorKind::spec, "class mixture is empty");
        double total = 0.0;
        for (const auto& [name, c] : classes) {
            schema.require_category(name);
            if (c.weight < 0) fail(ErrorKind::spec, "class weight for '" + name + "' is negative");
            total += c.weight;
            prob(c.p_moving, "p_moving of '" + name + "'");
            if (c.speed_min < 0 || c.speed_max < c.speed_min) fail(ErrorKind::spec, "speed range of '" + name + "' is invalid");
            if (c.size.x <= 0 || c.size.y <= 0 || c.size.z <= 0) fail(ErrorKind::spec, "size of '" + name + "' must be positive");
            for (const auto& s : c.static_statuses) schema.require_status(s);
            if (c.static_statuses.empty() && !schema.default_static_status(name) && c.p_moving < 1.0)
                fail(ErrorKind::spec, "class '" + name + "' has no static status");
        }
        if (!(total > 0)) fail(ErrorKind::spec, "class mixture is empty");
        if (!(x_range[1] > x_range[0]) || !(y_range[1] > y_range[0])) fail(ErrorKind::spec, "position ranges are empty");
        prob(occlusion.probability, "occlusion.probability");
        if (occlusion.duration < 1) fail(ErrorKind::spec, "occlusion.duration must be at least 1");
        std::set<std::string> ids;
        for (const auto& d : detectors) {
            if (d.id.empty() || !ids.insert(d.id).second) fail(ErrorKind::spec, "detector ids must be unique and non-empty");
            prob(d.miss_base, d.id + ".miss_base");
            prob(d.label_confusion, d.id + ".label_confusion");
            prob(d.duplicate_prob, d.id + ".duplicate_prob");
            prob(d.occlusion.probability, d.id + ".occlusion.probability");
            if (d.occlusion.duration < 1) fail(ErrorKind::spec, d.id + ".occlusion.duration must be at least 1");
            if (d.fp_rate < 0 || d.pos_sigma < 0 || d.yaw_sigma < 0 || d.miss_slope < 0 || d.duplicate_offset < 0)
                fail(ErrorKind::spec, d.id + ": rates and noise levels must be non-negative");
            for (double v : {d.conf_true[0], d.conf_true[1], d.conf_false[0], d.conf_false[1]})
                if (!(v > 0)) fail(ErrorKind::spec, d.id + ": confidence shape parameters must be positive");
        }
    }
};

inline std::map<std::string, ClassProfile> default_class_profiles() {
    return {
        {"car", {4.0, {4.5, 1.9, 1.6}, 0.5, 3.0, 12.0, {"parked", "stopped"}}},
        {"truck", {1.0, {8.0, 2.5, 3.0}, 0.4, 3.0, 10.0, {"parked", "stopped"}}},
        {"bus", {0.5, {11.0, 2.9, 3.3}, 0.5, 3.0, 9.0, {"stopped"}}},
        {"pedestrian", {2.5, {0.7, 0.7, 1.75}, 0.5, 0.8, 1.8, {"standing"}}},
        {"cyclist", {0.8, {1.8, 0.7, 1.7}, 0.6, 2.0, 6.0, {"stopped"}}},
        {"motorcycle", {0.5, {2.1, 0.8, 1.5}, 0.5, 3.0, 12.0, {"parked"}}},
        {"barrier", {1.5, {2.0, 0.5, 1.0}, 0.0, 0.0, 0.0, {"static"}}},
        {"traffic_cone", {1.5, {0.4, 0.4, 0.7}, 0.0, 0.0, 0.0, {"static"}}},
    };
}

/// Three overlapping detectors over the default class mixture.
inline WorldSpec default_world_spec(std::uint64_t seed = 0) {
    WorldSpec w;
    w.seed = seed;
    w.classes = default_class_profiles();
    DetectorProfile lidar;
    lidar.id = "lidar";
    lidar.miss_base = 0.15;
    lidar.miss_slope = 0.004;
    lidar.fp_rate = 0.5;
    lidar.pos_sigma = 0.15;
    lidar.yaw_sigma = 0.05;
    lidar.label_confusion = 0.03;
    DetectorProfile camera = lidar;
    camera.id = "camera";
    camera.miss_base = 0.2;
    camera.miss_slope = 0.006;
    camera.fp_rate = 1.0;
    camera.pos_sigma = 0.5;
    camera.yaw_sigma = 0.1;
    camera.label_confusion = 0.08;
    camera.reports_velocity = false;
    DetectorProfile radar = lidar;
    radar.id = "radar";
    radar.miss_base = 0.3;
    radar.fp_rate = 1.0;
    radar.pos_sigma = 0.4;
    radar.yaw_sigma = 0.2;
    radar.label_confusion = 0.1;
    radar.reports_status = false;
    w.detectors = {lidar, camera, radar};
    return w;
}

namespace detail {

inline const std::set<std::string> world_spec_keys{
    "seed", "frames", "dt", "entity_count", "classes", "x_range", "y_range", "min_separation",
    "ego_heading_deg", "ego_speed", "occlusion", "detectors"};

inline void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    if (!obj.is_object()) fail(ErrorKind::spec, where + " must be an object");
    for (const auto& [k, _] : obj.items())
        if (!allowed.count(k)) fail(ErrorKind::spec, "unknown key '" + k + "' in " + where);
}

template <class T>
void read_opt(const json& obj, const char* key, T& out) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception&) {
        fail(ErrorKind::spec, std::string("key '") + key + "' has the wrong type");
    }
}

inline OcclusionSpec read_occlusion(const json& obj, const std::string& where) {
    OcclusionSpec o;
    check_keys(obj, {"probability", "duration"}, where);
    read_opt(obj, "probability", o.probability);
    read_opt(obj, "duration", o.duration);
    return o;
}

}  // namespace detail

inline WorldSpec parse_world_spec(std::string_view text, const Schema& schema) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        fail(ErrorKind::spec, std::string("malformed world spec: ") + e.what());
    }
    detail::check_keys(doc, detail::world_spec_keys, "world spec");
    WorldSpec w = default_world_spec();
    detail::read_opt(doc, "seed", w.seed);
    detail::read_opt(doc, "frames", w.frames);
    detail::read_opt(doc, "dt", w.dt);
    if (doc.contains("entity_count")) {
        std::array<int, 2> r{};
        detail::read_opt(doc, "entity_count", r);
        w.entity_min = r[0];
        w.entity_max = r[1];
    }
    detail::read_opt(doc, "x_range", w.x_range);
    detail::read_opt(doc, "y_range", w.y_range);
    detail::read_opt(doc, "min_separation", w.min_separation);
    detail::read_opt(doc, "ego_heading_deg", w.ego_heading_deg);
    detail::read_opt(doc, "ego_speed", w.ego_speed);
    if (doc.contains("occlusion")) w.occlusion = detail::read_occlusion(doc["occlusion"], "occlusion");
    if (doc.contains("classes")) {
        const auto& cls = doc["classes"];
        if (!cls.is_object()) fail(ErrorKind::spec, "classes must be an object");
        const auto defaults = default_class_profiles();
        w.classes.clear();
        for (const auto& [name, c] : cls.items()) {
            detail::check_keys(c, {"weight", "size", "p_moving", "speed", "static_statuses"}, "classes." + name);
            auto it = defaults.find(name);
            ClassProfile p = it != defaults.end() ? it->second : ClassProfile{};
            detail::read_opt(c, "weight", p.weight);
            if (c.contains("size")) {
                std::array<double, 3> s{};
                detail::read_opt(c, "size", s);
                p.size = {s[0], s[1], s[2]};
            }
            detail::read_opt(c, "p_moving", p.p_moving);
            if (c.contains("speed")) {
                std::array<double, 2> s{};
                detail::read_opt(c, "speed", s);
                p.speed_min = s[0];
                p.speed_max = s[1];
            }
            detail::read_opt(c, "static_statuses", p.static_statuses);
            w.classes[name] = p;
        }
    }
    if (doc.contains("detectors")) {
        if (!doc["detectors"].is_array()) fail(ErrorKind::spec, "detectors must be an array");
        w.detectors.clear();
        for (const auto& d : doc["detectors"]) {
            detail::check_keys(d, {"id", "miss_base", "miss_slope", "fp_rate", "pos_sigma", "yaw_sigma", "label_confusion",
                                   "duplicate_prob", "duplicate_offset", "conf_true", "conf_false", "reports_status",
                                   "reports_velocity", "occlusion"},
                               "detector");
            DetectorProfile p;
            detail::read_opt(d, "id", p.id);
            detail::read_opt(d, "miss_base", p.miss_base);
            detail::read_opt(d, "miss_slope", p.miss_slope);
            detail::read_opt(d, "fp_rate", p.fp_rate);
            detail::read_opt(d, "pos_sigma", p.pos_sigma);
            detail::read_opt(d, "yaw_sigma", p.yaw_sigma);
            detail::read_opt(d, "label_confusion", p.label_confusion);
            detail::read_opt(d, "duplicate_prob", p.duplicate_prob);
            detail::read_opt(d, "duplicate_offset", p.duplicate_offset);
            detail::read_opt(d, "conf_true", p.conf_true);
            detail::read_opt(d, "conf_false", p.conf_false);
            detail::read_opt(d, "reports_status", p.reports_status);
            detail::read_opt(d, "reports_velocity", p.reports_velocity);
            if (d.contains("occlusion")) p.occlusion = detail::read_occlusion(d["occlusion"], "detector occlusion");
            w.detectors.push_back(std::move(p));
        }
    }
    w.validate(schema);
    return w;
}

// ---------------------------------------------------------------------------
// Ground truth

struct GtEntity {
    int id = 0;
    std::string class_label;
    std::string status_label;
    Vec3 center;  // world frame
    Vec3 size;
    double yaw = 0.0;
    Vec2 velocity;
};

struct WorldFrame {
    int frame = 0;
    EgoState ego;
    std::vector<GtEntity> entities;
};

struct World {
    std::vector<WorldFrame> frames;
};

namespace detail {

inline double sample_beta(std::mt19937_64& rng, double a, double b) {
    std::gamma_distribution<double> ga(a, 1.0), gb(b, 1.0);
    const double x = ga(rng), y = gb(rng);
    return x + y > 0 ? x / (x + y) : 0.5;
}

inline std::string sample_class(std::mt19937_64& rng, const std::map<std::string, ClassProfile>& classes) {
    std::vector<std::string> names;
    std::vector<double> weights;
    for (const auto& [n, c] : classes) {
        names.push_back(n);
        weights.push_back(c.weight);
    }
    std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
    return names[pick(rng)];
}

}  // namespace detail

/// Constant-velocity entities around a (possibly moving) ego.
inline World generate_world(const WorldSpec& spec, const Schema& schema) {
    spec.validate(schema);
    std::mt19937_64 rng(spec.seed);
    std::uniform_int_distribution<int> count_dist(spec.entity_min, spec.entity_max);
    std::uniform_real_distribution<double> ux(spec.x_range[0], spec.x_range[1]);
    std::uniform_real_distribution<double> uy(spec.y_range[0], spec.y_range[1]);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> angle(-pi, pi);

    const int n = count_dist(rng);
    std::vector<GtEntity> initial;
    for (int i = 0; i < n; ++i) {
        GtEntity e;
        e.id = i;
        e.class_label = detail::sample_class(rng, spec.classes);
        const auto& prof = spec.classes.at(e.class_label);
        // Rejection sampling for a minimum spacing; gives up after a bounded
        // number of tries and keeps the last draw.
        Vec3 p;
        for (int attempt = 0; attempt < 200; ++attempt) {
            p = {ux(rng), uy(rng), prof.size.z / 2.0};
            bool ok = p.bev().norm() >= spec.min_separation;
            for (const auto& o : initial) ok = ok && bev_distance(o.center, p) >= spec.min_separation;
            if (ok) break;
        }
        e.center = p;
        e.size = prof.size;
        e.yaw = angle(rng);
        const bool moving = unit(rng) < prof.p_moving;
        if (moving) {
            const double speed = std::uniform_real_distribution<double>(prof.speed_min, prof.speed_max)(rng);
            e.velocity = {speed * std::cos(e.yaw), speed * std::sin(e.yaw)};
            e.status_label = schema.moving_status();
        } else {
            if (!prof.static_statuses.empty()) {
                std::uniform_int_distribution<std::size_t> pick(0, prof.static_statuses.size() - 1);
                e.status_label = prof.static_statuses[pick(rng)];
            } else {
                e.status_label = *schema.default_static_status(e.class_label);
            }
        }
        initial.push_back(e);
    }

    World w;
    const double heading = spec.ego_heading_deg * pi / 180.0;
    const Vec2 h{std::cos(heading), std::sin(heading)};
    for (int f = 0; f < spec.frames; ++f) {
        WorldFrame wf;
        wf.frame = f;
        const double t = f * spec.dt;
        wf.ego = EgoState::make(Vec3{h.x * spec.ego_speed * t, h.y * spec.ego_speed * t, 0.0}, h, f, t);
        for (const auto& e0 : initial) {
            GtEntity e = e0;
            e.center = {e0.center.x + e0.velocity.x * t, e0.center.y + e0.velocity.y * t, e0.center.z};
            wf.entities.push_back(e);
        }
        w.frames.push_back(std::move(wf));
    }
    return w;
}

inline std::string truth_record(const GtEntity& e, int frame) {
    return ObjectWriter()
        .field("record_type", "truth")
        .field("frame", frame)
        .field("id", e.id)
        .field("cls", e.class_label)
        .field("status", e.status_label)
        .field("cx", e.center.x)
        .field("cy", e.center.y)
        .field("cz", e.center.z)
        .field("l", e.size.x)
        .field("w", e.size.y)
        .field("h", e.size.z)
        .field("yaw", e.yaw)
        .field("vx", e.velocity.x)
        .field("vy", e.velocity.y)
        .str();
}

/// Ego records followed by truth records, frame by frame.
inline std::string write_truth(const World& w) {
    std::string out;
    for (const auto& f : w.frames) {
        out += ego_record(f.ego) + "\n";
        for (const auto& e : f.entities) out += truth_record(e, f.frame) + "\n";
    }
    return out;
}

inline World parse_truth(std::string_view text, const Schema& schema) {
    std::map<int, WorldFrame> frames;
    for_each_record(text, [&](const json& obj, int) {
        const auto type = get_string(obj, "record_type");
        if (type == "ego") {
            const EgoState ego = detail::read_ego(obj);
            frames[ego.frame].frame = ego.frame;
            frames[ego.frame].ego = ego;
            return;
        }
        if (type != "truth") fail(ErrorKind::parse, "unexpected record_type '" + type + "'");
        GtEntity e;
        const int frame = get_int(obj, "frame");
        e.id = get_int(obj, "id");
        e.class_label = get_string(obj, "cls");
        schema.require_category(e.class_label);
        e.status_label = get_string(obj, "status");
        schema.require_status(e.status_label);
        e.center = {get_number(obj, "cx"), get_number(obj, "cy"), get_number(obj, "cz")};
        e.size = {get_number(obj, "l"), get_number(obj, "w"), get_number(obj, "h")};
        e.yaw = get_number(obj, "yaw");
        e.velocity = {get_number(obj, "vx"), get_number(obj, "vy")};
        frames[frame].entities.push_back(std::move(e));
    });
    World w;
    for (auto& [f, wf] : frames) {
        if (wf.frame != f) fail(ErrorKind::reference, "truth frame " + std::to_string(f) + " has no ego record");
        w.frames.push_back(std::move(wf));
    }
    return w;
}

/// Ground-truth graph of one frame: every entity, in that frame's ego
/// coordinates.
inline SceneKg build_gt_kg(const WorldFrame& wf, const Schema& schema, const EngineConfig& cfg = {}) {
    std::vector<KgNode> nodes;
    for (const auto& e : wf.entities) {
        KgNode n;
        n.source_id = e.id;
        n.class_label = e.class_label;
        n.status_label = e.status_label;
        n.position = point_to_ego(e.center, wf.ego);
        n.size = e.size;
        n.yaw = normalize_angle(e.yaw - wf.ego.heading_angle());
        n.speed = e.velocity.norm();
        n.confidence = 1.0;
        nodes.push_back(n);
    }
    return make_canonical_kg(wf.frame, wf.ego, schema, std::move(nodes), cfg.relation_boundaries);
}

// ---------------------------------------------------------------------------
// Detector simulation

namespace detail {

// Frames at which each (detector, entity) pair is forced to miss.
inline std::set<std::pair<int, int>> occlusion_windows(std::mt19937_64& rng, const OcclusionSpec& o, int entities,
                                                       int frames) {
    std::set<std::pair<int, int>> out;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> start(0, std::max(0, frames - 1));
    for (int e = 0; e < entities; ++e) {
        if (!(unit(rng) < o.probability)) continue;
        const int s = start(rng);
        for (int f = s; f < std::min(frames, s + o.duration); ++f) out.insert({e, f});
    }
    return out;
}

}  // namespace detail

/// Noisy per-detector observations of the world, in each frame's ego
/// coordinates.
inline std::vector<FrameBundle> simulate_detectors(const World& world, const WorldSpec& spec, const Schema& schema) {
    std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> angle(-pi, pi);
    std::uniform_real_distribution<double> ux(spec.x_range[0], spec.x_range[1]);
    std::uniform_real_distribution<double> uy(spec.y_range[0], spec.y_range[1]);
    const int frames = static_cast<int>(world.frames.size());
    const int entities = world.frames.empty() ? 0 : static_cast<int>(world.frames.front().entities.size());

    const auto global_occ = detail::occlusion_windows(rng, spec.occlusion, entities, frames);
    std::vector<std::set<std::pair<int, int>>> det_occ;
    for (const auto& d : spec.detectors) det_occ.push_back(detail::occlusion_windows(rng, d.occlusion, entities, frames));

    std::vector<FrameBundle> out;
    for (const auto& wf : world.frames) {
        FrameBundle b;
        b.frame = wf.frame;
        b.ego = wf.ego;
        for (std::size_t di = 0; di < spec.detectors.size(); ++di) {
            const auto& prof = spec.detectors[di];
            std::normal_distribution<double> pos_noise(0.0, prof.pos_sigma > 0 ? prof.pos_sigma : 1.0);
            std::normal_distribution<double> yaw_noise(0.0, prof.yaw_sigma > 0 ? prof.yaw_sigma : 1.0);
            std::normal_distribution<double> dup_noise(0.0, prof.duplicate_offset > 0 ? prof.duplicate_offset : 1.0);
            auto& dets = b.per_detector[prof.id];

            auto emit = [&](const GtEntity& e, Vec2 offset, double conf) {
                Detection d;
                d.detector_id = prof.id;
                d.frame = wf.frame;
                std::string cls = e.class_label;
                if (prof.label_confusion > 0 && unit(rng) < prof.label_confusion && schema.categories().size() > 1) {
                    std::vector<std::string> others;
                    for (const auto& c : schema.categories())
                        if (c != cls) others.push_back(c);
                    cls = others[std::uniform_int_distribution<std::size_t>(0, others.size() - 1)(rng)];
                }
                d.class_label = cls;
                Vec3 c = e.center;
                if (prof.pos_sigma > 0) {
                    c.x += pos_noise(rng);
                    c.y += pos_noise(rng);
                }
                c.x += offset.x;
                c.y += offset.y;
                double yaw = e.yaw;
                if (prof.yaw_sigma > 0) yaw += yaw_noise(rng);
                d.box = Box3d{c, e.size, normalize_angle(yaw)};
                if (prof.reports_status) d.status_label = e.status_label;
                if (prof.reports_velocity) d.velocity = e.velocity;
                d.confidence = conf;
                dets.push_back(to_ego(d, wf.ego));
            };

            for (const auto& e : wf.entities) {
                if (global_occ.count({e.id, wf.frame}) || det_occ[di].count({e.id, wf.frame})) continue;
                const double dist = bev_distance(e.center, wf.ego.position);
                const double p_miss = std::clamp(prof.miss_base + prof.miss_slope * dist, 0.0, 1.0);
                if (unit(rng) < p_miss) continue;
                emit(e, {0.0, 0.0}, detail::sample_beta(rng, prof.conf_true[0], prof.conf_true[1]));
                if (prof.duplicate_prob > 0 && unit(rng) < prof.duplicate_prob) {
                    const Vec2 off{dup_noise(rng), dup_noise(rng)};
                    emit(e, off, detail::sample_beta(rng, prof.conf_true[0], prof.conf_true[1]));
                }
            }

            if (prof.fp_rate > 0) {
                const int n_fp = std::poisson_distribution<int>(prof.fp_rate)(rng);
                for (int k = 0; k < n_fp; ++k) {
                    GtEntity ghost;
                    ghost.class_label = detail::sample_class(rng, spec.classes);
                    const auto& cp = spec.classes.at(ghost.class_label);
                    ghost.size = cp.size;
                    // Placed in the ego-relative range, like true objects at frame 0.
                    const Vec2 rel{ux(rng), uy(rng)};
                    const Vec3 local{rel.x, rel.y, cp.size.z / 2.0};
                    ghost.center = point_to_global(local, wf.ego);
                    ghost.yaw = angle(rng);
                    ghost.status_label = cp.static_statuses.empty() ? schema.default_static_status(ghost.class_label).value_or(schema.moving_status())
                                                                    : cp.static_statuses.front();
                    Detection d;
                    d.detector_id = prof.id;
                    d.frame = wf.frame;
                    d.class_label = ghost.class_label;
                    d.box = Box3d{ghost.center, ghost.size, ghost.yaw};
                    if (prof.reports_status) d.status_label = ghost.status_label;
                    if (prof.reports_velocity) d.velocity = Vec2{0.0, 0.0};
                    d.confidence = detail::sample_beta(rng, prof.conf_false[0], prof.conf_false[1]);
                    dets.push_back(to_ego(d, wf.ego));
                }
            }
        }
        out.push_back(std::move(b));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Question generation

enum class QaCategory { exist, count, object, status, comparison };
inline constexpr std::array<std::string_view, 5> qa_category_names{"exist", "count", "object", "status", "comparison"};

inline std::string_view to_string(QaCategory c) { return qa_category_names[static_cast<int>(c)]; }

inline QaCategory qa_category_from_string(std::string_view s) {
    for (std::size_t i = 0; i < qa_category_names.size(); ++i)
        if (qa_category_names[i] == s) return static_cast<QaCategory>(i);
    fail(ErrorKind::parse, "unknown question category '" + std::string(s) + "'");
}

struct QaItem {
    std::string question;
    QaCategory category = QaCategory::exist;
    int hops = 0;  // 0 or 1
    std::string program;
    Answer answer;
    int frame = 0;
};

inline std::string hops_label(int hops) { return hops == 0 ? "H0" : "H1"; }

inline std::string qa_record(const QaItem& q) {
    return ObjectWriter()
        .field("question", q.question)
        .field("category", to_string(q.category))
        .field("hops", hops_label(q.hops))
        .field("program", q.program)
        .field("answer", q.answer.render())
        .field("frame", q.frame)
        .str();
}

inline std::vector<QaItem> parse_qa(std::string_view text, const Schema& schema) {
    std::vector<QaItem> out;
    for_each_record(text, [&](const json& obj, int) {
        QaItem q;
        q.question = get_string(obj, "question");
        q.category = qa_category_from_string(get_string(obj, "category"));
        const auto h = get_string(obj, "hops");
        if (h != "H0" && h != "H1") fail(ErrorKind::parse, "field 'hops' must be H0 or H1");
        q.hops = h == "H0" ? 0 : 1;
        q.program = get_string(obj, "program");
        q.answer = parse_answer(get_string(obj, "answer"), schema);
        q.frame = get_int(obj, "frame");
        out.push_back(std::move(q));
    });
    return out;
}

namespace detail {

inline std::string relation_phrase(Relation r) {
    switch (r) {
        case Relation::front: return "in front of";
        case Relation::front_left: return "to the front left of";
        case Relation::back_left: return "to the back left of";
        case Relation::back: return "behind";
        case Relation::back_right: return "to the back right of";
        case Relation::front_right: return "to the front right of";
    }
    return "";
}

inline std::string noun(const std::string& cls) {
    std::string s = cls;
    std::replace(s.begin(), s.end(), '_', ' ');
    return s;
}

inline std::string plural(const std::string& cls) {
    std::string s = noun(cls);
    if (s == "pedestrian") return "pedestrians";
    if (s == "bus") return "buses";
    return s + "s";
}

inline std::string described(const std::string& status, const std::string& cls) { return status + " " + noun(cls); }

}  // namespace detail

/// Template questions with gold programs; answers come from executing the
/// program on `kg`. Items whose program hits an empty reference are dropped.
inline std::vector<QaItem> generate_qa(const SceneKg& kg, const Schema& schema, int n, std::uint64_t seed,
                                       const EngineConfig& cfg = {}) {
    std::vector<QaItem> out;
    if (kg.size() == 0 || n <= 0) return out;
    std::mt19937_64 rng(seed);
    auto pick_node = [&]() -> const KgNode& {
        return kg.nodes()[std::uniform_int_distribution<std::size_t>(0, kg.size() - 1)(rng)];
    };
    auto pick_class = [&]() {
        const auto& c = schema.categories();
        return c[std::uniform_int_distribution<std::size_t>(0, c.size() - 1)(rng)];
    };
    auto pick_relation = [&]() { return all_relations[std::uniform_int_distribution<std::size_t>(0, 5)(rng)]; };
    auto coin = [&](double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; };
    auto rel_lit = [](Relation r) { return "'" + std::string(to_string(r)) + "'"; };

    const int max_attempts = 50 * n;
    for (int attempt = 0; attempt < max_attempts && static_cast<int>(out.size()) < n; ++attempt) {
        QaItem q;
        q.frame = kg.frame();
        q.category = static_cast<QaCategory>(std::uniform_int_distribution<int>(0, 4)(rng));
        q.hops = coin(0.5) ? 1 : 0;
        const KgNode& a = pick_node();
        const KgNode& b = pick_node();
        const Relation r = pick_relation();
        // Anchor phrase and program for one-hop templates.
        const std::string anchor_q = "the " + detail::described(a.status_label, a.class_label);
        const std::string anchor_p =
            "anchor = Resolve(type='" + a.class_label + "', status='" + a.status_label + "');\n";
        switch (q.category) {
            case QaCategory::exist: {
                const std::string cls = coin(0.6) ? b.class_label : pick_class();
                if (q.hops == 0) {
                    q.question = "Is there a " + detail::noun(cls) + " in the scene?";
                    q.program = "Exists(Resolve(type='" + cls + "'));";
                } else {
                    q.question = "Is there a " + detail::noun(cls) + " " + detail::relation_phrase(r) + " " + anchor_q + "?";
                    q.program = anchor_p + "Exists(RelSelect(anchor, " + rel_lit(r) + ", type='" + cls + "'));";
                }
                break;
            }
            case QaCategory::count: {
                const std::string cls = coin(0.8) ? b.class_label : pick_class();
                if (q.hops == 0) {
                    if (coin(0.5)) {
                        q.question = "How many " + b.status_label + " " + detail::plural(cls) + " are there?";
                        q.program = "Count(Resolve(type='" + cls + "', status='" + b.status_label + "'));";
                    } else {
                        q.question = "How many " + detail::plural(cls) + " are there?";
                        q.program = "Count(Resolve(type='" + cls + "'));";
                    }
                } else {
                    q.question = "How many " + detail::plural(cls) + " are " + detail::relation_phrase(r) + " " + anchor_q + "?";
                    q.program = anchor_p + "near = RelSelect(anchor, " + rel_lit(r) + ", type='" + cls + "');\nCount(near);";
                }
                break;
            }
            case QaCategory::object: {
                if (q.hops == 0) {
                    q.question = "What kind of object is the closest " + b.status_label + " thing?";
                    q.program = "GetType(Resolve(status='" + b.status_label + "'));";
                } else {
                    q.question = "What is the nearest object " + detail::relation_phrase(r) + " " + anchor_q + "?";
                    q.program = anchor_p + "GetType(RelSelect(anchor, " + rel_lit(r) + "));";
                }
                break;
            }
            case QaCategory::status: {
                if (q.hops == 0) {
                    q.question = "What is the status of the nearest " + detail::noun(b.class_label) + "?";
                    q.program = "GetStatus(Resolve(type='" + b.class_label + "'));";
                } else {
                    q.question = "What is the " + detail::noun(b.class_label) + " " + detail::relation_phrase(r) + " " +
                                 anchor_q + " doing?";
                    q.program = anchor_p + "GetStatus(RelSelect(anchor, " + rel_lit(r) + ", type='" + b.class_label + "'));";
                }
                break;
            }
            case QaCategory::comparison: {
                if (q.hops == 0) {
                    q.question = "Does the nearest " + detail::noun(a.class_label) + " have the same status as the nearest " +
                                 detail::noun(b.class_label) + "?";
                    q.program = "SameStatus(Resolve(type='" + a.class_label + "'), Resolve(type='" + b.class_label + "'));";
                } else {
                    const Relation r2 = pick_relation();
                    const std::string c1 = b.class_label;
                    const std::string c2 = pick_node().class_label;
                    q.question = "Does the " + detail::noun(c1) + " " + detail::relation_phrase(r) + " " + anchor_q +
                                 " have the same status as the " + detail::noun(c2) + " " + detail::relation_phrase(r2) +
                                 " it?";
                    q.program = anchor_p + "x = RelSelect(anchor, " + rel_lit(r) + ", type='" + c1 + "');\n" +
                                "y = RelSelect(anchor, " + rel_lit(r2) + ", type='" + c2 + "');\nSameStatus(x, y);";
                }
                break;
            }
        }
        const auto program = dsl::parse(q.program);
        dsl::typecheck(program, schema, {}, {true});
        const auto r1 = dsl::execute(program, kg, cfg);
        if (r1.answer.is_error()) continue;
        q.answer = r1.answer;
        out.push_back(std::move(q));
    }
    return out;
}

}  // namespace scenekg
