#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "scenekg/error.hpp"
#include "scenekg/geometry.hpp"
#include "scenekg/json_io.hpp"
#include "scenekg/schema.hpp"

namespace scenekg {

/// One raw hypothesis from one detector at one frame.
struct Detection {
    std::string detector_id;
    int frame = 0;
    std::string class_label;
    std::optional<std::string> status_label;
    Box3d box;
    std::optional<Vec2> velocity;
    double confidence = 0.0;

    friend bool operator==(const Detection&, const Detection&) = default;
};

/// All detections of one frame, expressed in that frame's ego coordinates.
struct FrameBundle {
    int frame = 0;
    EgoState ego;
    std::map<std::string, std::vector<Detection>> per_detector;

    friend bool operator==(const FrameBundle&, const FrameBundle&) = default;

    std::size_t detection_count() const {
        std::size_t n = 0;
        for (const auto& [_, dets] : per_detector) n += dets.size();
        return n;
    }
};

enum class FrameOfReference { ego, sensor };

inline Detection to_global(const Detection& det, const EgoState& ego) {
    Detection out = det;
    out.box.center = point_to_global(det.box.center, ego);
    out.box.yaw = normalize_angle(det.box.yaw + ego.heading_angle());
    if (det.velocity) out.velocity = rotate(*det.velocity, ego.heading);
    return out;
}

inline Detection to_ego(const Detection& det, const EgoState& ego) {
    Detection out = det;
    out.box.center = point_to_ego(det.box.center, ego);
    out.box.yaw = normalize_angle(det.box.yaw - ego.heading_angle());
    if (det.velocity) out.velocity = unrotate(*det.velocity, ego.heading);
    return out;
}

/// Detector ids appearing anywhere in `bundles`, sorted.
inline std::vector<std::string> detector_set(const std::vector<FrameBundle>& bundles) {
    std::set<std::string> ids;
    for (const auto& b : bundles)
        for (const auto& [id, _] : b.per_detector) ids.insert(id);
    return {ids.begin(), ids.end()};
}

// ---------------------------------------------------------------------------
// Wire format: one JSON object per line. See docs/formats.md.

inline std::string ego_record(const EgoState& ego) {
    return ObjectWriter()
        .field("record_type", "ego")
        .field("frame", ego.frame)
        .field("px", ego.position.x)
        .field("py", ego.position.y)
        .field("pz", ego.position.z)
        .field("hx", ego.heading.x)
        .field("hy", ego.heading.y)
        .field("t", ego.timestamp)
        .str();
}

namespace detail {

inline void write_detection_fields(ObjectWriter& w, const std::string& detector, int frame, const std::string& cls,
                                   const std::optional<std::string>& status, const Box3d& box,
                                   const std::optional<Vec2>& velocity, double conf) {
    w.field("detector", detector).field("frame", frame).field("cls", cls);
    if (status) w.field("status", *status);
    w.field("cx", box.center.x).field("cy", box.center.y).field("cz", box.center.z);
    w.field("l", box.size.x).field("w", box.size.y).field("h", box.size.z).field("yaw", box.yaw);
    if (velocity) w.field("vx", velocity->x).field("vy", velocity->y);
    w.field("conf", conf);
}

inline void check_fields(const json& obj, std::initializer_list<const char*> allowed) {
    for (const auto& [key, _] : obj.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) fail(ErrorKind::parse, "unexpected field '" + key + "'");
    }
}

struct ParsedDetectionFields {
    std::string cls;
    std::optional<std::string> status;
    Box3d box;
    std::optional<Vec2> velocity;
    double conf = 0.0;
};

inline ParsedDetectionFields read_detection_fields(const json& obj, const Schema& schema) {
    ParsedDetectionFields f;
    f.cls = get_string(obj, "cls");
    schema.require_category(f.cls);
    f.status = get_optional_string(obj, "status");
    if (f.status) schema.require_status(*f.status);
    const Vec3 center{get_number(obj, "cx"), get_number(obj, "cy"), get_number(obj, "cz")};
    const Vec3 size{get_number(obj, "l"), get_number(obj, "w"), get_number(obj, "h")};
    if (!(size.x > 0 && size.y > 0 && size.z > 0))
        fail(ErrorKind::parse, "fields 'l', 'w', 'h' must be strictly positive");
    f.box = Box3d::make(center, size, get_number(obj, "yaw"));
    const auto vx = get_optional_number(obj, "vx");
    const auto vy = get_optional_number(obj, "vy");
    if (vx.has_value() != vy.has_value()) fail(ErrorKind::parse, "fields 'vx' and 'vy' must appear together");
    if (vx) f.velocity = Vec2{*vx, *vy};
    f.conf = get_number(obj, "conf");
    if (f.conf < 0.0 || f.conf > 1.0) fail(ErrorKind::parse, "field 'conf' must lie in [0, 1]");
    return f;
}

inline EgoState read_ego(const json& obj) {
    check_fields(obj, {"record_type", "frame", "px", "py", "pz", "hx", "hy", "t"});
    return EgoState::make({get_number(obj, "px"), get_number(obj, "py"), get_number(obj, "pz")},
                          {get_number(obj, "hx"), get_number(obj, "hy")}, get_int(obj, "frame"),
                          get_number(obj, "t"));
}

}  // namespace detail

inline std::string detection_record(const Detection& det, FrameOfReference ref = FrameOfReference::ego) {
    ObjectWriter w;
    w.field("record_type", "detection");
    detail::write_detection_fields(w, det.detector_id, det.frame, det.class_label, det.status_label, det.box,
                                   det.velocity, det.confidence);
    w.field("frame_of_reference", ref == FrameOfReference::ego ? "ego" : "sensor");
    return w.str();
}

/// Bundles sorted by frame, every detection in ego coordinates. Records
/// whose frame_of_reference is "sensor" are given in the shared world frame
/// and are moved into the ego frame with that frame's ego record.
inline std::vector<FrameBundle> parse_detections(std::string_view text, const Schema& schema) {
    std::map<int, EgoState> egos;
    struct Pending {
        Detection det;
        FrameOfReference ref;
        int line;
    };
    std::vector<Pending> pending;
    for_each_record(text, [&](const json& obj, int line) {
        const std::string type = get_string(obj, "record_type");
        if (type == "ego") {
            EgoState ego = detail::read_ego(obj);
            if (!egos.emplace(ego.frame, ego).second)
                fail(ErrorKind::parse, "duplicate ego record for frame " + std::to_string(ego.frame));
        } else if (type == "detection") {
            detail::check_fields(obj, {"record_type", "detector", "frame", "cls", "status", "cx", "cy", "cz", "l", "w",
                                       "h", "yaw", "vx", "vy", "conf", "frame_of_reference"});
            auto f = detail::read_detection_fields(obj, schema);
            Detection d{get_string(obj, "detector"), get_int(obj, "frame"), f.cls, f.status, f.box, f.velocity, f.conf};
            if (d.detector_id.empty()) fail(ErrorKind::parse, "field 'detector' must be non-empty");
            const std::string ref = get_string(obj, "frame_of_reference");
            if (ref != "ego" && ref != "sensor")
                fail(ErrorKind::parse, "field 'frame_of_reference' must be ego or sensor");
            pending.push_back({std::move(d), ref == "ego" ? FrameOfReference::ego : FrameOfReference::sensor, line});
        } else {
            fail(ErrorKind::parse, "unknown record_type '" + type + "'");
        }
    });

    std::map<int, FrameBundle> bundles;
    for (const auto& [frame, ego] : egos) bundles[frame] = FrameBundle{frame, ego, {}};
    for (auto& p : pending) {
        auto it = bundles.find(p.det.frame);
        if (it == bundles.end())
            fail(ErrorKind::reference,
                 "line " + std::to_string(p.line) + ": no ego record for frame " + std::to_string(p.det.frame));
        Detection d = p.ref == FrameOfReference::sensor ? to_ego(p.det, it->second.ego) : std::move(p.det);
        it->second.per_detector[d.detector_id].push_back(std::move(d));
    }
    std::vector<FrameBundle> out;
    out.reserve(bundles.size());
    for (auto& [_, b] : bundles) out.push_back(std::move(b));
    return out;
}

inline std::vector<FrameBundle> load_detections(const std::string& path, const Schema& schema) {
    return parse_detections(read_file(path), schema);
}

/// Inverse of parse_detections for ego-frame data: ego record first, then
/// detections grouped by detector id.
inline std::string write_detections(const std::vector<FrameBundle>& bundles) {
    std::string out;
    for (const auto& b : bundles) {
        out += ego_record(b.ego) + "\n";
        for (const auto& [_, dets] : b.per_detector)
            for (const auto& d : dets) out += detection_record(d) + "\n";
    }
    return out;
}

}  // namespace scenekg
