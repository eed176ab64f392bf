#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "scenekg/config.hpp"
#include "scenekg/error.hpp"
#include "scenekg/geometry.hpp"
#include "scenekg/ingestion.hpp"
#include "scenekg/json_io.hpp"
#include "scenekg/union_find.hpp"

namespace scenekg {

/// A cross-detector consensus hypothesis, or one recovered from its
/// tracklet's neighbors.
struct PooledCandidate {
    int id = 0;
    int frame = 0;
    Box3d box;
    std::string class_label;
    std::optional<std::string> status_label;
    double confidence = 0.0;
    std::vector<std::string> provenance;  // sorted, unique
    EvidenceType evidence_type = EvidenceType::observed;
    std::optional<Vec2> velocity;
    std::optional<int> tracklet_id;

    friend bool operator==(const PooledCandidate&, const PooledCandidate&) = default;
};

/// Difference of two headings ignoring a 180 degree flip, in [0, pi/2].
inline double axis_angle_difference(double a, double b) {
    const double d = std::abs(normalize_angle(a - b));
    return std::min(d, pi - d);
}

namespace detail {

inline auto detection_sort_key(const Detection& d) {
    return std::make_tuple(std::cref(d.detector_id), std::cref(d.class_label), d.box.center.x, d.box.center.y,
                           d.box.center.z, d.box.yaw, d.box.size.x, d.box.size.y, d.box.size.z, d.confidence,
                           d.status_label.value_or(""), d.velocity ? d.velocity->x : 0.0,
                           d.velocity ? d.velocity->y : 0.0);
}

inline double circular_axis_mean(const std::vector<double>& yaws, const std::vector<double>& weights, double reference) {
    double s = 0.0, c = 0.0;
    for (std::size_t i = 0; i < yaws.size(); ++i) {
        s += weights[i] * std::sin(2.0 * yaws[i]);
        c += weights[i] * std::cos(2.0 * yaws[i]);
    }
    if (std::hypot(s, c) < 1e-12) return reference;
    const double axis = 0.5 * std::atan2(s, c);
    // Pick the direction along the axis that agrees with the reference heading.
    const double flipped = normalize_angle(axis + pi);
    return std::abs(normalize_angle(axis - reference)) <= std::abs(normalize_angle(flipped - reference))
               ? normalize_angle(axis)
               : flipped;
}

inline PooledCandidate aggregate(const std::vector<const Detection*>& members, int frame) {
    PooledCandidate c;
    c.frame = frame;
    c.class_label = members.front()->class_label;

    double wsum = 0.0;
    for (const auto* m : members) wsum += m->confidence;
    std::vector<double> w;
    for (const auto* m : members) w.push_back(wsum > 0.0 ? m->confidence / wsum : 1.0 / static_cast<double>(members.size()));

    const Detection* top = members.front();
    for (const auto* m : members)
        if (m->confidence > top->confidence) top = m;

    if (members.size() == 1) {
        c.box = top->box;
        c.velocity = top->velocity;
    } else {
        Vec3 center, size;
        std::vector<double> yaws;
        for (std::size_t i = 0; i < members.size(); ++i) {
            center = center + w[i] * members[i]->box.center;
            size = size + w[i] * members[i]->box.size;
            yaws.push_back(members[i]->box.yaw);
        }
        c.box = Box3d{center, size, circular_axis_mean(yaws, w, top->box.yaw)};

        double vw = 0.0;
        Vec2 v;
        for (std::size_t i = 0; i < members.size(); ++i)
            if (members[i]->velocity) {
                v = v + w[i] * *members[i]->velocity;
                vw += w[i];
            }
        if (vw > 0.0) c.velocity = Vec2{v.x / vw, v.y / vw};
        else {
            // all weights were zero for members carrying a velocity
            int n = 0;
            Vec2 acc;
            for (const auto* m : members)
                if (m->velocity) { acc = acc + *m->velocity; ++n; }
            if (n > 0) c.velocity = Vec2{acc.x / n, acc.y / n};
        }
    }

    double conf = 0.0;
    for (const auto* m : members) conf += m->confidence;
    c.confidence = conf / static_cast<double>(members.size());

    std::map<std::string, int> votes;
    for (const auto* m : members)
        if (m->status_label) ++votes[*m->status_label];
    int best = 0;
    bool tie = false;
    for (const auto& [status, n] : votes) {
        if (n > best) {
            best = n;
            tie = false;
            c.status_label = status;
        } else if (n == best) {
            tie = true;
        }
    }
    if (tie) c.status_label.reset();

    std::set<std::string> prov;
    for (const auto* m : members) prov.insert(m->detector_id);
    c.provenance.assign(prov.begin(), prov.end());
    return c;
}

}  // namespace detail

/// Consensus pooling of one frame's detections. Output ids are 0..n-1 in a
/// canonical order that does not depend on input order.
inline std::vector<PooledCandidate> pool_frame(const FrameBundle& bundle, const EngineConfig& cfg) {
    std::vector<const Detection*> dets;
    for (const auto& [_, list] : bundle.per_detector)
        for (const auto& d : list) dets.push_back(&d);
    std::sort(dets.begin(), dets.end(), [](const Detection* a, const Detection* b) {
        return detail::detection_sort_key(*a) < detail::detection_sort_key(*b);
    });

    UnionFind uf(dets.size());
    for (std::size_t i = 0; i < dets.size(); ++i)
        for (std::size_t j = i + 1; j < dets.size(); ++j) {
            const Detection& a = *dets[i];
            const Detection& b = *dets[j];
            if (a.class_label != b.class_label) continue;
            if (bev_distance(a.box.center, b.box.center) > cfg.association_distance(a.class_label)) continue;
            if (axis_angle_difference(a.box.yaw, b.box.yaw) > cfg.yaw_gate) continue;
            uf.unite(i, j);
        }

    // At most one detection per detector per cluster: the most confident
    // stays, the others become singletons.
    std::vector<std::vector<std::size_t>> clusters;
    for (auto& group : uf.groups()) {
        std::map<std::string, std::size_t> keep;
        for (std::size_t idx : group) {
            auto [it, inserted] = keep.emplace(dets[idx]->detector_id, idx);
            if (!inserted && dets[idx]->confidence > dets[it->second]->confidence) it->second = idx;
        }
        std::vector<std::size_t> kept;
        for (std::size_t idx : group) {
            if (keep.at(dets[idx]->detector_id) == idx) kept.push_back(idx);
            else clusters.push_back({idx});
        }
        clusters.push_back(std::move(kept));
    }
    std::sort(clusters.begin(), clusters.end(),
              [](const auto& a, const auto& b) { return a.front() < b.front(); });

    std::vector<PooledCandidate> out;
    out.reserve(clusters.size());
    for (const auto& cl : clusters) {
        std::vector<const Detection*> members;
        for (std::size_t idx : cl) members.push_back(dets[idx]);
        PooledCandidate c = detail::aggregate(members, bundle.frame);
        c.id = static_cast<int>(out.size());
        out.push_back(std::move(c));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Temporal association and recovery

struct TrackletState {
    Vec3 center;                            // global frame
    std::optional<PooledCandidate> source;  // empty for a gap
    double global_yaw = 0.0;
    std::optional<Vec2> global_velocity;
    double timestamp = 0.0;

    bool observed() const { return source.has_value(); }
};

struct Tracklet {
    int id = 0;
    std::string class_label;
    std::map<int, TrackletState> states;  // contiguous frames

    int observed_count() const {
        int n = 0;
        for (const auto& [_, s] : states) n += s.observed() ? 1 : 0;
        return n;
    }
    int first_frame() const { return states.begin()->first; }
    int last_frame() const { return states.rbegin()->first; }
    bool observed_at(int frame) const {
        auto it = states.find(frame);
        return it != states.end() && it->second.observed();
    }
};

struct WindowFrame {
    EgoState ego;
    std::vector<PooledCandidate> candidates;
};

/// Linear interpolation of a center between two observed frames.
inline Vec3 interpolate_gap(const Vec3& p_minus, const Vec3& p_plus, int tau_minus, int tau_plus, int tau,
                            std::optional<int> max_gap = std::nullopt) {
    if (!(tau_minus < tau && tau < tau_plus))
        fail(ErrorKind::invalid_argument, "interpolate_gap: frame outside the open interval between observations");
    if (max_gap && tau_plus - tau_minus - 1 > *max_gap)
        fail(ErrorKind::invalid_argument, "interpolate_gap: gap exceeds the maximum");
    const double alpha = static_cast<double>(tau - tau_minus) / static_cast<double>(tau_plus - tau_minus);
    return (1.0 - alpha) * p_minus + alpha * p_plus;
}

inline TrackletState make_state(const PooledCandidate& c, const EgoState& ego) {
    TrackletState s;
    s.center = point_to_global(c.box.center, ego);
    s.source = c;
    s.global_yaw = normalize_angle(c.box.yaw + ego.heading_angle());
    if (c.velocity) s.global_velocity = rotate(*c.velocity, ego.heading);
    s.timestamp = ego.timestamp;
    return s;
}

/// Greedy nearest-neighbor association of candidates across consecutive
/// frames of a short window, in the global frame. A tracklet can bridge up
/// to cfg.max_gap missing frames; bridged frames are stored as gaps.
inline std::vector<Tracklet> build_tracklets(std::vector<WindowFrame> frames, const EngineConfig& cfg) {
    std::stable_sort(frames.begin(), frames.end(),
                     [](const WindowFrame& a, const WindowFrame& b) { return a.ego.frame < b.ego.frame; });
    std::vector<Tracklet> tracklets;
    auto start = [&](const PooledCandidate& c, const EgoState& ego) {
        Tracklet t;
        t.id = static_cast<int>(tracklets.size());
        t.class_label = c.class_label;
        t.states.emplace(ego.frame, make_state(c, ego));
        tracklets.push_back(std::move(t));
    };

    for (std::size_t fi = 0; fi < frames.size(); ++fi) {
        const auto& wf = frames[fi];
        const int frame = wf.ego.frame;
        struct Pair {
            double dist;
            int last_frame;
            int last_id;
            int cand_id;
            std::size_t tracklet;
            std::size_t cand;
        };
        std::vector<Pair> pairs;
        for (std::size_t ti = 0; ti < tracklets.size(); ++ti) {
            const Tracklet& t = tracklets[ti];
            const int last = t.last_frame();
            if (last >= frame || frame - last - 1 > cfg.max_gap) continue;
            const TrackletState& ls = t.states.at(last);
            for (std::size_t ci = 0; ci < wf.candidates.size(); ++ci) {
                const PooledCandidate& c = wf.candidates[ci];
                if (c.class_label != t.class_label) continue;
                const Vec3 g = point_to_global(c.box.center, wf.ego);
                const double d = bev_distance(g, ls.center);
                double speed = ls.global_velocity ? ls.global_velocity->norm() : 0.0;
                if (c.velocity) speed = std::max(speed, c.velocity->norm());
                const double gate = cfg.tracklet_gate + std::abs(wf.ego.timestamp - ls.timestamp) * speed;
                if (d > gate) continue;
                pairs.push_back({d, last, ls.source->id, c.id, ti, ci});
            }
        }
        std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
            return std::tie(a.dist, a.last_frame, a.last_id, a.cand_id) <
                   std::tie(b.dist, b.last_frame, b.last_id, b.cand_id);
        });
        std::vector<bool> used_t(tracklets.size(), false), used_c(wf.candidates.size(), false);
        for (const auto& p : pairs) {
            if (used_t[p.tracklet] || used_c[p.cand]) continue;
            used_t[p.tracklet] = used_c[p.cand] = true;
            Tracklet& t = tracklets[p.tracklet];
            const int last = t.last_frame();
            const TrackletState prev = t.states.at(last);
            TrackletState next = make_state(wf.candidates[p.cand], wf.ego);
            for (int f = last + 1; f < frame; ++f) {
                TrackletState gap;
                gap.center = interpolate_gap(prev.center, next.center, last, frame, f);
                gap.timestamp = prev.timestamp + (next.timestamp - prev.timestamp) * (f - last) / (frame - last);
                t.states.emplace(f, gap);
            }
            t.states.emplace(frame, std::move(next));
        }
        for (std::size_t ci = 0; ci < wf.candidates.size(); ++ci)
            if (!used_c[ci]) start(wf.candidates[ci], wf.ego);
    }
    return tracklets;
}

/// (frame, candidate id) -> tracklet id for every observed state.
inline std::map<std::pair<int, int>, int> tracklet_index(const std::vector<Tracklet>& tracklets) {
    std::map<std::pair<int, int>, int> idx;
    for (const auto& t : tracklets)
        for (const auto& [f, s] : t.states)
            if (s.observed()) idx[{f, s.source->id}] = t.id;
    return idx;
}

/// One recovered candidate per tracklet that has a gap at `target_frame`
/// bracketed by observations at most cfg.max_gap frames apart. Only the
/// center is interpolated; the other attributes come from the nearest
/// observation (the earlier one on a tie). Ids start at `first_id`.
inline std::vector<PooledCandidate> recover_missing(const std::vector<Tracklet>& tracklets, int target_frame,
                                                    const EgoState& ego_at_target, const EngineConfig& cfg,
                                                    int first_id = 0) {
    std::vector<PooledCandidate> out;
    for (const auto& t : tracklets) {
        auto it = t.states.find(target_frame);
        if (it == t.states.end() || it->second.observed()) continue;
        const TrackletState* before = nullptr;
        const TrackletState* after = nullptr;
        int tau_minus = 0, tau_plus = 0;
        for (const auto& [f, s] : t.states) {
            if (!s.observed()) continue;
            if (f < target_frame) { before = &s; tau_minus = f; }
            if (f > target_frame && !after) { after = &s; tau_plus = f; }
        }
        if (!before || !after) continue;
        if (tau_plus - tau_minus - 1 > cfg.max_gap) continue;

        const Vec3 global = interpolate_gap(before->center, after->center, tau_minus, tau_plus, target_frame);
        const TrackletState& nearest = (target_frame - tau_minus <= tau_plus - target_frame) ? *before : *after;
        const PooledCandidate& src = *nearest.source;

        PooledCandidate c;
        c.id = first_id + static_cast<int>(out.size());
        c.frame = target_frame;
        c.box = Box3d{point_to_ego(global, ego_at_target), src.box.size,
                      normalize_angle(nearest.global_yaw - ego_at_target.heading_angle())};
        c.class_label = src.class_label;
        c.status_label = src.status_label;
        c.confidence = 0.5 * (before->source->confidence + after->source->confidence);
        c.evidence_type = EvidenceType::recovered;
        if (nearest.global_velocity) c.velocity = unrotate(*nearest.global_velocity, ego_at_target.heading);
        c.tracklet_id = t.id;
        out.push_back(std::move(c));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Line-delimited export: detection fields plus provenance, evidence type,
// tracklet id.

inline std::string candidate_record(const PooledCandidate& c) {
    ObjectWriter w;
    w.field("record_type", "candidate").field("id", c.id);
    detail::write_detection_fields(w, "pooled", c.frame, c.class_label, c.status_label, c.box, c.velocity, c.confidence);
    w.field("frame_of_reference", "ego");
    w.field("provenance", c.provenance);
    w.field("evidence_type", to_string(c.evidence_type));
    if (c.tracklet_id) w.field("tracklet_id", *c.tracklet_id);
    return w.str();
}

inline PooledCandidate read_candidate(const json& obj, const Schema& schema) {
    detail::check_fields(obj, {"record_type", "id", "detector", "frame", "cls", "status", "cx", "cy", "cz", "l", "w", "h",
                               "yaw", "vx", "vy", "conf", "frame_of_reference", "provenance", "evidence_type",
                               "tracklet_id"});
    auto f = detail::read_detection_fields(obj, schema);
    PooledCandidate c;
    c.id = get_int(obj, "id");
    c.frame = get_int(obj, "frame");
    c.box = f.box;
    c.class_label = f.cls;
    c.status_label = f.status;
    c.confidence = f.conf;
    c.velocity = f.velocity;
    for (const auto& p : require(obj, "provenance")) c.provenance.push_back(p.get<std::string>());
    std::sort(c.provenance.begin(), c.provenance.end());
    c.evidence_type = evidence_type_from_string(get_string(obj, "evidence_type"));
    if (obj.contains("tracklet_id")) c.tracklet_id = get_int(obj, "tracklet_id");
    if (c.evidence_type == EvidenceType::observed && c.provenance.empty())
        fail(ErrorKind::parse, "observed candidate must have a non-empty provenance");
    if (c.evidence_type == EvidenceType::recovered && (!c.provenance.empty() || !c.tracklet_id))
        fail(ErrorKind::parse, "recovered candidate needs an empty provenance and a tracklet_id");
    return c;
}

}  // namespace scenekg
