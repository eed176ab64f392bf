#pragma once

#include <algorithm>
#include <chrono>
#include <exception>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "scenekg/config.hpp"
#include "scenekg/energy.hpp"
#include "scenekg/energy_fit.hpp"
#include "scenekg/error.hpp"
#include "scenekg/evaluation.hpp"
#include "scenekg/ingestion.hpp"
#include "scenekg/json_io.hpp"
#include "scenekg/pooling.hpp"
#include "scenekg/scene_kg.hpp"
#include "scenekg/schema.hpp"

namespace scenekg {

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Results must be
/// written to per-index slots so the outcome does not depend on scheduling.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::exception_ptr first_error;
    std::mutex mu;
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w]() {
            for (std::size_t i = w; i < n; i += workers) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(mu);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------
// Pool stage

struct PooledFrame {
    FrameBundle raw;
    std::vector<PooledCandidate> candidates;  // observed first, then recovered
};

struct PooledData {
    std::vector<std::string> detectors;
    std::vector<PooledFrame> frames;
    std::vector<Tracklet> tracklets;

    const PooledFrame& frame(int f) const {
        for (const auto& pf : frames)
            if (pf.raw.frame == f) return pf;
        fail(ErrorKind::reference, "no frame " + std::to_string(f) + " in pooled data");
    }
};

/// Consensus pooling per frame, tracklets over the whole sequence, then
/// recovery of tracklet gaps.
inline PooledData run_pool(const std::vector<FrameBundle>& bundles, const EngineConfig& cfg, int threads = 1) {
    PooledData out;
    out.detectors = detector_set(bundles);
    out.frames.resize(bundles.size());
    parallel_for(bundles.size(), threads, [&](std::size_t i) {
        out.frames[i].raw = bundles[i];
        out.frames[i].candidates = pool_frame(bundles[i], cfg);
    });
    std::vector<WindowFrame> window;
    for (const auto& f : out.frames) window.push_back({f.raw.ego, f.candidates});
    out.tracklets = build_tracklets(window, cfg);
    const auto index = tracklet_index(out.tracklets);
    for (auto& f : out.frames) {
        for (auto& c : f.candidates) {
            auto it = index.find({c.frame, c.id});
            if (it != index.end()) c.tracklet_id = it->second;
        }
        auto rec = recover_missing(out.tracklets, f.raw.frame, f.raw.ego, cfg, static_cast<int>(f.candidates.size()));
        f.candidates.insert(f.candidates.end(), rec.begin(), rec.end());
    }
    return out;
}

inline std::string tracklet_record(const Tracklet& t) {
    std::string members = "[";
    bool first = true;
    for (const auto& [f, s] : t.states) {
        if (!s.observed()) continue;
        members += std::string(first ? "" : ",") + "[" + std::to_string(f) + "," + std::to_string(s.source->id) + "]";
        first = false;
    }
    members += "]";
    return ObjectWriter()
        .field("record_type", "tracklet")
        .field("id", t.id)
        .field("cls", t.class_label)
        .raw("members", members)
        .str();
}

/// Raw detections in the ingestion wire format, then candidates, tracklets
/// and the detector list.
inline std::string write_pooled(const PooledData& p) {
    std::string out;
    for (const auto& f : p.frames) {
        out += ego_record(f.raw.ego) + "\n";
        for (const auto& [_, dets] : f.raw.per_detector)
            for (const auto& d : dets) out += detection_record(d) + "\n";
    }
    for (const auto& f : p.frames)
        for (const auto& c : f.candidates) out += candidate_record(c) + "\n";
    for (const auto& t : p.tracklets) out += tracklet_record(t) + "\n";
    out += ObjectWriter().field("record_type", "detectors").field("ids", p.detectors).str() + "\n";
    return out;
}

namespace detail {

inline std::vector<Tracklet> rebuild_tracklets(const std::vector<std::pair<Tracklet, std::vector<std::pair<int, int>>>>& specs,
                                               const std::map<int, const PooledFrame*>& frames) {
    std::vector<Tracklet> out;
    for (const auto& [shell, members] : specs) {
        Tracklet t = shell;
        std::optional<std::pair<int, TrackletState>> prev;
        for (const auto& [f, id] : members) {
            auto fit = frames.find(f);
            if (fit == frames.end()) fail(ErrorKind::reference, "tracklet " + std::to_string(t.id) + " refers to missing frame");
            const PooledCandidate* cand = nullptr;
            for (const auto& c : fit->second->candidates)
                if (c.id == id && c.evidence_type == EvidenceType::observed) cand = &c;
            if (!cand) fail(ErrorKind::reference, "tracklet " + std::to_string(t.id) + " refers to missing candidate");
            TrackletState next = make_state(*cand, fit->second->raw.ego);
            if (prev) {
                const auto& [pf, ps] = *prev;
                if (f <= pf) fail(ErrorKind::parse, "tracklet members must be in frame order");
                for (int g = pf + 1; g < f; ++g) {
                    TrackletState gap;
                    gap.center = interpolate_gap(ps.center, next.center, pf, f, g);
                    gap.timestamp = ps.timestamp + (next.timestamp - ps.timestamp) * (g - pf) / (f - pf);
                    t.states.emplace(g, gap);
                }
            }
            t.states.emplace(f, next);
            prev = std::make_pair(f, next);
        }
        if (t.states.empty()) fail(ErrorKind::parse, "tracklet " + std::to_string(t.id) + " has no members");
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace detail

inline PooledData parse_pooled(std::string_view text, const Schema& schema) {
    std::string raw_text;
    std::vector<PooledCandidate> cands;
    std::vector<std::pair<Tracklet, std::vector<std::pair<int, int>>>> specs;
    std::optional<std::vector<std::string>> detectors;
    for_each_record(text, [&](const json& obj, int) {
        const auto type = get_string(obj, "record_type");
        if (type == "ego" || type == "detection") {
            raw_text += obj.dump() + "\n";
        } else if (type == "candidate") {
            cands.push_back(read_candidate(obj, schema));
        } else if (type == "tracklet") {
            Tracklet t;
            t.id = get_int(obj, "id");
            t.class_label = get_string(obj, "cls");
            std::vector<std::pair<int, int>> members;
            for (const auto& m : require(obj, "members")) {
                if (!m.is_array() || m.size() != 2 || !m[0].is_number_integer() || !m[1].is_number_integer())
                    fail(ErrorKind::parse, "tracklet members must be [frame, id] pairs");
                members.emplace_back(m[0].get<int>(), m[1].get<int>());
            }
            specs.emplace_back(std::move(t), std::move(members));
        } else if (type == "detectors") {
            std::vector<std::string> ids;
            for (const auto& d : require(obj, "ids")) ids.push_back(d.get<std::string>());
            detectors = std::move(ids);
        } else {
            fail(ErrorKind::parse, "unknown record_type '" + type + "'");
        }
    });
    if (!detectors) fail(ErrorKind::parse, "pooled file lacks a detectors record");
    PooledData p;
    p.detectors = *detectors;
    for (auto& b : parse_detections(raw_text, schema)) p.frames.push_back({std::move(b), {}});
    std::map<int, PooledFrame*> by_frame;
    for (auto& f : p.frames) by_frame[f.raw.frame] = &f;
    for (auto& c : cands) {
        auto it = by_frame.find(c.frame);
        if (it == by_frame.end()) fail(ErrorKind::reference, "candidate refers to frame " + std::to_string(c.frame) + " with no ego record");
        it->second->candidates.push_back(std::move(c));
    }
    std::map<int, const PooledFrame*> const_frames(by_frame.begin(), by_frame.end());
    p.tracklets = detail::rebuild_tracklets(specs, const_frames);
    return p;
}

// ---------------------------------------------------------------------------
// Refine stage

struct RefinedFrame {
    EgoState ego;
    std::vector<PooledCandidate> candidates;
    std::vector<CandidateFeatures> features;
    MinimizeResult result;
};

struct RefinedData {
    std::vector<RefinedFrame> frames;

    const RefinedFrame& frame(int f) const {
        for (const auto& rf : frames)
            if (rf.ego.frame == f) return rf;
        fail(ErrorKind::reference, "no frame " + std::to_string(f) + " in refined data");
    }
};

inline std::vector<CandidateFeatures> frame_features(const PooledData& p, const PooledFrame& f, const Schema& schema,
                                                     const EngineConfig& cfg) {
    const int n_det = std::max<int>(1, static_cast<int>(p.detectors.size()));
    return extract_features(f.candidates, p.tracklets, f.raw, n_det, schema, cfg);
}

inline RefinedData run_refine(const PooledData& p, const Schema& schema, const EngineConfig& cfg, int threads = 1) {
    RefinedData out;
    out.frames.resize(p.frames.size());
    parallel_for(p.frames.size(), threads, [&](std::size_t i) {
        const auto& f = p.frames[i];
        RefinedFrame& rf = out.frames[i];
        rf.ego = f.raw.ego;
        rf.candidates = f.candidates;
        rf.features = frame_features(p, f, schema, cfg);
        rf.result = minimize(build_problem(rf.candidates, rf.features, cfg.energy, cfg), cfg);
    });
    return out;
}

inline std::string features_record(int frame, int id, const CandidateFeatures& f) {
    return ObjectWriter()
        .field("record_type", "features")
        .field("frame", frame)
        .field("id", id)
        .field("s_tilde", f.s_tilde)
        .field("k", f.k)
        .field("g", to_string(f.g))
        .field("u", f.u)
        .field("d", f.d)
        .field("speed", f.speed)
        .field("motion", to_string(f.motion))
        .str();
}

inline std::string selection_record(int frame, const SelectionVector& z) {
    std::vector<int> bits(z.z.begin(), z.z.end());
    return ObjectWriter().field("record_type", "selection").field("frame", frame).field("z", bits).str();
}

/// Per frame: ego, candidates, features, selection and solver diagnostics.
inline std::string write_refined(const RefinedData& r) {
    std::string out;
    for (const auto& f : r.frames) {
        out += ego_record(f.ego) + "\n";
        for (const auto& c : f.candidates) out += candidate_record(c) + "\n";
        for (std::size_t i = 0; i < f.candidates.size(); ++i)
            out += features_record(f.ego.frame, f.candidates[i].id, f.features[i]) + "\n";
        out += selection_record(f.ego.frame, f.result.z) + "\n";
        out += diagnostic_record(f.ego.frame, f.result) + "\n";
    }
    return out;
}

inline RefinedData parse_refined(std::string_view text, const Schema& schema) {
    std::map<int, RefinedFrame> frames;
    std::map<int, std::map<int, CandidateFeatures>> feats;
    std::map<int, bool> has_selection;
    for_each_record(text, [&](const json& obj, int) {
        const auto type = get_string(obj, "record_type");
        if (type == "ego") {
            const auto ego = detail::read_ego(obj);
            frames[ego.frame].ego = ego;
        } else if (type == "candidate") {
            auto c = read_candidate(obj, schema);
            frames[c.frame].candidates.push_back(std::move(c));
        } else if (type == "features") {
            CandidateFeatures f;
            f.s_tilde = get_number(obj, "s_tilde");
            f.k = get_number(obj, "k");
            f.g = evidence_type_from_string(get_string(obj, "g"));
            f.u = get_number(obj, "u");
            f.d = get_number(obj, "d");
            f.speed = get_number(obj, "speed");
            const auto m = get_string(obj, "motion");
            if (m != "moving" && m != "static") fail(ErrorKind::parse, "field 'motion' must be moving or static");
            f.motion = m == "moving" ? Motion::moving : Motion::static_;
            feats[get_int(obj, "frame")][get_int(obj, "id")] = f;
        } else if (type == "selection") {
            const int frame = get_int(obj, "frame");
            auto& z = frames[frame].result.z.z;
            for (const auto& b : require(obj, "z")) {
                if (!b.is_number_integer() || (b.get<int>() != 0 && b.get<int>() != 1))
                    fail(ErrorKind::parse, "selection bits must be 0 or 1");
                z.push_back(static_cast<std::uint8_t>(b.get<int>()));
            }
            has_selection[frame] = true;
        } else if (type == "diagnostic") {
            frames[get_int(obj, "frame")].result.energy = get_number(obj, "energy");
        } else {
            fail(ErrorKind::parse, "unknown record_type '" + type + "'");
        }
    });
    RefinedData r;
    for (auto& [f, rf] : frames) {
        if (rf.ego.frame != f) fail(ErrorKind::reference, "refined frame " + std::to_string(f) + " has no ego record");
        if (!has_selection[f]) fail(ErrorKind::parse, "refined frame " + std::to_string(f) + " has no selection record");
        if (rf.result.z.size() != rf.candidates.size())
            fail(ErrorKind::parse, "selection length differs from candidate count in frame " + std::to_string(f));
        for (const auto& c : rf.candidates) {
            auto it = feats[f].find(c.id);
            if (it == feats[f].end()) fail(ErrorKind::reference, "candidate " + std::to_string(c.id) + " has no features record");
            rf.features.push_back(it->second);
        }
        r.frames.push_back(std::move(rf));
    }
    return r;
}

/// The middle frame of a sequence, used as the default query frame.
inline int middle_frame(const std::vector<int>& frames) {
    if (frames.empty()) fail(ErrorKind::invalid_argument, "no frames");
    return frames[frames.size() / 2];
}

inline SceneKg kg_from_refined(const RefinedData& r, int frame, const Schema& schema, const EngineConfig& cfg) {
    const auto& f = r.frame(frame);
    std::vector<double> speeds;
    for (const auto& x : f.features) speeds.push_back(x.speed);
    return build_kg(f.candidates, f.result.z, f.ego, schema, cfg, &speeds);
}

// ---------------------------------------------------------------------------
// Labels from ground truth, for fitting

inline std::vector<EvalObject> truth_objects(const WorldFrame& wf) {
    std::vector<EvalObject> out;
    for (const auto& e : wf.entities) out.push_back({e.id, e.class_label, point_to_ego(e.center, wf.ego)});
    return out;
}

inline std::vector<EvalObject> candidate_objects(const std::vector<PooledCandidate>& cands,
                                                 const SelectionVector* z = nullptr) {
    std::vector<EvalObject> out;
    for (std::size_t i = 0; i < cands.size(); ++i)
        if (!z || z->selected(i)) out.push_back({cands[i].id, cands[i].class_label, cands[i].box.center});
    return out;
}

/// A candidate is labeled 1 when one-to-one matching against the truth
/// pairs it with a ground-truth object.
inline std::vector<LabeledCandidate> label_candidates(const RefinedData& r, const World& truth, double threshold) {
    std::map<int, const WorldFrame*> by_frame;
    for (const auto& wf : truth.frames) by_frame[wf.frame] = &wf;
    std::vector<LabeledCandidate> out;
    for (const auto& f : r.frames) {
        auto it = by_frame.find(f.ego.frame);
        if (it == by_frame.end()) fail(ErrorKind::reference, "no truth for frame " + std::to_string(f.ego.frame));
        const auto rep = match_detections(truth_objects(*it->second), candidate_objects(f.candidates), threshold, true);
        std::set<int> matched;
        for (const auto& [_, h] : rep.matches) matched.insert(h);
        for (std::size_t i = 0; i < f.candidates.size(); ++i)
            out.push_back({f.candidates[i], f.features[i], matched.count(f.candidates[i].id) ? 1 : 0});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Run manifest

struct Manifest {
    std::string command;
    std::vector<std::string> inputs;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, double>> stage_seconds;
};

inline constexpr const char* tool_version = "0.1.0";

inline std::string manifest_json(const Manifest& m) {
    std::string stages = "{";
    for (std::size_t i = 0; i < m.stage_seconds.size(); ++i)
        stages += (i ? "," : "") + quote(m.stage_seconds[i].first) + ":" + format_double(m.stage_seconds[i].second);
    stages += "}";
    return ObjectWriter()
               .field("tool", "scenekg")
               .field("version", tool_version)
               .field("command", m.command)
               .field("inputs", m.inputs)
               .field("config_hash", m.config_hash)
               .field("seed", static_cast<std::int64_t>(m.seed))
               .raw("stage_seconds", stages)
               .str() +
           "\n";
}

/// Wall-clock timer for manifest stages.
class StageTimer {
public:
    StageTimer() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

}  // namespace scenekg
