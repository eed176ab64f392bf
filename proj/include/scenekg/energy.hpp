#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "scenekg/config.hpp"
#include "scenekg/error.hpp"
#include "scenekg/ingestion.hpp"
#include "scenekg/pooling.hpp"
#include "scenekg/schema.hpp"
#include "scenekg/union_find.hpp"

namespace scenekg {

/// Per-candidate inputs of the refinement energy.
struct CandidateFeatures {
    double s_tilde = 0.0;  // pooled confidence
    double k = 0.0;        // |provenance| / |detectors|
    EvidenceType g = EvidenceType::observed;
    double u = 0.0;        // temporal support in [0, 1]
    double d = 0.0;        // local evidence density
    double speed = 0.0;    // m/s, 0 when unknown
    Motion motion = Motion::static_;

    friend bool operator==(const CandidateFeatures&, const CandidateFeatures&) = default;
};

/// Bit per candidate, aligned with the pooled candidate order.
struct SelectionVector {
    std::vector<std::uint8_t> z;

    std::size_t size() const { return z.size(); }
    bool selected(std::size_t i) const { return z[i] != 0; }
    std::size_t count() const { return static_cast<std::size_t>(std::count(z.begin(), z.end(), 1)); }
    friend bool operator==(const SelectionVector&, const SelectionVector&) = default;
};

inline double logistic(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double p_moving(double speed, const EngineConfig& cfg) {
    return logistic(cfg.motion_slope * (speed - cfg.speed_threshold));
}

/// Temporal support, evidence density, corroboration, and kinematics for
/// each candidate of one frame.
inline std::vector<CandidateFeatures> extract_features(const std::vector<PooledCandidate>& candidates,
                                                       const std::vector<Tracklet>& tracklets,
                                                       const FrameBundle& raw_frame, int detector_count,
                                                       const Schema& schema, const EngineConfig& cfg) {
    if (detector_count <= 0) fail(ErrorKind::invalid_argument, "extract_features: detector count must be positive");
    std::map<int, const Tracklet*> by_id;
    for (const auto& t : tracklets) by_id[t.id] = &t;
    const auto index = tracklet_index(tracklets);
    const double window = 2.0 * cfg.temporal_window + 1.0;

    std::vector<CandidateFeatures> out;
    out.reserve(candidates.size());
    for (const auto& c : candidates) {
        CandidateFeatures f;
        f.s_tilde = c.confidence;
        f.k = static_cast<double>(c.provenance.size()) / detector_count;
        f.g = c.evidence_type;

        const Tracklet* t = nullptr;
        if (c.tracklet_id) {
            auto it = by_id.find(*c.tracklet_id);
            if (it != by_id.end()) t = it->second;
        } else if (c.evidence_type == EvidenceType::observed) {
            auto it = index.find({c.frame, c.id});
            if (it != index.end()) t = by_id.at(it->second);
        }
        // A tracklet with one observation is an unassociated detection.
        if (t && t->observed_count() < 2) t = nullptr;
        if (t) {
            int observed = 0;
            for (const auto& [frame, s] : t->states)
                if (s.observed() && std::abs(frame - c.frame) <= cfg.temporal_window) ++observed;
            f.u = std::min(1.0, observed / window);
        }

        int nearby = 0;
        for (const auto& [_, dets] : raw_frame.per_detector)
            for (const auto& d : dets)
                if (bev_distance(d.box.center, c.box.center) <= cfg.density_radius) ++nearby;
        f.d = static_cast<double>(nearby) / detector_count;

        if (c.velocity) {
            f.speed = c.velocity->norm();
        } else if (t) {
            const TrackletState* first = nullptr;
            const TrackletState* last = nullptr;
            for (const auto& [_, s] : t->states)
                if (s.observed()) {
                    if (!first) first = &s;
                    last = &s;
                }
            if (first && last && first != last && std::abs(last->timestamp - first->timestamp) > 0)
                f.speed = bev_distance(last->center, first->center) / std::abs(last->timestamp - first->timestamp);
        }

        if (c.status_label) f.motion = schema.motion_of(*c.status_label);
        else f.motion = p_moving(f.speed, cfg) > 0.5 ? Motion::moving : Motion::static_;
        out.push_back(f);
    }
    return out;
}

inline double energy_keep(const CandidateFeatures& f, const EnergyParams& p) {
    return -(p.scale(f.g) * f.s_tilde + p.offset(f.g) + p.alpha_src * f.k);
}

inline double energy_pair(const PooledCandidate& ci, const PooledCandidate& cj, const CandidateFeatures& fi,
                          const CandidateFeatures& fj, const EnergyParams& p) {
    const double d = bev_distance(ci.box.center, cj.box.center);
    const double r_dup = ci.class_label == cj.class_label ? std::exp(-d * d / (2.0 * p.dup_sigma * p.dup_sigma)) : 0.0;
    const double r_tmp = d > p.tmp_sep ? std::min(fi.u, fj.u) : 0.0;
    return p.lambda_dup * r_dup - p.lambda_tmp * r_tmp;
}

constexpr double probability_floor = 1e-6;

inline double energy_attr(const CandidateFeatures& f, const EngineConfig& cfg) {
    const double x = cfg.motion_slope * (f.speed - cfg.speed_threshold);
    const double p = f.motion == Motion::moving ? logistic(x) : logistic(-x);
    return -std::log(std::max(p, probability_floor));
}

inline double energy_sup(const CandidateFeatures& f, const EnergyParams& p) {
    return p.beta_tmp * std::max(p.m_tmp - f.u, 0.0) + p.beta_ctx * std::max(p.m_ctx - f.d, 0.0);
}

/// Pair terms with magnitude at or below this are dropped from the model,
/// which makes the energy separate exactly over interaction components.
constexpr double pair_edge_threshold = 1e-6;

/// Unary energies plus a dense symmetric pair matrix for one frame.
struct EnergyProblem {
    std::vector<double> unary;
    std::vector<double> pair;  // row-major n x n, zero diagonal

    std::size_t size() const { return unary.size(); }
    double pair_at(std::size_t i, std::size_t j) const { return pair[i * unary.size() + j]; }
    double& pair_at(std::size_t i, std::size_t j) { return pair[i * unary.size() + j]; }

    static EnergyProblem with_size(std::size_t n) {
        EnergyProblem p;
        p.unary.assign(n, 0.0);
        p.pair.assign(n * n, 0.0);
        return p;
    }

    void set_pair(std::size_t i, std::size_t j, double v) {
        if (std::abs(v) <= pair_edge_threshold) v = 0.0;
        pair_at(i, j) = v;
        pair_at(j, i) = v;
    }

    EnergyProblem scaled(double s) const {
        EnergyProblem p = *this;
        for (auto& v : p.unary) v *= s;
        for (auto& v : p.pair) v *= s;
        return p;
    }
};

inline EnergyProblem build_problem(const std::vector<PooledCandidate>& candidates,
                                   const std::vector<CandidateFeatures>& features, const EnergyParams& p,
                                   const EngineConfig& cfg) {
    if (candidates.size() != features.size())
        fail(ErrorKind::invalid_argument, "candidate and feature lists differ in length");
    const std::size_t n = candidates.size();
    EnergyProblem prob = EnergyProblem::with_size(n);
    for (std::size_t i = 0; i < n; ++i)
        prob.unary[i] = energy_keep(features[i], p) + p.w_attr * energy_attr(features[i], cfg) +
                        energy_sup(features[i], p);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            prob.set_pair(i, j, energy_pair(candidates[i], candidates[j], features[i], features[j], p));
    return prob;
}

inline double energy_total(const EnergyProblem& prob, const SelectionVector& z) {
    if (z.size() != prob.size()) fail(ErrorKind::invalid_argument, "selection length differs from candidate count");
    double e = 0.0;
    const std::size_t n = prob.size();
    for (std::size_t i = 0; i < n; ++i) {
        if (!z.selected(i)) continue;
        e += prob.unary[i];
        for (std::size_t j = i + 1; j < n; ++j)
            if (z.selected(j)) e += prob.pair_at(i, j);
    }
    return e;
}

inline double energy_total(const std::vector<PooledCandidate>& candidates,
                           const std::vector<CandidateFeatures>& features, const SelectionVector& z,
                           const EnergyParams& p, const EngineConfig& cfg) {
    if (z.size() != candidates.size()) fail(ErrorKind::invalid_argument, "selection length differs from candidate count");
    return energy_total(build_problem(candidates, features, p, cfg), z);
}

// ---------------------------------------------------------------------------
// Minimization

enum class SolveMethod { exact, local_search };

inline std::string_view to_string(SolveMethod m) { return m == SolveMethod::exact ? "exact" : "icm"; }

struct ComponentReport {
    std::vector<std::size_t> members;  // ascending candidate indices
    SolveMethod method = SolveMethod::exact;
    double energy = 0.0;
};

struct MinimizeResult {
    SelectionVector z;
    std::vector<ComponentReport> components;
    double energy = 0.0;
};

/// Connected components of the graph with an edge wherever the pair term is
/// non-zero, in ascending order of smallest member.
inline std::vector<std::vector<std::size_t>> interaction_components(const EnergyProblem& prob) {
    UnionFind uf(prob.size());
    for (std::size_t i = 0; i < prob.size(); ++i)
        for (std::size_t j = i + 1; j < prob.size(); ++j)
            if (prob.pair_at(i, j) != 0.0) uf.unite(i, j);
    return uf.groups();
}

namespace detail {

// Energy of a selection restricted to `members` (local bit i <-> members[i]).
inline double component_energy(const EnergyProblem& prob, const std::vector<std::size_t>& members,
                               const std::vector<std::uint8_t>& local) {
    double e = 0.0;
    for (std::size_t a = 0; a < members.size(); ++a) {
        if (!local[a]) continue;
        e += prob.unary[members[a]];
        for (std::size_t b = a + 1; b < members.size(); ++b)
            if (local[b]) e += prob.pair_at(members[a], members[b]);
    }
    return e;
}

/// All 2^k selections in increasing binary order (bit a <-> members[a]);
/// the first strictly-lowest wins.
inline std::vector<std::uint8_t> solve_exact(const EnergyProblem& prob, const std::vector<std::size_t>& members) {
    const std::size_t k = members.size();
    const std::size_t total = std::size_t{1} << k;
    std::vector<double> energy(total, 0.0);
    std::size_t best = 0;
    double best_e = 0.0;
    for (std::size_t mask = 1; mask < total; ++mask) {
        const std::size_t h = static_cast<std::size_t>(std::bit_width(mask)) - 1;
        const std::size_t rest = mask & ~(std::size_t{1} << h);
        double e = energy[rest] + prob.unary[members[h]];
        for (std::size_t r = rest; r; r &= r - 1) {
            const auto j = static_cast<std::size_t>(std::countr_zero(r));
            e += prob.pair_at(members[h], members[j]);
        }
        energy[mask] = e;
        if (e < best_e) {
            best_e = e;
            best = mask;
        }
    }
    std::vector<std::uint8_t> local(k, 0);
    for (std::size_t a = 0; a < k; ++a) local[a] = (best >> a) & 1U;
    return local;
}

inline void icm(const EnergyProblem& prob, const std::vector<std::size_t>& members, std::vector<std::uint8_t>& z) {
    const std::size_t k = members.size();
    std::vector<double> field(k, 0.0);  // unary + sum of pair terms to selected neighbors
    for (std::size_t a = 0; a < k; ++a) {
        field[a] = prob.unary[members[a]];
        for (std::size_t b = 0; b < k; ++b)
            if (b != a && z[b]) field[a] += prob.pair_at(members[a], members[b]);
    }
    bool changed = true;
    while (changed) {
        changed = false;
        for (std::size_t a = 0; a < k; ++a) {
            const double delta = z[a] ? -field[a] : field[a];
            if (delta < -1e-12) {
                z[a] = z[a] ? 0 : 1;
                const double sign = z[a] ? 1.0 : -1.0;
                for (std::size_t b = 0; b < k; ++b)
                    if (b != a) field[b] += sign * prob.pair_at(members[a], members[b]);
                changed = true;
            }
        }
    }
}

inline std::vector<std::uint8_t> solve_local(const EnergyProblem& prob, const std::vector<std::size_t>& members,
                                             int restarts, std::uint64_t seed) {
    const std::size_t k = members.size();
    std::vector<std::uint8_t> best(k, 0);
    double best_e = std::numeric_limits<double>::infinity();
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution coin(0.5);
    for (int run = 0; run <= restarts; ++run) {
        std::vector<std::uint8_t> z(k, 0);
        for (std::size_t a = 0; a < k; ++a) z[a] = run == 0 ? (prob.unary[members[a]] < 0.0) : coin(rng);
        icm(prob, members, z);
        const double e = component_energy(prob, members, z);
        if (e < best_e) {
            best_e = e;
            best = z;
        }
    }
    return best;
}

}  // namespace detail

/// Exact enumeration on every interaction component of at most
/// cfg.k_exact candidates; iterated conditional modes with restarts on
/// larger ones.
inline MinimizeResult minimize(const EnergyProblem& prob, const EngineConfig& cfg) {
    MinimizeResult res;
    res.z.z.assign(prob.size(), 0);
    const auto comps = interaction_components(prob);
    for (std::size_t ci = 0; ci < comps.size(); ++ci) {
        const auto& members = comps[ci];
        ComponentReport rep;
        rep.members = members;
        std::vector<std::uint8_t> local;
        if (members.size() <= static_cast<std::size_t>(cfg.k_exact)) {
            rep.method = SolveMethod::exact;
            local = detail::solve_exact(prob, members);
        } else {
            rep.method = SolveMethod::local_search;
            const std::uint64_t seed = cfg.seed * 0x9E3779B97F4A7C15ULL + members.front() + 1;
            local = detail::solve_local(prob, members, cfg.restarts, seed);
        }
        rep.energy = detail::component_energy(prob, members, local);
        for (std::size_t a = 0; a < members.size(); ++a) res.z.z[members[a]] = local[a];
        res.components.push_back(std::move(rep));
    }
    res.energy = energy_total(prob, res.z);
    return res;
}

inline SelectionVector minimize(const std::vector<PooledCandidate>& candidates,
                                const std::vector<CandidateFeatures>& features, const EnergyParams& p,
                                const EngineConfig& cfg) {
    return minimize(build_problem(candidates, features, p, cfg), cfg).z;
}

inline std::string diagnostic_record(int frame, const MinimizeResult& r) {
    std::vector<int> sizes;
    std::vector<std::string> methods;
    for (const auto& c : r.components) {
        sizes.push_back(static_cast<int>(c.members.size()));
        methods.emplace_back(to_string(c.method));
    }
    return ObjectWriter()
        .field("record_type", "diagnostic")
        .field("frame", frame)
        .field("component_sizes", sizes)
        .field("methods", methods)
        .field("selected", r.z.count())
        .field("energy", r.energy)
        .str();
}

}  // namespace scenekg
