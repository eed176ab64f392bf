#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <vector>

#include "scenekg/config.hpp"
#include "scenekg/energy.hpp"
#include "scenekg/error.hpp"
#include "scenekg/json_io.hpp"
#include "scenekg/pooling.hpp"

namespace scenekg {

/// A pooled candidate with its features and a binary keep label.
struct LabeledCandidate {
    PooledCandidate candidate;
    CandidateFeatures features;
    int label = 0;
};

/// Grid used to select the interaction and support weights.
struct FitGrid {
    std::vector<double> lambda_dup{1.0, 4.0, 8.0};
    std::vector<double> lambda_tmp{0.0, 0.5};
    std::vector<double> beta_tmp{0.0, 1.0};
    std::vector<double> beta_ctx{0.0, 0.5};
};

struct SelectionCounts {
    int tp = 0;
    int fp = 0;
    int fn = 0;

    double f1() const {
        const int denom = 2 * tp + fp + fn;
        return denom == 0 ? 0.0 : 2.0 * tp / denom;
    }
};

namespace detail {

// Mean log-loss of keep ~ logistic(a_g s + b_g + alpha k), parameters
// theta = (a_obs, b_obs, a_rec, b_rec, alpha).
inline std::array<double, 5> logloss_gradient(const std::vector<const LabeledCandidate*>& data,
                                              const std::array<double, 5>& theta) {
    std::array<double, 5> g{};
    for (const auto* s : data) {
        const int t = static_cast<int>(s->features.g);
        const double z = theta[2 * t] * s->features.s_tilde + theta[2 * t + 1] + theta[4] * s->features.k;
        const double r = logistic(z) - s->label;
        g[2 * t] += r * s->features.s_tilde;
        g[2 * t + 1] += r;
        g[4] += r * s->features.k;
    }
    for (auto& v : g) v /= static_cast<double>(data.size());
    return g;
}

inline SelectionCounts score_frames(const std::map<int, std::vector<const LabeledCandidate*>>& frames,
                                    const EnergyParams& params, const EngineConfig& cfg) {
    SelectionCounts counts;
    for (const auto& [_, items] : frames) {
        std::vector<PooledCandidate> cands;
        std::vector<CandidateFeatures> feats;
        for (const auto* it : items) {
            cands.push_back(it->candidate);
            feats.push_back(it->features);
        }
        const auto z = minimize(build_problem(cands, feats, params, cfg), cfg).z;
        for (std::size_t i = 0; i < items.size(); ++i) {
            const bool keep = z.selected(i);
            if (keep && items[i]->label) ++counts.tp;
            else if (keep) ++counts.fp;
            else if (items[i]->label) ++counts.fn;
        }
    }
    return counts;
}

}  // namespace detail

/// Unary calibration by logistic regression on an 80% split; pairwise and
/// support weights by grid search maximizing selection F1 on the held-out
/// 20%. Deterministic for a given cfg.seed.
inline EnergyParams fit_energy_params(const std::vector<LabeledCandidate>& labeled, const EngineConfig& cfg,
                                      const FitGrid& grid = {}) {
    if (labeled.size() < 50) fail(ErrorKind::invalid_argument, "fit_energy_params needs at least 50 samples");
    int positives = 0;
    for (const auto& s : labeled) positives += s.label ? 1 : 0;
    if (positives == 0 || positives == static_cast<int>(labeled.size()))
        fail(ErrorKind::degenerate_supervision, "labels contain a single class");

    // Split by frame when there are several frames, otherwise by sample.
    std::mt19937_64 rng(cfg.seed);
    std::set<int> frame_set;
    for (const auto& s : labeled) frame_set.insert(s.candidate.frame);
    std::vector<const LabeledCandidate*> train, held;
    if (frame_set.size() >= 2) {
        std::vector<int> frames(frame_set.begin(), frame_set.end());
        std::shuffle(frames.begin(), frames.end(), rng);
        const std::size_t n_held = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.2 * frames.size())));
        const std::set<int> held_frames(frames.begin(), frames.begin() + static_cast<long>(n_held));
        for (const auto& s : labeled) (held_frames.count(s.candidate.frame) ? held : train).push_back(&s);
    } else {
        std::vector<std::size_t> order(labeled.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), rng);
        const std::size_t n_held = static_cast<std::size_t>(std::lround(0.2 * labeled.size()));
        for (std::size_t i = 0; i < order.size(); ++i) (i < n_held ? held : train).push_back(&labeled[order[i]]);
    }
    if (train.empty()) train = held;

    std::array<bool, 2> seen{false, false};
    for (const auto* s : train) seen[static_cast<int>(s->features.g)] = true;
    EnergyParams out = cfg.energy;
    std::array<double, 5> theta{seen[0] ? 0.0 : out.a[0], seen[0] ? 0.0 : out.b[0],
                                seen[1] ? 0.0 : out.a[1], seen[1] ? 0.0 : out.b[1], 0.0};

    // Step 1/L with L bounded by a quarter of the trace of the second-moment
    // matrix of the regressors.
    double trace = 0.0;
    for (const auto* s : train) trace += s->features.s_tilde * s->features.s_tilde + 1.0 + s->features.k * s->features.k;
    trace /= static_cast<double>(train.size());
    const double step = 1.0 / (0.25 * trace);
    for (int iter = 0; iter < 10000; ++iter) {
        const auto g = detail::logloss_gradient(train, theta);
        double norm = 0.0;
        for (double v : g) norm += v * v;
        if (std::sqrt(norm) <= 1e-6) break;
        for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= step * g[i];
    }
    out.a = {theta[0], theta[2]};
    out.b = {theta[1], theta[3]};
    out.alpha_src = theta[4];

    if (held.empty()) return out;
    std::map<int, std::vector<const LabeledCandidate*>> held_frames;
    for (const auto* s : held) held_frames[s->candidate.frame].push_back(s);

    EnergyParams best = out;
    double best_f1 = -1.0;
    for (double ld : grid.lambda_dup)
        for (double lt : grid.lambda_tmp)
            for (double bt : grid.beta_tmp)
                for (double bc : grid.beta_ctx) {
                    EnergyParams p = out;
                    p.lambda_dup = ld;
                    p.lambda_tmp = lt;
                    p.beta_tmp = bt;
                    p.beta_ctx = bc;
                    const double f1 = detail::score_frames(held_frames, p, cfg).f1();
                    if (f1 > best_f1) {
                        best_f1 = f1;
                        best = p;
                    }
                }
    return best;
}

// Line-delimited labeled-candidate records.

inline std::string labeled_record(const LabeledCandidate& s) {
    const auto& c = s.candidate;
    const auto& f = s.features;
    return ObjectWriter()
        .field("record_type", "labeled")
        .field("frame", c.frame)
        .field("id", c.id)
        .field("cls", c.class_label)
        .field("cx", c.box.center.x)
        .field("cy", c.box.center.y)
        .field("s_tilde", f.s_tilde)
        .field("k", f.k)
        .field("g", to_string(f.g))
        .field("u", f.u)
        .field("d", f.d)
        .field("speed", f.speed)
        .field("motion", to_string(f.motion))
        .field("label", s.label)
        .str();
}

inline std::vector<LabeledCandidate> parse_labeled(std::string_view text) {
    std::vector<LabeledCandidate> out;
    for_each_record(text, [&](const json& obj, int) {
        if (get_string(obj, "record_type") != "labeled") fail(ErrorKind::parse, "expected record_type 'labeled'");
        LabeledCandidate s;
        s.candidate.frame = get_int(obj, "frame");
        s.candidate.id = get_int(obj, "id");
        s.candidate.class_label = get_string(obj, "cls");
        s.candidate.box.center = {get_number(obj, "cx"), get_number(obj, "cy"), 0.0};
        s.features.s_tilde = get_number(obj, "s_tilde");
        s.features.k = get_number(obj, "k");
        s.features.g = evidence_type_from_string(get_string(obj, "g"));
        s.features.u = get_number(obj, "u");
        s.features.d = get_number(obj, "d");
        s.features.speed = get_number(obj, "speed");
        const auto m = get_string(obj, "motion");
        if (m != "moving" && m != "static") fail(ErrorKind::parse, "field 'motion' must be moving or static");
        s.features.motion = m == "moving" ? Motion::moving : Motion::static_;
        s.label = get_int(obj, "label");
        if (s.label != 0 && s.label != 1) fail(ErrorKind::parse, "field 'label' must be 0 or 1");
        s.candidate.evidence_type = s.features.g;
        out.push_back(std::move(s));
    });
    return out;
}

}  // namespace scenekg
