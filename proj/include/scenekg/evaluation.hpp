#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "scenekg/algebra.hpp"
#include "scenekg/error.hpp"
#include "scenekg/geometry.hpp"
#include "scenekg/json_io.hpp"
#include "scenekg/synth.hpp"

namespace scenekg {

/// Anything with an id, a class and a BEV position: ground truth or a
/// hypothesis.
struct EvalObject {
    int id = 0;
    std::string class_label;
    Vec3 center;
};

struct MatchCounts {
    int tp = 0;
    int fp = 0;
    int fn = 0;

    // 0/0 is reported as 0.
    double precision() const { return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / (tp + fp); }
    double recall() const { return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / (tp + fn); }
    double f1() const { return 2 * tp + fp + fn == 0 ? 0.0 : 2.0 * tp / (2 * tp + fp + fn); }

    MatchCounts& operator+=(const MatchCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }
};

struct MatchReport {
    std::map<std::string, MatchCounts> per_class;
    MatchCounts overall;
    int gt_total = 0;
    int gt_covered = 0;
    double threshold = 2.0;
    bool class_aware = true;
    std::vector<std::pair<int, int>> matches;  // (gt id, hyp id)

    double coverage() const { return gt_total == 0 ? 0.0 : static_cast<double>(gt_covered) / gt_total; }

    /// Sums counts of another frame's report. Match pairs are not kept.
    MatchReport& operator+=(const MatchReport& o) {
        for (const auto& [c, m] : o.per_class) per_class[c] += m;
        overall += o.overall;
        gt_total += o.gt_total;
        gt_covered += o.gt_covered;
        return *this;
    }
};

/// Greedy one-to-one matching by ascending BEV distance, ties broken by
/// (gt id, hyp id). A ground-truth object counts as covered when any
/// hypothesis lies within the threshold, matched or not.
inline MatchReport match_detections(const std::vector<EvalObject>& gt, const std::vector<EvalObject>& hyp,
                                    double threshold = 2.0, bool class_aware = true) {
    if (!(threshold > 0)) fail(ErrorKind::invalid_argument, "matching threshold must be positive");
    MatchReport r;
    r.threshold = threshold;
    r.class_aware = class_aware;
    struct Cand {
        double d;
        int gt_id;
        int hyp_id;
        std::size_t gi;
        std::size_t hi;
    };
    std::vector<Cand> cands;
    std::vector<bool> covered(gt.size(), false);
    for (std::size_t gi = 0; gi < gt.size(); ++gi)
        for (std::size_t hi = 0; hi < hyp.size(); ++hi) {
            if (class_aware && gt[gi].class_label != hyp[hi].class_label) continue;
            const double d = bev_distance(gt[gi].center, hyp[hi].center);
            if (d > threshold) continue;
            covered[gi] = true;
            cands.push_back({d, gt[gi].id, hyp[hi].id, gi, hi});
        }
    std::sort(cands.begin(), cands.end(),
              [](const Cand& a, const Cand& b) { return std::tie(a.d, a.gt_id, a.hyp_id) < std::tie(b.d, b.gt_id, b.hyp_id); });
    std::vector<bool> gt_used(gt.size(), false), hyp_used(hyp.size(), false);
    for (const auto& c : cands) {
        if (gt_used[c.gi] || hyp_used[c.hi]) continue;
        gt_used[c.gi] = hyp_used[c.hi] = true;
        r.matches.emplace_back(c.gt_id, c.hyp_id);
    }
    std::sort(r.matches.begin(), r.matches.end());
    for (std::size_t gi = 0; gi < gt.size(); ++gi) {
        auto& m = r.per_class[gt[gi].class_label];
        (gt_used[gi] ? m.tp : m.fn) += 1;
        (gt_used[gi] ? r.overall.tp : r.overall.fn) += 1;
        r.gt_covered += covered[gi] ? 1 : 0;
    }
    for (std::size_t hi = 0; hi < hyp.size(); ++hi)
        if (!hyp_used[hi]) {
            r.per_class[hyp[hi].class_label].fp += 1;
            r.overall.fp += 1;
        }
    r.gt_total = static_cast<int>(gt.size());
    return r;
}

inline std::string match_report_json(const MatchReport& r) {
    auto counts = [](const MatchCounts& m) {
        return ObjectWriter()
            .field("tp", m.tp)
            .field("fp", m.fp)
            .field("fn", m.fn)
            .field("precision", m.precision())
            .field("recall", m.recall())
            .field("f1", m.f1())
            .str();
    };
    std::string per = "{";
    bool first = true;
    for (const auto& [c, m] : r.per_class) {
        per += (first ? "" : ",") + quote(c) + ":" + counts(m);
        first = false;
    }
    per += "}";
    return ObjectWriter()
        .field("threshold_m", r.threshold)
        .field("class_aware", r.class_aware)
        .field("zero_division", "0/0 is reported as 0")
        .raw("overall", counts(r.overall))
        .raw("per_class", per)
        .field("gt_total", r.gt_total)
        .field("gt_covered", r.gt_covered)
        .field("coverage", r.coverage())
        .str();
}

// ---------------------------------------------------------------------------
// QA accuracy

struct AnswerRecord {
    Answer answer;
    double latency_s = 0.0;
};

struct AccuracyCell {
    int correct = 0;
    int total = 0;
    std::optional<double> accuracy() const {
        if (total == 0) return std::nullopt;
        return static_cast<double>(correct) / total;
    }
};

struct QaReport {
    std::map<std::string, AccuracyCell> per_category;  // all five categories, possibly empty
    std::map<std::string, AccuracyCell> per_hops;      // H0, H1
    AccuracyCell overall;
    std::optional<double> latency_mean;
    std::optional<double> latency_p50;
    std::optional<double> latency_p95;
    std::vector<std::size_t> failures;  // item indices with a wrong answer
};

namespace detail {

// Nearest-rank percentile of sorted values.
inline double percentile(const std::vector<double>& sorted, double q) {
    const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size())));
    return sorted[std::min(sorted.size() - 1, rank == 0 ? 0 : rank - 1)];
}

}  // namespace detail

/// Exact-match accuracy: rendered strings must be equal.
inline QaReport eval_qa(const std::vector<QaItem>& items, const std::vector<AnswerRecord>& answers) {
    if (items.size() != answers.size())
        fail(ErrorKind::invalid_argument, "eval_qa: " + std::to_string(items.size()) + " items but " +
                                              std::to_string(answers.size()) + " answers");
    QaReport r;
    for (auto c : qa_category_names) r.per_category[std::string(c)];
    r.per_hops["H0"];
    r.per_hops["H1"];
    std::vector<double> lat;
    for (std::size_t i = 0; i < items.size(); ++i) {
        const bool ok = items[i].answer.render() == answers[i].answer.render();
        for (AccuracyCell* cell : {&r.per_category[std::string(to_string(items[i].category))],
                                   &r.per_hops[hops_label(items[i].hops)], &r.overall}) {
            cell->total += 1;
            cell->correct += ok ? 1 : 0;
        }
        if (!ok) r.failures.push_back(i);
        lat.push_back(answers[i].latency_s);
    }
    if (!lat.empty()) {
        std::sort(lat.begin(), lat.end());
        double sum = 0.0;
        for (double v : lat) sum += v;
        r.latency_mean = sum / static_cast<double>(lat.size());
        r.latency_p50 = detail::percentile(lat, 0.50);
        r.latency_p95 = detail::percentile(lat, 0.95);
    }
    return r;
}

namespace detail {

inline std::string optional_number(const std::optional<double>& v) { return v ? format_double(*v) : "null"; }

inline std::string cell_json(const AccuracyCell& c) {
    return ObjectWriter()
        .field("correct", c.correct)
        .field("total", c.total)
        .raw("accuracy", optional_number(c.accuracy()))
        .str();
}

inline std::string cells_json(const std::map<std::string, AccuracyCell>& cells, const std::vector<std::string>& order) {
    std::string out = "{";
    for (std::size_t i = 0; i < order.size(); ++i) out += (i ? "," : "") + quote(order[i]) + ":" + cell_json(cells.at(order[i]));
    return out + "}";
}

}  // namespace detail

/// Latency is left out unless asked for, so that reports of repeated runs
/// compare byte for byte.
inline std::string qa_report_json(const QaReport& r, bool with_latency) {
    std::vector<std::string> cats;
    for (auto c : qa_category_names) cats.emplace_back(c);
    ObjectWriter w;
    w.raw("overall", detail::cell_json(r.overall))
        .raw("per_category", detail::cells_json(r.per_category, cats))
        .raw("per_hops", detail::cells_json(r.per_hops, {"H0", "H1"}));
    if (with_latency)
        w.raw("latency_s", ObjectWriter()
                               .raw("mean", detail::optional_number(r.latency_mean))
                               .raw("p50", detail::optional_number(r.latency_p50))
                               .raw("p95", detail::optional_number(r.latency_p95))
                               .str());
    return w.str();
}

inline std::string qa_report_table(const QaReport& r, const std::string& title) {
    auto row = [](const std::string& name, const AccuracyCell& c) {
        char buf[128];
        const auto a = c.accuracy();
        if (a) std::snprintf(buf, sizeof buf, "  %-12s %6d / %-6d %7.2f%%\n", name.c_str(), c.correct, c.total, 100.0 * *a);
        else std::snprintf(buf, sizeof buf, "  %-12s %6d / %-6d %8s\n", name.c_str(), c.correct, c.total, "-");
        return std::string(buf);
    };
    std::string out = title + "\n";
    for (auto c : qa_category_names) out += row(std::string(c), r.per_category.at(std::string(c)));
    out += row("H0", r.per_hops.at("H0"));
    out += row("H1", r.per_hops.at("H1"));
    out += row("overall", r.overall);
    return out;
}

inline std::string match_report_table(const MatchReport& r, const std::string& title) {
    std::string out = title + "\n";
    char buf[160];
    auto row = [&](const std::string& name, const MatchCounts& m) {
        std::snprintf(buf, sizeof buf, "  %-12s tp %5d  fp %5d  fn %5d  P %.3f  R %.3f  F1 %.3f\n", name.c_str(), m.tp, m.fp,
                      m.fn, m.precision(), m.recall(), m.f1());
        out += buf;
    };
    for (const auto& [c, m] : r.per_class) row(c, m);
    row("overall", r.overall);
    std::snprintf(buf, sizeof buf, "  coverage %.4f (%d / %d)\n", r.coverage(), r.gt_covered, r.gt_total);
    out += buf;
    return out;
}

}  // namespace scenekg
