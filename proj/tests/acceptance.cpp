// Acceptance checks 1-12. One line per criterion; exit status 1 if any fails.

#include <httplib.h>

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dsl_fuzz.hpp"
#include "scenekg/pipeline.hpp"
#include "scenekg/remote_planner.hpp"
#include "scenekg/session.hpp"
#include "scenekg/synth.hpp"
#include "test_util.hpp"

using namespace scenekg;
using testutil::schema;

namespace {

// Tolerances and limits.
constexpr double kEnergyTol = 1e-9;
constexpr double kRecoveryTol = 1e-9;
constexpr double kSolverBudgetS = 60.0;
constexpr double kCoverageBudgetS = 30.0;
constexpr double kRefineBudgetS = 120.0;
constexpr double kQaBudgetS = 10.0;
constexpr double kMinF1GainPoints = 5.0;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

// ---------------------------------------------------------------------------
// 1-3: energy minimization

EnergyProblem random_problem(std::mt19937_64& rng, std::size_t n, double density) {
    std::uniform_real_distribution<double> unary(-2.0, 2.0), pair(-4.0, 4.0), unit(0.0, 1.0);
    auto p = EnergyProblem::with_size(n);
    for (auto& u : p.unary) u = unary(rng);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (unit(rng) < density) p.set_pair(i, j, pair(rng));
    return p;
}

double selection_energy(const EnergyProblem& p, std::uint32_t mask) {
    double e = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (!(mask >> i & 1u)) continue;
        e += p.unary[i];
        for (std::size_t j = i + 1; j < p.size(); ++j)
            if (mask >> j & 1u) e += p.pair[i * p.size() + j];
    }
    return e;
}

Outcome criterion1() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(1001);
    std::uniform_real_distribution<double> density(0.05, 1.0);
    EngineConfig cfg;
    int bad = 0;
    double worst = 0.0;
    for (int i = 0; i < 500; ++i) {
        const std::size_t n = 1 + static_cast<std::size_t>(i % 14);
        const auto p = random_problem(rng, n, density(rng));
        double best = 0.0;  // the empty selection
        for (std::uint32_t m = 1; m < (1u << n); ++m) best = std::min(best, selection_energy(p, m));
        const auto r = minimize(p, cfg);
        std::uint32_t mask = 0;
        for (std::size_t k = 0; k < n; ++k) mask |= static_cast<std::uint32_t>(r.z.z[k] ? 1 : 0) << k;
        const double got = selection_energy(p, mask);
        worst = std::max(worst, std::abs(got - best));
        if (std::abs(got - best) > kEnergyTol || std::abs(r.energy - got) > kEnergyTol) ++bad;
    }
    const double dt = seconds_since(t0);
    return {bad == 0 && dt < kSolverBudgetS, fmt("500 instances, %d off the brute-force minimum, max gap %.2e, %.2fs", bad, worst, dt)};
}

Outcome criterion2() {
    std::mt19937_64 rng(1002);
    std::uniform_int_distribution<std::size_t> size(10, 60);
    EngineConfig cfg;
    int bad = 0, large = 0;
    for (int i = 0; i < 200; ++i) {
        const std::size_t n = size(rng);
        // Sparse enough to split, dense enough that some components exceed k_exact.
        const auto p = random_problem(rng, n, (i % 4 == 0 ? 3.0 : 1.2) / static_cast<double>(n));
        const auto r = minimize(p, cfg);
        std::vector<int> owner(n, -1);
        double sum = 0.0;
        bool ok = true;
        for (std::size_t c = 0; c < r.components.size(); ++c) {
            const auto& members = r.components[c].members;
            if (members.size() > static_cast<std::size_t>(cfg.k_exact)) ++large;
            double e = 0.0;
            for (std::size_t a = 0; a < members.size(); ++a) {
                if (owner[members[a]] != -1) ok = false;
                owner[members[a]] = static_cast<int>(c);
                if (!r.z.z[members[a]]) continue;
                e += p.unary[members[a]];
                for (std::size_t b = a + 1; b < members.size(); ++b)
                    if (r.z.z[members[b]]) e += p.pair_at(members[a], members[b]);
            }
            if (std::abs(e - r.components[c].energy) > kEnergyTol) ok = false;
            sum += e;
        }
        for (std::size_t a = 0; a < n; ++a) {
            if (owner[a] == -1) ok = false;
            for (std::size_t b = a + 1; b < n; ++b)
                if (p.pair_at(a, b) != 0.0 && owner[a] != owner[b]) ok = false;
        }
        double total = 0.0;
        for (std::size_t a = 0; a < n; ++a) {
            if (!r.z.z[a]) continue;
            total += p.unary[a];
            for (std::size_t b = a + 1; b < n; ++b)
                if (r.z.z[b]) total += p.pair_at(a, b);
        }
        if (std::abs(total - sum) > kEnergyTol * static_cast<double>(n) || std::abs(r.energy - total) > kEnergyTol * n) ok = false;
        bad += ok ? 0 : 1;
    }
    return {bad == 0 && large > 0, fmt("200 instances, %d mismatched, %d components solved by local search", bad, large)};
}

Outcome criterion3() {
    EngineConfig cfg;
    const EnergyParams p10 = cfg.energy.scaled(10.0);
    int frames = 0, differ = 0;
    for (std::uint64_t seed = 300; frames < 100; ++seed) {
        auto spec = default_world_spec(seed);
        for (auto& d : spec.detectors) {
            d.fp_rate = 1.0;
            d.duplicate_prob = 0.1;
        }
        const auto world = generate_world(spec, schema());
        const auto refined = run_refine(run_pool(simulate_detectors(world, spec, schema()), cfg), schema(), cfg);
        for (const auto& rf : refined.frames) {
            if (frames == 100) break;
            const auto a = minimize(build_problem(rf.candidates, rf.features, cfg.energy, cfg), cfg);
            const auto b = minimize(build_problem(rf.candidates, rf.features, p10, cfg), cfg);
            differ += a.z.z == b.z.z ? 0 : 1;
            ++frames;
        }
    }
    return {differ == 0, fmt("%d synthetic frames, %d selections changed under x10", frames, differ)};
}

// ---------------------------------------------------------------------------
// 4-6: pooling and refinement on synthetic worlds

DetectorProfile perfect_detector(const std::string& id) {
    DetectorProfile d;
    d.id = id;
    d.miss_base = 0.0;
    d.conf_true = {8.0, 2.0};
    d.reports_velocity = true;
    d.reports_status = true;
    return d;
}

Outcome criterion4() {
    EngineConfig cfg;
    int cases = 0, recovered = 0, extras = 0;
    double worst = 0.0;
    for (std::uint64_t seed = 0; cases < 1000; ++seed) {
        WorldSpec spec = default_world_spec(4000 + seed);
        spec.frames = 5;
        spec.entity_min = spec.entity_max = 4;
        spec.x_range = {-80.0, 80.0};
        spec.y_range = {-80.0, 80.0};
        spec.min_separation = 35.0;
        spec.ego_speed = 3.0;
        spec.occlusion = {};
        for (auto& [_, c] : spec.classes) c.p_moving = 1.0;
        spec.detectors = {perfect_detector("lidar")};
        const auto world = generate_world(spec, schema());
        auto bundles = simulate_detectors(world, spec, schema());
        // Entity e is hidden at one interior frame.
        std::set<std::pair<int, int>> hidden;
        for (int e = 3; e >= 0; --e) {
            const int f = 1 + e % 3;
            auto& dets = bundles[static_cast<std::size_t>(f)].per_detector["lidar"];
            dets.erase(dets.begin() + e);
            hidden.insert({e, f});
        }
        const auto pooled = run_pool(bundles, cfg);
        for (const auto& [e, f] : hidden) {
            const auto& wf = world.frames[static_cast<std::size_t>(f)];
            const Vec3 truth = point_to_ego(wf.entities[static_cast<std::size_t>(e)].center, wf.ego);
            int hits = 0;
            double d = 0.0;
            for (const auto& c : pooled.frames[static_cast<std::size_t>(f)].candidates) {
                if (c.evidence_type != EvidenceType::recovered || bev_distance(c.box.center, truth) > 1.0) continue;
                ++hits;
                d = std::max({std::abs(c.box.center.x - truth.x), std::abs(c.box.center.y - truth.y),
                              std::abs(c.box.center.z - truth.z)});
            }
            ++cases;
            if (hits == 1 && d <= kRecoveryTol) ++recovered;
            if (hits == 1) worst = std::max(worst, d);
        }
        for (const auto& pf : pooled.frames) {
            int got = 0, want = 0;
            for (const auto& c : pf.candidates) got += c.evidence_type == EvidenceType::recovered ? 1 : 0;
            for (const auto& h : hidden) want += h.second == pf.raw.frame ? 1 : 0;
            extras += std::max(0, got - want);
        }
    }
    return {recovered == cases && extras == 0,
            fmt("%d/%d occluded centers recovered, max error %.2e, %d spurious recoveries", recovered, cases, worst, extras)};
}

Outcome criterion5() {
    const auto t0 = std::chrono::steady_clock::now();
    EngineConfig cfg;
    WorldSpec spec = default_world_spec(5);
    spec.frames = 20;
    for (auto& d : spec.detectors) {
        d.miss_base = 0.4;
        d.miss_slope = 0.0;
    }
    const auto world = generate_world(spec, schema());
    const auto bundles = simulate_detectors(world, spec, schema());
    const auto pooled = run_pool(bundles, cfg);
    int at_least = 0, strictly = 0;
    double mean_pooled = 0.0, mean_best = 0.0;
    for (std::size_t f = 0; f < world.frames.size(); ++f) {
        const auto gt = truth_objects(world.frames[f]);
        double best = 0.0;
        for (const auto& [_, dets] : bundles[f].per_detector) {
            std::vector<EvalObject> hyp;
            for (std::size_t i = 0; i < dets.size(); ++i) hyp.push_back({static_cast<int>(i), dets[i].class_label, dets[i].box.center});
            best = std::max(best, match_detections(gt, hyp).coverage());
        }
        const double cov = match_detections(gt, candidate_objects(pooled.frames[f].candidates)).coverage();
        at_least += cov >= best ? 1 : 0;
        strictly += cov > best ? 1 : 0;
        mean_pooled += cov / static_cast<double>(world.frames.size());
        mean_best += best / static_cast<double>(world.frames.size());
    }
    const int n = static_cast<int>(world.frames.size());
    const double dt = seconds_since(t0);
    return {at_least == n && 2 * strictly >= n && dt < kCoverageBudgetS,
            fmt("pooled >= best single on %d/%d frames, strictly on %d, mean %.3f vs %.3f, %.2fs", at_least, n, strictly,
                mean_pooled, mean_best, dt)};
}

struct Split {
    std::vector<World> worlds;
    std::vector<PooledData> pooled;
};

Split make_split(std::uint64_t first_seed, int count, const EngineConfig& cfg) {
    Split s;
    for (std::uint64_t seed = first_seed; seed < first_seed + static_cast<std::uint64_t>(count); ++seed) {
        WorldSpec spec = default_world_spec(seed);
        for (auto& d : spec.detectors) {
            d.fp_rate = 2.0;
            d.duplicate_prob = 0.1;
        }
        s.worlds.push_back(generate_world(spec, schema()));
        s.pooled.push_back(run_pool(simulate_detectors(s.worlds.back(), spec, schema()), cfg));
    }
    return s;
}

MatchCounts threshold_counts(const Split& s, double t) {
    MatchCounts m;
    for (std::size_t i = 0; i < s.worlds.size(); ++i)
        for (std::size_t f = 0; f < s.worlds[i].frames.size(); ++f) {
            std::vector<EvalObject> hyp;
            for (const auto& c : s.pooled[i].frames[f].candidates)
                if (c.confidence >= t) hyp.push_back({c.id, c.class_label, c.box.center});
            m += match_detections(truth_objects(s.worlds[i].frames[f]), hyp).overall;
        }
    return m;
}

MatchCounts refined_counts(const Split& s, const EngineConfig& cfg) {
    MatchCounts m;
    for (std::size_t i = 0; i < s.worlds.size(); ++i) {
        const auto r = run_refine(s.pooled[i], schema(), cfg);
        for (std::size_t f = 0; f < s.worlds[i].frames.size(); ++f) {
            const auto& rf = r.frames[f];
            m += match_detections(truth_objects(s.worlds[i].frames[f]), candidate_objects(rf.candidates, &rf.result.z)).overall;
        }
    }
    return m;
}

Outcome criterion6(std::string& note) {
    const auto t0 = std::chrono::steady_clock::now();
    EngineConfig cfg;
    const Split validation = make_split(100, 5, cfg);
    const Split test = make_split(200, 10, cfg);
    double best_f1 = -1.0, best_t = 0.0;
    for (int k = 0; k <= 100; ++k) {
        const double f1 = threshold_counts(validation, k / 100.0).f1();
        if (f1 > best_f1) {
            best_f1 = f1;
            best_t = k / 100.0;
        }
    }
    const double base = threshold_counts(test, best_t).f1() * 100.0;
    const double refined = refined_counts(test, cfg).f1() * 100.0;
    const double dt = seconds_since(t0);

    // Not counted: the same comparison with the temporal reward switched off.
    EngineConfig no_tmp = cfg;
    no_tmp.energy.lambda_tmp = 0.0;
    const double refined_no_tmp = refined_counts(test, no_tmp).f1() * 100.0;
    note = fmt("lambda_tmp=0: refined F1 %.2f vs baseline %.2f (%+.2f)", refined_no_tmp, base, refined_no_tmp - base);

    return {refined - base >= kMinF1GainPoints && dt < kRefineBudgetS,
            fmt("refined F1 %.2f vs best-threshold (%.2f) baseline %.2f, gain %+.2f points (need %+.1f), %.2fs", refined,
                best_t, base, refined - base, kMinF1GainPoints, dt)};
}

// ---------------------------------------------------------------------------
// 7-11: query path

Outcome criterion7() {
    const auto t0 = std::chrono::steady_clock::now();
    EngineConfig cfg;
    int items = 0, correct = 0;
    for (std::uint64_t seed = 700; items < 1000; ++seed) {
        const auto spec = default_world_spec(seed);
        const auto world = generate_world(spec, schema());
        const auto kg = build_gt_kg(world.frames[static_cast<std::size_t>(spec.query_frame())], schema(), cfg);
        std::string corpus;
        for (const auto& q : generate_qa(kg, schema(), 250, seed, cfg)) corpus += qa_record(q) + "\n";
        const auto reloaded_kg = kg_from_json(kg_to_json(kg), &schema());
        for (const auto& q : parse_qa(corpus, schema())) {
            ++items;
            const auto r = dsl::run_program(q.program, reloaded_kg, cfg);
            correct += r.answer == q.answer && r.answer.render() == q.answer.render() ? 1 : 0;
        }
    }
    const double dt = seconds_since(t0);
    return {correct == items && dt < kQaBudgetS, fmt("%d/%d gold programs exact on reloaded graphs, %.2fs", correct, items, dt)};
}

// Direction of b seen from a, from the degree table alone.
Relation naive_direction(const SceneKg& kg, const KgNode& a, const KgNode& b) {
    const Vec2 h = kg.ego().heading;
    const double dx = b.position.x - a.position.x, dy = b.position.y - a.position.y;
    const double deg = std::atan2(h.x * dy - h.y * dx, h.x * dx + h.y * dy) * 180.0 / pi;
    if (deg > -30.0 && deg <= 30.0) return Relation::front;
    if (deg > 30.0 && deg <= 90.0) return Relation::front_left;
    if (deg > 90.0 && deg <= 150.0) return Relation::back_left;
    if (deg > -90.0 && deg <= -30.0) return Relation::front_right;
    if (deg > -150.0 && deg <= -90.0) return Relation::back_right;
    return Relation::back;
}

std::vector<int> naive_resolve(const SceneKg& kg, const AttributePredicate& pred) {
    std::vector<std::tuple<double, int, int>> hits;
    for (const auto& n : kg.nodes())
        if ((!pred.class_filter || n.class_label == *pred.class_filter) && (!pred.status_filter || n.status_label == *pred.status_filter))
            hits.emplace_back(std::hypot(n.position.x, n.position.y), n.source_id, n.node_id);
    std::sort(hits.begin(), hits.end());
    std::vector<int> out;
    for (const auto& h : hits) out.push_back(std::get<2>(h));
    return out;
}

std::vector<int> naive_rel_select(const SceneKg& kg, const std::vector<int>& ref, Relation r, const AttributePredicate& pred) {
    const auto& a = kg.node(ref.front());
    std::vector<std::pair<double, int>> hits;
    for (int id : naive_resolve(kg, pred)) {
        const auto& n = kg.node(id);
        const double d = std::hypot(n.position.x - a.position.x, n.position.y - a.position.y);
        if (id == a.node_id || d < 1e-12) continue;
        if (naive_direction(kg, a, n) == r) hits.emplace_back(d, id);
    }
    std::sort(hits.begin(), hits.end());
    std::vector<int> out;
    for (const auto& h : hits) out.push_back(h.second);
    return out;
}

Outcome criterion8() {
    std::mt19937_64 rng(1008);
    std::uniform_int_distribution<int> size(1, 20), op(0, 7), pick3(0, 2), pick6(0, 5), pick4(0, 3);
    const std::vector<std::string> classes{"car", "truck", "pedestrian"}, statuses{"moving", "parked", "standing"};
    auto random_pred = [&] {
        switch (pick4(rng)) {
            case 0: return AttributePredicate::any();
            case 1: return AttributePredicate::of_class(classes[pick3(rng)]);
            case 2: return AttributePredicate::of_status(statuses[pick3(rng)]);
            default: return AttributePredicate::of(classes[pick3(rng)], statuses[pick3(rng)]);
        }
    };
    int bad = 0;
    std::map<int, int> per_op;
    for (int i = 0; i < 10000; ++i) {
        const auto kg = testutil::random_kg(rng, size(rng));
        const auto pa = random_pred(), pb = random_pred();
        const auto a = resolve(kg, pa), b = resolve(kg, pb);
        const auto na = naive_resolve(kg, pa), nb = naive_resolve(kg, pb);
        const int o = op(rng);
        ++per_op[o];
        bool ok = true;
        const auto expect_empty_ref = [&](const std::function<void()>& f) {
            try {
                f();
                return false;
            } catch (const Error& e) {
                return e.kind() == ErrorKind::empty_reference;
            }
        };
        switch (o) {
            case 0:
                ok = a.node_ids == na && a.ordering == OrderingTag::ego_distance;
                break;
            case 1: {
                const Relation r = all_relations[static_cast<std::size_t>(pick6(rng))];
                if (na.empty()) {
                    ok = expect_empty_ref([&] { rel_select(kg, a, r, pb); });
                } else {
                    const auto s = rel_select(kg, a, r, pb);
                    ok = s.node_ids == naive_rel_select(kg, na, r, pb) && s.ordering == OrderingTag::anchor_distance &&
                         s.anchor == na.front();
                }
                break;
            }
            case 2: {
                std::vector<int> expect;
                for (int id : na)
                    if (std::find(nb.begin(), nb.end(), id) != nb.end()) expect.push_back(id);
                ok = intersect(a, b).node_ids == expect;
                break;
            }
            case 3: ok = count(a).count == static_cast<std::int64_t>(na.size()); break;
            case 4: ok = exists(a).flag == !na.empty(); break;
            case 5:
                ok = na.empty() ? expect_empty_ref([&] { get_type(kg, a); })
                                : get_type(kg, a).text == kg.node(na.front()).class_label;
                break;
            case 6:
                ok = na.empty() ? expect_empty_ref([&] { get_status(kg, a); })
                                : get_status(kg, a).text == kg.node(na.front()).status_label;
                break;
            default: {
                if (na.empty() || nb.empty()) {
                    ok = expect_empty_ref([&] { same_status(kg, a, b, SameStatusMode::representative); });
                } else {
                    bool any = false;
                    for (int x : na)
                        for (int y : nb) any |= kg.node(x).status_label == kg.node(y).status_label;
                    ok = same_status(kg, a, b, SameStatusMode::representative).flag ==
                             (kg.node(na.front()).status_label == kg.node(nb.front()).status_label) &&
                         same_status(kg, a, b, SameStatusMode::pair_exists).flag == any;
                }
            }
        }
        bad += ok ? 0 : 1;
    }
    return {bad == 0 && per_op.size() == 8, fmt("10000 cases over 8 operators, %d disagreements with the full scan", bad)};
}

std::string mutate(std::mt19937_64& rng, std::string s) {
    std::uniform_int_distribution<int> byte(0, 255), kind(0, 4), edits(1, 6);
    const int n = edits(rng);
    for (int k = 0; k < n; ++k) {
        const std::size_t pos = s.empty() ? 0 : std::uniform_int_distribution<std::size_t>(0, s.size() - 1)(rng);
        switch (kind(rng)) {
            case 0:
                if (!s.empty()) s[pos] = static_cast<char>(byte(rng));
                break;
            case 1: s.insert(s.begin() + static_cast<std::ptrdiff_t>(pos), static_cast<char>(byte(rng))); break;
            case 2:
                if (!s.empty()) s.erase(pos, 1 + pos % 4);
                break;
            case 3: s.insert(pos, s.substr(pos / 2, 1 + pos % 7)); break;
            default: s.insert(pos, std::string("('=;,)\n\0", 8).substr(static_cast<std::size_t>(byte(rng) % 8), 1));
        }
    }
    return s;
}

Outcome criterion9() {
    std::vector<std::string> programs = testutil::dsl_hand_corpus();
    const std::size_t hand = programs.size();
    testutil::Fuzzer fuzz(1009);
    for (int i = 0; i < 1000; ++i) programs.push_back(fuzz.program());
    int not_fixed = 0;
    for (const auto& text : programs) {
        try {
            const auto p = dsl::parse(text);
            const std::string once = dsl::unparse(p);
            const auto q = dsl::parse(once);
            if (dsl::unparse(q) != once || !dsl::same_structure(p, q)) ++not_fixed;
        } catch (const Error&) {
            ++not_fixed;
        }
    }
    std::mt19937_64 rng(2009);
    int rejected = 0, accepted = 0, foreign = 0;
    for (int i = 0; i < 1000; ++i) {
        const std::string bytes = mutate(rng, programs[static_cast<std::size_t>(i) % programs.size()]);
        try {
            const auto p = dsl::parse(bytes);
            dsl::typecheck(p, schema());
            ++accepted;
        } catch (const Error&) {
            ++rejected;
        } catch (...) {
            ++foreign;
        }
    }
    return {not_fixed == 0 && foreign == 0,
            fmt("%zu hand + 1000 fuzzed programs, %d off the fixed point; 1000 mutants: %d rejected, %d still valid, "
                "%d non-library exceptions",
                hand, not_fixed, rejected, accepted, foreign)};
}

Outcome criterion10() {
    // Sample k covers k/20 degrees; sectors from integer bounds in 1/20 degree.
    auto expected = [](int k) {
        if (k > -600 && k <= 600) return Relation::front;
        if (k > 600 && k <= 1800) return Relation::front_left;
        if (k > 1800 && k <= 3000) return Relation::back_left;
        if (k > -1800 && k <= -600) return Relation::front_right;
        if (k > -3000 && k <= -1800) return Relation::back_right;
        return Relation::back;
    };
    int wrong = 0, samples = 0;
    std::vector<double> transitions;
    std::optional<Relation> prev;
    for (int k = -3599; k <= 3600; ++k) {
        const double deg = k / 20.0;
        const Relation r = quantize_angle(deg * pi / 180.0);
        int hits = 0;
        for (Relation c : all_relations) hits += c == r ? 1 : 0;
        if (hits != 1 || r != expected(k)) ++wrong;
        if (prev && *prev != r) transitions.push_back((k - 1) / 20.0);
        prev = r;
        ++samples;
    }
    const std::vector<double> want{-150, -90, -30, 30, 90, 150};
    std::string at;
    for (double t : transitions) at += (at.empty() ? "" : " ") + fmt("%g", t);
    return {wrong == 0 && transitions == want, fmt("%d samples, %d misassigned, changes after %s", samples, wrong, at.c_str())};
}

// In-process completion endpoint that plays the scripted planner.
class StubServer {
public:
    explicit StubServer(std::string program) {
        server_.Post("/complete", [program](const httplib::Request& req, httplib::Response& res) {
            const auto prompt = json::parse(req.body).at("prompt").get<std::string>();
            std::string completion;
            if (prompt.find("[Progress]") == std::string::npos) {
                completion = "```\n" + program + "\n```";
            } else {
                completion = "FINAL(" +
                             detail::last_observed_answer(prompt).value_or("error: program result is a set, not an answer") + ")";
            }
            res.set_content(json{{"completion", completion}}.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~StubServer() {
        server_.stop();
        thread_.join();
    }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/complete"; }

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

Outcome criterion11() {
    EngineConfig cfg;
    std::mt19937_64 rng(1011);
    std::uniform_int_distribution<int> size(3, 15);
    testutil::Fuzzer fuzz(3011);
    const auto tmpl = default_prompt_template();
    int answer_diff = 0, remote_diff = 0, remote_runs = 0;
    for (int i = 0; i < 500; ++i) {
        const auto kg = testutil::random_kg(rng, size(rng));
        const std::string program = fuzz.program();
        const auto direct = dsl::run_program(program, kg, cfg).answer;
        ScriptedPlanner scripted(program);
        const auto [answer, session] = run_session("q", kg, scripted, tmpl, cfg);
        if (!(answer == direct) || answer.render() != direct.render()) ++answer_diff;
        if (i % 5 != 0) continue;
        StubServer stub(program);
        RemotePlanner remote(stub.url(), 10.0, 0);
        const auto [r_answer, r_session] = run_session("q", kg, remote, tmpl, cfg);
        ++remote_runs;
        if (!(r_answer == answer) || transcript_to_jsonl(r_session) != transcript_to_jsonl(session)) ++remote_diff;
    }
    return {answer_diff == 0 && remote_diff == 0,
            fmt("500 programs, %d session answers differ from execute; %d/%d remote transcripts not byte-identical",
                answer_diff, remote_diff, remote_runs)};
}

// ---------------------------------------------------------------------------
// 12: end-to-end determinism through the CLI

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome criterion12() {
    const std::string cli = SCENEKG_CLI;
    const std::filesystem::path spec = std::filesystem::path(SCENEKG_SOURCE_DIR) / "samples" / "world_spec.json";
    const std::vector<std::string> outputs{"synth/detections.jsonl", "synth/truth.jsonl", "synth/gt_kg.json", "synth/qa.jsonl",
                                           "pooled.jsonl", "refined.jsonl", "kg.json", "report.json"};
    std::vector<std::map<std::string, std::string>> runs;
    for (int run = 0; run < 2; ++run) {
        testutil::TempDir dir("accept12");
        std::filesystem::copy_file(spec, dir.path / "world_spec.json");
        const std::string steps =
            "cd '" + dir.path.string() + "' && '" + cli + "' synth --spec world_spec.json --out synth && '" + cli +
            "' pool --in synth --out pooled.jsonl && '" + cli + "' refine --in pooled.jsonl --out refined.jsonl && '" + cli +
            "' build-kg --in refined.jsonl --out kg.json && '" + cli +
            "' eval --qa synth/qa.jsonl --kg kg.json --gt-kg synth/gt_kg.json --truth synth/truth.jsonl --report report.json";
        if (std::system(("( " + steps + " ) > /dev/null").c_str()) != 0) return {false, fmt("pipeline run %d failed", run + 1)};
        std::map<std::string, std::string> files;
        for (const auto& o : outputs) files[o] = slurp(dir.path / o);
        runs.push_back(std::move(files));
    }
    int differ = 0;
    std::size_t bytes = 0;
    for (const auto& o : outputs) {
        differ += runs[0][o] == runs[1][o] ? 0 : 1;
        bytes += runs[0][o].size();
    }
    const bool nonempty = !runs[0]["report.json"].empty();
    return {differ == 0 && nonempty, fmt("%zu artifacts (%zu bytes) compared across two runs, %d differ", outputs.size(), bytes, differ)};
}

}  // namespace

int main() {
    std::string note6;
    const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
        {1, criterion1},  {2, criterion2},  {3, criterion3},  {4, criterion4},
        {5, criterion5},  {6, [&] { return criterion6(note6); }},
        {7, criterion7},  {8, criterion8},  {9, criterion9},  {10, criterion10},
        {11, criterion11}, {12, criterion12},
    };
    int failed = 0;
    for (const auto& [n, run] : criteria) {
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += o.pass ? 0 : 1;
        std::printf("criterion %2d: %s  %s\n", n, o.pass ? "PASS" : "FAIL", o.detail.c_str());
        if (n == 6 && !note6.empty()) std::printf("              (info, not counted) %s\n", note6.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
