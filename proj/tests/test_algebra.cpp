#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "scenekg/algebra.hpp"
#include "test_util.hpp"

using namespace scenekg;
using testutil::kg_of;
using testutil::node;
using testutil::schema;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "expected an Error";
    return ErrorKind::invalid_argument;
}

std::set<int> ids(const EntitySet& u) { return {u.node_ids.begin(), u.node_ids.end()}; }

// Naive direction: angle in degrees from ego heading, sector table by hand.
Relation naive_direction(const KgNode& a, const KgNode& b, Vec2 h) {
    const double dx = b.position.x - a.position.x;
    const double dy = b.position.y - a.position.y;
    double deg = std::atan2(h.x * dy - h.y * dx, h.x * dx + h.y * dy) * 180.0 / pi;
    if (deg <= -180.0) deg = 180.0;
    if (deg > -30 && deg <= 30) return Relation::front;
    if (deg > 30 && deg <= 90) return Relation::front_left;
    if (deg > 90 && deg <= 150) return Relation::back_left;
    if (deg > 150 || deg <= -150) return Relation::back;
    if (deg > -150 && deg <= -90) return Relation::back_right;
    return Relation::front_right;
}

}  // namespace

TEST(Resolve, Examples) {
    const auto kg = kg_of({node(0, "car", "moving", 10, 0), node(1, "car", "parked", 3, 0), node(2, "car", "moving", 1, 1),
                           node(3, "car", "moving", -5, 0), node(4, "car", "parked", 0, 20), node(5, "pedestrian", "standing", 2, 0)});
    EXPECT_TRUE(resolve(kg, AttributePredicate::of_class("truck")).empty());

    const auto moving = resolve(kg, AttributePredicate::of("car", "moving"));
    ASSERT_EQ(moving.size(), 3u);
    // Brute-force filter plus nearest-first sort.
    std::vector<std::pair<double, int>> expected;
    for (const auto& n : kg.nodes())
        if (n.class_label == "car" && n.status_label == "moving") expected.emplace_back(n.ego_distance(), n.node_id);
    std::sort(expected.begin(), expected.end());
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(moving.node_ids[i], expected[i].second);
    EXPECT_EQ(moving.ordering, OrderingTag::ego_distance);

    const auto all = resolve(kg, AttributePredicate::any());
    EXPECT_EQ(all.node_ids, (std::vector<int>{0, 1, 2, 3, 4, 5}));
}

TEST(Resolve, Errors) {
    const auto kg = kg_of({node(0, "car", "moving", 1, 0)});
    EXPECT_EQ(kind_of([&] { resolve(kg, AttributePredicate::of_class("spaceship")); }), ErrorKind::schema);
    EXPECT_EQ(kind_of([&] { resolve(kg, AttributePredicate::of_status("flying")); }), ErrorKind::schema);
    EXPECT_EQ(kind_of([&] { resolve(kg, AttributePredicate{}); }), ErrorKind::invalid_argument);
}

TEST(RelSelect, Examples) {
    const auto kg = kg_of({node(0, "pedestrian", "standing", 10, 0), node(1, "car", "parked", 20, 0),
                           node(2, "car", "parked", 15, 0)});
    const auto ped = resolve(kg, AttributePredicate::of_class("pedestrian"));
    const auto front = rel_select(kg, ped, Relation::front, AttributePredicate::of_class("car"));
    ASSERT_EQ(front.size(), 2u);
    EXPECT_EQ(kg.node(front.node_ids[0]).position.x, 15.0);
    EXPECT_EQ(kg.node(front.node_ids[1]).position.x, 20.0);
    EXPECT_EQ(front.ordering, OrderingTag::anchor_distance);
    EXPECT_EQ(front.anchor, ped.node_ids.front());
    EXPECT_TRUE(rel_select(kg, ped, Relation::back, AttributePredicate::of_class("car")).empty());
    // The nearest valid instance is the representative.
    EXPECT_EQ(get_type(kg, front).render(), "car");
    EXPECT_EQ(kg.node(front.node_ids.front()).source_id, 2);
}

TEST(RelSelect, AnchorAndCoincidentNodesExcluded) {
    const auto kg = kg_of({node(0, "car", "parked", 5, 0), node(1, "car", "parked", 5, 0), node(2, "car", "parked", 9, 0)});
    const auto cars = resolve(kg, AttributePredicate::of_class("car"));
    for (Relation r : all_relations) {
        const auto out = rel_select(kg, cars, r, AttributePredicate::any());
        EXPECT_EQ(ids(out).count(cars.node_ids.front()), 0u);
        EXPECT_LE(out.size(), 1u);
    }
}

TEST(RelSelect, Errors) {
    const auto kg = kg_of({node(0, "car", "moving", 1, 0)});
    const auto none = resolve(kg, AttributePredicate::of_class("bus"));
    EXPECT_EQ(kind_of([&] { rel_select(kg, none, Relation::front, AttributePredicate::any()); }), ErrorKind::empty_reference);
    const auto other = kg_of({node(0, "car", "moving", 1, 0)});
    const auto foreign = resolve(other, AttributePredicate::of_class("car"));
    EXPECT_EQ(kind_of([&] { rel_select(kg, foreign, Relation::front, AttributePredicate::any()); }), ErrorKind::invalid_argument);
}

TEST(Intersect, Examples) {
    const auto kg = kg_of({node(0, "car", "moving", 1, 0), node(1, "car", "parked", 2, 0), node(2, "bus", "moving", 3, 0)});
    const auto cars = resolve(kg, AttributePredicate::of_class("car"));
    const auto moving = resolve(kg, AttributePredicate::of_status("moving"));
    EXPECT_EQ(intersect(cars, cars), cars);
    EXPECT_TRUE(intersect(cars, resolve(kg, AttributePredicate::of_class("bus"))).empty());
    EXPECT_EQ(intersect(cars, moving).node_ids, (std::vector<int>{0}));
    const auto other = kg_of({node(0, "car", "moving", 1, 0)});
    EXPECT_EQ(kind_of([&] { intersect(cars, resolve(other, AttributePredicate::of_class("car"))); }),
              ErrorKind::invalid_argument);
}

TEST(CountExists, Examples) {
    const auto kg = kg_of({node(0, "car", "moving", 1, 0), node(1, "car", "parked", 2, 0), node(2, "car", "moving", 3, 0)});
    const auto empty = resolve(kg, AttributePredicate::of_class("bus"));
    EXPECT_EQ(count(empty).render(), "0");
    EXPECT_EQ(exists(empty).render(), "no");
    const auto cars = resolve(kg, AttributePredicate::of_class("car"));
    EXPECT_EQ(count(cars).render(), "3");
    EXPECT_EQ(exists(cars).render(), "yes");
}

TEST(GetTypeStatus, Examples) {
    const auto kg = kg_of({node(0, "bus", "stopped", 2, 0), node(1, "car", "moving", 8, 0)});
    const auto moving = resolve(kg, AttributePredicate::of_status("moving"));
    EXPECT_EQ(get_type(kg, moving).render(), "car");
    EXPECT_EQ(get_status(kg, moving).render(), "moving");
    const auto all = resolve(kg, AttributePredicate::any());
    EXPECT_EQ(get_type(kg, all).render(), "bus");
    const auto none = resolve(kg, AttributePredicate::of_class("truck"));
    EXPECT_EQ(kind_of([&] { get_type(kg, none); }), ErrorKind::empty_reference);
    EXPECT_EQ(kind_of([&] { get_status(kg, none); }), ErrorKind::empty_reference);
}

TEST(SameStatus, Modes) {
    const auto kg = kg_of({node(0, "car", "moving", 1, 0), node(1, "bus", "parked", 2, 0), node(2, "car", "parked", 3, 0),
                           node(3, "bus", "moving", 4, 0)});
    const auto cars = resolve(kg, AttributePredicate::of_class("car"));
    const auto buses = resolve(kg, AttributePredicate::of_class("bus"));
    const auto moving_bus = resolve(kg, AttributePredicate::of("bus", "moving"));
    EXPECT_EQ(same_status(kg, cars, moving_bus, SameStatusMode::representative).render(), "yes");
    EXPECT_EQ(same_status(kg, cars, buses, SameStatusMode::representative).render(), "no");
    EXPECT_EQ(same_status(kg, cars, buses, SameStatusMode::pair_exists).render(), "yes");
    for (auto mode : {SameStatusMode::representative, SameStatusMode::pair_exists}) {
        EXPECT_EQ(same_status(kg, cars, cars, mode).render(), "yes");
        EXPECT_EQ(kind_of([&] { same_status(kg, cars, resolve(kg, AttributePredicate::of_class("truck")), mode); }),
                  ErrorKind::empty_reference);
    }
}

TEST(Answer, RenderAndParse) {
    const Schema& s = schema();
    for (const Answer& a : {Answer::of_count(0), Answer::of_count(42), Answer::of_bool(true), Answer::of_bool(false),
                            Answer::of_type("truck"), Answer::of_status("parked"), Answer::of_error("empty reference")}) {
        EXPECT_EQ(parse_answer(a.render(), s), a);
    }
    EXPECT_EQ(Answer::of_count(7).render(), "7");
    EXPECT_EQ(Answer::of_error("x").render(), "error: x");
    EXPECT_THROW(parse_answer("maybe", s), Error);
}

TEST(AlgebraLaws, RandomGraphs) {
    std::mt19937_64 rng(44);
    const std::vector<AttributePredicate> preds{
        AttributePredicate::of_class("car"), AttributePredicate::of_class("truck"), AttributePredicate::of_status("moving"),
        AttributePredicate::of_status("parked"), AttributePredicate::of("pedestrian", "standing"), AttributePredicate::any()};
    std::uniform_int_distribution<std::size_t> pick(0, preds.size() - 1);
    for (int trial = 0; trial < 300; ++trial) {
        const auto kg = testutil::random_kg(rng, 1 + trial % 25);
        const auto a = resolve(kg, preds[pick(rng)]);
        const auto b = resolve(kg, preds[pick(rng)]);
        const auto c = resolve(kg, preds[pick(rng)]);
        EXPECT_EQ(ids(intersect(a, b)), ids(intersect(b, a)));
        EXPECT_EQ(intersect(intersect(a, b), c), intersect(a, intersect(b, c)));
        EXPECT_LE(count(intersect(a, b)).count, std::min(count(a).count, count(b).count));
        EXPECT_EQ(exists(a).flag, count(a).count > 0);
        EXPECT_EQ(count(a).render(), count(a).render());
        for (const auto& u : {a, b, c, intersect(a, b)}) EXPECT_TRUE(is_valid_entity_set(kg, u));
        if (!a.empty()) {
            for (Relation r : all_relations) {
                const auto sel = rel_select(kg, a, r, preds[pick(rng)]);
                EXPECT_TRUE(is_valid_entity_set(kg, sel));
                EXPECT_EQ(ids(sel).count(a.node_ids.front()), 0u);
                // Filtering after the fact gives the same members.
                const auto unfiltered = rel_select(kg, a, r, AttributePredicate::any());
                EXPECT_EQ(ids(intersect(unfiltered, sel)), ids(sel));
            }
        }
    }
}

TEST(AlgebraOracle, TenThousandRandomPairs) {
    std::mt19937_64 rng(2024);
    const std::vector<std::string> classes{"car", "truck", "pedestrian"};
    const std::vector<std::string> statuses{"moving", "parked", "standing"};
    std::uniform_int_distribution<std::size_t> pick3(0, 2);
    std::uniform_int_distribution<int> pick_rel(0, 5);
    std::uniform_int_distribution<int> pick_op(0, 4);
    int checked = 0;
    for (int trial = 0; trial < 10000; ++trial) {
        const auto kg = testutil::random_kg(rng, 1 + trial % 30);
        const std::string c1 = classes[pick3(rng)], c2 = classes[pick3(rng)], s1 = statuses[pick3(rng)];
        // Naive scans.
        std::vector<int> n_anchor, n_filter;
        for (const auto& n : kg.nodes()) {
            if (n.class_label == c1) n_anchor.push_back(n.node_id);
            if (n.class_label == c2 && n.status_label == s1) n_filter.push_back(n.node_id);
        }
        const auto anchor = resolve(kg, AttributePredicate::of_class(c1));
        ASSERT_EQ(anchor.node_ids, n_anchor);
        const auto filt = resolve(kg, AttributePredicate::of(c2, s1));
        ASSERT_EQ(filt.node_ids, n_filter);

        switch (pick_op(rng)) {
            case 0: {
                std::set<int> expect;
                std::set_intersection(n_anchor.begin(), n_anchor.end(), n_filter.begin(), n_filter.end(),
                                      std::inserter(expect, expect.begin()));
                EXPECT_EQ(ids(intersect(anchor, filt)), expect);
                break;
            }
            case 1:
                EXPECT_EQ(count(filt).count, static_cast<std::int64_t>(n_filter.size()));
                EXPECT_EQ(exists(filt).flag, !n_filter.empty());
                break;
            case 2:
                if (!n_filter.empty()) {
                    EXPECT_EQ(get_type(kg, filt).text, kg.nodes()[n_filter.front()].class_label);
                    EXPECT_EQ(get_status(kg, filt).text, s1);
                }
                break;
            default: {
                if (n_anchor.empty()) break;
                const Relation r = all_relations[pick_rel(rng)];
                const auto& a = kg.node(n_anchor.front());
                std::set<int> expect;
                for (const auto& b : kg.nodes()) {
                    if (b.node_id == a.node_id || b.class_label != c2) continue;
                    if (naive_direction(a, b, kg.ego().heading) == r) expect.insert(b.node_id);
                }
                const auto out = rel_select(kg, anchor, r, AttributePredicate::of_class(c2));
                EXPECT_EQ(ids(out), expect);
                EXPECT_TRUE(is_valid_entity_set(kg, out));
                break;
            }
        }
        ++checked;
    }
    EXPECT_EQ(checked, 10000);
}

TEST(AlgebraDeterminism, RepeatedEvaluation) {
    std::mt19937_64 rng(7);
    const auto kg = testutil::random_kg(rng, 40);
    const auto cars = resolve(kg, AttributePredicate::of_class("car"));
    ASSERT_FALSE(cars.empty());
    for (Relation r : all_relations) {
        const auto a = rel_select(kg, cars, r, AttributePredicate::any());
        const auto b = rel_select(kg, cars, r, AttributePredicate::any());
        EXPECT_EQ(a, b);
        if (!a.empty()) EXPECT_EQ(get_type(kg, a).render(), get_type(kg, b).render());
        EXPECT_EQ(count(a).render(), count(b).render());
    }
}
