#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "scenekg/config.hpp"
#include "scenekg/error.hpp"
#include "scenekg/geometry.hpp"
#include "scenekg/scene_kg.hpp"

namespace scenekg {

/// Conjunction of optional class and status filters.
struct AttributePredicate {
    std::optional<std::string> class_filter;
    std::optional<std::string> status_filter;
    bool match_all = false;

    static AttributePredicate any() { return {std::nullopt, std::nullopt, true}; }
    static AttributePredicate of_class(std::string c) { return {std::move(c), std::nullopt, false}; }
    static AttributePredicate of(std::string c, std::string s) { return {std::move(c), std::move(s), false}; }
    static AttributePredicate of_status(std::string s) { return {std::nullopt, std::move(s), false}; }

    bool empty() const { return !class_filter && !status_filter; }

    bool matches(const KgNode& n) const {
        return (!class_filter || n.class_label == *class_filter) && (!status_filter || n.status_label == *status_filter);
    }

    void validate(const Schema& schema) const {
        if (class_filter) schema.require_category(*class_filter);
        if (status_filter) schema.require_status(*status_filter);
    }

    friend bool operator==(const AttributePredicate&, const AttributePredicate&) = default;
};

enum class OrderingTag { ego_distance, anchor_distance };

/// Ordered subset of one graph's nodes. The first element is the set's
/// representative.
struct EntitySet {
    std::vector<int> node_ids;
    OrderingTag ordering = OrderingTag::ego_distance;
    std::optional<int> anchor;  // set when ordering == anchor_distance
    std::uint64_t kg_uid = 0;

    bool empty() const { return node_ids.empty(); }
    std::size_t size() const { return node_ids.size(); }
    friend bool operator==(const EntitySet&, const EntitySet&) = default;
};

/// Bounded typed result of a query.
struct Answer {
    enum class Kind { count, boolean, type_label, status_label, error };

    Kind kind = Kind::error;
    std::int64_t count = 0;
    bool flag = false;
    std::string text;  // label or error message

    static Answer of_count(std::int64_t n) { return {Kind::count, n, false, {}}; }
    static Answer of_bool(bool b) { return {Kind::boolean, 0, b, {}}; }
    static Answer of_type(std::string s) { return {Kind::type_label, 0, false, std::move(s)}; }
    static Answer of_status(std::string s) { return {Kind::status_label, 0, false, std::move(s)}; }
    static Answer of_error(std::string msg) { return {Kind::error, 0, false, std::move(msg)}; }

    bool is_error() const { return kind == Kind::error; }

    /// Decimal integer, "yes"/"no", the label itself, or "error: <message>".
    std::string render() const {
        switch (kind) {
            case Kind::count: return std::to_string(count);
            case Kind::boolean: return flag ? "yes" : "no";
            case Kind::type_label:
            case Kind::status_label: return text;
            case Kind::error: return "error: " + text;
        }
        return {};
    }

    friend bool operator==(const Answer&, const Answer&) = default;
};

/// Inverse of Answer::render given the schema that produced it.
inline Answer parse_answer(const std::string& text, const Schema& schema) {
    if (text.rfind("error: ", 0) == 0) return Answer::of_error(text.substr(7));
    if (text == "yes") return Answer::of_bool(true);
    if (text == "no") return Answer::of_bool(false);
    if (!text.empty() && text.size() < 19 && std::all_of(text.begin(), text.end(), [](char c) { return c >= '0' && c <= '9'; }))
        return Answer::of_count(std::stoll(text));
    if (schema.has_category(text)) return Answer::of_type(text);
    if (schema.has_status(text)) return Answer::of_status(text);
    fail(ErrorKind::schema, "'" + text + "' is not a valid answer");
}

inline void require_same_kg(const EntitySet& a, const SceneKg& kg) {
    if (a.kg_uid != kg.uid()) fail(ErrorKind::invalid_argument, "entity set belongs to a different graph");
}

/// Nodes satisfying `pred`, nearest to ego first.
inline EntitySet resolve(const SceneKg& kg, const AttributePredicate& pred) {
    if (pred.empty() && !pred.match_all)
        fail(ErrorKind::invalid_argument, "Resolve needs at least one filter (or an explicit match-all predicate)");
    pred.validate(kg.schema());
    EntitySet out;
    out.kg_uid = kg.uid();
    for (const auto& n : kg.nodes())
        if (pred.matches(n)) out.node_ids.push_back(n.node_id);
    return out;
}

/// Nodes satisfying `pred` that lie in direction `r` of rep(ref), nearest
/// to the anchor first. The anchor and nodes at its exact BEV position are
/// never returned.
inline EntitySet rel_select(const SceneKg& kg, const EntitySet& ref, Relation r, const AttributePredicate& pred) {
    require_same_kg(ref, kg);
    if (ref.empty()) fail(ErrorKind::empty_reference, "RelSelect reference set is empty");
    pred.validate(kg.schema());
    const int anchor = ref.node_ids.front();
    const KgNode& a = kg.node(anchor);
    std::vector<std::pair<double, int>> hits;
    for (const auto& n : kg.nodes()) {
        if (n.node_id == anchor || !pred.matches(n)) continue;
        const double d = bev_distance(a.position, n.position);
        if (d < 1e-12) continue;
        if (kg.direction(anchor, n.node_id) == r) hits.emplace_back(d, n.node_id);
    }
    std::sort(hits.begin(), hits.end());
    EntitySet out;
    out.kg_uid = kg.uid();
    out.ordering = OrderingTag::anchor_distance;
    out.anchor = anchor;
    for (const auto& [_, id] : hits) out.node_ids.push_back(id);
    return out;
}

/// Members of both, in a's order.
inline EntitySet intersect(const EntitySet& a, const EntitySet& b) {
    if (a.kg_uid != b.kg_uid) fail(ErrorKind::invalid_argument, "Intersect operands belong to different graphs");
    const std::set<int> in_b(b.node_ids.begin(), b.node_ids.end());
    EntitySet out = a;
    out.node_ids.clear();
    for (int id : a.node_ids)
        if (in_b.count(id)) out.node_ids.push_back(id);
    return out;
}

inline Answer count(const EntitySet& u) { return Answer::of_count(static_cast<std::int64_t>(u.size())); }
inline Answer exists(const EntitySet& u) { return Answer::of_bool(!u.empty()); }

inline Answer get_type(const SceneKg& kg, const EntitySet& u) {
    require_same_kg(u, kg);
    if (u.empty()) fail(ErrorKind::empty_reference, "GetType on an empty set");
    return Answer::of_type(kg.node(u.node_ids.front()).class_label);
}

inline Answer get_status(const SceneKg& kg, const EntitySet& u) {
    require_same_kg(u, kg);
    if (u.empty()) fail(ErrorKind::empty_reference, "GetStatus on an empty set");
    return Answer::of_status(kg.node(u.node_ids.front()).status_label);
}

inline Answer same_status(const SceneKg& kg, const EntitySet& a, const EntitySet& b, SameStatusMode mode) {
    require_same_kg(a, kg);
    require_same_kg(b, kg);
    if (a.empty() || b.empty()) fail(ErrorKind::empty_reference, "SameStatus on an empty set");
    if (mode == SameStatusMode::representative)
        return Answer::of_bool(kg.node(a.node_ids.front()).status_label == kg.node(b.node_ids.front()).status_label);
    std::set<std::string> statuses;
    for (int id : a.node_ids) statuses.insert(kg.node(id).status_label);
    for (int id : b.node_ids)
        if (statuses.count(kg.node(id).status_label)) return Answer::of_bool(true);
    return Answer::of_bool(false);
}

/// Checks ids are distinct, present, and ordered by the set's tag.
inline bool is_valid_entity_set(const SceneKg& kg, const EntitySet& u) {
    if (u.kg_uid != kg.uid()) return false;
    std::set<int> seen;
    for (int id : u.node_ids)
        if (!kg.contains(id) || !seen.insert(id).second) return false;
    for (std::size_t i = 1; i < u.node_ids.size(); ++i) {
        const int p = u.node_ids[i - 1], q = u.node_ids[i];
        if (u.ordering == OrderingTag::ego_distance) {
            if (p >= q) return false;  // node ids are already in ego-distance order
        } else {
            if (!u.anchor || !kg.contains(*u.anchor)) return false;
            const auto& a = kg.node(*u.anchor);
            const auto key = [&](int id) { return std::make_pair(bev_distance(a.position, kg.node(id).position), id); };
            if (!(key(p) < key(q))) return false;
        }
    }
    return true;
}

}  // namespace scenekg
