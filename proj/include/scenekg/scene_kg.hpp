#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include "scenekg/config.hpp"
#include "scenekg/energy.hpp"
#include "scenekg/error.hpp"
#include "scenekg/geometry.hpp"
#include "scenekg/json_io.hpp"
#include "scenekg/pooling.hpp"
#include "scenekg/schema.hpp"

namespace scenekg {

/// A refined entity. Position is in the ego frame of `frame`.
struct KgNode {
    int node_id = 0;
    int source_id = 0;
    int frame = 0;
    std::string class_label;
    std::string status_label;
    Vec3 position;
    Vec3 size{1.0, 1.0, 1.0};
    double yaw = 0.0;
    double speed = 0.0;
    double confidence = 1.0;

    friend bool operator==(const KgNode&, const KgNode&) = default;

    double ego_distance() const { return position.bev().norm(); }
};

/// Relative displacement b - a and its Euclidean length.
inline std::array<double, 4> rel_geo(const KgNode& a, const KgNode& b) {
    if (a.frame != b.frame) fail(ErrorKind::invalid_argument, "rel_geo: nodes belong to different frames");
    const Vec3 d = b.position - a.position;
    return {d.x, d.y, d.z, d.norm()};
}

/// Ego-centric direction of `target` as seen from `anchor`.
inline Relation rel_direction(const KgNode& anchor, const KgNode& target, const EgoState& ego,
                              const SectorBoundaries& bounds = {}) {
    return quantize_angle(signed_ego_angle(anchor.position.bev(), target.position.bev(), ego.heading), bounds);
}

using RelationValue = std::variant<std::array<double, 4>, Relation>;
using RelationOperator = std::function<RelationValue(const KgNode&, const KgNode&, const EgoState&)>;

/// Named pairwise operators evaluated on demand; no pairwise storage.
class RelationLibrary {
public:
    static RelationLibrary standard(const SectorBoundaries& bounds = {}) {
        RelationLibrary lib;
        lib.ops_["geo"] = [](const KgNode& a, const KgNode& b, const EgoState&) -> RelationValue { return rel_geo(a, b); };
        lib.ops_["direction"] = [bounds](const KgNode& a, const KgNode& b, const EgoState& ego) -> RelationValue {
            return rel_direction(a, b, ego, bounds);
        };
        return lib;
    }

    void add(const std::string& name, RelationOperator op) { ops_[name] = std::move(op); }
    bool has(const std::string& name) const { return ops_.count(name) != 0; }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        for (const auto& [n, _] : ops_) out.push_back(n);
        return out;
    }

    const RelationOperator& get(const std::string& name) const {
        auto it = ops_.find(name);
        if (it == ops_.end()) fail(ErrorKind::invalid_argument, "unknown relation operator '" + name + "'");
        return it->second;
    }

private:
    std::map<std::string, RelationOperator> ops_;
};

namespace detail {
inline std::uint64_t next_kg_uid() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1);
}
}  // namespace detail

/// One frame's knowledge graph. Immutable after construction; copies share
/// identity (uid) and the relation-evaluation counter.
class SceneKg {
public:
    SceneKg(int frame, EgoState ego, Schema schema, std::vector<KgNode> nodes,
            SectorBoundaries bounds = {})
        : frame_(frame),
          ego_(ego),
          schema_(std::move(schema)),
          nodes_(std::move(nodes)),
          relations_(RelationLibrary::standard(bounds)),
          bounds_(bounds),
          uid_(detail::next_kg_uid()),
          evaluations_(std::make_shared<std::atomic<std::size_t>>(0)) {
        validate();
    }

    int frame() const { return frame_; }
    const EgoState& ego() const { return ego_; }
    const Schema& schema() const { return schema_; }
    const std::vector<KgNode>& nodes() const { return nodes_; }
    std::size_t size() const { return nodes_.size(); }
    std::uint64_t uid() const { return uid_; }
    const SectorBoundaries& boundaries() const { return bounds_; }
    const RelationLibrary& relation_ops() const { return relations_; }

    const KgNode& node(int id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
            fail(ErrorKind::reference, "node id " + std::to_string(id) + " is not in the graph");
        return nodes_[static_cast<std::size_t>(id)];
    }

    bool contains(int id) const { return id >= 0 && static_cast<std::size_t>(id) < nodes_.size(); }

    /// Evaluates a named relation operator, counting the evaluation.
    RelationValue relation(const std::string& op, int a, int b) const {
        evaluations_->fetch_add(1, std::memory_order_relaxed);
        return relations_.get(op)(node(a), node(b), ego_);
    }

    Relation direction(int anchor, int target) const {
        evaluations_->fetch_add(1, std::memory_order_relaxed);
        return rel_direction(node(anchor), node(target), ego_, bounds_);
    }

    std::size_t relation_evaluations() const { return evaluations_->load(); }
    void reset_relation_evaluations() const { evaluations_->store(0); }

    /// Structural equality; identity and counters are ignored.
    bool same_content(const SceneKg& o) const {
        return frame_ == o.frame_ && ego_ == o.ego_ && schema_ == o.schema_ && nodes_ == o.nodes_;
    }

    /// Ascending ego distance, then source candidate id.
    static bool canonical_less(const KgNode& a, const KgNode& b) {
        return std::make_tuple(a.ego_distance(), a.source_id) < std::make_tuple(b.ego_distance(), b.source_id);
    }

private:
    void validate() const {
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            const KgNode& n = nodes_[i];
            if (n.node_id != static_cast<int>(i)) fail(ErrorKind::invalid_argument, "node ids must be dense 0..N-1 in order");
            if (n.frame != frame_) fail(ErrorKind::invalid_argument, "node frame differs from the graph frame");
            schema_.require_category(n.class_label);
            schema_.require_status(n.status_label);
            if (i > 0 && !canonical_less(nodes_[i - 1], n))
                fail(ErrorKind::invalid_argument, "nodes are not in canonical order (ego distance, then source id)");
        }
    }

    int frame_;
    EgoState ego_;
    Schema schema_;
    std::vector<KgNode> nodes_;
    RelationLibrary relations_;
    SectorBoundaries bounds_;
    std::uint64_t uid_;
    std::shared_ptr<std::atomic<std::size_t>> evaluations_;
};

/// Sorts nodes into canonical order and assigns dense ids.
inline SceneKg make_canonical_kg(int frame, EgoState ego, Schema schema, std::vector<KgNode> nodes,
                                 SectorBoundaries bounds = {}) {
    std::sort(nodes.begin(), nodes.end(), SceneKg::canonical_less);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        nodes[i].node_id = static_cast<int>(i);
        nodes[i].frame = frame;
    }
    return SceneKg(frame, ego, std::move(schema), std::move(nodes), bounds);
}

/// One node per selected candidate. A candidate without a status becomes
/// the schema's moving status above the speed threshold, otherwise its
/// class's default static status. `speeds` overrides the velocity-derived
/// speed when given (aligned with `candidates`).
inline SceneKg build_kg(const std::vector<PooledCandidate>& candidates, const SelectionVector& z,
                        const EgoState& ego, const Schema& schema, const EngineConfig& cfg,
                        const std::vector<double>* speeds = nullptr) {
    if (z.size() != candidates.size()) fail(ErrorKind::invalid_argument, "selection length differs from candidate count");
    if (speeds && speeds->size() != candidates.size())
        fail(ErrorKind::invalid_argument, "speed list length differs from candidate count");
    std::vector<KgNode> nodes;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (!z.selected(i)) continue;
        const auto& c = candidates[i];
        KgNode n;
        n.source_id = c.id;
        n.frame = ego.frame;
        n.class_label = c.class_label;
        n.position = c.box.center;
        n.size = c.box.size;
        n.yaw = c.box.yaw;
        n.speed = speeds ? (*speeds)[i] : (c.velocity ? c.velocity->norm() : 0.0);
        n.confidence = c.confidence;
        if (c.status_label) {
            n.status_label = *c.status_label;
        } else if (n.speed > cfg.speed_threshold) {
            n.status_label = schema.moving_status();
        } else {
            auto d = schema.default_static_status(c.class_label);
            if (!d) fail(ErrorKind::schema, "category '" + c.class_label + "' has no default static status");
            n.status_label = *d;
        }
        nodes.push_back(std::move(n));
    }
    return make_canonical_kg(ego.frame, ego, schema, std::move(nodes), cfg.relation_boundaries);
}

// ---------------------------------------------------------------------------
// KG document: schema block, ego block, node array. Floats use 17
// significant digits so a re-export is byte-identical.

inline std::string kg_to_json(const SceneKg& kg) {
    const auto& e = kg.ego();
    const std::string ego = ObjectWriter()
                                .field("frame", e.frame)
                                .field("px", e.position.x)
                                .field("py", e.position.y)
                                .field("pz", e.position.z)
                                .field("hx", e.heading.x)
                                .field("hy", e.heading.y)
                                .field("t", e.timestamp)
                                .str();
    std::vector<std::string> nodes;
    for (const auto& n : kg.nodes())
        nodes.push_back(ObjectWriter()
                            .field("id", n.node_id)
                            .field("source_id", n.source_id)
                            .field("cls", n.class_label)
                            .field("status", n.status_label)
                            .field("x", n.position.x)
                            .field("y", n.position.y)
                            .field("z", n.position.z)
                            .field("l", n.size.x)
                            .field("w", n.size.y)
                            .field("h", n.size.z)
                            .field("yaw", n.yaw)
                            .field("speed", n.speed)
                            .field("conf", n.confidence)
                            .str());
    std::string out = "{\n";
    out += "  \"format\": \"scenekg/1\",\n";
    out += "  \"frame\": " + std::to_string(kg.frame()) + ",\n";
    out += "  \"schema\": " + kg.schema().to_json() + ",\n";
    out += "  \"ego\": " + ego + ",\n";
    out += "  \"nodes\": [";
    for (std::size_t i = 0; i < nodes.size(); ++i) out += (i ? ",\n    " : "\n    ") + nodes[i];
    out += nodes.empty() ? "]\n" : "\n  ]\n";
    return out + "}\n";
}

inline SceneKg kg_from_json(std::string_view text, const Schema* expected = nullptr) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        fail(ErrorKind::parse, std::string("malformed graph document: ") + e.what());
    }
    if (!doc.is_object() || get_string(doc, "format") != "scenekg/1")
        fail(ErrorKind::parse, "not a scenekg/1 graph document");
    Schema schema = Schema::from_json(require(doc, "schema"));
    if (expected && !(schema == *expected)) fail(ErrorKind::schema, "graph schema differs from the expected schema");
    const int frame = get_int(doc, "frame");
    const json& e = require(doc, "ego");
    EgoState ego = EgoState::make({get_number(e, "px"), get_number(e, "py"), get_number(e, "pz")},
                                  {get_number(e, "hx"), get_number(e, "hy")}, get_int(e, "frame"), get_number(e, "t"));
    // Keep the stored heading bit-exact.
    ego.heading = {get_number(e, "hx"), get_number(e, "hy")};
    std::vector<KgNode> nodes;
    for (const auto& jn : require(doc, "nodes")) {
        KgNode n;
        n.node_id = get_int(jn, "id");
        n.source_id = get_int(jn, "source_id");
        n.frame = frame;
        n.class_label = get_string(jn, "cls");
        if (!schema.has_category(n.class_label))
            fail(ErrorKind::schema, "node " + std::to_string(n.node_id) + " has unknown category '" + n.class_label + "'");
        n.status_label = get_string(jn, "status");
        if (!schema.has_status(n.status_label))
            fail(ErrorKind::schema, "node " + std::to_string(n.node_id) + " has unknown status '" + n.status_label + "'");
        n.position = {get_number(jn, "x"), get_number(jn, "y"), get_number(jn, "z")};
        n.size = {get_number(jn, "l"), get_number(jn, "w"), get_number(jn, "h")};
        n.yaw = get_number(jn, "yaw");
        n.speed = get_number(jn, "speed");
        n.confidence = get_number(jn, "conf");
        nodes.push_back(std::move(n));
    }
    return SceneKg(frame, ego, std::move(schema), std::move(nodes));
}

inline void export_kg(const SceneKg& kg, const std::string& path) { write_file(path, kg_to_json(kg)); }

inline SceneKg import_kg(const std::string& path, const Schema* expected = nullptr) {
    return kg_from_json(read_file(path), expected);
}

}  // namespace scenekg
