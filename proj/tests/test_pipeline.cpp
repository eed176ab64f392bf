#include <gtest/gtest.h>

#include "scenekg/pipeline.hpp"
#include "scenekg/synth.hpp"
#include "test_util.hpp"

using namespace scenekg;
using testutil::schema;

namespace {

struct Fixture {
    WorldSpec spec;
    World world;
    std::vector<FrameBundle> bundles;
    PooledData pooled;
    RefinedData refined;
};

Fixture make(std::uint64_t seed, int threads = 1) {
    Fixture f;
    f.spec = default_world_spec(seed);
    f.spec.frames = 5;
    f.world = generate_world(f.spec, schema());
    f.bundles = simulate_detectors(f.world, f.spec, schema());
    f.pooled = run_pool(f.bundles, EngineConfig{}, threads);
    f.refined = run_refine(f.pooled, schema(), EngineConfig{}, threads);
    return f;
}

}  // namespace

TEST(Pipeline, PooledRoundTrip) {
    const auto f = make(1);
    const std::string text = write_pooled(f.pooled);
    const auto back = parse_pooled(text, schema());
    EXPECT_EQ(write_pooled(back), text);
    EXPECT_EQ(back.detectors, f.pooled.detectors);
    ASSERT_EQ(back.frames.size(), f.pooled.frames.size());
    for (std::size_t i = 0; i < back.frames.size(); ++i) {
        EXPECT_EQ(back.frames[i].raw, f.pooled.frames[i].raw);
        EXPECT_EQ(back.frames[i].candidates, f.pooled.frames[i].candidates);
    }
    // Refining the reloaded file gives the same result as refining in memory.
    EXPECT_EQ(write_refined(run_refine(back, schema(), EngineConfig{})), write_refined(f.refined));
}

TEST(Pipeline, RefinedRoundTrip) {
    const auto f = make(2);
    const auto back = parse_refined(write_refined(f.refined), schema());
    ASSERT_EQ(back.frames.size(), f.refined.frames.size());
    for (std::size_t i = 0; i < back.frames.size(); ++i) {
        EXPECT_EQ(back.frames[i].ego, f.refined.frames[i].ego);
        EXPECT_EQ(back.frames[i].candidates, f.refined.frames[i].candidates);
        EXPECT_EQ(back.frames[i].features, f.refined.frames[i].features);
        EXPECT_EQ(back.frames[i].result.z, f.refined.frames[i].result.z);
        EXPECT_EQ(back.frames[i].result.energy, f.refined.frames[i].result.energy);
    }
    const int q = f.spec.query_frame();
    EXPECT_EQ(kg_to_json(kg_from_refined(back, q, schema(), EngineConfig{})),
              kg_to_json(kg_from_refined(f.refined, q, schema(), EngineConfig{})));
}

TEST(Pipeline, ThreadCountDoesNotChangeOutput) {
    const auto a = make(3, 1);
    const auto b = make(3, 4);
    EXPECT_EQ(write_pooled(a.pooled), write_pooled(b.pooled));
    EXPECT_EQ(write_refined(a.refined), write_refined(b.refined));
}

TEST(Pipeline, SelectionEnergyMatchesTotal) {
    const auto f = make(4);
    for (const auto& rf : f.refined.frames) {
        const double e = energy_total(rf.candidates, rf.features, rf.result.z, EngineConfig{}.energy, EngineConfig{});
        EXPECT_NEAR(e, rf.result.energy, 1e-9 * std::max<std::size_t>(1, rf.candidates.size()));
    }
}

TEST(Pipeline, MalformedFilesRejected) {
    EXPECT_THROW(parse_pooled("{\"record_type\":\"ego\"}\n", schema()), Error);
    EXPECT_THROW(parse_pooled("", schema()), Error);  // no detectors record
    EXPECT_THROW(parse_refined("{\"record_type\":\"bogus\"}\n", schema()), Error);
    const auto f = make(5);
    std::string text = write_refined(f.refined);
    const auto pos = text.find("{\"record_type\":\"selection\"");
    ASSERT_NE(pos, std::string::npos);
    text.erase(pos, text.find('\n', pos) - pos + 1);
    EXPECT_THROW(parse_refined(text, schema()), Error);
}

TEST(Pipeline, LabelCandidatesAgainstTruth) {
    const auto f = make(6);
    const auto labeled = label_candidates(f.refined, f.world, 2.0);
    std::size_t total = 0;
    for (const auto& rf : f.refined.frames) total += rf.candidates.size();
    EXPECT_EQ(labeled.size(), total);
    int pos = 0;
    for (const auto& l : labeled) pos += l.label;
    EXPECT_GT(pos, 0);
    EXPECT_LT(pos, static_cast<int>(labeled.size()));
    // Positives are at most one per ground-truth object per frame.
    std::size_t gt = 0;
    for (const auto& wf : f.world.frames) gt += wf.entities.size();
    EXPECT_LE(static_cast<std::size_t>(pos), gt);
    World missing = f.world;
    missing.frames.pop_back();
    EXPECT_THROW(label_candidates(f.refined, missing, 2.0), Error);
}

TEST(Pipeline, MiddleFrame) {
    EXPECT_EQ(middle_frame({0, 1, 2, 3, 4}), 2);
    EXPECT_EQ(middle_frame({3, 4}), 4);
    EXPECT_THROW(middle_frame({}), Error);
}

TEST(Pipeline, ManifestJson) {
    Manifest m;
    m.command = "pool";
    m.inputs = {"a.jsonl"};
    m.config_hash = config_hash(EngineConfig{});
    m.seed = 7;
    m.stage_seconds = {{"pool", 0.25}};
    const auto j = json::parse(manifest_json(m));
    EXPECT_EQ(j["command"], "pool");
    EXPECT_EQ(j["seed"], 7);
    EXPECT_EQ(j["config_hash"], config_hash(EngineConfig{}));
    EXPECT_DOUBLE_EQ(j["stage_seconds"]["pool"].get<double>(), 0.25);
    EXPECT_EQ(j["version"], tool_version);
}
