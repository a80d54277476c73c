#include <gtest/gtest.h>

#include <set>

#include "tangles/sampling.hpp"

using namespace tangles;

namespace {

struct World {
    std::vector<TranslationRecord> records;
    std::vector<DetectionResult> detections;
    std::vector<JudgeVerdict> verdicts;
};

/// Records laid out as `agree` agreement cases, `disagree` disagreement
/// cases, `none` undetected and `judge_only` judge-positive-only cases.
World make_world(size_t agree, size_t disagree, size_t none, size_t judge_only = 0) {
    World w;
    size_t i = 0;
    auto add = [&](bool heuristic, std::optional<bool> judge) {
        TranslationRecord r;
        r.id = "rec" + std::to_string(i++);
        r.source_lang = "de";
        r.target_lang = "en";
        r.model = "m";
        r.source_text = r.reference_text = r.translation_text = "x";
        w.records.push_back(r);
        std::vector<BiasFinding> f;
        if (heuristic) f.push_back({BiasCategory::cultural, DetectorKind::keyword, "tea", Side::translation_only});
        w.detections.push_back(gate(r.id, 0.5, f, 0.75));
        if (judge) {
            JudgeVerdict v;
            v.record_id = r.id;
            v.bias_detected = *judge;
            if (*judge) v.detected_biases = {BiasCategory::cultural};
            w.verdicts.push_back(v);
        }
    };
    for (size_t k = 0; k < agree; ++k) add(true, true);
    for (size_t k = 0; k < disagree; ++k) add(true, false);
    for (size_t k = 0; k < none; ++k) add(false, k % 2 ? std::optional<bool>(false) : std::nullopt);
    for (size_t k = 0; k < judge_only; ++k) add(false, true);
    return w;
}

}  // namespace

TEST(Sampling, PublishedPlanSizes) {
    auto w = make_world(928, 974, 5000);
    SamplingPlan plan{851, 294, 294, 42};
    auto s = sample_for_annotation(w.records, w.detections, w.verdicts, plan);
    EXPECT_EQ(s.agreement.size(), 851u);
    EXPECT_EQ(s.disagreement.size(), 294u);
    EXPECT_EQ(s.undetected.size(), 294u);
    std::set<std::string> all;
    for (const auto* stratum : {&s.agreement, &s.disagreement, &s.undetected}) {
        for (const auto& r : *stratum) all.insert(r.id);
    }
    EXPECT_EQ(all.size(), 851u + 294u + 294u);
}

TEST(Sampling, PoolsPartitionRecords) {
    auto w = make_world(5, 6, 7, 3);
    w.records[0].excluded = true;
    auto p = build_pools(w.records, w.detections, w.verdicts);
    EXPECT_EQ(p.agreement.size(), 4u);
    EXPECT_EQ(p.disagreement.size(), 6u);
    EXPECT_EQ(p.undetected.size(), 7u);
    EXPECT_EQ(p.judge_only.size(), 3u);
    EXPECT_EQ(p.excluded, 1u);
    EXPECT_EQ(p.agreement.size() + p.disagreement.size() + p.undetected.size() + p.judge_only.size() + p.excluded,
              w.records.size());
}

TEST(Sampling, ExcludedVerdictsLeaveThePools) {
    auto w = make_world(3, 0, 0);
    w.verdicts[1].excluded = true;
    auto p = build_pools(w.records, w.detections, w.verdicts);
    EXPECT_EQ(p.agreement.size(), 2u);
    EXPECT_EQ(p.excluded, 1u);
}

TEST(Sampling, ZeroPlan) {
    auto w = make_world(3, 3, 3);
    auto s = sample_for_annotation(w.records, w.detections, w.verdicts, {0, 0, 0, 1});
    EXPECT_TRUE(s.agreement.empty());
    EXPECT_TRUE(s.disagreement.empty());
    EXPECT_TRUE(s.undetected.empty());
}

TEST(Sampling, SeedReproducible) {
    auto w = make_world(50, 50, 50);
    auto p = build_pools(w.records, w.detections, w.verdicts);
    auto a = sample_pools(p, {10, 10, 10, 7});
    auto b = sample_pools(p, {10, 10, 10, 7});
    auto c = sample_pools(p, {10, 10, 10, 8});
    EXPECT_EQ(a.agreement, b.agreement);
    EXPECT_EQ(a.disagreement, b.disagreement);
    EXPECT_EQ(a.undetected, b.undetected);
    EXPECT_NE(a.agreement, c.agreement);
}

TEST(Sampling, PinnedDraw) {
    // Frozen from tests/oracle/mt19937_64.py; a change here breaks
    // replication of published samples.
    Pools p;
    for (int i = 0; i < 10; ++i) p.agreement.push_back("a" + std::to_string(i));
    auto s = sample_pools(p, {3, 0, 0, 2025});
    EXPECT_EQ(s.agreement, (std::vector<std::string>{"a1", "a5", "a2"}));
}

TEST(Sampling, PoolTooSmall) {
    auto w = make_world(2, 5, 5);
    try {
        sample_for_annotation(w.records, w.detections, w.verdicts, {3, 0, 0, 1});
        FAIL();
    } catch (const SamplingError& e) {
        EXPECT_NE(std::string(e.what()).find("agreement pool has 2 records"), std::string::npos);
    }
}

TEST(Sampling, MissingInputs) {
    auto w = make_world(2, 2, 2);
    auto dets = w.detections;
    dets.pop_back();
    EXPECT_THROW(build_pools(w.records, dets, w.verdicts), SamplingError);
    auto vers = w.verdicts;
    vers.erase(vers.begin());
    EXPECT_THROW(build_pools(w.records, w.detections, vers), SamplingError);
}

TEST(Sampling, RandomizedDisjointness) {
    Rng meta(3);
    for (int iter = 0; iter < 100; ++iter) {
        auto w = make_world(meta.bounded(30), meta.bounded(30), meta.bounded(30), meta.bounded(5));
        auto p = build_pools(w.records, w.detections, w.verdicts);
        SamplingPlan plan{meta.bounded(p.agreement.size() + 1), meta.bounded(p.disagreement.size() + 1),
                          meta.bounded(p.undetected.size() + 1), meta.next()};
        auto s = sample_pools(p, plan);
        std::set<std::string> seen;
        size_t n = 0;
        for (auto st : {Stratum::agreement, Stratum::disagreement, Stratum::undetected}) {
            for (const auto& id : s.of(st)) {
                seen.insert(id);
                ++n;
            }
        }
        EXPECT_EQ(seen.size(), n);
        EXPECT_EQ(s.agreement.size(), plan.n_agreement);
        std::set<std::string> pool(p.agreement.begin(), p.agreement.end());
        for (const auto& id : s.agreement) EXPECT_TRUE(pool.count(id));
    }
}
