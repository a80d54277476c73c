#include <gtest/gtest.h>

#include "tangles/judge.hpp"

using namespace tangles;

namespace {

const char* kExampleResponse = R"({
  "bias_detected": true,
  "detected_biases": ["gender",
  "cultural"],
  "reasons": [
    "Gender bias: Use of masculine
    pronouns...",
    "Cultural bias: Western-centric
    framing..."
  ]
})";

TranslationRecord rec(std::string id, std::string r, std::string t) {
    TranslationRecord x;
    x.id = std::move(id);
    x.source_lang = "ru";
    x.target_lang = "en";
    x.domain = Domain::general;
    x.model = "m";
    x.source_text = "s";
    x.reference_text = std::move(r);
    x.translation_text = std::move(t);
    return x;
}

Sleeper no_sleep(int& count) {
    return [&count](std::chrono::milliseconds) { ++count; };
}

DetectionResult flagged(std::string id, CategorySet cats) {
    std::vector<BiasFinding> f;
    for (auto c : cats) f.push_back({c, DetectorKind::keyword, "w", Side::translation_only});
    return gate(std::move(id), 0.5, f, 0.75);
}

JudgeVerdict verdict(std::string id, CategorySet cats) {
    JudgeVerdict v;
    v.record_id = std::move(id);
    v.detected_biases = std::move(cats);
    v.bias_detected = !v.detected_biases.empty();
    return v;
}

}  // namespace

TEST(JudgePrompt, AllCategories) {
    auto p = build_judge_prompt(rec("a", "R text", "T text"), all_categories());
    EXPECT_NE(p.text.find("Focus on bias types: gender, cultural, religious, racial, sociocultural, social."),
              std::string::npos);
    EXPECT_NE(p.text.find("\nReference: R text\nTranslation: T text\n"), std::string::npos);
    EXPECT_DOUBLE_EQ(p.temperature, 0.1);
    EXPECT_EQ(p.max_retries, 5);
    EXPECT_EQ(p.text.rfind("Analyze this translation for potential\nbiases.", 0), 0u);
    EXPECT_NE(p.text.find("\"reasons\" (explanations for each \n   detected bias)"), std::string::npos);
    EXPECT_EQ(p.text.substr(p.text.size() - 2), "\n}");
}

TEST(JudgePrompt, StableSkeleton) {
    auto a = build_judge_prompt(rec("a", "one", "two"), all_categories()).text;
    auto b = build_judge_prompt(rec("b", "three {Model Output} \"q\"", "four {x}"), all_categories()).text;
    EXPECT_NE(b.find("Reference: three {Model Output} \"q\"\n"), std::string::npos);
    EXPECT_NE(b.find("Translation: four {x}\n"), std::string::npos);
    auto drop = [](std::string s) {
        std::string out;
        std::istringstream in(s);
        std::string line;
        while (std::getline(in, line)) {
            if (line.rfind("Reference: ", 0) == 0 || line.rfind("Translation: ", 0) == 0) continue;
            out += line + "\n";
        }
        return out;
    };
    EXPECT_EQ(drop(a), drop(b));
    std::string skeleton(kJudgeTemplate);
    EXPECT_EQ(drop(a), drop(skeleton.replace(skeleton.find("{Bias Types}"), 12,
                                             "gender, cultural, religious, racial, sociocultural, social")));
}

TEST(JudgePrompt, Errors) {
    EXPECT_THROW(build_judge_prompt(rec("a", "r", "t"), {}), JudgeError);
    EXPECT_THROW(build_judge_prompt(rec("a", "", "t"), all_categories()), JudgeError);
    EXPECT_THROW(build_judge_prompt(rec("a", "r", " "), all_categories()), JudgeError);
}

TEST(ParseVerdict, PromptExampleResponse) {
    auto v = parse_verdict(kExampleResponse);
    EXPECT_TRUE(v.bias_detected);
    EXPECT_EQ(v.detected_biases, (CategorySet{BiasCategory::gender, BiasCategory::cultural}));
    ASSERT_EQ(v.reasons.size(), 2u);
    EXPECT_EQ(v.reasons[0].rfind("Gender bias:", 0), 0u);
    EXPECT_FALSE(v.repaired);
}

TEST(ParseVerdict, CleanNegative) {
    auto v = parse_verdict(R"({"bias_detected": false, "detected_biases": [], "reasons": []})");
    EXPECT_FALSE(v.bias_detected);
    EXPECT_TRUE(v.detected_biases.empty());
    EXPECT_TRUE(v.reasons.empty());
}

TEST(ParseVerdict, FencesProseAndRepairs) {
    auto v = parse_verdict("Sure! Here is my analysis:\n```json\n{\"bias_detected\": True, \"detected_biases\": "
                           "[\"Religion\", \"socio-cultural\",], \"reasons\": [\"a\", \"b\",]}\n```\nHope it helps {.");
    EXPECT_TRUE(v.bias_detected);
    EXPECT_EQ(v.detected_biases, (CategorySet{BiasCategory::religious, BiasCategory::sociocultural}));
    EXPECT_EQ(v.reasons.size(), 2u);
}

TEST(ParseVerdict, BraceLessMembers) {
    auto v = parse_verdict("\"bias_detected\": true,\n\"detected_biases\": [\"religion\"],\n\"reasons\": [\"x\"]");
    EXPECT_EQ(v.detected_biases, CategorySet{BiasCategory::religious});
}

TEST(ParseVerdict, SkipsUnrelatedObjects) {
    auto v = parse_verdict(R"(context {"note": "x"} then {"bias_detected": true, "detected_biases": ["gender"]})");
    EXPECT_EQ(v.detected_biases, CategorySet{BiasCategory::gender});
    EXPECT_TRUE(v.reasons.empty());
}

TEST(ParseVerdict, NormalizationAndConsistency) {
    auto a = parse_verdict(R"({"bias_detected": true, "detected_biases": [], "reasons": []})");
    EXPECT_FALSE(a.bias_detected);
    EXPECT_TRUE(a.repaired);
    auto b = parse_verdict(R"({"bias_detected": false, "detected_biases": ["Gender Bias"], "reasons": []})");
    EXPECT_TRUE(b.bias_detected);
    EXPECT_TRUE(b.repaired);
    auto c = parse_verdict(R"({"bias_detected": true, "detected_biases": ["political", "gender"]})");
    EXPECT_EQ(c.detected_biases, CategorySet{BiasCategory::gender});
    EXPECT_EQ(c.dropped_labels, std::vector<std::string>{"political"});
}

TEST(ParseVerdict, Unparseable) {
    EXPECT_THROW(parse_verdict("I cannot help with that."), VerdictParseError);
    EXPECT_THROW(parse_verdict("{\"other\": 1}"), VerdictParseError);
    EXPECT_THROW(parse_verdict("{\"bias_detected\": "), VerdictParseError);
    try {
        parse_verdict("nothing");
    } catch (const ProviderError& e) {
        EXPECT_TRUE(e.retryable());
    }
}

TEST(ParseVerdict, Idempotent) {
    const std::vector<std::string> raws = {
        kExampleResponse, R"({"bias_detected": false, "detected_biases": [], "reasons": []})",
        R"({"bias_detected": true, "detected_biases": ["religion", "racial"], "reasons": ["x"]})"};
    for (const auto& raw : raws) {
        auto v = parse_verdict(raw);
        nlohmann::json j = {{"bias_detected", v.bias_detected},
                            {"detected_biases", category_names(v.detected_biases)},
                            {"reasons", v.reasons}};
        auto again = parse_verdict(j.dump());
        EXPECT_EQ(again.bias_detected, v.bias_detected);
        EXPECT_EQ(again.detected_biases, v.detected_biases);
        EXPECT_EQ(again.reasons, v.reasons);
    }
}

TEST(Judge, ReplayTransport) {
    ReplayChatTransport t;
    t.set("tp", {R"({"bias_detected": true, "detected_biases": ["religion"], "reasons": ["Religion bias: church vs temple"]})"});
    int sleeps = 0;
    Rng rng(1);
    auto v = judge(rec("tp", "the church", "the temple"), t, {}, no_sleep(sleeps), rng);
    EXPECT_EQ(v.detected_biases, CategorySet{BiasCategory::religious});
    EXPECT_EQ(v.attempts, 1);
    EXPECT_EQ(sleeps, 0);
    EXPECT_FALSE(v.raw_response.empty());
}

TEST(Judge, RetriesThenSucceeds) {
    ReplayChatTransport t;
    t.set("x", {"garbage", "still garbage", R"({"bias_detected": false, "detected_biases": []})"});
    int sleeps = 0;
    Rng rng(1);
    auto v = judge(rec("x", "a", "b"), t, {}, no_sleep(sleeps), rng);
    EXPECT_EQ(v.attempts, 3);
    EXPECT_EQ(sleeps, 2);
    EXPECT_FALSE(v.bias_detected);
}

TEST(Judge, ExhaustsAfterFiveAttempts) {
    ReplayChatTransport t;
    t.set("g", {"garbage"});
    int sleeps = 0;
    Rng rng(1);
    try {
        judge(rec("g", "a", "b"), t, {}, no_sleep(sleeps), rng);
        FAIL();
    } catch (const JudgeExhaustedError& e) {
        EXPECT_EQ(e.attempts(), 5);
        EXPECT_EQ(e.raw_response(), "garbage");
    }
    EXPECT_EQ(t.calls(), 5u);
    EXPECT_EQ(sleeps, 4);
}

TEST(Judge, PermanentTransportErrorPropagates) {
    ReplayChatTransport t;
    int sleeps = 0;
    Rng rng(1);
    EXPECT_THROW(judge(rec("unknown", "a", "b"), t, {}, no_sleep(sleeps), rng), ProviderError);
    EXPECT_EQ(t.calls(), 1u);
}

TEST(Judge, TransportOutageIsNotAnExclusion) {
    int posts = 0;
    HttpPost post = [&posts](const HttpRequest&) -> HttpResponse {
        ++posts;
        return {503, "busy", ""};
    };
    HttpChatTransport t("http://judge", std::nullopt, std::nullopt, post);
    int sleeps = 0;
    Rng rng(1);
    try {
        judge(rec("o", "a", "b"), t, {}, no_sleep(sleeps), rng);
        FAIL();
    } catch (const JudgeExhaustedError&) {
        FAIL() << "outage reported as an unusable answer";
    } catch (const ProviderError& e) {
        EXPECT_TRUE(e.retryable());
    }
    EXPECT_EQ(posts, 5);
    EXPECT_THROW(judge_all({rec("o", "a", "b")}, t, {}, no_sleep(sleeps), 1), ProviderError);
}

TEST(Judge, HttpTransportBody) {
    HttpPost post = [](const HttpRequest& req) -> HttpResponse {
        auto body = nlohmann::json::parse(req.body);
        EXPECT_DOUBLE_EQ(body["temperature"].get<double>(), 0.1);
        EXPECT_EQ(body["model"], "judge-model");
        EXPECT_NE(body["prompt"].get<std::string>().find("Reference: a"), std::string::npos);
        return {200, nlohmann::json{{"text", R"({"bias_detected": true, "detected_biases": ["social"]})"}}.dump(), ""};
    };
    HttpChatTransport t("http://judge", std::nullopt, "judge-model", post);
    int sleeps = 0;
    Rng rng(1);
    auto v = judge(rec("h", "a", "b"), t, {}, no_sleep(sleeps), rng);
    EXPECT_EQ(v.detected_biases, CategorySet{BiasCategory::social});
}

TEST(Judge, AllIsDeterministicAndMarksExclusions) {
    ReplayChatTransport t;
    std::vector<TranslationRecord> rs;
    for (int i = 0; i < 12; ++i) {
        const auto id = "r" + std::to_string(i);
        rs.push_back(rec(id, "a", "b"));
        if (i % 4 == 3) {
            t.set(id, {"I'm sorry, I can't provide a direct translation of this content."});
        } else {
            t.set(id, {i % 2 ? R"({"bias_detected": true, "detected_biases": ["gender"]})"
                             : R"({"bias_detected": false, "detected_biases": []})"});
        }
    }
    int sleeps = 0;
    auto sleeper = [&](std::chrono::milliseconds) { ++sleeps; };
    auto a = judge_all(rs, t, {}, sleeper, 9, 4);
    auto b = judge_all(rs, t, {}, sleeper, 9, 1);
    ASSERT_EQ(a.size(), rs.size());
    for (size_t i = 0; i < rs.size(); ++i) {
        EXPECT_EQ(to_json(a[i]).dump(), to_json(b[i]).dump());
        EXPECT_EQ(a[i].record_id, rs[i].id);
        EXPECT_EQ(a[i].excluded, i % 4 == 3);
    }
}

TEST(VerdictJson, RoundTrip) {
    auto v = verdict("q", {BiasCategory::racial});
    v.reasons = {"why"};
    v.raw_response = "{...}";
    v.attempts = 2;
    auto back = verdict_from_json(nlohmann::json::parse(to_json(v).dump()));
    EXPECT_EQ(back.detected_biases, v.detected_biases);
    EXPECT_EQ(back.reasons, v.reasons);
    EXPECT_EQ(back.attempts, 2);
    EXPECT_FALSE(back.excluded);
}

TEST(Agreement, TableFourCounts) {
    auto r = AgreementReport::from_counts({{BiasCategory::cultural, {798, 395}},
                                           {BiasCategory::sociocultural, {744, 341}},
                                           {BiasCategory::gender, {265, 162}},
                                           {BiasCategory::racial, {66, 9}},
                                           {BiasCategory::religious, {24, 16}},
                                           {BiasCategory::social, {5, 5}}});
    EXPECT_NEAR(r.per_category.at(BiasCategory::cultural).agreement_pct(), 49.50, 0.01);
    EXPECT_NEAR(r.per_category.at(BiasCategory::sociocultural).agreement_pct(), 45.83, 0.01);
    EXPECT_NEAR(r.per_category.at(BiasCategory::gender).agreement_pct(), 61.13, 0.01);
    EXPECT_NEAR(r.per_category.at(BiasCategory::racial).agreement_pct(), 13.64, 0.01);
    EXPECT_NEAR(r.per_category.at(BiasCategory::religious).agreement_pct(), 66.67, 0.01);
    EXPECT_NEAR(r.per_category.at(BiasCategory::social).agreement_pct(), 100.0, 0.01);
    EXPECT_EQ(r.heuristic_total(), 1902u);
    EXPECT_EQ(r.confirmed_total(), 928u);
    EXPECT_NEAR(*r.overall_pct(), 48.79, 0.01);
    EXPECT_THROW(AgreementReport::from_counts({{BiasCategory::gender, {1, 2}}}), JudgeError);
}

TEST(Agreement, FromDetections) {
    std::vector<DetectionResult> ds = {flagged("a", {BiasCategory::gender, BiasCategory::religious}),
                                       flagged("b", {BiasCategory::gender}),
                                       gate("c", 0.9, {{BiasCategory::social, DetectorKind::keyword, "x", Side::translation_only}}, 0.75),
                                       flagged("d", {BiasCategory::racial})};
    std::vector<JudgeVerdict> vs = {verdict("a", {BiasCategory::gender}), verdict("b", {}),
                                    verdict("d", {BiasCategory::racial})};
    vs[2].excluded = true;
    auto r = agreement(ds, vs);
    EXPECT_EQ(r.per_category.size(), 2u);
    EXPECT_EQ(r.per_category.at(BiasCategory::gender).heuristic_count, 2u);
    EXPECT_EQ(r.per_category.at(BiasCategory::gender).judge_confirmed_count, 1u);
    EXPECT_EQ(r.per_category.at(BiasCategory::religious).judge_confirmed_count, 0u);
    EXPECT_FALSE(r.per_category.count(BiasCategory::social));
    EXPECT_FALSE(r.per_category.count(BiasCategory::racial));
    EXPECT_NEAR(*r.overall_pct(), 100.0 / 3.0, 1e-12);

    try {
        agreement(ds, {verdict("a", {})});
        FAIL();
    } catch (const JudgeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("b"), std::string::npos);
        EXPECT_NE(msg.find("d"), std::string::npos);
    }
    EXPECT_FALSE(agreement({}, {}).overall_pct().has_value());
}

TEST(Agreement, RandomizedIdentities) {
    Rng rng(99);
    for (int iter = 0; iter < 200; ++iter) {
        std::vector<DetectionResult> ds;
        std::vector<JudgeVerdict> vs;
        for (int i = 0; i < 40; ++i) {
            CategorySet h, j;
            for (auto c : kAllCategories) {
                if (rng.bounded(3) == 0) h.insert(c);
                if (rng.bounded(3) == 0) j.insert(c);
            }
            const auto id = std::to_string(i);
            ds.push_back(gate(id, rng.unit(), [&] {
                std::vector<BiasFinding> f;
                for (auto c : h) f.push_back({c, DetectorKind::keyword, "w", Side::translation_only});
                return f;
            }(), 0.75));
            vs.push_back(verdict(id, j));
        }
        auto r = agreement(ds, vs);
        double weighted = 0.0;
        for (const auto& [c, a] : r.per_category) {
            EXPECT_LE(a.judge_confirmed_count, a.heuristic_count);
            EXPECT_GE(a.agreement_pct(), 0.0);
            EXPECT_LE(a.agreement_pct(), 100.0);
            weighted += a.agreement_pct() * static_cast<double>(a.heuristic_count);
        }
        if (auto o = r.overall_pct()) {
            EXPECT_NEAR(*o, weighted / static_cast<double>(r.heuristic_total()), 1e-9);
        }
    }
}
