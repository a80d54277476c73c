#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <thread>

#include "tangles/providers.hpp"

using namespace tangles;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("tangles_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

Sleeper recording_sleeper(std::vector<std::chrono::milliseconds>& log) {
    return [&log](std::chrono::milliseconds d) { log.push_back(d); };
}

HttpResponse vectors_response(size_t n, size_t dim) {
    nlohmann::json vs = nlohmann::json::array();
    for (size_t i = 0; i < n; ++i) {
        std::vector<double> v(dim, 0.0);
        v[i % dim] = 1.0;
        v[(i + 1) % dim] += 0.5;
        vs.push_back(v);
    }
    return {200, nlohmann::json{{"vectors", vs}}.dump(), ""};
}

}  // namespace

TEST(HashingEmbedder, Deterministic) {
    HashingEmbedder a(384, 3), b(384, 3);
    auto x = a.embed({"The temple will be visible"})[0];
    auto y = b.embed({"The temple will be visible"})[0];
    EXPECT_EQ(x.values, y.values);
    EXPECT_EQ(x.dimension(), 384u);
}

TEST(HashingEmbedder, BagOfWordsOrdering) {
    HashingEmbedder e;
    auto v = e.embed({"a b c", "a b c d", "x y z"});
    EXPECT_GT(cosine_similarity(v[0], v[1]), cosine_similarity(v[0], v[2]));
    // Brute force on the fixed seed: 3 shared of 3 and 4 words.
    EXPECT_NEAR(cosine_similarity(v[0], v[1]), 3.0 / std::sqrt(12.0), 1e-12);
}

TEST(HashingEmbedder, CaseInsensitiveWords) {
    HashingEmbedder e;
    auto v = e.embed({"Church Bells", "church bells"});
    EXPECT_EQ(v[0].values, v[1].values);
    EXPECT_THROW(e.embed({"   "}), DetectError);
}

TEST(CachedEmbedder, SecondCallHitsCache) {
    std::atomic<int> calls{0};
    HttpPost post = [&](const HttpRequest& req) {
        ++calls;
        auto n = nlohmann::json::parse(req.body)["texts"].size();
        return vectors_response(n, 4);
    };
    std::vector<std::chrono::milliseconds> slept;
    HttpEmbedder http({"http://embed.local/v1"}, post, recording_sleeper(slept));
    CachedEmbedder cached(http);
    auto first = cached.embed({"alpha", "beta"});
    EXPECT_EQ(calls.load(), 1);
    auto second = cached.embed({"beta", "alpha"});
    EXPECT_EQ(calls.load(), 1);
    EXPECT_EQ(second[0].values, first[1].values);
    EXPECT_EQ(cached.hits(), 2u);
    cached.embed({"alpha", "gamma"});
    EXPECT_EQ(calls.load(), 2);
}

TEST(CachedEmbedder, PersistsAndSurvivesCorruption) {
    const auto dir = temp_dir("cache");
    HashingEmbedder inner(16, 1);
    {
        CachedEmbedder c(inner, dir);
        c.embed({"persisted text"});
    }
    size_t files = 0;
    fs::path entry;
    for (const auto& p : fs::recursive_directory_iterator(dir)) {
        if (p.is_regular_file()) {
            ++files;
            entry = p.path();
        }
    }
    ASSERT_EQ(files, 1u);
    {
        CachedEmbedder c(inner, dir);
        auto v = c.embed({"persisted text"});
        EXPECT_EQ(c.hits(), 1u);
        EXPECT_EQ(v[0].values, inner.embed({"persisted text"})[0].values);
    }
    io::write_file(entry, "{not json");
    {
        CachedEmbedder c(inner, dir);
        auto v = c.embed({"persisted text"});
        EXPECT_EQ(c.hits(), 0u);
        EXPECT_EQ(v[0].values, inner.embed({"persisted text"})[0].values);
    }
    fs::remove_all(dir);
}

TEST(CachedEmbedder, ConcurrentWriters) {
    const auto dir = temp_dir("cache_mt");
    HashingEmbedder inner(8, 2);
    CachedEmbedder c(inner, dir);
    std::vector<std::thread> ts;
    for (int t = 0; t < 4; ++t) {
        ts.emplace_back([&] {
            for (int i = 0; i < 50; ++i) c.embed({"text " + std::to_string(i % 10)});
        });
    }
    for (auto& t : ts) t.join();
    CachedEmbedder fresh(inner, dir);
    for (int i = 0; i < 10; ++i) fresh.embed({"text " + std::to_string(i)});
    EXPECT_EQ(fresh.hits(), 10u);
    fs::remove_all(dir);
}

TEST(HttpEmbedder, RetriesTransientFailures) {
    int calls = 0;
    HttpPost post = [&](const HttpRequest& req) -> HttpResponse {
        ++calls;
        if (calls == 1) return {0, "", "connection refused"};
        if (calls == 2) return {429, "slow down", ""};
        if (calls == 3) return {503, "", ""};
        EXPECT_EQ(req.url, "http://e/v1");
        return vectors_response(1, 3);
    };
    std::vector<std::chrono::milliseconds> slept;
    HttpProviderOptions o{"http://e/v1"};
    o.api_key = "k";
    HttpEmbedder e(o, post, recording_sleeper(slept));
    auto v = e.embed({"x"});
    EXPECT_EQ(calls, 4);
    ASSERT_EQ(slept.size(), 3u);
    for (size_t i = 0; i < slept.size(); ++i) EXPECT_LE(slept[i].count(), 1000 << i);
}

TEST(HttpEmbedder, PermanentAndExhaustedFailures) {
    int calls = 0;
    std::vector<std::chrono::milliseconds> slept;
    HttpEmbedder denied({"http://e"}, [&](const HttpRequest&) -> HttpResponse {
        ++calls;
        return {401, "bad key", ""};
    }, recording_sleeper(slept));
    try {
        denied.embed({"x"});
        FAIL();
    } catch (const ProviderError& e) {
        EXPECT_FALSE(e.retryable());
    }
    EXPECT_EQ(calls, 1);

    calls = 0;
    HttpEmbedder down({"http://e"}, [&](const HttpRequest&) -> HttpResponse {
        ++calls;
        return {500, "", ""};
    }, recording_sleeper(slept));
    EXPECT_THROW(down.embed({"x"}), ProviderError);
    EXPECT_EQ(calls, 5);
}

TEST(HttpEmbedder, DimensionChecks) {
    std::vector<std::chrono::milliseconds> slept;
    HttpEmbedder wrong({"http://e"}, [](const HttpRequest&) { return vectors_response(1, 3); },
                       recording_sleeper(slept), 384);
    EXPECT_THROW(wrong.embed({"x"}), ProviderError);
    HttpEmbedder ragged({"http://e"}, [](const HttpRequest&) -> HttpResponse {
        return {200, R"({"vectors":[[1,2],[1,2,3]]})", ""};
    }, recording_sleeper(slept));
    EXPECT_THROW(ragged.embed({"x", "y"}), ProviderError);
    HttpEmbedder count({"http://e"}, [](const HttpRequest&) { return vectors_response(1, 2); },
                       recording_sleeper(slept));
    EXPECT_THROW(count.embed({"x", "y"}), ProviderError);
}

TEST(Backoff, DelayBounds) {
    BackoffPolicy p;
    Rng rng(5);
    for (int attempt = 1; attempt <= 8; ++attempt) {
        const long long ceiling = std::min<long long>(30000, 1000LL << (attempt - 1));
        for (int i = 0; i < 200; ++i) {
            auto d = backoff_delay(p, attempt, rng).count();
            EXPECT_GE(d, 0);
            EXPECT_LE(d, ceiling);
        }
    }
}

TEST(Limiter, CapsInFlight) {
    InFlightLimiter lim(2);
    std::atomic<int> current{0}, worst{0};
    std::vector<std::thread> ts;
    for (int t = 0; t < 6; ++t) {
        ts.emplace_back([&] {
            for (int i = 0; i < 20; ++i) {
                InFlightLimiter::Slot s(lim);
                int now = ++current;
                int w = worst.load();
                while (now > w && !worst.compare_exchange_weak(w, now)) {
                }
                std::this_thread::sleep_for(std::chrono::microseconds(50));
                --current;
            }
        });
    }
    for (auto& t : ts) t.join();
    EXPECT_LE(worst.load(), 2);
    EXPECT_LE(lim.peak(), 2u);
}

TEST(GazetteerNer, MatchesWholeWordsAndPossessives) {
    auto g = GazetteerNer::from_file(fs::path(TANGLES_DATA_DIR) / "gazetteer.tsv");
    EXPECT_GT(g.size(), 50u);
    auto es = g.entities("Christ's message reached Texas before Jesus Christ did.");
    ASSERT_EQ(es.size(), 3u);
    EXPECT_EQ(es[0].surface, "Christ");
    EXPECT_EQ(es[0].entity_type, "RELIGION");
    EXPECT_EQ(es[0].start, 0u);
    EXPECT_EQ(es[0].end, 6u);
    EXPECT_EQ(es[1].surface, "Texas");
    EXPECT_EQ(es[1].entity_type, "GPE");
    EXPECT_EQ(es[2].surface, "Jesus Christ");
    EXPECT_TRUE(g.entities("the texas ranger").empty());
    EXPECT_TRUE(g.entities("Texasville").empty());
}

TEST(GazetteerNer, SpansAreCodePointOffsets) {
    GazetteerNer g;
    g.add("Zoë", "PERSON");
    auto es = g.entities("Ünïcode Zoë");
    ASSERT_EQ(es.size(), 1u);
    EXPECT_EQ(es[0].start, 8u);
    EXPECT_EQ(es[0].end, 11u);
}

TEST(HttpNer, ParsesAndValidatesEntities) {
    std::vector<std::chrono::milliseconds> slept;
    HttpNer ner({"http://n"}, [](const HttpRequest& req) -> HttpResponse {
        auto text = nlohmann::json::parse(req.body)["text"].get<std::string>();
        EXPECT_EQ(text, "Anna lives in Texas");
        return {200, R"({"entities":[{"surface":"Anna","type":"PERSON","start":0,"end":4}]})", ""};
    }, recording_sleeper(slept));
    auto es = ner.entities("Anna lives in Texas");
    ASSERT_EQ(es.size(), 1u);
    EXPECT_EQ(es[0].entity_type, "PERSON");

    HttpNer bad({"http://n"}, [](const HttpRequest&) -> HttpResponse {
        return {200, R"({"entities":[{"surface":"Anna","type":"PERSON","start":3,"end":99}]})", ""};
    }, recording_sleeper(slept));
    EXPECT_THROW(bad.entities("Anna"), ProviderError);
}

TEST(ReplayNer, UnknownTextsHaveNoEntities) {
    ReplayNer r;
    r.set("Anna", {{"Anna", "PERSON", 0, 4}});
    EXPECT_EQ(r.entities("Anna").size(), 1u);
    EXPECT_TRUE(r.entities("Bob").empty());
}
