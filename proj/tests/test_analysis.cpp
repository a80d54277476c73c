#include <gtest/gtest.h>

#include "tangles/analysis.hpp"

using namespace tangles;

namespace {

nlohmann::json load_fixture(const std::string& name) {
    return nlohmann::json::parse(io::read_file(std::filesystem::path(TANGLES_FIXTURE_DIR) / name));
}

DetectionResult det(std::string id, double sim, CategorySet cats, double tau = 0.75) {
    std::vector<BiasFinding> f;
    for (auto c : cats) f.push_back({c, DetectorKind::keyword, "w", Side::translation_only});
    return gate(std::move(id), sim, f, tau);
}

TranslationRecord rec(std::string id, std::string src, std::string tgt, std::string model) {
    TranslationRecord r;
    r.id = std::move(id);
    r.source_lang = std::move(src);
    r.target_lang = std::move(tgt);
    r.model = std::move(model);
    r.source_text = r.reference_text = r.translation_text = "x";
    return r;
}

ThresholdSweep sweep_with_totals(std::vector<size_t> totals) {
    ThresholdSweep s;
    s.thresholds = default_threshold_grid();
    s.total_counts = std::move(totals);
    return s;
}

}  // namespace

TEST(Family, Classification) {
    const auto t = FamilyTable::builtin();
    EXPECT_EQ(t.classify("fr", "es"), PairClass::intra);
    EXPECT_EQ(t.classify("gu", "de"), PairClass::cross);
    EXPECT_EQ(t.classify("zh", "en"), PairClass::cross);
    EXPECT_EQ(t.classify("de", "en"), PairClass::intra);
    EXPECT_EQ(t.classify("cs", "ru"), PairClass::intra);
    EXPECT_EQ(t.classify("et", "fi"), PairClass::intra);
    EXPECT_EQ(t.classify("lt", "cs"), PairClass::cross);
    EXPECT_EQ(t.classify("tr", "kk"), PairClass::intra);
    EXPECT_EQ(t.classify("fr", "de"), PairClass::cross);
    EXPECT_THROW(t.classify("xx", "en"), AnalysisError);
    for (auto code : {"en", "de", "fr", "es", "cs", "ru", "lt", "gu", "bn", "et", "fi", "tr", "kk", "zh"}) {
        EXPECT_NO_THROW(t.at(code));
    }
}

TEST(Family, SizeClasses) {
    EXPECT_EQ(size_class_for_params(2), SizeClass::small);
    EXPECT_EQ(size_class_for_params(7), SizeClass::small);
    EXPECT_EQ(size_class_for_params(9), SizeClass::medium);
    EXPECT_EQ(size_class_for_params(30), SizeClass::medium);
    EXPECT_EQ(size_class_for_params(70), SizeClass::large);
    EXPECT_THROW(size_class_for_params(0), AnalysisError);
}

TEST(Family, AggregatesMatchSpreadsheetOracle) {
    const auto doc = load_fixture("aggregate_oracle.json");
    std::vector<TranslationRecord> records;
    std::vector<metrics::MetricReport> reports;
    for (const auto& row : doc["rows"]) {
        auto r = rec(row["id"], row["source_lang"], row["target_lang"], row["model"]);
        r.domain = *parse_domain(row["domain"].get<std::string>());
        records.push_back(r);
        metrics::MetricReport m;
        m.record_id = r.id;
        m.bleu = row["bleu"];
        m.bertscore = row["bertscore"].get<double>();
        if (row.contains("comet")) m.comet = row["comet"].get<double>();
        reports.push_back(m);
    }
    std::map<std::string, SizeClass> sizes;
    for (const auto& [model, cls] : doc["size_classes"].items()) sizes[model] = *parse_size_class(cls.get<std::string>());

    auto check = [](const std::vector<metrics::CorpusAggregate>& got, const nlohmann::json& expected) {
        ASSERT_EQ(got.size(), expected.size());
        for (const auto& a : got) {
            const auto& e = expected.at(a.group_key);
            EXPECT_EQ(a.n, e["n"].get<size_t>());
            for (auto [m, name] : {std::pair{metrics::Metric::bleu, "bleu"}, std::pair{metrics::Metric::bertscore, "bertscore"},
                                   std::pair{metrics::Metric::comet, "comet"}}) {
                ASSERT_TRUE(e.contains(name));
                const auto& s = a.stats.at(m);
                EXPECT_NEAR(s.mean, e[name]["mean"].get<double>(), 1e-9) << a.group_key << " " << name;
                EXPECT_NEAR(s.std, e[name]["std"].get<double>(), 1e-9) << a.group_key << " " << name;
                EXPECT_EQ(s.n, e[name]["n"].get<size_t>());
            }
        }
    };
    const auto fam = family_aggregates(reports, records, FamilyTable::builtin(), sizes);
    check(fam, doc["expected_family"]);
    const auto dom = metrics::aggregate(reports, metrics::record_key(records, metrics::GroupBy::domain));
    check(dom, doc["expected_domain"]);

    // Weighted recombination of group means recovers the global mean.
    double weighted = 0.0;
    size_t n = 0;
    for (const auto& a : fam) {
        weighted += a.stats.at(metrics::Metric::bleu).mean * static_cast<double>(a.n);
        n += a.n;
    }
    EXPECT_NEAR(weighted / static_cast<double>(n), doc["expected_global_bleu_mean"].get<double>(), 1e-9);

    sizes.erase("big-70b");
    EXPECT_THROW(family_aggregates(reports, records, FamilyTable::builtin(), sizes), AnalysisError);
}

TEST(Sweep, SingleRecord) {
    auto s = sweep_thresholds({det("a", 0.747, {BiasCategory::religious})});
    const auto& c = s.per_category_counts.at(BiasCategory::religious);
    EXPECT_EQ(c, (std::vector<size_t>{0, 0, 0, 1, 1, 1, 1, 1}));
    EXPECT_EQ(s.total_counts, c);
    EXPECT_EQ(s.normalized.at(BiasCategory::religious).back(), 1.0);
    EXPECT_FALSE(s.normalized.count(BiasCategory::gender));
}

TEST(Sweep, GateNeverOpens) {
    auto s = sweep_thresholds({det("a", 0.95, {BiasCategory::gender}), det("b", 0.99, {BiasCategory::social})});
    for (auto t : s.total_counts) EXPECT_EQ(t, 0u);
    EXPECT_THROW(sweep_thresholds({}), AnalysisError);
}

TEST(Sweep, GridIsExact) {
    const auto g = default_threshold_grid();
    ASSERT_EQ(g.size(), 8u);
    EXPECT_EQ(g[3], 0.75);
    EXPECT_EQ(g.front(), 0.60);
    EXPECT_EQ(g.back(), 0.95);
}

TEST(Sweep, RandomizedAgainstBruteForceAndMonotone) {
    Rng rng(17);
    for (int iter = 0; iter < 50; ++iter) {
        std::vector<DetectionResult> ds;
        for (int i = 0; i < 200; ++i) {
            CategorySet cats;
            for (auto c : kAllCategories) {
                if (rng.bounded(4) == 0) cats.insert(c);
            }
            // Include exact grid values to exercise the strict inequality.
            const double sim = rng.bounded(5) == 0 ? default_threshold_grid()[rng.bounded(8)] : rng.unit();
            ds.push_back(det(std::to_string(i), sim, cats));
        }
        auto s = sweep_thresholds(ds);
        for (size_t t = 0; t < s.thresholds.size(); ++t) {
            size_t total = 0;
            for (auto c : kAllCategories) {
                size_t brute = 0;
                for (const auto& d : ds) brute += d.similarity < s.thresholds[t] && d.detected_categories.count(c);
                EXPECT_EQ(s.per_category_counts.at(c)[t], brute);
                total += brute;
                if (t > 0) {
                    EXPECT_LE(s.per_category_counts.at(c)[t - 1], s.per_category_counts.at(c)[t]);
                }
            }
            EXPECT_EQ(s.total_counts[t], total);
        }
    }
}

TEST(Knee, ReferenceCurves) {
    auto k = knee_threshold(sweep_with_totals({100, 150, 180, 195, 200, 201, 202, 202}));
    EXPECT_EQ(k.threshold, 0.75);
    EXPECT_TRUE(k.stabilized);

    k = knee_threshold(sweep_with_totals({50, 50, 50, 50, 50, 50, 50, 50}));
    EXPECT_EQ(k.threshold, 0.60);
    EXPECT_TRUE(k.stabilized);

    k = knee_threshold(sweep_with_totals({1, 2, 4, 8, 16, 32, 64, 128}));
    EXPECT_EQ(k.threshold, 0.95);
    EXPECT_FALSE(k.stabilized);

    k = knee_threshold(sweep_with_totals({0, 0, 0, 0, 0, 0, 0, 0}));
    EXPECT_EQ(k.threshold, 0.60);

    // A late jump after an early plateau keeps the knee after the jump.
    k = knee_threshold(sweep_with_totals({100, 100, 100, 100, 100, 150, 151, 151}));
    EXPECT_EQ(k.threshold, 0.85);

    // Configurable epsilon.
    k = knee_threshold(sweep_with_totals({100, 150, 180, 195, 200, 201, 202, 202}), 0.10);
    EXPECT_EQ(k.threshold, 0.70);

    ThresholdSweep tiny;
    tiny.thresholds = {0.6, 0.7};
    tiny.total_counts = {1, 2};
    EXPECT_THROW(knee_threshold(tiny), AnalysisError);
}

TEST(Heatmap, CountsAndTotals) {
    std::vector<TranslationRecord> records;
    std::vector<DetectionResult> ds;
    int n = 0;
    auto add = [&](const std::string& model, const std::string& src, CategorySet cats, double sim = 0.5) {
        const auto id = "h" + std::to_string(n++);
        records.push_back(rec(id, src, "en", model));
        ds.push_back(det(id, sim, cats));
    };
    for (int i = 0; i < 3; ++i) add("A", "gu", {BiasCategory::cultural});
    add("A", "de", {BiasCategory::cultural}, 0.9);  // below the gate: not counted
    add("B", "kk", {BiasCategory::gender, BiasCategory::social});
    add("C", "fi", {});
    auto by_model = bias_heatmap(ds, records, HeatmapAxis::model);
    EXPECT_EQ(by_model.cell("A", BiasCategory::cultural), 3u);
    EXPECT_EQ(by_model.row_total("B"), 2u);
    EXPECT_EQ(by_model.row_total("C"), 0u);
    auto by_pair = bias_heatmap(ds, records, HeatmapAxis::language_pair);
    EXPECT_EQ(by_pair.row_total("gu-en"), 3u);
    EXPECT_EQ(by_model.total(), by_pair.total());
    EXPECT_EQ(by_model.total(), 5u);

    auto empty = bias_heatmap({}, records, HeatmapAxis::model);
    EXPECT_EQ(empty.rows.size(), 3u);
    EXPECT_EQ(empty.total(), 0u);

    ds.push_back(det("ghost", 0.1, {BiasCategory::gender}));
    EXPECT_THROW(bias_heatmap(ds, records, HeatmapAxis::model), AnalysisError);

    const auto csv = heatmap_csv(by_model);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "model,gender,cultural,religious,racial,sociocultural,social,total");
}

TEST(Heatmap, PairTotalsFromReportedCounts) {
    // Per-pair totals reported for the bias study, cultural share of gu-en.
    const std::map<std::string, size_t> totals = {{"gu-en", 220}, {"kk-en", 177}, {"fi-en", 172},
                                                  {"lt-en", 171}, {"de-en", 46},  {"zh-en", 93}};
    std::vector<TranslationRecord> records;
    std::vector<DetectionResult> ds;
    int n = 0;
    Rng rng(5);
    for (const auto& [pair, total] : totals) {
        const auto src = pair.substr(0, 2);
        size_t left = total;
        size_t cultural = pair == "gu-en" ? 183 : 0;
        while (left > 0) {
            const auto id = "p" + std::to_string(n++);
            records.push_back(rec(id, src, "en", "m" + std::to_string(rng.bounded(4))));
            CategorySet cats;
            if (cultural > 0) {
                cats.insert(BiasCategory::cultural);
                --cultural;
            } else {
                cats.insert(BiasCategory::sociocultural);
            }
            ds.push_back(det(id, 0.5, cats));
            --left;
        }
        // Unflagged noise.
        const auto id = "p" + std::to_string(n++);
        records.push_back(rec(id, src, "en", "m0"));
        ds.push_back(det(id, 0.9, {BiasCategory::gender}));
    }
    auto h = bias_heatmap(ds, records, HeatmapAxis::language_pair);
    EXPECT_EQ(h.row_total("gu-en"), 220u);
    EXPECT_EQ(h.cell("gu-en", BiasCategory::cultural), 183u);
    for (const auto& [pair, total] : totals) EXPECT_EQ(h.row_total(pair), total);
    EXPECT_EQ(bias_heatmap(ds, records, HeatmapAxis::model).total(), h.total());
}

TEST(Confusion, TableFiveRows) {
    ConfusionMatrix heuristic{313, 832, 0, 294};
    EXPECT_NEAR(*heuristic.recall(), 1.000, 1e-4);
    EXPECT_NEAR(*heuristic.precision(), 0.2734, 1e-4);
    EXPECT_NEAR(*heuristic.accuracy(), 0.4218, 1e-4);
    EXPECT_EQ(pct1(heuristic.recall()), "100.0");
    EXPECT_EQ(pct1(heuristic.precision()), "27.3");
    EXPECT_EQ(pct1(heuristic.accuracy()), "42.2");

    ConfusionMatrix judge{299, 552, 14, 574};
    EXPECT_NEAR(*judge.recall(), 0.9553, 1e-4);
    EXPECT_NEAR(*judge.precision(), 0.3514, 1e-4);
    EXPECT_NEAR(*judge.accuracy(), 0.6067, 1e-4);
    EXPECT_EQ(heuristic.total(), 1439u);
    EXPECT_EQ(judge.total(), 1439u);
}

TEST(Confusion, FromFlags) {
    std::map<std::string, bool> sys, gold;
    Rng rng(8);
    ConfusionMatrix expect;
    for (int i = 0; i < 500; ++i) {
        const bool p = rng.bounded(2), g = rng.bounded(2);
        sys[std::to_string(i)] = p;
        gold[std::to_string(i)] = g;
        (p ? (g ? expect.tp : expect.fp) : (g ? expect.fn : expect.tn))++;
    }
    auto m = confusion(sys, gold);
    EXPECT_EQ(m.tp, expect.tp);
    EXPECT_EQ(m.fp, expect.fp);
    EXPECT_EQ(m.fn, expect.fn);
    EXPECT_EQ(m.tn, expect.tn);
    EXPECT_EQ(m.total(), 500u);

    auto perfect = confusion({{"a", true}, {"b", false}}, {{"a", true}, {"b", false}});
    EXPECT_EQ(*perfect.precision(), 1.0);
    EXPECT_EQ(*perfect.recall(), 1.0);
    EXPECT_EQ(*perfect.accuracy(), 1.0);

    auto none = confusion({{"a", false}}, {{"a", false}});
    EXPECT_FALSE(none.precision().has_value());
    EXPECT_FALSE(none.recall().has_value());
    EXPECT_EQ(*none.accuracy(), 1.0);
}

TEST(Confusion, KeyMismatch) {
    try {
        confusion({{"a", true}, {"b", true}}, {{"b", true}, {"c", false}});
        FAIL();
    } catch (const AnalysisError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("only in system: a"), std::string::npos);
        EXPECT_NE(msg.find("only in gold: c"), std::string::npos);
    }
}

TEST(Report, RendersSections) {
    ReportInputs in;
    in.agreement = AgreementReport::from_counts({{BiasCategory::cultural, {798, 395}}});
    in.confusion = {{"heuristic", ConfusionMatrix{313, 832, 0, 294}}};
    in.sweep = sweep_thresholds({det("a", 0.7, {BiasCategory::gender})});
    const auto md = render_report(in);
    EXPECT_NE(md.find("| cultural | 798 | 395 | 49.50 |"), std::string::npos);
    EXPECT_NE(md.find("| heuristic | 313 | 832 | 0 | 294 | 100.0 | 27.3 | 42.2 |"), std::string::npos);
    EXPECT_NE(md.find("Knee: "), std::string::npos);
}
