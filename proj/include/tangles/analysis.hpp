#pragma once

// Analyses over detections, verdicts and metric reports: language-family
// classification, family/size aggregates, threshold sweeps and the knee,
// bias heatmaps, confusion matrices and the markdown report.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tangles/corpus.hpp"
#include "tangles/detect.hpp"
#include "tangles/io.hpp"
#include "tangles/judge.hpp"
#include "tangles/metrics.hpp"

namespace tangles {

class AnalysisError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Language families

struct LanguageFamily {
    std::string family;
    std::string sub_family;  // empty when the family has no sub-family split
};

enum class PairClass { intra, cross };

inline std::string_view to_string(PairClass c) { return c == PairClass::intra ? "intra" : "cross"; }

class FamilyTable {
  public:
    static FamilyTable builtin() {
        FamilyTable t;
        for (auto c : {"en", "de"}) t.set(c, {"Indo-European", "Germanic"});
        for (auto c : {"fr", "es"}) t.set(c, {"Indo-European", "Romance"});
        for (auto c : {"cs", "ru"}) t.set(c, {"Indo-European", "Slavic"});
        t.set("lt", {"Indo-European", "Baltic"});
        for (auto c : {"gu", "bn"}) t.set(c, {"Indo-European", "Indic"});
        for (auto c : {"et", "fi"}) t.set(c, {"Uralic", "Finno-Ugric"});
        for (auto c : {"tr", "kk"}) t.set(c, {"Turkic", ""});
        t.set("zh", {"Sino-Tibetan", ""});
        return t;
    }

    /// Lines of code<TAB>family[<TAB>sub_family]; '#' starts a comment.
    /// Entries extend or replace the built-in ones.
    void load(const std::filesystem::path& path) {
        std::istringstream in(io::read_file(path));
        std::string line;
        size_t n = 0;
        while (std::getline(in, line)) {
            ++n;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty() || line[0] == '#') continue;
            std::vector<std::string> cols;
            std::stringstream ls(line);
            std::string col;
            while (std::getline(ls, col, '\t')) cols.push_back(col);
            if (cols.size() < 2 || cols.size() > 3 || cols[0].empty() || cols[1].empty()) {
                throw AnalysisError(path.string() + ":" + std::to_string(n) + ": expected code<TAB>family[<TAB>sub_family]");
            }
            set(cols[0], {cols[1], cols.size() == 3 ? cols[2] : ""});
        }
    }

    void set(const std::string& code, LanguageFamily f) { entries_[code] = std::move(f); }

    const LanguageFamily& at(const std::string& code) const {
        auto it = entries_.find(code);
        if (it == entries_.end()) throw AnalysisError("language '" + code + "' is not in the family table");
        return it->second;
    }

    const std::map<std::string, LanguageFamily>& entries() const { return entries_; }

    /// Intra iff both languages share a sub-family (or, for families without
    /// a sub-family split, the family).
    PairClass classify(const std::string& source, const std::string& target) const {
        const auto& a = at(source);
        const auto& b = at(target);
        const auto& ka = a.sub_family.empty() ? a.family : a.sub_family;
        const auto& kb = b.sub_family.empty() ? b.family : b.sub_family;
        return a.family == b.family && ka == kb ? PairClass::intra : PairClass::cross;
    }

  private:
    std::map<std::string, LanguageFamily> entries_;
};

// ---------------------------------------------------------------------------
// Family x model-size aggregates

enum class SizeClass { small, medium, large };

inline std::string_view to_string(SizeClass s) {
    switch (s) {
        case SizeClass::small: return "small";
        case SizeClass::medium: return "medium";
        case SizeClass::large: return "large";
    }
    return "";
}

inline std::optional<SizeClass> parse_size_class(std::string_view s) {
    for (auto c : {SizeClass::small, SizeClass::medium, SizeClass::large}) {
        if (to_string(c) == s) return c;
    }
    return std::nullopt;
}

/// small <= 7B < medium <= 30B < large.
inline SizeClass size_class_for_params(double billions) {
    if (!(billions > 0.0)) throw AnalysisError("parameter count must be positive");
    if (billions <= 7.0) return SizeClass::small;
    if (billions <= 30.0) return SizeClass::medium;
    return SizeClass::large;
}

/// Aggregates keyed "<size>/<intra|cross>".
inline std::vector<metrics::CorpusAggregate> family_aggregates(const std::vector<metrics::MetricReport>& reports,
                                                               const std::vector<TranslationRecord>& records,
                                                               const FamilyTable& table,
                                                               const std::map<std::string, SizeClass>& size_class) {
    std::map<std::string, std::string> key_of;
    for (const auto& r : records) {
        auto it = size_class.find(r.model);
        if (it == size_class.end()) throw AnalysisError("model '" + r.model + "' has no size class");
        key_of[r.id] = std::string(to_string(it->second)) + "/" +
                       std::string(to_string(table.classify(r.source_lang, r.target_lang)));
    }
    return metrics::aggregate(reports, [&](const metrics::MetricReport& rep) -> std::optional<std::string> {
        auto it = key_of.find(rep.record_id);
        if (it == key_of.end()) return std::nullopt;
        return it->second;
    });
}

// ---------------------------------------------------------------------------
// Threshold sweep

/// 0.60, 0.65, ..., 0.95 computed as i/100 to avoid accumulated drift.
inline std::vector<double> default_threshold_grid() {
    std::vector<double> g;
    for (int i = 60; i <= 95; i += 5) g.push_back(i / 100.0);
    return g;
}

struct ThresholdSweep {
    std::vector<double> thresholds;
    std::map<BiasCategory, std::vector<size_t>> per_category_counts;
    /// Sum of the category counts at each threshold.
    std::vector<size_t> total_counts;
    /// counts / max(counts) per category; categories that never fire are absent.
    std::map<BiasCategory, std::vector<double>> normalized;
};

inline ThresholdSweep sweep_thresholds(const std::vector<DetectionResult>& detections,
                                       std::vector<double> grid = default_threshold_grid()) {
    if (detections.empty()) throw AnalysisError("threshold sweep needs at least one detection");
    if (grid.empty() || !std::is_sorted(grid.begin(), grid.end())) {
        throw AnalysisError("threshold grid must be non-empty and ascending");
    }
    ThresholdSweep s;
    s.thresholds = std::move(grid);
    const size_t n = s.thresholds.size();
    for (auto c : kAllCategories) s.per_category_counts[c].assign(n, 0);
    s.total_counts.assign(n, 0);
    for (const auto& d : detections) {
        for (size_t i = 0; i < n; ++i) {
            for (auto c : flagged_categories(d, s.thresholds[i])) {
                ++s.per_category_counts[c][i];
                ++s.total_counts[i];
            }
        }
    }
    for (const auto& [c, counts] : s.per_category_counts) {
        const size_t mx = *std::max_element(counts.begin(), counts.end());
        if (mx == 0) continue;
        auto& norm = s.normalized[c];
        for (size_t x : counts) norm.push_back(static_cast<double>(x) / static_cast<double>(mx));
    }
    return s;
}

struct KneeResult {
    double threshold = 0.0;
    /// False when growth never fell below epsilon; threshold is then the
    /// largest grid value.
    bool stabilized = true;
};

/// Smallest threshold from which every following step grows the total count
/// by less than `epsilon` (relative to the previous total).
inline KneeResult knee_threshold(const ThresholdSweep& s, double epsilon = 0.05) {
    const auto& t = s.total_counts;
    if (t.size() < 3 || s.thresholds.size() != t.size()) throw AnalysisError("knee detection needs >= 3 grid points");
    auto growth = [&](size_t i) {
        if (t[i] == 0) return t[i + 1] == 0 ? 0.0 : std::numeric_limits<double>::infinity();
        return (static_cast<double>(t[i + 1]) - static_cast<double>(t[i])) / static_cast<double>(t[i]);
    };
    size_t knee = t.size() - 1;
    while (knee > 0 && growth(knee - 1) < epsilon) --knee;
    if (knee == t.size() - 1 && growth(knee - 1) >= epsilon) return {s.thresholds.back(), false};
    return {s.thresholds[knee], true};
}

inline std::string sweep_csv(const ThresholdSweep& s) {
    std::vector<std::string> header = {"threshold"};
    for (auto c : kAllCategories) header.emplace_back(to_string(c));
    header.emplace_back("total");
    for (auto c : kAllCategories) header.push_back(std::string(to_string(c)) + "_normalized");
    std::string out = io::csv_line(header);
    char buf[32];
    for (size_t i = 0; i < s.thresholds.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.2f", s.thresholds[i]);
        std::vector<std::string> row = {buf};
        for (auto c : kAllCategories) row.push_back(std::to_string(s.per_category_counts.at(c)[i]));
        row.push_back(std::to_string(s.total_counts[i]));
        for (auto c : kAllCategories) {
            auto it = s.normalized.find(c);
            if (it == s.normalized.end()) {
                row.emplace_back("");
            } else {
                std::snprintf(buf, sizeof buf, "%.6f", it->second[i]);
                row.emplace_back(buf);
            }
        }
        out += io::csv_line(row);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Heatmap

enum class HeatmapAxis { model, language_pair };

inline std::optional<HeatmapAxis> parse_heatmap_axis(std::string_view s) {
    if (s == "model") return HeatmapAxis::model;
    if (s == "pair" || s == "language_pair") return HeatmapAxis::language_pair;
    return std::nullopt;
}

struct Heatmap {
    HeatmapAxis axis = HeatmapAxis::model;
    /// Lexicographic row keys; columns follow kAllCategories.
    std::map<std::string, std::array<size_t, 6>> rows;

    size_t row_total(const std::string& key) const {
        const auto& r = rows.at(key);
        return std::accumulate(r.begin(), r.end(), size_t{0});
    }
    size_t cell(const std::string& key, BiasCategory c) const { return rows.at(key)[static_cast<size_t>(c)]; }
    size_t total() const {
        size_t n = 0;
        for (const auto& [k, r] : rows) n += std::accumulate(r.begin(), r.end(), size_t{0});
        return n;
    }
};

/// Counts flagged categories per model or language pair. Every axis value
/// present in `records` gets a row, even without flags.
inline Heatmap bias_heatmap(const std::vector<DetectionResult>& detections,
                            const std::vector<TranslationRecord>& records, HeatmapAxis axis) {
    std::map<std::string, std::string> key_of;
    Heatmap h;
    h.axis = axis;
    for (const auto& r : records) {
        const auto k = axis == HeatmapAxis::model ? r.model : r.pair();
        key_of[r.id] = k;
        h.rows.try_emplace(k, std::array<size_t, 6>{});
    }
    for (const auto& d : detections) {
        auto it = key_of.find(d.record_id);
        if (it == key_of.end()) throw AnalysisError("detection for unknown record '" + d.record_id + "'");
        if (!d.flagged) continue;
        for (auto c : d.detected_categories) ++h.rows[it->second][static_cast<size_t>(c)];
    }
    return h;
}

inline std::string heatmap_csv(const Heatmap& h) {
    std::vector<std::string> header = {h.axis == HeatmapAxis::model ? "model" : "language_pair"};
    for (auto c : kAllCategories) header.emplace_back(to_string(c));
    header.emplace_back("total");
    std::string out = io::csv_line(header);
    for (const auto& [k, r] : h.rows) {
        std::vector<std::string> row = {k};
        for (size_t x : r) row.push_back(std::to_string(x));
        row.push_back(std::to_string(h.row_total(k)));
        out += io::csv_line(row);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Confusion

struct ConfusionMatrix {
    size_t tp = 0, fp = 0, fn = 0, tn = 0;

    size_t total() const { return tp + fp + fn + tn; }
    std::optional<double> precision() const {
        if (tp + fp == 0) return std::nullopt;
        return static_cast<double>(tp) / static_cast<double>(tp + fp);
    }
    std::optional<double> recall() const {
        if (tp + fn == 0) return std::nullopt;
        return static_cast<double>(tp) / static_cast<double>(tp + fn);
    }
    std::optional<double> accuracy() const {
        if (total() == 0) return std::nullopt;
        return static_cast<double>(tp + tn) / static_cast<double>(total());
    }
};

/// System flags scored against gold flags; both maps must share keys.
inline ConfusionMatrix confusion(const std::map<std::string, bool>& system, const std::map<std::string, bool>& gold) {
    std::vector<std::string> only_system, only_gold;
    for (const auto& [id, v] : system) {
        if (!gold.count(id)) only_system.push_back(id);
    }
    for (const auto& [id, v] : gold) {
        if (!system.count(id)) only_gold.push_back(id);
    }
    if (!only_system.empty() || !only_gold.empty()) {
        auto list = [](const std::vector<std::string>& xs) {
            std::string s;
            for (size_t i = 0; i < xs.size() && i < 20; ++i) s += (i ? ", " : "") + xs[i];
            if (xs.size() > 20) s += ", ... (" + std::to_string(xs.size()) + " total)";
            return s.empty() ? std::string("none") : s;
        };
        throw AnalysisError("system and gold keys differ; only in system: " + list(only_system) +
                            "; only in gold: " + list(only_gold));
    }
    ConfusionMatrix m;
    for (const auto& [id, predicted] : system) {
        const bool truth = gold.at(id);
        if (predicted && truth) ++m.tp;
        if (predicted && !truth) ++m.fp;
        if (!predicted && truth) ++m.fn;
        if (!predicted && !truth) ++m.tn;
    }
    return m;
}

inline nlohmann::ordered_json to_json(const ConfusionMatrix& m) {
    nlohmann::ordered_json j;
    j["tp"] = m.tp;
    j["fp"] = m.fp;
    j["fn"] = m.fn;
    j["tn"] = m.tn;
    auto opt = [](std::optional<double> v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
    j["precision"] = opt(m.precision());
    j["recall"] = opt(m.recall());
    j["accuracy"] = opt(m.accuracy());
    return j;
}

/// Percentage with one decimal, or "n/a".
inline std::string pct1(std::optional<double> fraction) {
    if (!fraction) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", 100.0 * *fraction);
    return buf;
}

inline std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

// ---------------------------------------------------------------------------
// Markdown report

struct ReportInputs {
    std::vector<metrics::CorpusAggregate> family;  // per family and size class
    std::vector<metrics::CorpusAggregate> domain;  // per domain
    std::optional<AgreementReport> agreement;
    std::vector<std::pair<std::string, ConfusionMatrix>> confusion;
    std::optional<ThresholdSweep> sweep;
};

inline std::string render_report(const ReportInputs& in) {
    std::ostringstream out;
    out << "# Translation quality and bias report\n";
    auto metric_table = [&](const std::string& title, const std::string& key_name,
                            const std::vector<metrics::CorpusAggregate>& aggs) {
        if (aggs.empty()) return;
        out << "\n## " << title << "\n\n| " << key_name << " | n | BLEU | BERTScore | COMET |\n|---|---|---|---|---|\n";
        auto cell = [](const metrics::CorpusAggregate& a, metrics::Metric m, int digits) {
            auto it = a.stats.find(m);
            if (it == a.stats.end()) return std::string("n/a");
            return fixed(it->second.mean, digits) + " ± " + fixed(it->second.std, digits);
        };
        for (const auto& a : aggs) {
            out << "| " << a.group_key << " | " << a.n << " | " << cell(a, metrics::Metric::bleu, 2) << " | "
                << cell(a, metrics::Metric::bertscore, 3) << " | " << cell(a, metrics::Metric::comet, 3) << " |\n";
        }
    };
    metric_table("Model size and language family", "size/family", in.family);
    metric_table("Domain", "domain", in.domain);

    if (in.agreement) {
        out << "\n## Heuristic and judge agreement\n\n| Category | Heuristic | Judge confirmed | Agreement (%) |\n"
               "|---|---|---|---|\n";
        for (auto c : kAllCategories) {
            auto it = in.agreement->per_category.find(c);
            if (it == in.agreement->per_category.end()) continue;
            out << "| " << to_string(c) << " | " << it->second.heuristic_count << " | "
                << it->second.judge_confirmed_count << " | " << fixed(it->second.agreement_pct(), 2) << " |\n";
        }
        out << "| total | " << in.agreement->heuristic_total() << " | " << in.agreement->confirmed_total() << " | "
            << (in.agreement->overall_pct() ? fixed(*in.agreement->overall_pct(), 2) : "n/a") << " |\n";
    }

    if (!in.confusion.empty()) {
        out << "\n## Evaluation against human gold\n\n| System | TP | FP | FN | TN | Recall (%) | Precision (%) | "
               "Accuracy (%) |\n|---|---|---|---|---|---|---|---|\n";
        for (const auto& [name, m] : in.confusion) {
            out << "| " << name << " | " << m.tp << " | " << m.fp << " | " << m.fn << " | " << m.tn << " | "
                << pct1(m.recall()) << " | " << pct1(m.precision()) << " | " << pct1(m.accuracy()) << " |\n";
        }
    }

    if (in.sweep) {
        out << "\n## Threshold sweep\n\n| threshold | total |\n|---|---|\n";
        for (size_t i = 0; i < in.sweep->thresholds.size(); ++i) {
            out << "| " << fixed(in.sweep->thresholds[i], 2) << " | " << in.sweep->total_counts[i] << " |\n";
        }
        const auto knee = knee_threshold(*in.sweep);
        out << "\nKnee: " << fixed(knee.threshold, 2) << (knee.stabilized ? "" : " (counts never stabilized)") << "\n";
    }
    return out.str();
}

}  // namespace tangles
