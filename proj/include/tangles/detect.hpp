#pragma once

// Hybrid bias detection: embedding similarity, entity delta, exclusive
// keywords, category union and the similarity gate.

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "tangles/corpus.hpp"
#include "tangles/lexicon.hpp"
#include "tangles/text.hpp"
#include "tangles/transport.hpp"

namespace tangles {

class DetectError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct EmbeddingVector {
    std::vector<double> values;

    size_t dimension() const { return values.size(); }

    void validate() const {
        if (values.empty()) throw DetectError("embedding has dimension 0");
        for (double v : values) {
            if (!std::isfinite(v)) throw DetectError("embedding contains a non-finite value");
        }
    }
};

/// dot(a,b) / (|a||b|), clamped to [-1, 1].
inline double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dimension() != b.dimension()) {
        throw DetectError("dimension mismatch: " + std::to_string(a.dimension()) + " vs " +
                          std::to_string(b.dimension()));
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.values.size(); ++i) {
        dot += a.values[i] * b.values[i];
        na += a.values[i] * a.values[i];
        nb += b.values[i] * b.values[i];
    }
    if (na == 0.0 || nb == 0.0) throw DetectError("undefined similarity: zero vector");
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

struct EntityMention {
    std::string surface;
    std::string entity_type;
    size_t start = 0;  // code point offsets into the NFC text
    size_t end = 0;

    friend bool operator==(const EntityMention&, const EntityMention&) = default;
};

enum class DetectorKind { ner, keyword };
enum class Side { translation_only, reference_only };

inline std::string_view to_string(DetectorKind d) { return d == DetectorKind::ner ? "ner" : "keyword"; }
inline std::string_view to_string(Side s) {
    return s == Side::translation_only ? "translation_only" : "reference_only";
}

struct BiasFinding {
    BiasCategory category = BiasCategory::gender;
    DetectorKind detector = DetectorKind::keyword;
    std::string evidence;
    Side side = Side::translation_only;

    friend auto operator<=>(const BiasFinding&, const BiasFinding&) = default;
};

struct DetectionResult {
    std::string record_id;
    double similarity = 0.0;
    std::vector<BiasFinding> findings;
    CategorySet detected_categories;
    bool flagged = false;
    double threshold = 0.75;
};

// ---------------------------------------------------------------------------
// Detectors

/// Entities of T whose (case-folded surface, type) does not occur in R, one
/// finding per mapped category. Entities only in R never produce findings.
inline std::vector<BiasFinding> ner_bias_flags(const std::vector<EntityMention>& translation_entities,
                                               const std::vector<EntityMention>& reference_entities,
                                               const NerBiasMap& map) {
    auto key = [](const EntityMention& e) { return std::make_pair(text::lower(e.surface), e.entity_type); };
    std::set<std::pair<std::string, std::string>> in_reference;
    for (const auto& e : reference_entities) in_reference.insert(key(e));

    std::vector<BiasFinding> out;
    std::set<std::pair<std::string, std::string>> emitted;
    for (const auto& e : translation_entities) {
        auto k = key(e);
        if (in_reference.count(k) || !emitted.insert(k).second) continue;
        for (auto c : map.map_entity(e.entity_type)) {
            out.push_back({c, DetectorKind::ner, e.surface, Side::translation_only});
        }
    }
    return out;
}

/// Lexicon phrases present in exactly one of T and R, per category.
inline std::vector<BiasFinding> keyword_bias_flags(std::string_view translation, std::string_view reference,
                                                   const LexiconSet& lexicons) {
    const auto t_words = text::lower_words(translation);
    const auto r_words = text::lower_words(reference);
    std::vector<BiasFinding> out;
    for (const auto& [cat, lex] : lexicons.all()) {
        const auto in_t = lex.match(t_words);
        const auto in_r = lex.match(r_words);
        for (const auto& p : in_t) {
            if (!in_r.count(p)) out.push_back({cat, DetectorKind::keyword, p, Side::translation_only});
        }
        for (const auto& p : in_r) {
            if (!in_t.count(p)) out.push_back({cat, DetectorKind::keyword, p, Side::reference_only});
        }
    }
    return out;
}

inline CategorySet union_categories(const std::vector<BiasFinding>& findings) {
    CategorySet out;
    for (const auto& f : findings) out.insert(f.category);
    return out;
}

/// Combines findings and similarity under threshold tau. Findings below the
/// gate are kept so later sweeps can re-gate at other thresholds.
inline DetectionResult gate(std::string record_id, double similarity, std::vector<BiasFinding> findings,
                            double threshold) {
    DetectionResult r;
    r.record_id = std::move(record_id);
    r.similarity = similarity;
    r.findings = std::move(findings);
    r.detected_categories = union_categories(r.findings);
    r.threshold = threshold;
    r.flagged = !r.detected_categories.empty() && similarity < threshold;
    return r;
}

/// Categories that count at threshold tau (empty above the gate).
inline CategorySet flagged_categories(const DetectionResult& d, double tau) {
    return d.similarity < tau ? d.detected_categories : CategorySet{};
}

// ---------------------------------------------------------------------------
// Provider contracts

class Embedder {
  public:
    virtual ~Embedder() = default;
    /// Stable identifier, part of the cache key.
    virtual std::string id() const = 0;
    /// One vector per input text, all of the same dimension.
    virtual std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) = 0;
};

class NerProvider {
  public:
    virtual ~NerProvider() = default;
    virtual std::string id() const = 0;
    virtual std::vector<EntityMention> entities(const std::string& text) = 0;
};

struct DetectorConfig {
    double threshold = 0.75;
    std::string embedding_provider = "hashing";
    std::string ner_provider = "gazetteer";
    std::optional<std::string> cache_path;

    void validate() const {
        if (!(threshold >= 0.0 && threshold <= 1.0)) throw DetectError("threshold must lie in [0, 1]");
    }
};

struct DetectorResources {
    Embedder* embedder = nullptr;
    NerProvider* ner = nullptr;
    const LexiconSet* lexicons = nullptr;
    const NerBiasMap* ner_map = nullptr;
};

/// Runs the full pipeline on one record. Provider failures surface as
/// ProviderError with the record id in the message.
inline DetectionResult detect(const TranslationRecord& record, const DetectorConfig& config,
                              const DetectorResources& res) {
    config.validate();
    if (text::split_whitespace(record.translation_text).empty()) {
        throw DetectError(record.id + ": translation_text is empty");
    }
    if (text::split_whitespace(record.reference_text).empty()) {
        throw DetectError(record.id + ": reference_text is empty");
    }
    double similarity = 0.0;
    std::vector<EntityMention> t_ents, r_ents;
    try {
        auto vecs = res.embedder->embed({record.translation_text, record.reference_text});
        if (vecs.size() != 2) throw ProviderError("embedding provider returned " + std::to_string(vecs.size()) + " vectors for 2 texts", false);
        vecs[0].validate();
        vecs[1].validate();
        similarity = cosine_similarity(vecs[0], vecs[1]);
        t_ents = res.ner->entities(record.translation_text);
        r_ents = res.ner->entities(record.reference_text);
    } catch (const ProviderError& e) {
        throw ProviderError(record.id + ": " + e.what(), e.retryable());
    } catch (const DetectError& e) {
        throw DetectError(record.id + ": " + e.what());
    }
    auto findings = ner_bias_flags(t_ents, r_ents, *res.ner_map);
    auto kw = keyword_bias_flags(record.translation_text, record.reference_text, *res.lexicons);
    findings.insert(findings.end(), kw.begin(), kw.end());
    return gate(record.id, similarity, std::move(findings), config.threshold);
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::ordered_json to_json(const BiasFinding& f) {
    nlohmann::ordered_json j;
    j["category"] = to_string(f.category);
    j["detector"] = to_string(f.detector);
    j["evidence"] = f.evidence;
    j["side"] = to_string(f.side);
    return j;
}

inline nlohmann::ordered_json to_json(const DetectionResult& d) {
    nlohmann::ordered_json j;
    j["record_id"] = d.record_id;
    j["similarity"] = d.similarity;
    j["threshold"] = d.threshold;
    j["flagged"] = d.flagged;
    j["detected_categories"] = category_names(d.detected_categories);
    j["findings"] = nlohmann::ordered_json::array();
    for (const auto& f : d.findings) j["findings"].push_back(to_json(f));
    return j;
}

inline DetectionResult detection_from_json(const nlohmann::json& j) {
    auto cat = [](const nlohmann::json& v) {
        auto c = parse_category(v.get<std::string>());
        if (!c) throw DetectError("unknown bias category '" + v.get<std::string>() + "'");
        return *c;
    };
    std::vector<BiasFinding> findings;
    for (const auto& f : j.at("findings")) {
        BiasFinding b;
        b.category = cat(f.at("category"));
        const auto det = f.at("detector").get<std::string>();
        if (det != "ner" && det != "keyword") throw DetectError("unknown detector '" + det + "'");
        b.detector = det == "ner" ? DetectorKind::ner : DetectorKind::keyword;
        b.evidence = f.at("evidence").get<std::string>();
        const auto side = f.at("side").get<std::string>();
        if (side != "translation_only" && side != "reference_only") throw DetectError("unknown side '" + side + "'");
        b.side = side == "translation_only" ? Side::translation_only : Side::reference_only;
        findings.push_back(std::move(b));
    }
    auto d = gate(j.at("record_id").get<std::string>(), j.at("similarity").get<double>(), std::move(findings),
                  j.at("threshold").get<double>());
    if (j.contains("flagged") && j["flagged"].get<bool>() != d.flagged) {
        throw DetectError("record " + d.record_id + ": stored flag disagrees with its findings and similarity");
    }
    return d;
}

inline std::vector<DetectionResult> load_detections(const std::filesystem::path& path) {
    std::vector<DetectionResult> out;
    io::for_each_jsonl(io::read_file(path), path.string(), [&](size_t line, const nlohmann::json& j) {
        try {
            out.push_back(detection_from_json(j));
        } catch (const std::exception& e) {
            throw DetectError(path.string() + ":" + std::to_string(line) + ": " + e.what());
        }
    });
    return out;
}

}  // namespace tangles
