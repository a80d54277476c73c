#pragma once

// Bias taxonomy, keyword lexicons and the entity-type to bias-category map.

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "tangles/hash.hpp"
#include "tangles/text.hpp"

namespace tangles {

enum class BiasCategory { gender, cultural, religious, racial, sociocultural, social };

inline constexpr std::array<BiasCategory, 6> kAllCategories = {
    BiasCategory::gender, BiasCategory::cultural,      BiasCategory::religious,
    BiasCategory::racial, BiasCategory::sociocultural, BiasCategory::social,
};

inline std::string_view to_string(BiasCategory c) {
    switch (c) {
        case BiasCategory::gender: return "gender";
        case BiasCategory::cultural: return "cultural";
        case BiasCategory::religious: return "religious";
        case BiasCategory::racial: return "racial";
        case BiasCategory::sociocultural: return "sociocultural";
        case BiasCategory::social: return "social";
    }
    return "unknown";
}

/// Strict parse of the canonical lowercase name.
inline std::optional<BiasCategory> parse_category(std::string_view s) {
    for (auto c : kAllCategories) {
        if (to_string(c) == s) return c;
    }
    return std::nullopt;
}

using CategorySet = std::set<BiasCategory>;

inline std::vector<std::string> category_names(const CategorySet& cats) {
    std::vector<std::string> out;
    for (auto c : cats) out.emplace_back(to_string(c));
    return out;
}

class LexiconError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

namespace seed {

inline const std::vector<std::string_view> kGender = {
    "he",      "she",       "him",         "her",      "his",          "hers",     "man",
    "woman",   "men",       "women",       "boy",      "girl",         "father",   "mother",
    "son",     "daughter",  "husband",     "wife",     "housewife",    "businessman",
    "businesswoman", "nurse", "doctor",    "engineer", "secretary",    "maid",     "boss",
    "career woman", "female scientist", "male nurse",
};

inline const std::vector<std::string_view> kReligious = {
    "allah",  "god",    "jesus",  "hindu",  "muslim", "islam",  "christian",
    "jewish", "buddhist", "temple", "church", "mosque", "synagogue", "bible",
    "quran",  "torah",  "prayer", "imam",   "pastor",
};

inline const std::vector<std::string_view> kCultural = {
    "sari",     "kimono",  "turban",  "hijab",       "eid",       "diwali", "holi",
    "puja",     "christmas", "ramadan", "thanksgiving", "new year", "rice",   "curry",
    "tea",      "sushi",   "taco",    "noodle",      "chopstick", "yoga",
};

inline const std::vector<std::string_view> kSocial = {
    "servant",  "maid",     "butler",  "rich",        "poor",       "slum",
    "elite",    "working class", "laborer", "billionaire", "landlord", "tenant",
    "beggar",   "homeless", "upper class", "middle class", "underprivileged",
};

inline const std::vector<std::string_view> kRacial = {
    "white",  "black",    "brown",    "asian",    "african",  "european",
    "latino", "hispanic", "indian",   "caucasian", "arab",    "chinese",
    "japanese", "ethiopian", "native", "indigenous", "mestizo",
};

}  // namespace seed

/// One curated keyword list. Phrases are stored lowercased and NFC
/// normalized; each is pre-split into word tokens for boundary matching.
class Lexicon {
  public:
    Lexicon() = default;
    explicit Lexicon(BiasCategory category) : category_(category) {}

    BiasCategory category() const { return category_; }

    void add(std::string_view phrase) {
        auto normalized = text::lower(phrase);
        auto toks = text::lower_words(normalized);
        if (toks.empty()) throw LexiconError("empty lexicon phrase in " + std::string(to_string(category_)));
        std::string canonical;
        for (const auto& t : toks) {
            if (!canonical.empty()) canonical.push_back(' ');
            canonical += t;
        }
        if (index_.count(canonical)) return;
        index_.emplace(canonical, phrases_.size());
        phrases_.push_back(canonical);
        tokens_.push_back(std::move(toks));
    }

    void clear() {
        phrases_.clear();
        tokens_.clear();
        index_.clear();
    }

    const std::vector<std::string>& phrases() const { return phrases_; }
    size_t size() const { return phrases_.size(); }
    bool contains(std::string_view phrase) const { return index_.count(std::string(phrase)) > 0; }

    /// Phrases that occur in the pre-lowered word sequence as contiguous runs.
    /// Scanning is leftmost-longest: words covered by a multiword match do not
    /// also count for a shorter phrase ("career woman" does not yield "woman").
    std::set<std::string> match(const std::vector<std::string>& words) const {
        std::set<std::string> found;
        size_t i = 0;
        while (i < words.size()) {
            size_t best = phrases_.size();
            size_t best_len = 0;
            for (size_t p = 0; p < phrases_.size(); ++p) {
                const auto& needle = tokens_[p];
                if (needle.size() <= best_len || i + needle.size() > words.size()) continue;
                if (std::equal(needle.begin(), needle.end(), words.begin() + static_cast<std::ptrdiff_t>(i))) {
                    best = p;
                    best_len = needle.size();
                }
            }
            if (best == phrases_.size()) {
                ++i;
                continue;
            }
            found.insert(phrases_[best]);
            i += best_len;
        }
        return found;
    }

  private:
    BiasCategory category_ = BiasCategory::gender;
    std::vector<std::string> phrases_;
    std::vector<std::vector<std::string>> tokens_;
    std::map<std::string, size_t, std::less<>> index_;
};

/// The keyword lexicons keyed by category. Sociocultural has no lexicon and
/// is only reachable through entity mapping.
class LexiconSet {
  public:
    static LexiconSet seeded() {
        LexiconSet set;
        auto fill = [&](BiasCategory c, const std::vector<std::string_view>& words) {
            Lexicon lex(c);
            for (auto w : words) lex.add(w);
            set.lexicons_[c] = std::move(lex);
        };
        fill(BiasCategory::gender, seed::kGender);
        fill(BiasCategory::religious, seed::kReligious);
        fill(BiasCategory::cultural, seed::kCultural);
        fill(BiasCategory::social, seed::kSocial);
        fill(BiasCategory::racial, seed::kRacial);
        return set;
    }

    /// Loads `<category>.txt` files from a directory: one phrase per line,
    /// `#` starts a comment. Categories without a file get no lexicon.
    static LexiconSet from_directory(const std::filesystem::path& dir) {
        LexiconSet set;
        for (auto c : kAllCategories) {
            auto path = dir / (std::string(to_string(c)) + ".txt");
            if (!std::filesystem::exists(path)) continue;
            std::ifstream in(path);
            if (!in) throw LexiconError("cannot read lexicon file " + path.string());
            Lexicon lex(c);
            std::string line;
            while (std::getline(in, line)) {
                if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
                if (text::split_whitespace(line).empty()) continue;
                lex.add(line);
            }
            set.lexicons_[c] = std::move(lex);
        }
        return set;
    }

    const Lexicon* find(BiasCategory c) const {
        auto it = lexicons_.find(c);
        return it == lexicons_.end() ? nullptr : &it->second;
    }

    Lexicon& at(BiasCategory c) {
        auto [it, inserted] = lexicons_.try_emplace(c, Lexicon(c));
        return it->second;
    }

    const std::map<BiasCategory, Lexicon>& all() const { return lexicons_; }

    /// Lexicon phrases present in `text` under word-boundary, case-insensitive
    /// matching.
    std::set<std::string> match_keywords(std::string_view input, BiasCategory c) const {
        const Lexicon* lex = find(c);
        if (!lex) return {};
        return lex->match(text::lower_words(input));
    }

    /// Applies an override document of the form
    /// `{"religious": {"phrases": ["priest"], "replace": false}, ...}`.
    /// An empty document leaves the set unchanged.
    void apply_overrides(const nlohmann::json& doc) {
        if (doc.is_null()) return;
        if (!doc.is_object()) throw LexiconError("lexicon override document must be an object");
        // Validate everything before mutating.
        std::vector<std::tuple<BiasCategory, bool, std::vector<std::string>>> pending;
        for (const auto& [name, spec] : doc.items()) {
            auto cat = parse_category(name);
            if (!cat) throw LexiconError("unknown bias category in overrides: " + name);
            bool replace = false;
            std::vector<std::string> phrases;
            const nlohmann::json* list = &spec;
            if (spec.is_object()) {
                replace = spec.value("replace", false);
                if (!spec.contains("phrases")) throw LexiconError("override for " + name + " lacks 'phrases'");
                list = &spec.at("phrases");
            }
            if (!list->is_array()) throw LexiconError("override phrases for " + name + " must be a list");
            for (const auto& p : *list) {
                if (!p.is_string()) throw LexiconError("override phrase for " + name + " must be a string");
                phrases.push_back(p.get<std::string>());
            }
            pending.emplace_back(*cat, replace, std::move(phrases));
        }
        for (auto& [cat, replace, phrases] : pending) {
            Lexicon& lex = at(cat);
            if (replace) lex.clear();
            for (const auto& p : phrases) lex.add(p);
        }
    }

    void load_overrides(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw LexiconError("cannot read lexicon overrides " + path.string());
        std::stringstream buf;
        buf << in.rdbuf();
        const std::string content = buf.str();
        if (text::split_whitespace(content).empty()) return;
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(content);
        } catch (const nlohmann::json::parse_error& e) {
            throw LexiconError("malformed lexicon overrides " + path.string() + ": " + e.what());
        }
        apply_overrides(doc);
    }

  private:
    std::map<BiasCategory, Lexicon> lexicons_;
};

/// Entity type -> bias categories. Unknown types map to the empty set.
class NerBiasMap {
  public:
    static NerBiasMap seeded() {
        NerBiasMap m;
        m.entries_["PERSON"] = {BiasCategory::gender};
        m.entries_["NORP"] = {BiasCategory::cultural, BiasCategory::religious, BiasCategory::racial};
        m.entries_["GPE"] = {BiasCategory::sociocultural};
        m.entries_["ORG"] = {BiasCategory::social};
        m.entries_["LANGUAGE"] = {BiasCategory::cultural};
        m.entries_["RELIGION"] = {BiasCategory::religious};
        m.entries_["ETHNICITY"] = {BiasCategory::racial};
        return m;
    }

    CategorySet map_entity(std::string_view entity_type) const {
        auto it = entries_.find(entity_type);
        return it == entries_.end() ? CategorySet{} : it->second;
    }

    const std::map<std::string, CategorySet, std::less<>>& entries() const { return entries_; }

  private:
    std::map<std::string, CategorySet, std::less<>> entries_;
};

/// Canonical text form of lexicons plus entity map, used to pin shipped data.
inline std::string canonical_dump(const LexiconSet& lexicons, const NerBiasMap& map) {
    std::string out;
    for (const auto& [cat, lex] : lexicons.all()) {
        for (const auto& p : lex.phrases()) {
            out += to_string(cat);
            out += '\t';
            out += p;
            out += '\n';
        }
    }
    for (const auto& [type, cats] : map.entries()) {
        out += "ner\t" + type;
        for (auto c : cats) {
            out += '\t';
            out += to_string(c);
        }
        out += '\n';
    }
    return out;
}

inline std::string checksum(const LexiconSet& lexicons, const NerBiasMap& map) {
    return sha256_hex(canonical_dump(lexicons, map));
}

}  // namespace tangles
