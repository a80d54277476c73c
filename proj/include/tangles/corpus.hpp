#pragma once

// Translation records: validation, JSONL/CSV persistence and translation
// prompt construction.

#include <algorithm>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tangles/io.hpp"
#include "tangles/text.hpp"

namespace tangles {

class CorpusError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

enum class Domain { general, law, literature, medical };

inline std::string_view to_string(Domain d) {
    switch (d) {
        case Domain::general: return "general";
        case Domain::law: return "law";
        case Domain::literature: return "literature";
        case Domain::medical: return "medical";
    }
    return "general";
}

inline std::optional<Domain> parse_domain(std::string_view s) {
    for (auto d : {Domain::general, Domain::law, Domain::literature, Domain::medical}) {
        if (to_string(d) == s) return d;
    }
    return std::nullopt;
}

/// ISO 639-1 code -> English language name. Ships with every benchmark and
/// domain-corpus language; further codes can be registered explicitly.
class LanguageRegistry {
  public:
    static const LanguageRegistry& builtin() {
        static const LanguageRegistry reg = [] {
            LanguageRegistry r;
            // Benchmark pairs.
            r.add("en", "English");
            r.add("de", "German");
            r.add("fr", "French");
            r.add("es", "Spanish");
            r.add("cs", "Czech");
            r.add("ru", "Russian");
            r.add("fi", "Finnish");
            r.add("lt", "Lithuanian");
            r.add("et", "Estonian");
            r.add("gu", "Gujarati");
            r.add("kk", "Kazakh");
            r.add("bn", "Bengali");
            r.add("zh", "Chinese");
            r.add("tr", "Turkish");
            // Remaining EU languages of the medical and legal corpora.
            r.add("bg", "Bulgarian");
            r.add("da", "Danish");
            r.add("el", "Greek");
            r.add("ga", "Irish");
            r.add("hr", "Croatian");
            r.add("hu", "Hungarian");
            r.add("it", "Italian");
            r.add("lv", "Latvian");
            r.add("mt", "Maltese");
            r.add("nl", "Dutch");
            r.add("pl", "Polish");
            r.add("pt", "Portuguese");
            r.add("ro", "Romanian");
            r.add("sk", "Slovak");
            r.add("sl", "Slovenian");
            r.add("sv", "Swedish");
            return r;
        }();
        return reg;
    }

    void add(std::string code, std::string name) { names_[std::move(code)] = std::move(name); }

    bool contains(std::string_view code) const { return names_.find(code) != names_.end(); }

    const std::string& name(std::string_view code) const {
        auto it = names_.find(code);
        if (it == names_.end()) throw CorpusError("unknown language code '" + std::string(code) + "'");
        return it->second;
    }

  private:
    std::map<std::string, std::string, std::less<>> names_;
};

struct TranslationRecord {
    std::string id;
    std::string source_lang;
    std::string target_lang;
    Domain domain = Domain::general;
    std::string model;
    std::string source_text;
    std::string reference_text;
    std::string translation_text;
    /// Manually excluded from scoring (e.g. the model refused to translate).
    bool excluded = false;

    std::string pair() const { return source_lang + "-" + target_lang; }

    friend bool operator==(const TranslationRecord&, const TranslationRecord&) = default;
};

/// Checks record invariants; `where` prefixes the message (e.g. "file:12").
inline void validate_record(const TranslationRecord& r, const LanguageRegistry& langs, const std::string& where) {
    auto fail = [&](std::string_view field, const std::string& why) {
        throw CorpusError(where + ": field '" + std::string(field) + "': " + why);
    };
    if (r.id.empty()) fail("id", "must be non-empty");
    if (!langs.contains(r.source_lang)) fail("source_lang", "unknown language code '" + r.source_lang + "'");
    if (!langs.contains(r.target_lang)) fail("target_lang", "unknown language code '" + r.target_lang + "'");
    if (r.source_lang == r.target_lang) fail("target_lang", "source_lang and target_lang must differ");
    for (auto [field, value] : {std::pair<std::string_view, const std::string*>{"source_text", &r.source_text},
                                {"reference_text", &r.reference_text},
                                {"translation_text", &r.translation_text},
                                {"model", &r.model}}) {
        if (!text::is_valid_utf8(*value)) fail(field, "invalid UTF-8");
    }
}

inline nlohmann::ordered_json to_json(const TranslationRecord& r) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["source_lang"] = r.source_lang;
    j["target_lang"] = r.target_lang;
    j["domain"] = to_string(r.domain);
    j["model"] = r.model;
    j["source_text"] = r.source_text;
    j["reference_text"] = r.reference_text;
    j["translation_text"] = r.translation_text;
    if (r.excluded) j["excluded"] = true;
    return j;
}

/// Parses one JSON object into a record. Unknown keys are ignored so
/// extended exports still load.
inline TranslationRecord record_from_json(const nlohmann::json& j, const std::string& where) {
    if (!j.is_object()) throw CorpusError(where + ": expected a JSON object");
    TranslationRecord r;
    auto str = [&](const char* key, bool required) -> std::string {
        if (!j.contains(key)) {
            if (required) throw CorpusError(where + ": field '" + key + "': missing");
            return {};
        }
        const auto& v = j.at(key);
        if (!v.is_string()) throw CorpusError(where + ": field '" + key + "': expected a string");
        return v.get<std::string>();
    };
    r.id = str("id", true);
    r.source_lang = str("source_lang", true);
    r.target_lang = str("target_lang", true);
    if (j.contains("domain")) {
        auto d = parse_domain(str("domain", true));
        if (!d) throw CorpusError(where + ": field 'domain': expected one of general, law, literature, medical");
        r.domain = *d;
    }
    r.model = str("model", false);
    r.source_text = str("source_text", true);
    r.reference_text = str("reference_text", true);
    r.translation_text = str("translation_text", false);
    if (j.contains("excluded")) {
        if (!j.at("excluded").is_boolean()) throw CorpusError(where + ": field 'excluded': expected a boolean");
        r.excluded = j.at("excluded").get<bool>();
    }
    return r;
}

enum class CorpusFormat { jsonl, csv };

inline std::optional<CorpusFormat> parse_format(std::string_view s) {
    if (s == "jsonl") return CorpusFormat::jsonl;
    if (s == "csv") return CorpusFormat::csv;
    return std::nullopt;
}

inline CorpusFormat format_from_path(const std::filesystem::path& p) {
    return p.extension() == ".csv" ? CorpusFormat::csv : CorpusFormat::jsonl;
}

namespace detail {

inline void check_unique(const std::vector<TranslationRecord>& records, const std::vector<size_t>& lines,
                         const std::string& source) {
    std::map<std::string, size_t, std::less<>> seen;
    for (size_t i = 0; i < records.size(); ++i) {
        auto [it, inserted] = seen.emplace(records[i].id, lines[i]);
        if (!inserted) {
            throw CorpusError(source + ": duplicate id '" + records[i].id + "' on lines " + std::to_string(it->second) +
                              " and " + std::to_string(lines[i]));
        }
    }
}

inline std::vector<TranslationRecord> load_csv_records(std::string_view content, const std::string& source,
                                                       const LanguageRegistry& langs, std::vector<size_t>& lines) {
    auto rows = io::parse_csv(content, source);
    std::vector<TranslationRecord> out;
    if (rows.empty()) return out;
    std::map<std::string, size_t> col;
    for (size_t i = 0; i < rows[0].fields.size(); ++i) col[rows[0].fields[i]] = i;
    auto has = [&](std::initializer_list<const char*> names) {
        return std::all_of(names.begin(), names.end(), [&](const char* n) { return col.count(n) > 0; });
    };

    const bool elrc = has({"doc_id", "lang", "source_text", "target_text"});
    const bool parallel = !elrc && has({"source_text", "target_text", "X_lang", "y_lang"});
    std::map<std::string, size_t> per_doc;

    for (size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        const std::string where = source + ":" + std::to_string(row.line);
        if (row.fields.size() != rows[0].fields.size()) {
            throw CorpusError(where + ": expected " + std::to_string(rows[0].fields.size()) + " fields, found " +
                              std::to_string(row.fields.size()));
        }
        auto get = [&](const std::string& name) -> const std::string& { return row.fields[col.at(name)]; };
        TranslationRecord rec;
        if (elrc) {
            // English-centred medical corpus: `lang` is either the target code
            // or an explicit "src-tgt" pair; doc ids repeat per sentence.
            const std::string& lang = get("lang");
            if (auto dash = lang.find('-'); dash != std::string::npos) {
                rec.source_lang = lang.substr(0, dash);
                rec.target_lang = lang.substr(dash + 1);
            } else {
                rec.source_lang = "en";
                rec.target_lang = lang;
            }
            const std::string doc_key = lang + "-" + get("doc_id");
            rec.id = doc_key + "-" + std::to_string(per_doc[doc_key]++);
            rec.domain = Domain::medical;
            rec.source_text = get("source_text");
            rec.reference_text = get("target_text");
        } else if (parallel) {
            rec.source_lang = get("X_lang");
            rec.target_lang = get("y_lang");
            rec.id = col.count("id") ? get("id") : (col.count("doc_id") ? get("doc_id") : "row-" + std::to_string(r));
            rec.source_text = get("source_text");
            rec.reference_text = get("target_text");
        } else {
            nlohmann::json j = nlohmann::json::object();
            for (const auto& [name, idx] : col) {
                if (name == "excluded") {
                    j[name] = row.fields[idx] == "true";
                } else {
                    j[name] = row.fields[idx];
                }
            }
            if (j.contains("domain") && j["domain"] == "") j.erase("domain");
            rec = record_from_json(j, where);
        }
        validate_record(rec, langs, where);
        out.push_back(std::move(rec));
        lines.push_back(row.line);
    }
    return out;
}

}  // namespace detail

/// Loads a corpus file. Errors name the offending line and field.
inline std::vector<TranslationRecord> load_corpus(const std::filesystem::path& path, CorpusFormat format,
                                                  const LanguageRegistry& langs = LanguageRegistry::builtin()) {
    const std::string source = path.string();
    std::string content;
    try {
        content = io::read_file(path);
    } catch (const io::IoError& e) {
        throw CorpusError(e.what());
    }
    std::vector<TranslationRecord> records;
    std::vector<size_t> lines;
    try {
        if (format == CorpusFormat::jsonl) {
            io::for_each_jsonl(content, source, [&](size_t line, const nlohmann::json& j) {
                const std::string where = source + ":" + std::to_string(line);
                auto rec = record_from_json(j, where);
                validate_record(rec, langs, where);
                records.push_back(std::move(rec));
                lines.push_back(line);
            });
        } else {
            records = detail::load_csv_records(content, source, langs, lines);
        }
    } catch (const io::IoError& e) {
        throw CorpusError(e.what());
    }
    detail::check_unique(records, lines, source);
    return records;
}

inline std::vector<TranslationRecord> load_corpus(const std::filesystem::path& path) {
    return load_corpus(path, format_from_path(path));
}

inline const std::vector<std::string>& csv_columns() {
    static const std::vector<std::string> cols = {"id",          "source_lang",    "target_lang",      "domain",
                                                  "model",       "source_text",    "reference_text",   "translation_text",
                                                  "excluded"};
    return cols;
}

/// Writes records; JSONL is canonical (one object per line, UTF-8, no BOM).
inline void write_corpus(const std::vector<TranslationRecord>& records, const std::filesystem::path& path,
                         CorpusFormat format, const nlohmann::ordered_json* header = nullptr) {
    std::string out;
    if (format == CorpusFormat::jsonl) {
        if (header) out += io::dump_line(*header) + "\n";
        for (const auto& r : records) out += io::dump_line(to_json(r)) + "\n";
    } else {
        if (header) out += io::csv_header_comment(*header);
        out += io::csv_line(csv_columns());
        for (const auto& r : records) {
            out += io::csv_line({r.id, r.source_lang, r.target_lang, std::string(to_string(r.domain)), r.model,
                                 r.source_text, r.reference_text, r.translation_text, r.excluded ? "true" : "false"});
        }
    }
    try {
        io::write_file(path, out);
    } catch (const io::IoError& e) {
        throw CorpusError(e.what());
    }
}

// ---------------------------------------------------------------------------
// Translation prompts

/// Counts tokens of a string. The default approximates tokens as
/// whitespace-delimited units; providers may supply their own tokenizer.
using TokenCounter = std::function<size_t(std::string_view)>;

inline size_t whitespace_token_count(std::string_view s) { return text::split_whitespace(s).size(); }

struct TranslationPrompt {
    std::string text;
    double temperature = 0.1;
    /// Token budget left for the input text.
    size_t max_input_tokens = 0;
    bool truncated = false;
};

inline constexpr size_t kReservedTokens = 500;

inline std::string render_translation_prompt(std::string_view source_name, std::string_view target_name,
                                             std::string_view input) {
    std::string out = "Translate the following ";
    out += source_name;
    out += " text to ";
    out += target_name;
    out += ":\n";
    out += input;
    out += "\nTranslation:";
    return out;
}

/// Builds the translation prompt, truncating the source text so the whole
/// prompt fits `context_length - 500` tokens.
inline TranslationPrompt build_prompt(const TranslationRecord& record, size_t context_length,
                                      const TokenCounter& count = whitespace_token_count,
                                      const LanguageRegistry& langs = LanguageRegistry::builtin()) {
    if (context_length <= kReservedTokens) throw CorpusError("context window too small");
    const size_t safe_length = context_length - kReservedTokens;
    const auto& src = langs.name(record.source_lang);
    const auto& tgt = langs.name(record.target_lang);
    const size_t template_tokens = count(render_translation_prompt(src, tgt, ""));
    if (template_tokens >= safe_length) throw CorpusError("context window too small");

    TranslationPrompt prompt;
    prompt.max_input_tokens = safe_length - template_tokens;
    std::string input = record.source_text;
    if (count(input) > prompt.max_input_tokens) {
        // Largest whitespace-unit prefix that fits; cut at the end of a unit
        // so the original spacing inside the prefix is preserved.
        const auto cps = text::to_codepoints(input);
        std::vector<size_t> unit_ends;
        for (size_t i = 0; i < cps.size(); ++i) {
            if (!text::is_space(cps[i]) && (i + 1 == cps.size() || text::is_space(cps[i + 1]))) {
                unit_ends.push_back(i + 1);
            }
        }
        auto prefix = [&](size_t units) {
            return units == 0 ? std::string() : text::from_codepoints(std::u32string_view(cps).substr(0, unit_ends[units - 1]));
        };
        size_t lo = 0, hi = unit_ends.size();  // number of units kept, in [lo, hi]
        while (lo < hi) {
            size_t mid = (lo + hi + 1) / 2;
            if (count(prefix(mid)) <= prompt.max_input_tokens) {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        input = prefix(lo);
        prompt.truncated = true;
    }
    prompt.text = render_translation_prompt(src, tgt, input);
    return prompt;
}

}  // namespace tangles
