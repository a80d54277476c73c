#pragma once

// Embedding and NER providers: a deterministic offline embedder, replay
// fixtures, JSON-over-HTTP clients, an on-disk embedding cache and the
// gazetteer NER fallback.

#include <array>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tangles/detect.hpp"
#include "tangles/hash.hpp"
#include "tangles/io.hpp"
#include "tangles/transport.hpp"

namespace tangles {

// ---------------------------------------------------------------------------
// Embedders

/// Feature-hashed bag of lowercased words: bucket = FNV-1a(word, seed) mod
/// dimension, weight +1 per occurrence. Texts without word segments fall back
/// to their non-space code points.
class HashingEmbedder : public Embedder {
  public:
    explicit HashingEmbedder(size_t dimension = 384, uint64_t seed = 0) : dim_(dimension), seed_(seed) {
        if (dim_ == 0) throw DetectError("hashing embedder dimension must be >= 1");
        basis_ = fnv1a64("tangles-hashing-" + std::to_string(seed_));
    }

    std::string id() const override { return "hashing-" + std::to_string(dim_) + "-" + std::to_string(seed_); }

    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
        std::vector<EmbeddingVector> out;
        out.reserve(texts.size());
        for (const auto& t : texts) out.push_back(embed_one(t));
        return out;
    }

  private:
    EmbeddingVector embed_one(const std::string& t) const {
        auto feats = text::lower_words(t);
        if (feats.empty()) {
            for (char32_t c : text::to_codepoints(text::nfc(t))) {
                if (!text::is_space(c)) feats.push_back(text::from_codepoints(std::u32string(1, c)));
            }
        }
        if (feats.empty()) throw DetectError("cannot embed empty text");
        EmbeddingVector v;
        v.values.assign(dim_, 0.0);
        for (const auto& f : feats) v.values[fnv1a64(f, basis_) % dim_] += 1.0;
        return v;
    }

    size_t dim_;
    uint64_t seed_;
    uint64_t basis_;
};

/// Replays vectors from a JSON object {text: [values...]}. Unknown texts are
/// a non-retryable provider error.
class ReplayEmbedder : public Embedder {
  public:
    explicit ReplayEmbedder(std::map<std::string, EmbeddingVector> table, std::string name = "replay")
        : table_(std::move(table)), name_(std::move(name)) {}

    static ReplayEmbedder from_file(const std::filesystem::path& path) {
        auto doc = nlohmann::json::parse(io::read_file(path));
        std::map<std::string, EmbeddingVector> table;
        for (const auto& [text, values] : doc.items()) table[text].values = values.get<std::vector<double>>();
        return ReplayEmbedder(std::move(table), "replay:" + path.filename().string());
    }

    std::string id() const override { return name_; }

    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
        std::vector<EmbeddingVector> out;
        for (const auto& t : texts) {
            auto it = table_.find(t);
            if (it == table_.end()) throw ProviderError("replay embedder has no vector for \"" + t.substr(0, 60) + "\"", false);
            out.push_back(it->second);
        }
        return out;
    }

  private:
    std::map<std::string, EmbeddingVector> table_;
    std::string name_;
};

struct HttpProviderOptions {
    std::string endpoint;
    std::optional<std::string> api_key;
    BackoffPolicy backoff;
    size_t max_in_flight = 4;
    uint64_t jitter_seed = 0;
};

/// POST {"texts": [...]} -> {"vectors": [[...], ...]}.
class HttpEmbedder : public Embedder {
  public:
    HttpEmbedder(HttpProviderOptions opts, HttpPost post, Sleeper sleep = thread_sleeper(),
                 std::optional<size_t> expected_dimension = std::nullopt)
        : opts_(std::move(opts)),
          post_(std::move(post)),
          sleep_(std::move(sleep)),
          expected_dim_(expected_dimension),
          limiter_(opts_.max_in_flight) {}

    std::string id() const override { return "http:" + opts_.endpoint; }

    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
        HttpRequest req;
        req.url = opts_.endpoint;
        req.body = io::dump_line(nlohmann::json{{"texts", texts}});
        req.headers.emplace_back("Content-Type", "application/json");
        if (opts_.api_key) req.headers.emplace_back("Authorization", "Bearer " + *opts_.api_key);
        Rng rng(opts_.jitter_seed + calls_++);
        return with_retry(opts_.backoff, sleep_, rng, [&](int) {
            InFlightLimiter::Slot slot(limiter_);
            const auto body = expect_ok(post_(req), "embedding provider");
            return parse(body, texts.size());
        });
    }

  private:
    std::vector<EmbeddingVector> parse(const std::string& body, size_t expected) const {
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(body);
        } catch (const nlohmann::json::parse_error&) {
            throw ProviderError("embedding provider returned malformed JSON", true);
        }
        if (!doc.contains("vectors") || !doc["vectors"].is_array()) {
            throw ProviderError("embedding provider response lacks 'vectors'", false);
        }
        std::vector<EmbeddingVector> out;
        for (const auto& v : doc["vectors"]) {
            EmbeddingVector e;
            try {
                e.values = v.get<std::vector<double>>();
            } catch (const nlohmann::json::exception&) {
                throw ProviderError("embedding provider returned a non-numeric vector", false);
            }
            out.push_back(std::move(e));
        }
        if (out.size() != expected) {
            throw ProviderError("embedding provider returned " + std::to_string(out.size()) + " vectors for " +
                                    std::to_string(expected) + " texts",
                                false);
        }
        const size_t dim = expected_dim_ ? *expected_dim_ : (out.empty() ? 0 : out[0].dimension());
        for (const auto& e : out) {
            if (e.dimension() != dim) {
                throw ProviderError("embedding provider returned dimension " + std::to_string(e.dimension()) +
                                        ", expected " + std::to_string(dim),
                                    false);
            }
        }
        return out;
    }

    HttpProviderOptions opts_;
    HttpPost post_;
    Sleeper sleep_;
    std::optional<size_t> expected_dim_;
    InFlightLimiter limiter_;
    std::atomic<uint64_t> calls_{0};
};

/// Content-addressed cache in front of another embedder. Keys are
/// sha256(provider id NUL text); with a directory, entries persist as
/// <dir>/<key[0:2]>/<key>.json written via rename. Unreadable or corrupt
/// entries count as misses.
class CachedEmbedder : public Embedder {
  public:
    explicit CachedEmbedder(Embedder& inner, std::optional<std::filesystem::path> dir = std::nullopt)
        : inner_(inner), dir_(std::move(dir)) {}

    std::string id() const override { return inner_.id(); }

    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
        std::vector<EmbeddingVector> out(texts.size());
        std::vector<size_t> missing;
        std::vector<std::string> keys(texts.size());
        for (size_t i = 0; i < texts.size(); ++i) {
            keys[i] = key(texts[i]);
            if (auto hit = lookup(keys[i])) {
                out[i] = std::move(*hit);
                hits_++;
            } else {
                missing.push_back(i);
            }
        }
        if (missing.empty()) return out;
        std::vector<std::string> batch;
        for (size_t i : missing) batch.push_back(texts[i]);
        auto fresh = inner_.embed(batch);
        if (fresh.size() != batch.size()) {
            throw ProviderError("embedding provider returned " + std::to_string(fresh.size()) + " vectors for " +
                                    std::to_string(batch.size()) + " texts",
                                false);
        }
        for (size_t k = 0; k < missing.size(); ++k) {
            store(keys[missing[k]], fresh[k]);
            out[missing[k]] = std::move(fresh[k]);
        }
        return out;
    }

    size_t hits() const { return hits_; }

  private:
    std::string key(const std::string& text) const {
        std::string material = inner_.id();
        material.push_back('\0');
        material += text;
        return sha256_hex(material);
    }

    std::filesystem::path file_for(const std::string& k) const { return *dir_ / k.substr(0, 2) / (k + ".json"); }

    std::mutex& stripe(const std::string& k) { return stripes_[std::stoul(k.substr(0, 2), nullptr, 16) % stripes_.size()]; }

    std::optional<EmbeddingVector> lookup(const std::string& k) {
        {
            std::lock_guard lock(memory_mutex_);
            if (auto it = memory_.find(k); it != memory_.end()) return it->second;
        }
        if (!dir_) return std::nullopt;
        try {
            std::ifstream in(file_for(k), std::ios::binary);
            if (!in) return std::nullopt;
            std::stringstream buf;
            buf << in.rdbuf();
            auto doc = nlohmann::json::parse(buf.str());
            if (doc.at("key").get<std::string>() != k) return std::nullopt;
            EmbeddingVector v;
            v.values = doc.at("values").get<std::vector<double>>();
            v.validate();
            std::lock_guard lock(memory_mutex_);
            memory_[k] = v;
            return v;
        } catch (const std::exception&) {
            return std::nullopt;
        }
    }

    void store(const std::string& k, const EmbeddingVector& v) {
        {
            std::lock_guard lock(memory_mutex_);
            memory_[k] = v;
        }
        if (!dir_) return;
        std::lock_guard lock(stripe(k));
        try {
            const auto path = file_for(k);
            std::filesystem::create_directories(path.parent_path());
            auto tmp = path;
            tmp += ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
            nlohmann::json doc = {{"key", k}, {"provider", inner_.id()}, {"values", v.values}};
            io::write_file(tmp, doc.dump());
            std::filesystem::rename(tmp, path);
        } catch (const std::exception&) {
            // A cache that cannot be written only costs recomputation.
        }
    }

    Embedder& inner_;
    std::optional<std::filesystem::path> dir_;
    std::mutex memory_mutex_;
    std::map<std::string, EmbeddingVector> memory_;
    std::array<std::mutex, 64> stripes_;
    std::atomic<size_t> hits_{0};
};

// ---------------------------------------------------------------------------
// NER providers

namespace detail {

inline void check_spans(const std::vector<EntityMention>& ents, const std::string& text, const std::string& who) {
    const size_t len = text::to_codepoints(text::nfc(text)).size();
    for (const auto& e : ents) {
        if (e.surface.empty() || e.start >= e.end || e.end > len) {
            throw ProviderError(who + " returned an invalid entity span for '" + e.surface + "'", false);
        }
    }
}

inline std::vector<EntityMention> entities_from_json(const nlohmann::json& arr) {
    std::vector<EntityMention> out;
    for (const auto& e : arr) {
        EntityMention m;
        m.surface = e.at("surface").get<std::string>();
        m.entity_type = e.at("type").get<std::string>();
        m.start = e.at("start").get<size_t>();
        m.end = e.at("end").get<size_t>();
        out.push_back(std::move(m));
    }
    return out;
}

}  // namespace detail

/// Case-sensitive whole-word gazetteer with leftmost-longest matching.
class GazetteerNer : public NerProvider {
  public:
    void add(const std::string& surface, const std::string& type) {
        std::vector<std::string> toks;
        for (auto& w : text::words(surface)) toks.push_back(std::move(w.text));
        if (toks.empty()) throw DetectError("empty gazetteer entry");
        entries_.push_back({std::move(toks), type});
    }

    static GazetteerNer from_file(const std::filesystem::path& path) {
        GazetteerNer g;
        std::istringstream in(io::read_file(path));
        std::string line;
        size_t n = 0;
        while (std::getline(in, line)) {
            ++n;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty() || line[0] == '#') continue;
            auto tab = line.find('\t');
            if (tab == std::string::npos) {
                throw DetectError(path.string() + ":" + std::to_string(n) + ": expected surface<TAB>TYPE");
            }
            g.add(line.substr(0, tab), line.substr(tab + 1));
        }
        return g;
    }

    std::string id() const override { return "gazetteer"; }
    size_t size() const { return entries_.size(); }

    std::vector<EntityMention> entities(const std::string& input) override {
        const auto ws = text::words(input);
        const auto cps = text::to_codepoints(text::nfc(input));
        // Possessive stems: "Christ's" matches "Christ".
        std::vector<std::string> stems;
        std::vector<size_t> stem_end;
        for (const auto& w : ws) {
            std::string s = w.text;
            size_t end = w.end;
            for (std::string_view suffix : {std::string_view("'s"), std::string_view("’s")}) {
                if (s.size() > suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0) {
                    s.resize(s.size() - suffix.size());
                    end -= 2;
                    break;
                }
            }
            stems.push_back(std::move(s));
            stem_end.push_back(end);
        }
        std::vector<EntityMention> out;
        size_t i = 0;
        while (i < ws.size()) {
            const Entry* best = nullptr;
            for (const auto& e : entries_) {
                const size_t n = e.tokens.size();
                if (i + n > ws.size() || (best && n <= best->tokens.size())) continue;
                bool ok = true;
                for (size_t k = 0; k < n && ok; ++k) {
                    const std::string& w = k + 1 == n ? stems[i + k] : ws[i + k].text;
                    ok = w == e.tokens[k];
                }
                if (ok) best = &e;
            }
            if (!best) {
                ++i;
                continue;
            }
            const size_t n = best->tokens.size();
            EntityMention m;
            m.start = ws[i].start;
            m.end = stem_end[i + n - 1];
            m.surface = text::from_codepoints(std::u32string_view(cps).substr(m.start, m.end - m.start));
            m.entity_type = best->type;
            out.push_back(std::move(m));
            i += n;
        }
        return out;
    }

  private:
    struct Entry {
        std::vector<std::string> tokens;
        std::string type;
    };
    std::vector<Entry> entries_;
};

/// Replays entities from {text: [{surface, type, start, end}, ...]}; texts
/// absent from the fixture have no entities.
class ReplayNer : public NerProvider {
  public:
    static ReplayNer from_file(const std::filesystem::path& path) {
        ReplayNer r;
        auto doc = nlohmann::json::parse(io::read_file(path));
        for (const auto& [text, ents] : doc.items()) {
            r.table_[text] = detail::entities_from_json(ents);
            detail::check_spans(r.table_[text], text, "replay NER");
        }
        return r;
    }

    void set(const std::string& text, std::vector<EntityMention> ents) { table_[text] = std::move(ents); }

    std::string id() const override { return "replay-ner"; }

    std::vector<EntityMention> entities(const std::string& text) override {
        auto it = table_.find(text);
        return it == table_.end() ? std::vector<EntityMention>{} : it->second;
    }

  private:
    std::map<std::string, std::vector<EntityMention>> table_;
};

/// POST {"text": ...} -> {"entities": [{surface, type, start, end}]}.
class HttpNer : public NerProvider {
  public:
    HttpNer(HttpProviderOptions opts, HttpPost post, Sleeper sleep = thread_sleeper())
        : opts_(std::move(opts)), post_(std::move(post)), sleep_(std::move(sleep)), limiter_(opts_.max_in_flight) {}

    std::string id() const override { return "http:" + opts_.endpoint; }

    std::vector<EntityMention> entities(const std::string& text) override {
        HttpRequest req;
        req.url = opts_.endpoint;
        req.body = io::dump_line(nlohmann::json{{"text", text}});
        req.headers.emplace_back("Content-Type", "application/json");
        if (opts_.api_key) req.headers.emplace_back("Authorization", "Bearer " + *opts_.api_key);
        Rng rng(opts_.jitter_seed + calls_++);
        return with_retry(opts_.backoff, sleep_, rng, [&](int) {
            InFlightLimiter::Slot slot(limiter_);
            const auto body = expect_ok(post_(req), "NER provider");
            std::vector<EntityMention> ents;
            try {
                auto doc = nlohmann::json::parse(body);
                ents = detail::entities_from_json(doc.at("entities"));
            } catch (const nlohmann::json::exception&) {
                throw ProviderError("NER provider returned a malformed response", true);
            }
            detail::check_spans(ents, text, "NER provider");
            return ents;
        });
    }

  private:
    HttpProviderOptions opts_;
    HttpPost post_;
    Sleeper sleep_;
    InFlightLimiter limiter_;
    std::atomic<uint64_t> calls_{0};
};

/// No entities at all (keyword-only detection).
class NullNer : public NerProvider {
  public:
    std::string id() const override { return "none"; }
    std::vector<EntityMention> entities(const std::string&) override { return {}; }
};

}  // namespace tangles
