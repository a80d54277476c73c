#pragma once

// Command-line front end. run() parses argv, executes one subcommand and
// returns the exit code: 0 success, 1 validation error, 2 provider failure.
// A TOML file given with --config supplies defaults per subcommand section
// ([detect], [annotate.serve], ...); flags on the command line win.

#include <atomic>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "tangles/analysis.hpp"
#include "tangles/annotation_server.hpp"
#include "tangles/config.hpp"
#include "tangles/corpus.hpp"
#include "tangles/detect.hpp"
#include "tangles/http_client.hpp"
#include "tangles/io.hpp"
#include "tangles/judge.hpp"
#include "tangles/lexicon.hpp"
#include "tangles/metrics.hpp"
#include "tangles/providers.hpp"
#include "tangles/sampling.hpp"

namespace tangles::cli {

class UsageError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

namespace detail {

/// Options given on the command line or in the config file, plus defaults,
/// as a JSON object for artifact headers. Numbers and booleans are typed.
inline nlohmann::ordered_json effective_config(const CLI::App* sub) {
    auto typed = [](const std::string& s) -> nlohmann::ordered_json {
        if (s == "true") return true;
        if (s == "false") return false;
        if (!s.empty()) {
            char* end = nullptr;
            const long long i = std::strtoll(s.c_str(), &end, 10);
            if (*end == '\0') return i;
            const double d = std::strtod(s.c_str(), &end);
            if (*end == '\0') return d;
        }
        return s;
    };
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const CLI::Option* opt : sub->get_options()) {
        const auto name = opt->get_lnames().empty() ? std::string() : opt->get_lnames().front();
        if (name.empty() || name == "help" || name == "config") continue;
        if (opt->count() > 0) {
            const auto& res = opt->results();
            if (opt->get_expected_max() > 1 || res.size() > 1) {
                nlohmann::ordered_json arr = nlohmann::ordered_json::array();
                for (const auto& r : res) arr.push_back(typed(r));
                j[name] = arr;
            } else if (opt->get_type_size() == 0) {
                j[name] = true;
            } else {
                j[name] = typed(res.front());
            }
        } else if (const auto d = opt->get_default_str(); d == "{}" || d == "[]") {
            j[name] = nlohmann::ordered_json::array();  // empty list option
        } else if (!d.empty()) {
            j[name] = typed(d);
        }
    }
    return j;
}

inline std::string command_path(const CLI::App* sub) {
    std::string s = sub->get_name();
    for (auto* p = sub->get_parent(); p && p->get_parent(); p = p->get_parent()) s = p->get_name() + " " + s;
    return s;
}

inline nlohmann::ordered_json header_for(const CLI::App* sub, uint64_t seed = 0,
                                         const nlohmann::ordered_json& extra = nlohmann::ordered_json::object()) {
    auto cfg = effective_config(sub);
    for (const auto& [k, v] : extra.items()) cfg[k] = v;
    return io::make_header(command_path(sub), cfg, seed);
}

template <typename Rows>
void write_jsonl(const std::filesystem::path& path, const nlohmann::ordered_json& header, const Rows& rows) {
    std::string out = io::dump_line(header) + "\n";
    for (const auto& r : rows) out += io::dump_line(to_json(r)) + "\n";
    io::write_file(path, out);
}

inline void write_text(const std::string& path, const std::string& content, std::ostream& out) {
    if (path.empty() || path == "-") {
        out << content;
    } else {
        io::write_file(path, content);
    }
}

inline std::vector<TranslationRecord> active(const std::vector<TranslationRecord>& records) {
    std::vector<TranslationRecord> out;
    for (const auto& r : records) {
        if (!r.excluded) out.push_back(r);
    }
    return out;
}

/// Runs fn(i) for i in [0, n) on at most `workers` threads; the first
/// exception (by index) is rethrown after all threads finish.
inline void parallel_for(size_t n, size_t workers, const std::function<void(size_t)>& fn) {
    std::vector<std::exception_ptr> errors(n);
    std::atomic<size_t> next{0};
    std::atomic<bool> failed{false};
    auto worker = [&] {
        for (size_t i = next++; i < n && !failed; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
                failed = true;
            }
        }
    };
    std::vector<std::thread> pool;
    for (size_t t = 0; t < std::max<size_t>(1, std::min(workers, n)); ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

inline std::map<std::string, bool> detection_flags(const std::vector<DetectionResult>& ds) {
    std::map<std::string, bool> m;
    for (const auto& d : ds) m[d.record_id] = d.flagged;
    return m;
}

inline std::map<std::string, bool> verdict_flags(const std::vector<JudgeVerdict>& vs) {
    std::map<std::string, bool> m;
    for (const auto& v : vs) {
        if (!v.excluded) m[v.record_id] = v.bias_detected;
    }
    return m;
}

/// System flags limited to the gold records; a gold record the system never
/// scored is an artifact mismatch.
inline std::map<std::string, bool> restrict_to(const std::map<std::string, bool>& system,
                                               const std::map<std::string, bool>& gold, const std::string& what) {
    std::map<std::string, bool> out;
    std::vector<std::string> missing;
    for (const auto& [id, g] : gold) {
        auto it = system.find(id);
        if (it == system.end()) {
            missing.push_back(id);
        } else {
            out[id] = it->second;
        }
    }
    if (!missing.empty()) {
        std::string s;
        for (size_t i = 0; i < missing.size() && i < 20; ++i) s += (i ? ", " : "") + missing[i];
        throw UsageError(what + " has no entry for gold records: " + s);
    }
    return out;
}

template <typename T, typename IdFn>
void require_subset(const std::vector<T>& items, IdFn id, const std::set<std::string>& universe,
                    const std::string& what, const std::string& against) {
    std::vector<std::string> extra;
    for (const auto& x : items) {
        if (!universe.count(id(x))) extra.push_back(id(x));
    }
    if (!extra.empty()) {
        std::string s;
        for (size_t i = 0; i < extra.size() && i < 20; ++i) s += (i ? ", " : "") + extra[i];
        throw UsageError(what + " refer to records missing from " + against + ": " + s);
    }
}

inline std::string agreement_table(const AgreementReport& r) {
    std::string out = "| category | heuristic | confirmed | agreement_pct |\n|---|---|---|---|\n";
    for (auto c : kAllCategories) {
        auto it = r.per_category.find(c);
        if (it == r.per_category.end()) continue;
        out += "| " + std::string(to_string(c)) + " | " + std::to_string(it->second.heuristic_count) + " | " +
               std::to_string(it->second.judge_confirmed_count) + " | " + fixed(it->second.agreement_pct(), 2) + " |\n";
    }
    const auto o = r.overall_pct();
    out += "| total | " + std::to_string(r.heuristic_total()) + " | " + std::to_string(r.confirmed_total()) + " | " +
           (o ? fixed(*o, 2) : std::string("n/a")) + " |\n";
    return out;
}

inline std::string confusion_table(const std::vector<std::pair<std::string, ConfusionMatrix>>& ms) {
    std::string out = "| system | TP | FP | FN | TN | recall | precision | accuracy |\n|---|---|---|---|---|---|---|---|\n";
    for (const auto& [name, m] : ms) {
        out += "| " + name + " | " + std::to_string(m.tp) + " | " + std::to_string(m.fp) + " | " + std::to_string(m.fn) +
               " | " + std::to_string(m.tn) + " | " + pct1(m.recall()) + " | " + pct1(m.precision()) + " | " +
               pct1(m.accuracy()) + " |\n";
    }
    return out;
}

/// "cultural:798:395" -> (cultural, 798, 395).
inline std::tuple<BiasCategory, size_t, size_t> parse_count(const std::string& s) {
    const auto parts = CLI::detail::split(s, ':');
    if (parts.size() != 3) throw UsageError("--count expects CATEGORY:HEURISTIC:CONFIRMED, got '" + s + "'");
    auto c = normalize_label(parts[0]);
    if (!c) throw UsageError("unknown bias category '" + parts[0] + "'");
    try {
        return {*c, std::stoul(parts[1]), std::stoul(parts[2])};
    } catch (const std::exception&) {
        throw UsageError("--count expects non-negative integers, got '" + s + "'");
    }
}

/// "heuristic:313:832:0:294" -> named matrix.
inline std::pair<std::string, ConfusionMatrix> parse_confusion_counts(const std::string& s) {
    const auto parts = CLI::detail::split(s, ':');
    if (parts.size() != 5 || parts[0].empty()) throw UsageError("--counts expects NAME:TP:FP:FN:TN, got '" + s + "'");
    ConfusionMatrix m;
    try {
        m.tp = std::stoul(parts[1]);
        m.fp = std::stoul(parts[2]);
        m.fn = std::stoul(parts[3]);
        m.tn = std::stoul(parts[4]);
    } catch (const std::exception&) {
        throw UsageError("--counts expects non-negative integers, got '" + s + "'");
    }
    return {parts[0], m};
}

inline std::map<std::string, SizeClass> parse_sizes(const std::vector<std::string>& specs) {
    std::map<std::string, SizeClass> out;
    for (const auto& s : specs) {
        const auto eq = s.rfind('=');
        if (eq == std::string::npos) throw UsageError("--size expects MODEL=small|medium|large, got '" + s + "'");
        auto c = parse_size_class(s.substr(eq + 1));
        if (!c) throw UsageError("unknown size class in '" + s + "'");
        out[s.substr(0, eq)] = *c;
    }
    return out;
}

inline std::vector<BiasCategory> parse_categories(const std::vector<std::string>& names) {
    if (names.empty()) return all_categories();
    std::vector<BiasCategory> out;
    for (const auto& n : names) {
        auto c = normalize_label(n);
        if (!c) throw UsageError("unknown bias category '" + n + "'");
        if (std::find(out.begin(), out.end(), *c) == out.end()) out.push_back(*c);
    }
    return out;
}

inline std::string require_env_or(const std::string& flag_value, const char* env_name, const char* what) {
    if (!flag_value.empty()) return flag_value;
    if (auto v = env(env_name)) return *v;
    throw UsageError(std::string(what) + " needs an endpoint (flag or " + env_name + ")");
}

}  // namespace detail

/// Parses and runs one command. Output tables go to `out`, messages to `err`.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    using namespace detail;
    CLI::App app{"Translation quality and bias evaluation toolkit", "tangles"};
    app.option_defaults()->always_capture_default();
    app.set_config("--config", "", "TOML file with per-subcommand defaults");
    app.set_version_flag("--version", std::string(io::kToolVersion));
    app.require_subcommand(1);
    app.fallthrough(false);

    std::function<int()> action;
    auto on = [&](CLI::App* sub, std::function<int()> fn) { sub->callback([&action, fn] { action = fn; }); };

    // ---------------------------------------------------------------- corpus
    auto* corpus = app.add_subcommand("corpus", "Validate or sample corpora")->require_subcommand(1);
    struct {
        std::string in, format;
    } cv;
    auto* corpus_validate = corpus->add_subcommand("validate", "Check a corpus file and print a summary");
    corpus_validate->add_option("--in", cv.in, "Corpus (JSONL or CSV)")->required();
    corpus_validate->add_option("--format", cv.format, "jsonl or csv (default: by extension)")
        ->check(CLI::IsMember({"jsonl", "csv"}));
    on(corpus_validate, [&] {
        const auto fmt = cv.format.empty() ? format_from_path(cv.in) : *parse_format(cv.format);
        const auto records = load_corpus(cv.in, fmt);
        std::map<std::string, size_t> pairs, models;
        size_t excluded = 0;
        for (const auto& r : records) {
            ++pairs[r.pair()];
            ++models[r.model];
            excluded += r.excluded;
        }
        out << records.size() << " records, " << excluded << " excluded, " << pairs.size() << " language pairs, "
            << models.size() << " models\n";
        for (const auto& [p, n] : pairs) out << "  " << p << "\t" << n << "\n";
        return 0;
    });

    struct {
        std::string in, detections, verdicts, out;
        size_t agreement = 0, disagreement = 0, undetected = 0;
        uint64_t seed = 0;
    } sp;
    auto add_sample_opts = [&](CLI::App* s) {
        s->add_option("--in", sp.in, "Corpus")->required();
        s->add_option("--detections", sp.detections, "Detection artifact")->required();
        s->add_option("--verdicts", sp.verdicts, "Judge verdict artifact")->required();
        s->add_option("--agreement", sp.agreement, "Records drawn where heuristic and judge both flag")->required();
        s->add_option("--disagreement", sp.disagreement, "Records drawn where only the heuristic flags")->required();
        s->add_option("--undetected", sp.undetected, "Records drawn where neither flags")->required();
        s->add_option("--seed", sp.seed, "Sampling seed")->required();
        s->add_option("--out", sp.out, "Sample JSONL (records plus stratum)")->required();
    };
    auto sample_action = [&](CLI::App* s) {
        return [&, s] {
            const auto records = load_corpus(sp.in);
            const auto dets = load_detections(sp.detections);
            const auto vers = load_verdicts(sp.verdicts);
            const auto pools = build_pools(records, dets, vers);
            const auto ids = sample_pools(pools, {sp.agreement, sp.disagreement, sp.undetected, sp.seed});
            std::map<std::string, const TranslationRecord*> by_id;
            for (const auto& r : records) by_id[r.id] = &r;
            std::string body = io::dump_line(header_for(s, sp.seed)) + "\n";
            for (auto st : {Stratum::agreement, Stratum::disagreement, Stratum::undetected}) {
                for (const auto& id : ids.of(st)) {
                    auto row = to_json(*by_id.at(id));
                    row["stratum"] = to_string(st);
                    body += io::dump_line(row) + "\n";
                }
            }
            io::write_file(sp.out, body);
            out << "pools: agreement " << pools.agreement.size() << ", disagreement " << pools.disagreement.size()
                << ", undetected " << pools.undetected.size() << ", judge-only " << pools.judge_only.size()
                << ", excluded " << pools.excluded << "\n";
            out << "sampled " << ids.agreement.size() + ids.disagreement.size() + ids.undetected.size() << " records\n";
            return 0;
        };
    };
    auto* corpus_sample = corpus->add_subcommand("sample", "Stratified sample for annotation");
    add_sample_opts(corpus_sample);
    on(corpus_sample, sample_action(corpus_sample));
    auto* sample = app.add_subcommand("sample", "Stratified sample for annotation (same as corpus sample)");
    add_sample_opts(sample);
    on(sample, sample_action(sample));

    // -------------------------------------------------------------- evaluate
    struct {
        std::string in, out, group_by, aggregates, neural, families;
        size_t workers = 4;
    } ev;
    auto* evaluate = app.add_subcommand("evaluate", "Score translations with the native metrics");
    evaluate->add_option("--in", ev.in, "Corpus")->required();
    evaluate->add_option("--out", ev.out, "Metric report JSONL")->required();
    evaluate->add_option("--group-by", ev.group_by, "Aggregate by model, pair, domain or family")
        ->check(CLI::IsMember({"model", "pair", "domain", "family"}));
    evaluate->add_option("--aggregates", ev.aggregates, "Aggregate CSV path (default: stdout)");
    evaluate->add_option("--neural", ev.neural, "Precomputed BERTScore/COMET JSONL");
    evaluate->add_option("--families", ev.families, "Extra language family TSV");
    evaluate->add_option("--workers", ev.workers, "Scoring threads")->check(CLI::PositiveNumber);
    on(evaluate, [&] {
        const auto records = active(load_corpus(ev.in));
        std::optional<metrics::PrecomputedNeuralScorer> neural;
        if (!ev.neural.empty()) neural.emplace(ev.neural);
        std::vector<metrics::MetricReport> reports(records.size());
        parallel_for(records.size(), ev.workers, [&](size_t i) {
            reports[i] = metrics::score_record(records[i], neural ? &*neural : nullptr);
        });
        const auto header = header_for(evaluate);
        write_jsonl(ev.out, header, reports);
        if (!ev.group_by.empty()) {
            auto table = FamilyTable::builtin();
            if (!ev.families.empty()) table.load(ev.families);
            auto key = metrics::record_key(records, *metrics::parse_group_by(ev.group_by), [&](const TranslationRecord& r) {
                return std::optional<std::string>(to_string(table.classify(r.source_lang, r.target_lang)));
            });
            write_text(ev.aggregates, io::csv_header_comment(header) + metrics::aggregates_csv(metrics::aggregate(reports, key)),
                       out);
        }
        return 0;
    });

    // ---------------------------------------------------------------- detect
    struct {
        std::string in, out, embed = "hashing", embed_fixture, embed_endpoint, ner = "gazetteer", ner_fixture,
                                 ner_endpoint, gazetteer, lexicons, lexicon_overrides, cache;
        double threshold = 0.75;
        size_t workers = 4, dim = 384, max_in_flight = 4;
        uint64_t seed = 0;
    } dt;
    auto* detect_cmd = app.add_subcommand("detect", "Run the bias detection heuristic");
    detect_cmd->add_option("--in", dt.in, "Corpus")->required();
    detect_cmd->add_option("--out", dt.out, "Detection JSONL")->required();
    detect_cmd->add_option("--threshold", dt.threshold, "Similarity gate")->check(CLI::Range(0.0, 1.0));
    detect_cmd->add_option("--embed", dt.embed, "Embedding provider")->check(CLI::IsMember({"hashing", "replay", "http"}));
    detect_cmd->add_option("--embed-fixture", dt.embed_fixture, "Replay vectors {text: [...]}");
    detect_cmd->add_option("--embed-endpoint", dt.embed_endpoint, "Embedding URL (or TANGLES_EMBED_ENDPOINT)");
    detect_cmd->add_option("--dim", dt.dim, "Hashing embedder dimension")->check(CLI::PositiveNumber);
    detect_cmd->add_option("--ner", dt.ner, "NER provider")->check(CLI::IsMember({"gazetteer", "replay", "http", "none"}));
    detect_cmd->add_option("--ner-fixture", dt.ner_fixture, "Replay entities {text: [...]}");
    detect_cmd->add_option("--ner-endpoint", dt.ner_endpoint, "NER URL (or TANGLES_NER_ENDPOINT)");
    detect_cmd->add_option("--gazetteer", dt.gazetteer, "Gazetteer TSV (default: bundled)");
    detect_cmd->add_option("--lexicons", dt.lexicons, "Directory of <category>.txt lexicons (default: built-in)");
    detect_cmd->add_option("--lexicon-overrides", dt.lexicon_overrides, "JSON lexicon override document");
    detect_cmd->add_option("--cache", dt.cache, "Embedding cache directory");
    detect_cmd->add_option("--workers", dt.workers, "Worker threads")->check(CLI::PositiveNumber);
    detect_cmd->add_option("--max-in-flight", dt.max_in_flight, "Concurrent provider calls")->check(CLI::PositiveNumber);
    detect_cmd->add_option("--seed", dt.seed, "Seed for hashing embedder and retry jitter");
    on(detect_cmd, [&] {
        const auto records = active(load_corpus(dt.in));
        auto lexicons = dt.lexicons.empty() ? LexiconSet::seeded() : LexiconSet::from_directory(dt.lexicons);
        if (!dt.lexicon_overrides.empty()) lexicons.apply_overrides(nlohmann::json::parse(io::read_file(dt.lexicon_overrides)));
        const auto ner_map = NerBiasMap::seeded();

        std::unique_ptr<Embedder> base;
        if (dt.embed == "hashing") {
            base = std::make_unique<HashingEmbedder>(dt.dim, dt.seed);
        } else if (dt.embed == "replay") {
            if (dt.embed_fixture.empty()) throw UsageError("--embed replay needs --embed-fixture");
            base = std::make_unique<ReplayEmbedder>(ReplayEmbedder::from_file(dt.embed_fixture));
        } else {
            HttpProviderOptions o;
            o.endpoint = require_env_or(dt.embed_endpoint, "TANGLES_EMBED_ENDPOINT", "--embed http");
            o.api_key = env("TANGLES_EMBED_KEY");
            o.max_in_flight = dt.max_in_flight;
            o.jitter_seed = dt.seed;
            base = std::make_unique<HttpEmbedder>(o, make_http_post());
        }
        std::optional<CachedEmbedder> cached;
        if (!dt.cache.empty()) cached.emplace(*base, std::filesystem::path(dt.cache));
        Embedder& embedder = cached ? static_cast<Embedder&>(*cached) : *base;

        std::unique_ptr<NerProvider> ner;
        if (dt.ner == "gazetteer") {
            const auto path = dt.gazetteer.empty() ? std::filesystem::path(TANGLES_DATA_DIR) / "gazetteer.tsv"
                                                   : std::filesystem::path(dt.gazetteer);
            ner = std::make_unique<GazetteerNer>(GazetteerNer::from_file(path));
        } else if (dt.ner == "replay") {
            if (dt.ner_fixture.empty()) throw UsageError("--ner replay needs --ner-fixture");
            ner = std::make_unique<ReplayNer>(ReplayNer::from_file(dt.ner_fixture));
        } else if (dt.ner == "http") {
            HttpProviderOptions o;
            o.endpoint = require_env_or(dt.ner_endpoint, "TANGLES_NER_ENDPOINT", "--ner http");
            o.max_in_flight = dt.max_in_flight;
            o.jitter_seed = dt.seed;
            ner = std::make_unique<HttpNer>(o, make_http_post());
        } else {
            ner = std::make_unique<NullNer>();
        }

        DetectorConfig cfg;
        cfg.threshold = dt.threshold;
        cfg.embedding_provider = embedder.id();
        cfg.ner_provider = ner->id();
        const DetectorResources res{&embedder, ner.get(), &lexicons, &ner_map};
        std::vector<DetectionResult> results(records.size());
        parallel_for(records.size(), dt.workers, [&](size_t i) { results[i] = detect(records[i], cfg, res); });

        nlohmann::ordered_json extra;
        extra["embedding_provider"] = embedder.id();
        extra["ner_provider"] = ner->id();
        extra["lexicon_checksum"] = checksum(lexicons, ner_map);
        write_jsonl(dt.out, header_for(detect_cmd, dt.seed, extra), results);
        size_t flagged = 0;
        for (const auto& r : results) flagged += r.flagged;
        out << results.size() << " records, " << flagged << " flagged at threshold " << fixed(dt.threshold, 2) << "\n";
        return 0;
    });

    // ----------------------------------------------------------------- judge
    struct {
        std::string in, out, transport = "replay", replay, endpoint, detections;
        std::vector<std::string> categories;
        bool only_flagged = false;
        size_t parallel = 4;
        uint64_t seed = 0;
    } jd;
    auto* judge_cmd = app.add_subcommand("judge", "Ask the LLM judge about each translation");
    judge_cmd->add_option("--in", jd.in, "Corpus")->required();
    judge_cmd->add_option("--out", jd.out, "Verdict JSONL")->required();
    judge_cmd->add_option("--transport", jd.transport, "replay or http")->check(CLI::IsMember({"replay", "http"}));
    judge_cmd->add_option("--replay", jd.replay, "Replay fixture {record_id: response}");
    judge_cmd->add_option("--endpoint", jd.endpoint, "Judge URL (or TANGLES_JUDGE_ENDPOINT)");
    judge_cmd->add_option("--categories", jd.categories, "Categories listed in the prompt (default: all)");
    judge_cmd->add_option("--detections", jd.detections, "Detection artifact, for --only-flagged");
    judge_cmd->add_flag("--only-flagged", jd.only_flagged, "Judge only records the heuristic flagged");
    judge_cmd->add_option("--parallel", jd.parallel, "Concurrent judge calls")->check(CLI::PositiveNumber);
    judge_cmd->add_option("--seed", jd.seed, "Retry jitter seed");
    on(judge_cmd, [&] {
        auto records = active(load_corpus(jd.in));
        if (jd.only_flagged) {
            if (jd.detections.empty()) throw UsageError("--only-flagged needs --detections");
            const auto flags = detection_flags(load_detections(jd.detections));
            std::vector<TranslationRecord> kept;
            for (auto& r : records) {
                auto it = flags.find(r.id);
                if (it == flags.end()) throw UsageError("no detection for record '" + r.id + "'");
                if (it->second) kept.push_back(std::move(r));
            }
            records = std::move(kept);
        }
        std::unique_ptr<ChatTransport> transport;
        nlohmann::ordered_json extra;
        if (jd.transport == "replay") {
            if (jd.replay.empty()) throw UsageError("--transport replay needs --replay");
            transport = ReplayChatTransport::from_file(jd.replay);
        } else {
            const auto endpoint = require_env_or(jd.endpoint, "TANGLES_JUDGE_ENDPOINT", "--transport http");
            const auto model = env("TANGLES_JUDGE_MODEL");
            if (model) extra["judge_model"] = *model;
            transport = std::make_unique<HttpChatTransport>(endpoint, env("TANGLES_JUDGE_KEY"), model, make_http_post(),
                                                            jd.parallel);
        }
        JudgeOptions opts;
        opts.categories = parse_categories(jd.categories);
        const auto verdicts = judge_all(records, *transport, opts, thread_sleeper(), jd.seed, jd.parallel);
        write_jsonl(jd.out, header_for(judge_cmd, jd.seed, extra), verdicts);
        size_t positive = 0, excluded = 0;
        for (const auto& v : verdicts) {
            positive += v.bias_detected;
            excluded += v.excluded;
        }
        out << verdicts.size() << " verdicts, " << positive << " biased, " << excluded << " excluded\n";
        return 0;
    });

    // ----------------------------------------------------------------- agree
    struct {
        std::vector<std::string> counts;
        std::string detections, verdicts, out;
    } ag;
    auto* agree = app.add_subcommand("agree", "Per-category agreement between heuristic and judge");
    agree->add_option("--count", ag.counts, "CATEGORY:HEURISTIC:CONFIRMED (repeatable)");
    agree->add_option("--detections", ag.detections, "Detection artifact");
    agree->add_option("--verdicts", ag.verdicts, "Verdict artifact");
    agree->add_option("--out", ag.out, "Write the report as JSON");
    on(agree, [&] {
        AgreementReport r;
        if (!ag.counts.empty()) {
            if (!ag.detections.empty() || !ag.verdicts.empty()) throw UsageError("use either --count or --detections/--verdicts");
            std::map<BiasCategory, std::pair<size_t, size_t>> m;
            for (const auto& s : ag.counts) {
                auto [c, h, k] = parse_count(s);
                if (m.count(c)) throw UsageError("category '" + std::string(to_string(c)) + "' given twice");
                m[c] = {h, k};
            }
            r = AgreementReport::from_counts(m);
        } else {
            if (ag.detections.empty() || ag.verdicts.empty()) throw UsageError("agree needs --count or both --detections and --verdicts");
            r = agreement(load_detections(ag.detections), load_verdicts(ag.verdicts));
        }
        out << agreement_table(r);
        if (!ag.out.empty()) {
            auto j = to_json(r);
            nlohmann::ordered_json doc;
            doc["_header"] = header_for(agree)["_header"];
            doc["agreement"] = j;
            io::write_file(ag.out, doc.dump(2) + "\n");
        }
        return 0;
    });

    // ----------------------------------------------------------------- sweep
    struct {
        std::string in, out;
        double epsilon = 0.05;
    } sw;
    auto* sweep = app.add_subcommand("sweep", "Flag counts across similarity thresholds 0.60..0.95");
    sweep->add_option("--in", sw.in, "Detection artifact")->required();
    sweep->add_option("--out", sw.out, "CSV path (default: stdout)");
    sweep->add_option("--epsilon", sw.epsilon, "Relative growth below which the curve counts as stable")
        ->check(CLI::PositiveNumber);
    on(sweep, [&] {
        const auto s = sweep_thresholds(load_detections(sw.in));
        const auto knee = knee_threshold(s, sw.epsilon);
        write_text(sw.out, io::csv_header_comment(header_for(sweep)) + sweep_csv(s), out);
        err << "knee: " << fixed(knee.threshold, 2) << (knee.stabilized ? "" : " (counts never stabilized)") << "\n";
        return 0;
    });

    // --------------------------------------------------------------- heatmap
    struct {
        std::string detections, corpus, axis = "model", out;
    } hm;
    auto* heatmap = app.add_subcommand("heatmap", "Flagged categories per model or language pair");
    heatmap->add_option("--detections", hm.detections, "Detection artifact")->required();
    heatmap->add_option("--corpus", hm.corpus, "Corpus")->required();
    heatmap->add_option("--axis", hm.axis, "model or pair")->check(CLI::IsMember({"model", "pair"}));
    heatmap->add_option("--out", hm.out, "CSV path (default: stdout)");
    on(heatmap, [&] {
        const auto h = bias_heatmap(load_detections(hm.detections), load_corpus(hm.corpus), *parse_heatmap_axis(hm.axis));
        write_text(hm.out, io::csv_header_comment(header_for(heatmap)) + heatmap_csv(h), out);
        return 0;
    });

    // ------------------------------------------------------------- confusion
    struct {
        std::vector<std::string> counts;
        std::string gold, detections, verdicts, out;
    } cf;
    auto* confusion_cmd = app.add_subcommand("confusion", "Confusion matrices against gold labels");
    confusion_cmd->add_option("--counts", cf.counts, "NAME:TP:FP:FN:TN (repeatable)");
    confusion_cmd->add_option("--gold", cf.gold, "Gold export from annotate export");
    confusion_cmd->add_option("--detections", cf.detections, "Heuristic system");
    confusion_cmd->add_option("--verdicts", cf.verdicts, "Judge system");
    confusion_cmd->add_option("--out", cf.out, "Write the matrices as JSON");
    on(confusion_cmd, [&] {
        std::vector<std::pair<std::string, ConfusionMatrix>> ms;
        if (!cf.counts.empty()) {
            if (!cf.gold.empty()) throw UsageError("use either --counts or --gold with system artifacts");
            for (const auto& s : cf.counts) ms.push_back(parse_confusion_counts(s));
        } else {
            if (cf.gold.empty() || (cf.detections.empty() && cf.verdicts.empty())) {
                throw UsageError("confusion needs --counts, or --gold with --detections and/or --verdicts");
            }
            const auto gold = load_gold_flags(cf.gold);
            if (!cf.detections.empty()) {
                ms.emplace_back("heuristic", confusion(restrict_to(detection_flags(load_detections(cf.detections)), gold,
                                                                   "detections"), gold));
            }
            if (!cf.verdicts.empty()) {
                ms.emplace_back("judge", confusion(restrict_to(verdict_flags(load_verdicts(cf.verdicts)), gold, "verdicts"),
                                                   gold));
            }
        }
        out << confusion_table(ms);
        if (!cf.out.empty()) {
            nlohmann::ordered_json doc;
            doc["_header"] = header_for(confusion_cmd)["_header"];
            for (const auto& [name, m] : ms) doc["systems"][name] = to_json(m);
            io::write_file(cf.out, doc.dump(2) + "\n");
        }
        return 0;
    });

    // ---------------------------------------------------------------- report
    struct {
        std::string corpus, reports, detections, verdicts, gold, families, out;
        std::vector<std::string> sizes;
    } rp;
    auto* report = app.add_subcommand("report", "Markdown summary of all available artifacts");
    report->add_option("--corpus", rp.corpus, "Corpus");
    report->add_option("--reports", rp.reports, "Metric report JSONL");
    report->add_option("--detections", rp.detections, "Detection artifact");
    report->add_option("--verdicts", rp.verdicts, "Verdict artifact");
    report->add_option("--gold", rp.gold, "Gold export");
    report->add_option("--size", rp.sizes, "MODEL=small|medium|large (repeatable)");
    report->add_option("--families", rp.families, "Extra language family TSV");
    report->add_option("--out", rp.out, "Markdown path (default: stdout)");
    on(report, [&] {
        ReportInputs in;
        std::optional<std::vector<TranslationRecord>> records;
        std::set<std::string> corpus_ids;
        if (!rp.corpus.empty()) {
            records = load_corpus(rp.corpus);
            for (const auto& r : *records) corpus_ids.insert(r.id);
        }
        std::optional<std::vector<DetectionResult>> dets;
        std::optional<std::vector<JudgeVerdict>> vers;
        if (!rp.detections.empty()) dets = load_detections(rp.detections);
        if (!rp.verdicts.empty()) vers = load_verdicts(rp.verdicts);
        auto det_id = [](const DetectionResult& d) { return d.record_id; };
        auto ver_id = [](const JudgeVerdict& v) { return v.record_id; };
        if (records) {
            if (dets) require_subset(*dets, det_id, corpus_ids, "detections", "the corpus");
            if (vers) require_subset(*vers, ver_id, corpus_ids, "verdicts", "the corpus");
        }
        if (dets && vers) {
            std::set<std::string> det_ids;
            for (const auto& d : *dets) det_ids.insert(d.record_id);
            require_subset(*vers, ver_id, det_ids, "verdicts", "the detections");
        }
        if (!rp.reports.empty()) {
            if (!records) throw UsageError("--reports needs --corpus");
            std::vector<metrics::MetricReport> reps;
            for (const auto& j : io::read_jsonl(rp.reports)) reps.push_back(metrics::report_from_json(j));
            require_subset(reps, [](const metrics::MetricReport& r) { return r.record_id; }, corpus_ids, "metric reports",
                           "the corpus");
            in.domain = metrics::aggregate(reps, metrics::record_key(*records, metrics::GroupBy::domain));
            if (!rp.sizes.empty()) {
                auto table = FamilyTable::builtin();
                if (!rp.families.empty()) table.load(rp.families);
                in.family = family_aggregates(reps, *records, table, parse_sizes(rp.sizes));
            }
        }
        if (dets && vers) in.agreement = agreement(*dets, *vers);
        if (dets) in.sweep = sweep_thresholds(*dets);
        if (!rp.gold.empty()) {
            const auto gold = load_gold_flags(rp.gold);
            if (records) {
                std::vector<std::pair<std::string, bool>> g(gold.begin(), gold.end());
                require_subset(g, [](const auto& p) { return p.first; }, corpus_ids, "gold labels", "the corpus");
            }
            if (dets) in.confusion.emplace_back("heuristic", confusion(restrict_to(detection_flags(*dets), gold, "detections"), gold));
            if (vers) in.confusion.emplace_back("judge", confusion(restrict_to(verdict_flags(*vers), gold, "verdicts"), gold));
        }
        write_text(rp.out, render_report(in), out);
        return 0;
    });

    // -------------------------------------------------------------- annotate
    auto* annotate = app.add_subcommand("annotate", "Human annotation workflow")->require_subcommand(1);
    struct {
        std::string sample, store, detections, verdicts, tokens, host = "127.0.0.1", ui, out;
        int port = 8080;
        uint64_t seed = 0;
    } an;
    auto* an_create = annotate->add_subcommand("create", "Create blinded tasks from a sample");
    an_create->add_option("--sample", an.sample, "Sample JSONL from the sample command")->required();
    an_create->add_option("--store", an.store, "Event log")->required();
    an_create->add_option("--detections", an.detections, "Detection artifact (kept for export only)");
    an_create->add_option("--verdicts", an.verdicts, "Verdict artifact (kept for export only)");
    an_create->add_option("--seed", an.seed, "Task order seed");
    on(an_create, [&] {
        AnnotationSample s;
        io::for_each_jsonl(io::read_file(an.sample), an.sample, [&](size_t line, const nlohmann::json& j) {
            const auto where = an.sample + ":" + std::to_string(line);
            auto rec = record_from_json(j, where);
            validate_record(rec, LanguageRegistry::builtin(), where);
            auto st = parse_stratum(j.value("stratum", std::string()));
            if (!st) throw UsageError(where + ": field 'stratum': expected agreement, disagreement or undetected");
            (*st == Stratum::agreement ? s.agreement : *st == Stratum::disagreement ? s.disagreement : s.undetected)
                .push_back(std::move(rec));
        });
        std::map<std::string, SystemFlags> sys;
        if (!an.detections.empty()) {
            for (const auto& d : load_detections(an.detections)) {
                sys[d.record_id].detector_flagged = d.flagged;
                sys[d.record_id].detector_categories = d.flagged ? d.detected_categories : CategorySet{};
            }
        }
        if (!an.verdicts.empty()) {
            for (const auto& v : load_verdicts(an.verdicts)) {
                if (v.excluded) continue;
                sys[v.record_id].judge_flagged = v.bias_detected;
                sys[v.record_id].judge_categories = v.detected_biases;
            }
        }
        AnnotationStore store(std::filesystem::path(an.store), StoreOptions{});
        const auto ids = store.create_tasks(s, an.seed, sys);
        out << ids.size() << " tasks created in " << an.store << "\n";
        return 0;
    });

    auto* an_serve = annotate->add_subcommand("serve", "Serve the annotation API");
    an_serve->add_option("--store", an.store, "Event log")->required();
    an_serve->add_option("--tokens", an.tokens, "TOML with [annotators] and [adjudicators] id = \"token\"")->required();
    an_serve->add_option("--port", an.port, "Port (0 picks a free one)")->check(CLI::Range(0, 65535));
    an_serve->add_option("--host", an.host, "Bind address");
    an_serve->add_option("--ui", an.ui, "Directory of static UI files served at /");
    on(an_serve, [&] {
        auto tokens = TokenTable::from_toml(config::load_toml(an.tokens));
        StoreOptions o;
        o.adjudicators = tokens.adjudicators();
        AnnotationStore store(std::filesystem::path(an.store), o);
        std::optional<std::filesystem::path> ui;
        if (!an.ui.empty()) ui = an.ui;
        AnnotationServer server(store, std::move(tokens), ui);
        const int port = server.bind(an.host, an.port);
        const auto p = store.progress();
        out << "serving " << p.total << " tasks on http://" << an.host << ":" << port << "\n" << std::flush;
        server.listen();
        return 0;
    });

    auto* an_export = annotate->add_subcommand("export", "Write gold labels once every task is resolved");
    an_export->add_option("--store", an.store, "Event log")->required();
    an_export->add_option("--out", an.out, "Gold JSONL")->required();
    on(an_export, [&] {
        if (!std::filesystem::exists(an.store)) throw UsageError("no event log at " + an.store);
        AnnotationStore store(std::filesystem::path(an.store), StoreOptions{});
        const auto g = store.export_gold();
        write_gold(g, an.out, header_for(an_export));
        size_t biased = 0;
        for (const auto& [id, b] : g.flags) biased += b;
        out << g.rows.size() << " gold labels, " << biased << " biased\n";
        return 0;
    });

    auto* an_progress = annotate->add_subcommand("progress", "Task counts per status");
    an_progress->add_option("--store", an.store, "Event log")->required();
    on(an_progress, [&] {
        if (!std::filesystem::exists(an.store)) throw UsageError("no event log at " + an.store);
        AnnotationStore store(std::filesystem::path(an.store), StoreOptions{});
        const auto p = store.progress();
        out << "total " << p.total << ", gold " << p.gold << "\n";
        for (const auto& [s, n] : p.by_status) out << "  " << to_string(s) << "\t" << n << "\n";
        return 0;
    });

    // -------------------------------------------------------------- dispatch
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n";
        const CLI::App* target = &app;
        for (auto* s = &app; s;) {
            auto subs = s->get_subcommands();
            if (subs.empty()) break;
            target = s = subs.front();
        }
        err << target->help();
        return 1;
    }
    if (!action) return 1;
    try {
        return action();
    } catch (const ProviderError& e) {
        err << "provider error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace tangles::cli
