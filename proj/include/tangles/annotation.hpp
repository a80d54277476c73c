#pragma once

// Human annotation workflow: blinded tasks, two independent primary labels
// per task, adjudication of conflicts and gold export. State lives in an
// append-only JSONL event log that is replayed on open.
//
// Status flow:
//   pending -> single_labeled -> double_labeled (labels equal: gold, unanimous)
//                                \-> conflicted -> adjudicated (gold)

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tangles/corpus.hpp"
#include "tangles/detect.hpp"
#include "tangles/hash.hpp"
#include "tangles/io.hpp"
#include "tangles/judge.hpp"
#include "tangles/random.hpp"
#include "tangles/sampling.hpp"

namespace tangles {

class AnnotationError : public std::runtime_error {
  public:
    enum class Kind { invalid, not_found, forbidden, conflict };
    AnnotationError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

  private:
    Kind kind_;
};

enum class TaskStatus { pending, single_labeled, double_labeled, conflicted, adjudicated };

inline std::string_view to_string(TaskStatus s) {
    switch (s) {
        case TaskStatus::pending: return "pending";
        case TaskStatus::single_labeled: return "single_labeled";
        case TaskStatus::double_labeled: return "double_labeled";
        case TaskStatus::conflicted: return "conflicted";
        case TaskStatus::adjudicated: return "adjudicated";
    }
    return "";
}

/// What an annotator or adjudicator decided about one task.
struct LabelDecision {
    bool biased = false;
    CategorySet categories;
    /// "Biased, category unclear": categories may be empty, a note is required.
    bool category_unclear = false;
    std::string note;

    /// Unanimity compares the presence bit and the exact category set.
    bool same_as(const LabelDecision& o) const { return biased == o.biased && categories == o.categories; }

    void validate() const {
        if (!biased && (!categories.empty() || category_unclear)) {
            throw AnnotationError(AnnotationError::Kind::invalid, "categories given for a label marked not biased");
        }
        if (biased && categories.empty()) {
            if (!category_unclear) {
                throw AnnotationError(AnnotationError::Kind::invalid,
                                      "biased label needs categories or category_unclear");
            }
            if (note.empty()) {
                throw AnnotationError(AnnotationError::Kind::invalid, "category_unclear requires a note");
            }
        }
    }
};

struct AnnotationLabel {
    std::string task_id;
    std::string annotator_id;
    LabelDecision decision;
    std::string timestamp;
};

enum class GoldProvenance { unanimous, adjudicated };

inline std::string_view to_string(GoldProvenance p) {
    return p == GoldProvenance::unanimous ? "unanimous" : "adjudicated";
}

struct GoldLabel {
    std::string task_id;
    bool biased = false;
    CategorySet categories;
    GoldProvenance provenance = GoldProvenance::unanimous;
    std::string adjudicator_id;
};

/// System outputs kept with a task for export only; never shown to humans.
struct SystemFlags {
    std::optional<bool> detector_flagged;
    CategorySet detector_categories;
    std::optional<bool> judge_flagged;
    CategorySet judge_categories;
};

struct AnnotationTask {
    std::string task_id;
    TranslationRecord record;
    Stratum stratum = Stratum::undetected;
    SystemFlags system;
    TaskStatus status = TaskStatus::pending;
    std::vector<AnnotationLabel> labels;
    std::optional<AnnotationLabel> adjudication;

    std::optional<GoldLabel> gold() const {
        if (status == TaskStatus::double_labeled) {
            const auto& d = labels[0].decision;
            return GoldLabel{task_id, d.biased, d.categories, GoldProvenance::unanimous, ""};
        }
        if (status == TaskStatus::adjudicated) {
            const auto& d = adjudication->decision;
            return GoldLabel{task_id, d.biased, d.categories, GoldProvenance::adjudicated, adjudication->annotator_id};
        }
        return std::nullopt;
    }
};

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::ordered_json decision_json(const LabelDecision& d) {
    nlohmann::ordered_json j;
    j["biased"] = d.biased;
    j["categories"] = category_names(d.categories);
    if (d.category_unclear) j["category_unclear"] = true;
    if (!d.note.empty()) j["note"] = d.note;
    return j;
}

inline LabelDecision decision_from_json(const nlohmann::json& j) {
    try {
        LabelDecision d;
        d.biased = j.at("biased").get<bool>();
        if (j.contains("categories")) {
            for (const auto& c : j.at("categories")) {
                auto cat = parse_category(c.get<std::string>());
                if (!cat) {
                    throw AnnotationError(AnnotationError::Kind::invalid, "unknown category '" + c.get<std::string>() + "'");
                }
                d.categories.insert(*cat);
            }
        }
        d.category_unclear = j.value("category_unclear", false);
        d.note = j.value("note", std::string());
        return d;
    } catch (const nlohmann::json::exception& e) {
        throw AnnotationError(AnnotationError::Kind::invalid, std::string("malformed label: ") + e.what());
    }
}

/// The only task view an annotator ever receives.
inline nlohmann::ordered_json blinded_payload(const AnnotationTask& t) {
    nlohmann::ordered_json j;
    j["task_id"] = t.task_id;
    j["source_lang"] = t.record.source_lang;
    j["target_lang"] = t.record.target_lang;
    j["source_text"] = t.record.source_text;
    j["reference_text"] = t.record.reference_text;
    j["translation_text"] = t.record.translation_text;
    return j;
}

/// Adjudicator view: the blinded task plus both primary labels.
inline nlohmann::ordered_json adjudication_payload(const AnnotationTask& t) {
    auto j = blinded_payload(t);
    j["labels"] = nlohmann::ordered_json::array();
    for (const auto& l : t.labels) {
        auto lj = decision_json(l.decision);
        lj["annotator_id"] = l.annotator_id;
        j["labels"].push_back(lj);
    }
    return j;
}

inline nlohmann::ordered_json gold_json(const GoldLabel& g) {
    nlohmann::ordered_json j;
    j["task_id"] = g.task_id;
    j["biased"] = g.biased;
    j["categories"] = category_names(g.categories);
    j["provenance"] = to_string(g.provenance);
    if (g.provenance == GoldProvenance::adjudicated) j["adjudicator_id"] = g.adjudicator_id;
    return j;
}

/// Released-dataset row: the corpus record fields at top level (so the file
/// loads as a corpus), system flags, and the human decisions.
inline nlohmann::ordered_json export_row(const AnnotationTask& t) {
    auto j = to_json(t.record);
    j["task_id"] = t.task_id;
    j["stratum"] = to_string(t.stratum);
    auto flags = [](std::optional<bool> f, const CategorySet& c) {
        nlohmann::ordered_json x;
        x["flagged"] = f ? nlohmann::ordered_json(*f) : nlohmann::ordered_json();
        x["categories"] = category_names(c);
        return x;
    };
    j["detector_flags"] = flags(t.system.detector_flagged, t.system.detector_categories);
    j["judge_flags"] = flags(t.system.judge_flagged, t.system.judge_categories);
    j["annotations"] = nlohmann::ordered_json::array();
    for (const auto& l : t.labels) {
        auto lj = decision_json(l.decision);
        lj["annotator_id"] = l.annotator_id;
        lj["timestamp"] = l.timestamp;
        j["annotations"].push_back(lj);
    }
    j["gold"] = gold_json(*t.gold());
    return j;
}

// ---------------------------------------------------------------------------
// Store

struct Progress {
    size_t total = 0;
    std::map<TaskStatus, size_t> by_status;
    size_t gold = 0;
};

struct GoldExport {
    std::vector<GoldLabel> labels;
    std::vector<nlohmann::ordered_json> rows;
    /// record_id -> gold presence, the input of analysis::confusion.
    std::map<std::string, bool> flags;
};

using Clock = std::function<std::string()>;

inline std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct StoreOptions {
    /// Identities allowed to adjudicate; they may never give primary labels.
    std::set<std::string> adjudicators;
    Clock clock = utc_now;
};

class AnnotationStore {
  public:
    /// In-memory store; nothing is persisted.
    explicit AnnotationStore(StoreOptions opts = {}) : opts_(std::move(opts)) {}

    /// Opens (and replays) or creates the event log at `path`.
    AnnotationStore(const std::filesystem::path& path, StoreOptions opts) : opts_(std::move(opts)), path_(path) {
        if (std::filesystem::exists(path)) {
            replay(io::read_file(path), path.string());
        }
    }

    /// One task per record, ids assigned after a seeded shuffle so neither
    /// id nor order reveals the stratum. `system` supplies export-only flags.
    std::vector<std::string> create_tasks(const AnnotationSample& sample, uint64_t seed,
                                          const std::map<std::string, SystemFlags>& system = {}) {
        std::vector<std::pair<const TranslationRecord*, Stratum>> items;
        for (const auto& r : sample.agreement) items.emplace_back(&r, Stratum::agreement);
        for (const auto& r : sample.disagreement) items.emplace_back(&r, Stratum::disagreement);
        for (const auto& r : sample.undetected) items.emplace_back(&r, Stratum::undetected);

        std::lock_guard lock(m_);
        std::set<std::string> seen;
        for (const auto& [r, s] : items) {
            if (!seen.insert(r->id).second || record_index_.count(r->id)) {
                throw AnnotationError(AnnotationError::Kind::conflict, "duplicate record id '" + r->id + "'");
            }
        }
        Rng rng(seed);
        rng.shuffle(items);
        std::vector<std::string> ids;
        std::string lines;
        std::vector<AnnotationTask> fresh;
        for (const auto& [r, s] : items) {
            AnnotationTask t;
            char buf[32];
            std::snprintf(buf, sizeof buf, "task-%05zu", tasks_.size() + fresh.size() + 1);
            t.task_id = buf;
            t.record = *r;
            t.stratum = s;
            if (auto it = system.find(r->id); it != system.end()) t.system = it->second;
            lines += io::dump_line(task_event(t)) + "\n";
            ids.push_back(t.task_id);
            fresh.push_back(std::move(t));
        }
        append(lines);
        for (auto& t : fresh) add_task(std::move(t));
        return ids;
    }

    /// Next task for an annotator: not yet labeled by them and still open
    /// for a primary label, in the annotator's own pseudo-random order.
    std::optional<nlohmann::ordered_json> next_task(const std::string& annotator_id) {
        std::lock_guard lock(m_);
        check_primary_role(annotator_id);
        for (size_t idx : order_for(annotator_id)) {
            const auto& t = tasks_[idx];
            if (t.labels.size() >= 2) continue;
            if (std::any_of(t.labels.begin(), t.labels.end(), [&](const auto& l) { return l.annotator_id == annotator_id; })) {
                continue;
            }
            return blinded_payload(t);
        }
        return std::nullopt;
    }

    TaskStatus submit_label(const std::string& task_id, const std::string& annotator_id, const LabelDecision& d) {
        std::lock_guard lock(m_);
        auto& t = find(task_id);
        check_primary_role(annotator_id);
        d.validate();
        if (std::any_of(t.labels.begin(), t.labels.end(), [&](const auto& l) { return l.annotator_id == annotator_id; })) {
            throw AnnotationError(AnnotationError::Kind::conflict,
                                  "annotator '" + annotator_id + "' already labeled " + task_id);
        }
        if (t.labels.size() >= 2) {
            throw AnnotationError(AnnotationError::Kind::conflict, task_id + " already has two labels");
        }
        AnnotationLabel l{task_id, annotator_id, d, opts_.clock()};
        append(io::dump_line(label_event("label_submitted", l)) + "\n");
        apply_label(t, std::move(l));
        return t.status;
    }

    /// Conflicted tasks an adjudicator may resolve (not ones they labeled).
    std::vector<nlohmann::ordered_json> conflicted(const std::string& adjudicator_id) {
        std::lock_guard lock(m_);
        check_adjudicator_role(adjudicator_id);
        std::vector<nlohmann::ordered_json> out;
        for (const auto& t : tasks_) {
            if (t.status != TaskStatus::conflicted) continue;
            if (labeled_by(t, adjudicator_id)) continue;
            out.push_back(adjudication_payload(t));
        }
        return out;
    }

    GoldLabel adjudicate(const std::string& task_id, const std::string& adjudicator_id, const LabelDecision& d) {
        std::lock_guard lock(m_);
        auto& t = find(task_id);
        check_adjudicator_role(adjudicator_id);
        d.validate();
        if (t.status != TaskStatus::conflicted) {
            throw AnnotationError(AnnotationError::Kind::conflict,
                                  task_id + " is " + std::string(to_string(t.status)) + ", not conflicted");
        }
        if (labeled_by(t, adjudicator_id)) {
            throw AnnotationError(AnnotationError::Kind::forbidden,
                                  "adjudicator '" + adjudicator_id + "' labeled " + task_id + " as an annotator");
        }
        AnnotationLabel l{task_id, adjudicator_id, d, opts_.clock()};
        append(io::dump_line(label_event("adjudicated", l)) + "\n");
        t.adjudication = std::move(l);
        t.status = TaskStatus::adjudicated;
        return *t.gold();
    }

    Progress progress() const {
        std::lock_guard lock(m_);
        Progress p;
        p.total = tasks_.size();
        for (auto s : {TaskStatus::pending, TaskStatus::single_labeled, TaskStatus::double_labeled,
                       TaskStatus::conflicted, TaskStatus::adjudicated}) {
            p.by_status[s] = 0;
        }
        for (const auto& t : tasks_) {
            ++p.by_status[t.status];
            p.gold += t.gold().has_value();
        }
        return p;
    }

    /// Gold for every task; fails listing unresolved tasks.
    GoldExport export_gold() const {
        std::lock_guard lock(m_);
        std::vector<std::string> open;
        for (const auto& t : tasks_) {
            if (!t.gold()) open.push_back(t.task_id + " (" + std::string(to_string(t.status)) + ")");
        }
        if (!open.empty()) {
            std::string s;
            for (size_t i = 0; i < open.size() && i < 50; ++i) s += (i ? ", " : "") + open[i];
            if (open.size() > 50) s += ", ... (" + std::to_string(open.size()) + " total)";
            throw AnnotationError(AnnotationError::Kind::conflict, "unresolved tasks: " + s);
        }
        GoldExport g;
        for (const auto& t : tasks_) {
            auto gold = *t.gold();
            g.flags[t.record.id] = gold.biased;
            g.rows.push_back(export_row(t));
            g.labels.push_back(std::move(gold));
        }
        return g;
    }

    std::vector<AnnotationTask> tasks() const {
        std::lock_guard lock(m_);
        return tasks_;
    }

    AnnotationTask task(const std::string& id) const {
        std::lock_guard lock(m_);
        auto it = index_.find(id);
        if (it == index_.end()) throw AnnotationError(AnnotationError::Kind::not_found, "unknown task '" + id + "'");
        return tasks_[it->second];
    }

    bool is_adjudicator(const std::string& id) const { return opts_.adjudicators.count(id) > 0; }

  private:
    static nlohmann::ordered_json task_event(const AnnotationTask& t) {
        nlohmann::ordered_json j;
        j["event"] = "task_created";
        j["task_id"] = t.task_id;
        j["stratum"] = to_string(t.stratum);
        j["record"] = to_json(t.record);
        nlohmann::ordered_json sys;
        if (t.system.detector_flagged) {
            sys["detector_flagged"] = *t.system.detector_flagged;
            sys["detector_categories"] = category_names(t.system.detector_categories);
        }
        if (t.system.judge_flagged) {
            sys["judge_flagged"] = *t.system.judge_flagged;
            sys["judge_categories"] = category_names(t.system.judge_categories);
        }
        j["system"] = sys.is_null() ? nlohmann::ordered_json::object() : sys;
        return j;
    }

    static nlohmann::ordered_json label_event(const char* kind, const AnnotationLabel& l) {
        nlohmann::ordered_json j;
        j["event"] = kind;
        j["task_id"] = l.task_id;
        j[std::string(kind) == "adjudicated" ? "adjudicator_id" : "annotator_id"] = l.annotator_id;
        j["timestamp"] = l.timestamp;
        const auto d = decision_json(l.decision);
        for (const auto& [k, v] : d.items()) j[k] = v;
        return j;
    }

    static CategorySet categories_of(const nlohmann::json& arr) {
        CategorySet out;
        for (const auto& c : arr) {
            auto cat = parse_category(c.get<std::string>());
            if (!cat) throw AnnotationError(AnnotationError::Kind::invalid, "unknown category");
            out.insert(*cat);
        }
        return out;
    }

    /// Rebuilds state through the same checks live calls use, so a log
    /// edited by hand cannot smuggle in an impossible state.
    void replay(const std::string& content, const std::string& source) {
        io::for_each_jsonl(content, source, [&](size_t line, const nlohmann::json& e) {
            const std::string where = source + ":" + std::to_string(line) + ": ";
            try {
                const auto kind = e.at("event").get<std::string>();
                if (kind == "task_created") {
                    AnnotationTask t;
                    t.task_id = e.at("task_id").get<std::string>();
                    t.record = record_from_json(e.at("record"), where + "record");
                    auto st = parse_stratum(e.at("stratum").get<std::string>());
                    if (!st) throw AnnotationError(AnnotationError::Kind::invalid, "unknown stratum");
                    t.stratum = *st;
                    const auto& sys = e.value("system", nlohmann::json::object());
                    if (sys.contains("detector_flagged")) {
                        t.system.detector_flagged = sys["detector_flagged"].get<bool>();
                        t.system.detector_categories = categories_of(sys.value("detector_categories", nlohmann::json::array()));
                    }
                    if (sys.contains("judge_flagged")) {
                        t.system.judge_flagged = sys["judge_flagged"].get<bool>();
                        t.system.judge_categories = categories_of(sys.value("judge_categories", nlohmann::json::array()));
                    }
                    if (index_.count(t.task_id) || record_index_.count(t.record.id)) {
                        throw AnnotationError(AnnotationError::Kind::conflict, "duplicate task or record");
                    }
                    add_task(std::move(t));
                } else if (kind == "label_submitted" || kind == "adjudicated") {
                    const bool adj = kind == "adjudicated";
                    AnnotationLabel l;
                    l.task_id = e.at("task_id").get<std::string>();
                    l.annotator_id = e.at(adj ? "adjudicator_id" : "annotator_id").get<std::string>();
                    l.timestamp = e.value("timestamp", std::string());
                    l.decision = decision_from_json(e);
                    l.decision.validate();
                    auto& t = find(l.task_id);
                    if (adj) {
                        if (t.status != TaskStatus::conflicted || labeled_by(t, l.annotator_id)) {
                            throw AnnotationError(AnnotationError::Kind::conflict, "invalid adjudication");
                        }
                        t.adjudication = std::move(l);
                        t.status = TaskStatus::adjudicated;
                    } else {
                        if (t.labels.size() >= 2 || labeled_by(t, l.annotator_id)) {
                            throw AnnotationError(AnnotationError::Kind::conflict, "invalid label");
                        }
                        apply_label(t, std::move(l));
                    }
                } else {
                    throw AnnotationError(AnnotationError::Kind::invalid, "unknown event '" + kind + "'");
                }
            } catch (const AnnotationError& ex) {
                throw AnnotationError(ex.kind(), where + ex.what());
            } catch (const std::exception& ex) {
                throw AnnotationError(AnnotationError::Kind::invalid, where + ex.what());
            }
        });
    }

    void add_task(AnnotationTask t) {
        index_[t.task_id] = tasks_.size();
        record_index_[t.record.id] = tasks_.size();
        tasks_.push_back(std::move(t));
        orders_.clear();
    }

    static void apply_label(AnnotationTask& t, AnnotationLabel l) {
        t.labels.push_back(std::move(l));
        if (t.labels.size() == 1) {
            t.status = TaskStatus::single_labeled;
        } else {
            t.status = t.labels[0].decision.same_as(t.labels[1].decision) ? TaskStatus::double_labeled
                                                                           : TaskStatus::conflicted;
        }
    }

    static bool labeled_by(const AnnotationTask& t, const std::string& who) {
        return std::any_of(t.labels.begin(), t.labels.end(), [&](const auto& l) { return l.annotator_id == who; });
    }

    AnnotationTask& find(const std::string& id) {
        auto it = index_.find(id);
        if (it == index_.end()) throw AnnotationError(AnnotationError::Kind::not_found, "unknown task '" + id + "'");
        return tasks_[it->second];
    }

    void check_primary_role(const std::string& id) const {
        if (id.empty()) throw AnnotationError(AnnotationError::Kind::invalid, "annotator id is empty");
        if (opts_.adjudicators.count(id)) {
            throw AnnotationError(AnnotationError::Kind::forbidden, "'" + id + "' is an adjudicator");
        }
    }

    void check_adjudicator_role(const std::string& id) const {
        if (!opts_.adjudicators.count(id)) {
            throw AnnotationError(AnnotationError::Kind::forbidden, "'" + id + "' is not an adjudicator");
        }
    }

    /// Per-annotator order: tasks sorted by a keyed hash of (annotator, task).
    const std::vector<size_t>& order_for(const std::string& annotator_id) {
        auto it = orders_.find(annotator_id);
        if (it != orders_.end()) return it->second;
        std::vector<std::pair<uint64_t, size_t>> keyed;
        const uint64_t basis = fnv1a64(annotator_id);
        for (size_t i = 0; i < tasks_.size(); ++i) keyed.emplace_back(fnv1a64(tasks_[i].task_id, basis), i);
        std::sort(keyed.begin(), keyed.end());
        std::vector<size_t> order;
        for (const auto& [h, i] : keyed) order.push_back(i);
        return orders_[annotator_id] = std::move(order);
    }

    void append(const std::string& lines) {
        if (!path_ || lines.empty()) return;
        const bool fresh = !std::filesystem::exists(*path_);
        std::ofstream out(*path_, std::ios::binary | std::ios::app);
        if (fresh) out << io::dump_line(io::make_header("annotate", {}, 0)) << "\n";
        out << lines;
        out.flush();
        if (!out) {
            throw AnnotationError(AnnotationError::Kind::invalid, "cannot append to " + path_->string());
        }
    }

    StoreOptions opts_;
    std::optional<std::filesystem::path> path_;
    mutable std::mutex m_;
    std::vector<AnnotationTask> tasks_;
    std::map<std::string, size_t> index_;
    std::map<std::string, size_t> record_index_;
    std::map<std::string, std::vector<size_t>> orders_;
};

inline void write_gold(const GoldExport& g, const std::filesystem::path& path, const nlohmann::ordered_json& header) {
    std::string out = io::dump_line(header) + "\n";
    for (const auto& row : g.rows) out += io::dump_line(row) + "\n";
    io::write_file(path, out);
}

/// record_id -> gold presence from an exported gold file.
inline std::map<std::string, bool> load_gold_flags(const std::filesystem::path& path) {
    std::map<std::string, bool> out;
    io::for_each_jsonl(io::read_file(path), path.string(), [&](size_t line, const nlohmann::json& j) {
        try {
            const auto id = j.at("id").get<std::string>();
            if (!out.emplace(id, j.at("gold").at("biased").get<bool>()).second) {
                throw std::runtime_error("duplicate record '" + id + "'");
            }
        } catch (const std::exception& e) {
            throw AnnotationError(AnnotationError::Kind::invalid,
                                  path.string() + ":" + std::to_string(line) + ": " + e.what());
        }
    });
    return out;
}

}  // namespace tangles
