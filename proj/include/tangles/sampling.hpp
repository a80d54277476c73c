#pragma once

// Stratified sampling of records for human annotation. Pools come from the
// (heuristic flag, judge flag) combination of each record:
//   agreement     heuristic flagged, judge flagged
//   disagreement  heuristic flagged, judge not flagged
//   undetected    neither flagged
//   heuristic-negative/judge-positive records are never sampled.
// Each stratum is drawn without replacement with tangles::Rng (partial
// Fisher-Yates), one generator seeded once and consumed in the order
// agreement, disagreement, undetected.

#include <map>
#include <string>
#include <vector>

#include "tangles/corpus.hpp"
#include "tangles/detect.hpp"
#include "tangles/judge.hpp"
#include "tangles/random.hpp"

namespace tangles {

class SamplingError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

enum class Stratum { agreement, disagreement, undetected };

inline std::string_view to_string(Stratum s) {
    switch (s) {
        case Stratum::agreement: return "agreement";
        case Stratum::disagreement: return "disagreement";
        case Stratum::undetected: return "undetected";
    }
    return "";
}

inline std::optional<Stratum> parse_stratum(std::string_view s) {
    for (auto x : {Stratum::agreement, Stratum::disagreement, Stratum::undetected}) {
        if (to_string(x) == s) return x;
    }
    return std::nullopt;
}

struct SamplingPlan {
    size_t n_agreement = 0;
    size_t n_disagreement = 0;
    size_t n_undetected = 0;
    uint64_t seed = 0;
};

/// Record ids per pool, in corpus order.
struct Pools {
    std::vector<std::string> agreement;
    std::vector<std::string> disagreement;
    std::vector<std::string> undetected;
    std::vector<std::string> judge_only;
    size_t excluded = 0;
};

/// Partitions records into pools. Records marked excluded, or whose verdict
/// is excluded, belong to no pool. A record the heuristic did not flag may
/// lack a verdict (it counts as judge-negative); a flagged one may not.
inline Pools build_pools(const std::vector<TranslationRecord>& records, const std::vector<DetectionResult>& detections,
                         const std::vector<JudgeVerdict>& verdicts) {
    std::map<std::string, const DetectionResult*> det;
    for (const auto& d : detections) det[d.record_id] = &d;
    std::map<std::string, const JudgeVerdict*> ver;
    for (const auto& v : verdicts) ver[v.record_id] = &v;

    Pools p;
    std::vector<std::string> no_detection, no_verdict;
    for (const auto& r : records) {
        if (r.excluded) {
            ++p.excluded;
            continue;
        }
        auto d = det.find(r.id);
        if (d == det.end()) {
            no_detection.push_back(r.id);
            continue;
        }
        auto v = ver.find(r.id);
        if (v != ver.end() && v->second->excluded) {
            ++p.excluded;
            continue;
        }
        const bool heuristic = d->second->flagged;
        if (heuristic && v == ver.end()) {
            no_verdict.push_back(r.id);
            continue;
        }
        const bool judge = v != ver.end() && v->second->bias_detected;
        if (heuristic && judge) {
            p.agreement.push_back(r.id);
        } else if (heuristic) {
            p.disagreement.push_back(r.id);
        } else if (judge) {
            p.judge_only.push_back(r.id);
        } else {
            p.undetected.push_back(r.id);
        }
    }
    auto join = [](const std::vector<std::string>& ids) {
        std::string s;
        for (size_t i = 0; i < ids.size() && i < 20; ++i) s += (i ? ", " : "") + ids[i];
        if (ids.size() > 20) s += ", ... (" + std::to_string(ids.size()) + " total)";
        return s;
    };
    if (!no_detection.empty()) throw SamplingError("no detection for records: " + join(no_detection));
    if (!no_verdict.empty()) throw SamplingError("no verdict for flagged records: " + join(no_verdict));
    return p;
}

struct SampledIds {
    std::vector<std::string> agreement;
    std::vector<std::string> disagreement;
    std::vector<std::string> undetected;

    const std::vector<std::string>& of(Stratum s) const {
        return s == Stratum::agreement ? agreement : s == Stratum::disagreement ? disagreement : undetected;
    }
};

/// Draws the plan from the pools; output ids are in selection order.
inline SampledIds sample_pools(const Pools& pools, const SamplingPlan& plan) {
    Rng rng(plan.seed);
    auto draw = [&](std::vector<std::string> pool, size_t k) {
        rng.partial_shuffle(pool, k);
        pool.resize(k);
        return pool;
    };
    const std::pair<size_t, size_t> sizes[] = {{pools.agreement.size(), plan.n_agreement},
                                               {pools.disagreement.size(), plan.n_disagreement},
                                               {pools.undetected.size(), plan.n_undetected}};
    for (size_t i = 0; i < 3; ++i) {
        if (sizes[i].second > sizes[i].first) {
            throw SamplingError(std::string(to_string(static_cast<Stratum>(i))) + " pool has " +
                                std::to_string(sizes[i].first) + " records, " + std::to_string(sizes[i].second) +
                                " requested");
        }
    }
    SampledIds out;
    out.agreement = draw(pools.agreement, plan.n_agreement);
    out.disagreement = draw(pools.disagreement, plan.n_disagreement);
    out.undetected = draw(pools.undetected, plan.n_undetected);
    return out;
}

struct AnnotationSample {
    std::vector<TranslationRecord> agreement;
    std::vector<TranslationRecord> disagreement;
    std::vector<TranslationRecord> undetected;
};

inline AnnotationSample sample_for_annotation(const std::vector<TranslationRecord>& records,
                                              const std::vector<DetectionResult>& detections,
                                              const std::vector<JudgeVerdict>& verdicts, const SamplingPlan& plan) {
    const auto ids = sample_pools(build_pools(records, detections, verdicts), plan);
    std::map<std::string, const TranslationRecord*> by_id;
    for (const auto& r : records) by_id[r.id] = &r;
    auto resolve = [&](const std::vector<std::string>& xs) {
        std::vector<TranslationRecord> out;
        out.reserve(xs.size());
        for (const auto& x : xs) out.push_back(*by_id.at(x));
        return out;
    };
    return {resolve(ids.agreement), resolve(ids.disagreement), resolve(ids.undetected)};
}

}  // namespace tangles
