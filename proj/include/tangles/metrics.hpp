#pragma once

// Sentence- and corpus-level translation metrics.
//
// Conventions (all configurable through the option structs):
//   * tokens: NFC + Unicode whitespace split; every CJK code point is its own
//     token when the target language is Chinese;
//   * BLEU: floor smoothing (a zero-match order gets precision eps/total,
//     eps = 0.1), effective order, closest-reference brevity penalty;
//   * chrF: character n-grams over the text with whitespace removed,
//     precision and recall averaged over the effective orders, then F_beta;
//   * TER: tercom-style greedy block shifts over an exact word-level edit
//     distance; at most 10 shifts, block length <= 10, shift distance <= 50;
//   * CER: code points of the whitespace-collapsed text (single spaces kept).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "tangles/corpus.hpp"
#include "tangles/io.hpp"
#include "tangles/text.hpp"

namespace tangles::metrics {

class MetricError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

using text::TokenizeOptions;

/// International tokenization is switched on for Chinese targets.
inline TokenizeOptions tokenize_options_for(std::string_view target_lang) {
    return TokenizeOptions{.cjk_split = target_lang == "zh"};
}

// ---------------------------------------------------------------------------
// Edit distance

/// Levenshtein distance with unit costs; two-row DP.
template <typename T>
size_t levenshtein(std::span<const T> a, std::span<const T> b) {
    std::vector<size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (size_t j = 1; j <= b.size(); ++j) {
            const size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

template <typename T>
size_t levenshtein(const std::vector<T>& a, const std::vector<T>& b) {
    return levenshtein(std::span<const T>(a), std::span<const T>(b));
}

inline double wer(std::string_view hypothesis, std::string_view reference, TokenizeOptions opts = {}) {
    const auto ref = text::tokenize(reference, opts);
    if (ref.empty()) throw MetricError("wer: reference is empty");
    const auto hyp = text::tokenize(hypothesis, opts);
    return static_cast<double>(levenshtein(hyp, ref)) / static_cast<double>(ref.size());
}

inline double cer(std::string_view hypothesis, std::string_view reference) {
    const auto ref = text::to_codepoints(text::normalize_spaces(reference));
    if (ref.empty()) throw MetricError("cer: reference is empty");
    const auto hyp = text::to_codepoints(text::normalize_spaces(hypothesis));
    return static_cast<double>(levenshtein(std::span<const char32_t>(hyp), std::span<const char32_t>(ref))) /
           static_cast<double>(ref.size());
}

// ---------------------------------------------------------------------------
// BLEU

struct BleuOptions {
    int max_n = 4;
    double epsilon = 0.1;
    bool effective_order = true;
};

/// Sufficient statistics; summing them over sentences gives corpus BLEU.
struct BleuStats {
    std::vector<double> correct;
    std::vector<double> total;
    size_t hyp_len = 0;
    size_t ref_len = 0;

    BleuStats& operator+=(const BleuStats& o) {
        if (correct.size() < o.correct.size()) {
            correct.resize(o.correct.size());
            total.resize(o.total.size());
        }
        for (size_t i = 0; i < o.correct.size(); ++i) {
            correct[i] += o.correct[i];
            total[i] += o.total[i];
        }
        hyp_len += o.hyp_len;
        ref_len += o.ref_len;
        return *this;
    }
};

namespace detail {

inline std::unordered_map<std::string, size_t> ngram_counts(const std::vector<std::string>& toks, size_t n) {
    std::unordered_map<std::string, size_t> out;
    if (toks.size() < n) return out;
    for (size_t i = 0; i + n <= toks.size(); ++i) {
        std::string key = toks[i];
        for (size_t k = 1; k < n; ++k) {
            key.push_back('\x1f');
            key += toks[i + k];
        }
        ++out[key];
    }
    return out;
}

}  // namespace detail

inline BleuStats bleu_stats(const std::vector<std::string>& hyp, const std::vector<std::vector<std::string>>& refs,
                            int max_n = 4) {
    if (max_n < 1) throw MetricError("bleu: max_n must be >= 1");
    BleuStats s;
    s.correct.assign(static_cast<size_t>(max_n), 0.0);
    s.total.assign(static_cast<size_t>(max_n), 0.0);
    s.hyp_len = hyp.size();

    // Closest reference length; ties go to the shorter reference.
    size_t closest_diff = SIZE_MAX;
    for (const auto& r : refs) {
        const size_t diff = r.size() > hyp.size() ? r.size() - hyp.size() : hyp.size() - r.size();
        if (diff < closest_diff || (diff == closest_diff && r.size() < s.ref_len)) {
            closest_diff = diff;
            s.ref_len = r.size();
        }
    }

    for (size_t n = 1; n <= static_cast<size_t>(max_n); ++n) {
        std::unordered_map<std::string, size_t> max_ref;
        for (const auto& r : refs) {
            for (const auto& [g, c] : detail::ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], c);
        }
        size_t matched = 0;
        for (const auto& [g, c] : detail::ngram_counts(hyp, n)) {
            auto it = max_ref.find(g);
            if (it != max_ref.end()) matched += std::min(c, it->second);
        }
        s.correct[n - 1] = static_cast<double>(matched);
        s.total[n - 1] = hyp.size() >= n ? static_cast<double>(hyp.size() - n + 1) : 0.0;
    }
    return s;
}

inline double bleu_from_stats(const BleuStats& s, const BleuOptions& opts = {}) {
    if (std::all_of(s.correct.begin(), s.correct.end(), [](double c) { return c == 0.0; })) return 0.0;
    double bp = 1.0;
    if (s.hyp_len < s.ref_len) {
        bp = s.hyp_len > 0 ? std::exp(1.0 - static_cast<double>(s.ref_len) / static_cast<double>(s.hyp_len)) : 0.0;
    }
    const size_t max_n = s.correct.size();
    std::vector<double> precisions(max_n, 0.0);
    size_t eff_order = max_n;
    for (size_t n = 1; n <= max_n; ++n) {
        if (s.total[n - 1] == 0.0) break;
        if (opts.effective_order) eff_order = n;
        precisions[n - 1] = s.correct[n - 1] == 0.0 ? 100.0 * opts.epsilon / s.total[n - 1]
                                                    : 100.0 * s.correct[n - 1] / s.total[n - 1];
    }
    double log_sum = 0.0;
    for (size_t n = 0; n < eff_order; ++n) {
        log_sum += precisions[n] == 0.0 ? -9999999999.0 : std::log(precisions[n]);
    }
    return bp * std::exp(log_sum / static_cast<double>(eff_order));
}

/// Sentence BLEU in [0, 100] against one or more references.
inline double bleu(std::string_view hypothesis, std::span<const std::string> references, int max_n = 4,
                   TokenizeOptions tok = {}, BleuOptions opts = {}) {
    if (max_n < 1) throw MetricError("bleu: max_n must be >= 1");
    std::vector<std::vector<std::string>> refs;
    for (const auto& r : references) {
        auto t = text::tokenize(r, tok);
        if (!t.empty()) refs.push_back(std::move(t));
    }
    if (refs.empty()) throw MetricError("bleu: at least one non-empty reference is required");
    const auto hyp = text::tokenize(hypothesis, tok);
    if (hyp.empty()) return 0.0;
    opts.max_n = max_n;
    return bleu_from_stats(bleu_stats(hyp, refs, max_n), opts);
}

inline double bleu(std::string_view hypothesis, std::string_view reference, int max_n = 4, TokenizeOptions tok = {}) {
    const std::string ref(reference);
    return bleu(hypothesis, std::span<const std::string>(&ref, 1), max_n, tok);
}

// ---------------------------------------------------------------------------
// chrF

inline double chrf(std::string_view hypothesis, std::string_view reference, int char_n = 6, double beta = 2.0) {
    if (char_n < 1) throw MetricError("chrf: char_n must be >= 1");
    auto strip = [](std::string_view s) {
        std::u32string out;
        for (char32_t c : text::to_codepoints(text::nfc(s))) {
            if (!text::is_space(c)) out.push_back(c);
        }
        return out;
    };
    const auto ref = strip(reference);
    if (ref.empty()) throw MetricError("chrf: reference is empty");
    const auto hyp = strip(hypothesis);

    auto grams = [](const std::u32string& s, size_t n) {
        std::map<std::u32string, size_t> out;
        for (size_t i = 0; i + n <= s.size(); ++i) ++out[s.substr(i, n)];
        return out;
    };

    const double factor = beta * beta;
    double avg_prec = 0.0, avg_rec = 0.0;
    int effective = 0;
    for (size_t n = 1; n <= static_cast<size_t>(char_n); ++n) {
        const double n_hyp = hyp.size() >= n ? static_cast<double>(hyp.size() - n + 1) : 0.0;
        const double n_ref = ref.size() >= n ? static_cast<double>(ref.size() - n + 1) : 0.0;
        if (n_hyp == 0.0 || n_ref == 0.0) continue;
        const auto hg = grams(hyp, n);
        const auto rg = grams(ref, n);
        double match = 0.0;
        for (const auto& [g, c] : hg) {
            auto it = rg.find(g);
            if (it != rg.end()) match += static_cast<double>(std::min(c, it->second));
        }
        avg_prec += match / n_hyp;
        avg_rec += match / n_ref;
        ++effective;
    }
    if (effective == 0) return 0.0;
    avg_prec /= effective;
    avg_rec /= effective;
    if (avg_prec + avg_rec == 0.0) return 0.0;
    return 100.0 * (1.0 + factor) * avg_prec * avg_rec / (factor * avg_prec + avg_rec);
}

// ---------------------------------------------------------------------------
// TER

struct TerOptions {
    size_t max_shifts = 10;
    size_t max_shift_size = 10;
    size_t max_shift_distance = 50;
    size_t max_shift_candidates = 1000;
};

struct TerResult {
    size_t edits = 0;  // shifts + edit operations
    size_t shifts = 0;
    size_t ref_len = 0;
    double score() const { return static_cast<double>(edits) / static_cast<double>(ref_len); }
};

namespace detail {

enum class EditOp : char { nop = ' ', sub = 's', ins = 'i', del = 'd' };

/// Exact edit distance with tercom's tie preferences (match/sub, then
/// deletion of a hypothesis word, then insertion of a reference word).
/// Returns the distance and the operation trace (hypothesis -> reference).
inline std::pair<size_t, std::vector<EditOp>> traced_edit_distance(const std::vector<int>& hyp,
                                                                   const std::vector<int>& ref) {
    const size_t n = hyp.size(), m = ref.size();
    std::vector<std::vector<size_t>> cost(n + 1, std::vector<size_t>(m + 1));
    std::vector<std::vector<EditOp>> op(n + 1, std::vector<EditOp>(m + 1, EditOp::ins));
    for (size_t j = 0; j <= m; ++j) cost[0][j] = j;
    for (size_t i = 1; i <= n; ++i) {
        cost[i][0] = i;
        op[i][0] = EditOp::del;
        for (size_t j = 1; j <= m; ++j) {
            const bool same = hyp[i - 1] == ref[j - 1];
            size_t best = cost[i - 1][j - 1] + (same ? 0 : 1);
            EditOp best_op = same ? EditOp::nop : EditOp::sub;
            if (cost[i - 1][j] + 1 < best) {
                best = cost[i - 1][j] + 1;
                best_op = EditOp::del;
            }
            if (cost[i][j - 1] + 1 < best) {
                best = cost[i][j - 1] + 1;
                best_op = EditOp::ins;
            }
            cost[i][j] = best;
            op[i][j] = best_op;
        }
    }
    std::vector<EditOp> trace;
    size_t i = n, j = m;
    while (i > 0 || j > 0) {
        const EditOp o = op[i][j];
        trace.push_back(o);
        if (o == EditOp::nop || o == EditOp::sub) {
            --i;
            --j;
        } else if (o == EditOp::ins) {
            --j;
        } else {
            --i;
        }
    }
    std::reverse(trace.begin(), trace.end());
    return {cost[n][m], std::move(trace)};
}

inline std::vector<int> slice(const std::vector<int>& v, long a, long b) {
    const long n = static_cast<long>(v.size());
    a = std::clamp(a, 0L, n);
    b = std::clamp(b, 0L, n);
    if (b <= a) return {};
    return std::vector<int>(v.begin() + a, v.begin() + b);
}

inline std::vector<int> perform_shift(const std::vector<int>& w, long start, long length, long target) {
    auto cat = [](std::initializer_list<std::vector<int>> parts) {
        std::vector<int> out;
        for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
        return out;
    };
    const long end = static_cast<long>(w.size());
    if (target < start) {
        return cat({slice(w, 0, target), slice(w, start, start + length), slice(w, target, start),
                    slice(w, start + length, end)});
    }
    if (target > start + length) {
        return cat({slice(w, 0, start), slice(w, start + length, target), slice(w, start, start + length),
                    slice(w, target, end)});
    }
    return cat({slice(w, 0, start), slice(w, start + length, length + target), slice(w, start, start + length),
                slice(w, length + target, end)});
}

struct ShiftOutcome {
    long delta = 0;
    std::vector<int> words;
    size_t checked = 0;
};

inline ShiftOutcome best_shift(const std::vector<int>& hyp, const std::vector<int>& ref, size_t checked,
                               const TerOptions& opts) {
    auto [pre_score, inv_trace] = traced_edit_distance(hyp, ref);

    // Alignment from the reference's point of view: flip insertions and
    // deletions, then walk the trace.
    std::map<long, long> align;
    std::vector<int> ref_err, hyp_err;
    long pos_hyp = -1, pos_ref = -1;
    for (EditOp o : inv_trace) {
        if (o == EditOp::nop || o == EditOp::sub) {
            ++pos_hyp;
            ++pos_ref;
            align[pos_ref] = pos_hyp;
            const int err = o == EditOp::sub ? 1 : 0;
            hyp_err.push_back(err);
            ref_err.push_back(err);
        } else if (o == EditOp::del) {  // extra hypothesis word
            ++pos_hyp;
            hyp_err.push_back(1);
        } else {  // reference word missing from the hypothesis
            ++pos_ref;
            align[pos_ref] = pos_hyp;
            ref_err.push_back(1);
        }
    }

    struct Candidate {
        long delta, length, neg_start, neg_idx;
        std::vector<int> words;
    };
    std::optional<Candidate> best;
    auto better = [](const Candidate& a, const Candidate& b) {
        if (a.delta != b.delta) return a.delta > b.delta;
        if (a.length != b.length) return a.length > b.length;
        if (a.neg_start != b.neg_start) return a.neg_start > b.neg_start;
        if (a.neg_idx != b.neg_idx) return a.neg_idx > b.neg_idx;
        return a.words > b.words;
    };
    auto sum = [](const std::vector<int>& v, long a, long b) {
        long s = 0;
        for (long k = a; k < b && k < static_cast<long>(v.size()); ++k) s += v[static_cast<size_t>(k)];
        return s;
    };

    const long nh = static_cast<long>(hyp.size()), nr = static_cast<long>(ref.size());
    for (long sh = 0; sh < nh; ++sh) {
        bool stop = false;
        for (long sr = 0; sr < nr; ++sr) {
            if (std::labs(sr - sh) > static_cast<long>(opts.max_shift_distance)) continue;
            long length = 0;
            while (hyp[static_cast<size_t>(sh + length)] == ref[static_cast<size_t>(sr + length)] &&
                   length < static_cast<long>(opts.max_shift_size)) {
                ++length;
                // Candidate (sh, sr, length).
                const bool skip = sum(hyp_err, sh, sh + length) == 0 || sum(ref_err, sr, sr + length) == 0 ||
                                  (sh <= align[sr] && align[sr] < sh + length);
                if (!skip) {
                    long prev_idx = -1;
                    for (long offset = -1; offset < length; ++offset) {
                        long idx;
                        if (sr + offset == -1) {
                            idx = 0;
                        } else if (align.count(sr + offset)) {
                            idx = align[sr + offset] + 1;
                        } else {
                            break;
                        }
                        if (idx == prev_idx) continue;
                        prev_idx = idx;
                        auto shifted = perform_shift(hyp, sh, length, idx);
                        const long post = static_cast<long>(traced_edit_distance(shifted, ref).first);
                        Candidate c{static_cast<long>(pre_score) - post, length, -sh, -idx, std::move(shifted)};
                        ++checked;
                        if (!best || better(c, *best)) best = std::move(c);
                    }
                }
                if (nh == sh + length || nr == sr + length) break;
            }
            if (checked >= opts.max_shift_candidates) {
                stop = true;
                break;
            }
        }
        if (stop) break;
    }
    if (!best) return {0, hyp, checked};
    return {best->delta, std::move(best->words), checked};
}

}  // namespace detail

inline TerResult ter_detailed(std::string_view hypothesis, std::string_view reference, TokenizeOptions tok = {},
                              const TerOptions& opts = {}) {
    const auto ref_toks = text::tokenize(reference, tok);
    if (ref_toks.empty()) throw MetricError("ter: reference is empty");
    const auto hyp_toks = text::tokenize(hypothesis, tok);

    std::map<std::string, int> vocab;
    auto intern = [&](const std::vector<std::string>& toks) {
        std::vector<int> out;
        for (const auto& t : toks) out.push_back(vocab.emplace(t, static_cast<int>(vocab.size())).first->second);
        return out;
    };
    const auto ref = intern(ref_toks);
    auto hyp = intern(hyp_toks);

    TerResult r;
    r.ref_len = ref.size();
    size_t checked = 0;
    while (r.shifts < opts.max_shifts) {
        auto outcome = detail::best_shift(hyp, ref, checked, opts);
        checked = outcome.checked;
        if (checked >= opts.max_shift_candidates) break;
        if (outcome.delta <= 0) break;
        ++r.shifts;
        hyp = std::move(outcome.words);
    }
    r.edits = r.shifts + detail::traced_edit_distance(hyp, ref).first;
    return r;
}

/// TER as a fraction of reference words (0 = identical).
inline double ter(std::string_view hypothesis, std::string_view reference, TokenizeOptions tok = {}) {
    return ter_detailed(hypothesis, reference, tok).score();
}

// ---------------------------------------------------------------------------
// ROUGE

struct RougeScores {
    double rouge1 = 0.0;
    double rouge2 = 0.0;
    double rougeL = 0.0;
};

namespace detail {

inline double f1(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

inline double rouge_n(const std::vector<std::string>& hyp, const std::vector<std::string>& ref, size_t n) {
    const auto hg = ngram_counts(hyp, n);
    const auto rg = ngram_counts(ref, n);
    size_t hyp_total = 0, ref_total = 0, overlap = 0;
    for (const auto& [g, c] : hg) hyp_total += c;
    for (const auto& [g, c] : rg) ref_total += c;
    // Both texts too short for this order: exact equality decides.
    if (hyp_total == 0 && ref_total == 0) return hyp == ref && !ref.empty() ? 1.0 : 0.0;
    for (const auto& [g, c] : hg) {
        auto it = rg.find(g);
        if (it != rg.end()) overlap += std::min(c, it->second);
    }
    const double p = static_cast<double>(overlap) / static_cast<double>(std::max<size_t>(hyp_total, 1));
    const double r = static_cast<double>(overlap) / static_cast<double>(std::max<size_t>(ref_total, 1));
    return f1(p, r);
}

inline size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::vector<size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (size_t i = 1; i <= a.size(); ++i) {
        for (size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace detail

inline RougeScores rouge(std::string_view hypothesis, std::string_view reference, TokenizeOptions tok = {}) {
    const auto ref = text::tokenize(reference, tok);
    if (ref.empty()) throw MetricError("rouge: reference is empty");
    const auto hyp = text::tokenize(hypothesis, tok);
    RougeScores s;
    s.rouge1 = detail::rouge_n(hyp, ref, 1);
    s.rouge2 = detail::rouge_n(hyp, ref, 2);
    if (!hyp.empty()) {
        const double lcs = static_cast<double>(detail::lcs_length(hyp, ref));
        s.rougeL = detail::f1(lcs / static_cast<double>(hyp.size()), lcs / static_cast<double>(ref.size()));
    }
    return s;
}

// ---------------------------------------------------------------------------
// Reports

struct MetricReport {
    std::string record_id;
    double bleu = 0.0;
    double chrf = 0.0;
    double ter = 0.0;
    double wer = 0.0;
    double cer = 0.0;
    double rouge1 = 0.0;
    double rouge2 = 0.0;
    double rougeL = 0.0;
    std::optional<double> bertscore;
    std::optional<double> comet;
    BleuStats bleu_stats;
};

/// Neural metrics are never computed here; an external scorer may supply them.
struct NeuralScores {
    std::optional<double> bertscore;
    std::optional<double> comet;
};

class NeuralScorer {
  public:
    virtual ~NeuralScorer() = default;
    virtual NeuralScores score(const TranslationRecord& record) = 0;
};

/// Scores produced offline by an external BERTScore/COMET run, read from
/// JSONL lines `{"record_id": ..., "bertscore": ..., "comet": ...}`.
class PrecomputedNeuralScorer : public NeuralScorer {
  public:
    explicit PrecomputedNeuralScorer(const std::filesystem::path& path) {
        for (const auto& j : io::read_jsonl(path)) {
            NeuralScores s;
            if (j.contains("bertscore") && !j["bertscore"].is_null()) s.bertscore = j["bertscore"].get<double>();
            if (j.contains("comet") && !j["comet"].is_null()) s.comet = j["comet"].get<double>();
            scores_[j.at("record_id").get<std::string>()] = s;
        }
    }

    NeuralScores score(const TranslationRecord& record) override {
        auto it = scores_.find(record.id);
        return it == scores_.end() ? NeuralScores{} : it->second;
    }

  private:
    std::map<std::string, NeuralScores> scores_;
};

inline MetricReport score_record(const TranslationRecord& record, NeuralScorer* neural = nullptr) {
    const auto tok = tokenize_options_for(record.target_lang);
    const auto& hyp = record.translation_text;
    const auto& ref = record.reference_text;
    MetricReport r;
    r.record_id = record.id;
    const auto ref_toks = text::tokenize(ref, tok);
    if (ref_toks.empty()) throw MetricError("record '" + record.id + "': reference is empty");
    const auto hyp_toks = text::tokenize(hyp, tok);
    r.bleu_stats = bleu_stats(hyp_toks, {ref_toks});
    r.bleu = hyp_toks.empty() ? 0.0 : bleu_from_stats(r.bleu_stats);
    r.chrf = chrf(hyp, ref);
    r.ter = ter(hyp, ref, tok);
    r.wer = wer(hyp, ref, tok);
    r.cer = cer(hyp, ref);
    const auto rg = rouge(hyp, ref, tok);
    r.rouge1 = rg.rouge1;
    r.rouge2 = rg.rouge2;
    r.rougeL = rg.rougeL;
    if (neural) {
        auto ns = neural->score(record);
        r.bertscore = ns.bertscore;
        r.comet = ns.comet;
    }
    return r;
}

inline nlohmann::ordered_json to_json(const MetricReport& r) {
    nlohmann::ordered_json j;
    j["record_id"] = r.record_id;
    j["bleu"] = r.bleu;
    j["chrf"] = r.chrf;
    j["ter"] = r.ter;
    j["wer"] = r.wer;
    j["cer"] = r.cer;
    j["rouge1"] = r.rouge1;
    j["rouge2"] = r.rouge2;
    j["rougeL"] = r.rougeL;
    if (r.bertscore) j["bertscore"] = *r.bertscore;
    if (r.comet) j["comet"] = *r.comet;
    j["bleu_stats"] = {{"correct", r.bleu_stats.correct},
                       {"total", r.bleu_stats.total},
                       {"hyp_len", r.bleu_stats.hyp_len},
                       {"ref_len", r.bleu_stats.ref_len}};
    return j;
}

inline MetricReport report_from_json(const nlohmann::json& j) {
    MetricReport r;
    r.record_id = j.at("record_id").get<std::string>();
    r.bleu = j.at("bleu").get<double>();
    r.chrf = j.at("chrf").get<double>();
    r.ter = j.at("ter").get<double>();
    r.wer = j.at("wer").get<double>();
    r.cer = j.at("cer").get<double>();
    r.rouge1 = j.at("rouge1").get<double>();
    r.rouge2 = j.at("rouge2").get<double>();
    r.rougeL = j.at("rougeL").get<double>();
    if (j.contains("bertscore")) r.bertscore = j["bertscore"].get<double>();
    if (j.contains("comet")) r.comet = j["comet"].get<double>();
    if (j.contains("bleu_stats")) {
        const auto& s = j["bleu_stats"];
        r.bleu_stats.correct = s.at("correct").get<std::vector<double>>();
        r.bleu_stats.total = s.at("total").get<std::vector<double>>();
        r.bleu_stats.hyp_len = s.at("hyp_len").get<size_t>();
        r.bleu_stats.ref_len = s.at("ref_len").get<size_t>();
    }
    return r;
}

// ---------------------------------------------------------------------------
// Aggregation

enum class Metric { bleu, chrf, ter, wer, cer, rouge1, rouge2, rougeL, bertscore, comet };

inline constexpr std::array<Metric, 10> kAllMetrics = {Metric::bleu,   Metric::chrf,   Metric::ter,
                                                       Metric::wer,    Metric::cer,    Metric::rouge1,
                                                       Metric::rouge2, Metric::rougeL, Metric::bertscore,
                                                       Metric::comet};

inline std::string_view to_string(Metric m) {
    switch (m) {
        case Metric::bleu: return "bleu";
        case Metric::chrf: return "chrf";
        case Metric::ter: return "ter";
        case Metric::wer: return "wer";
        case Metric::cer: return "cer";
        case Metric::rouge1: return "rouge1";
        case Metric::rouge2: return "rouge2";
        case Metric::rougeL: return "rougeL";
        case Metric::bertscore: return "bertscore";
        case Metric::comet: return "comet";
    }
    return "";
}

inline std::optional<double> value_of(const MetricReport& r, Metric m) {
    switch (m) {
        case Metric::bleu: return r.bleu;
        case Metric::chrf: return r.chrf;
        case Metric::ter: return r.ter;
        case Metric::wer: return r.wer;
        case Metric::cer: return r.cer;
        case Metric::rouge1: return r.rouge1;
        case Metric::rouge2: return r.rouge2;
        case Metric::rougeL: return r.rougeL;
        case Metric::bertscore: return r.bertscore;
        case Metric::comet: return r.comet;
    }
    return std::nullopt;
}

/// Mean and population standard deviation over the values present.
struct Summary {
    double mean = 0.0;
    double std = 0.0;
    size_t n = 0;
};

inline Summary summarize(const std::vector<double>& values) {
    Summary s;
    s.n = values.size();
    if (values.empty()) return s;
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(values.size());
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(sq / static_cast<double>(values.size()));
    return s;
}

struct CorpusAggregate {
    std::string group_key;
    size_t n = 0;
    /// Metrics absent from every report in the group are omitted.
    std::map<Metric, Summary> stats;
    /// BLEU from summed sufficient statistics of the group.
    double corpus_bleu = 0.0;
};

inline double corpus_bleu(const std::vector<const MetricReport*>& reports) {
    BleuStats total;
    for (const auto* r : reports) total += r->bleu_stats;
    if (total.hyp_len == 0) return 0.0;
    return bleu_from_stats(total);
}

/// Resolves the group of a report; nullopt means unresolvable.
using GroupKeyFn = std::function<std::optional<std::string>(const MetricReport&)>;

inline std::vector<CorpusAggregate> aggregate(const std::vector<MetricReport>& reports, const GroupKeyFn& key) {
    if (reports.empty()) throw MetricError("aggregate: no reports");
    std::map<std::string, std::vector<const MetricReport*>> groups;
    for (const auto& r : reports) {
        auto k = key(r);
        if (!k) throw MetricError("aggregate: cannot resolve group key for record '" + r.record_id + "'");
        groups[*k].push_back(&r);
    }
    std::vector<CorpusAggregate> out;
    for (const auto& [k, members] : groups) {
        CorpusAggregate agg;
        agg.group_key = k;
        agg.n = members.size();
        for (auto m : kAllMetrics) {
            std::vector<double> values;
            for (const auto* r : members) {
                if (auto v = value_of(*r, m)) values.push_back(*v);
            }
            if (!values.empty()) agg.stats[m] = summarize(values);
        }
        agg.corpus_bleu = corpus_bleu(members);
        out.push_back(std::move(agg));
    }
    return out;
}

enum class GroupBy { model, pair, domain, family };

inline std::optional<GroupBy> parse_group_by(std::string_view s) {
    if (s == "model") return GroupBy::model;
    if (s == "pair") return GroupBy::pair;
    if (s == "domain") return GroupBy::domain;
    if (s == "family") return GroupBy::family;
    return std::nullopt;
}

/// Group keys from the originating records. `family` needs a classifier
/// returning e.g. "intra" / "cross" for a record.
inline GroupKeyFn record_key(const std::vector<TranslationRecord>& records, GroupBy by,
                             std::function<std::optional<std::string>(const TranslationRecord&)> family = {}) {
    auto index = std::make_shared<std::map<std::string, TranslationRecord>>();
    for (const auto& r : records) (*index)[r.id] = r;
    return [index, by, family](const MetricReport& rep) -> std::optional<std::string> {
        auto it = index->find(rep.record_id);
        if (it == index->end()) return std::nullopt;
        const auto& rec = it->second;
        switch (by) {
            case GroupBy::model: return rec.model;
            case GroupBy::pair: return rec.pair();
            case GroupBy::domain: return std::string(to_string(rec.domain));
            case GroupBy::family: return family ? family(rec) : std::nullopt;
        }
        return std::nullopt;
    };
}

/// CSV with `mean`/`std` column pairs per metric.
inline std::string aggregates_csv(const std::vector<CorpusAggregate>& aggs) {
    std::vector<Metric> present;
    for (auto m : kAllMetrics) {
        if (std::any_of(aggs.begin(), aggs.end(), [&](const auto& a) { return a.stats.count(m) > 0; })) {
            present.push_back(m);
        }
    }
    std::vector<std::string> header = {"group", "n"};
    for (auto m : present) {
        header.push_back(std::string(to_string(m)) + "_mean");
        header.push_back(std::string(to_string(m)) + "_std");
    }
    header.push_back("corpus_bleu");
    std::string out = io::csv_line(header);
    auto num = [](double v) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.6f", v);
        return std::string(buf);
    };
    for (const auto& a : aggs) {
        std::vector<std::string> row = {a.group_key, std::to_string(a.n)};
        for (auto m : present) {
            auto it = a.stats.find(m);
            row.push_back(it == a.stats.end() ? "" : num(it->second.mean));
            row.push_back(it == a.stats.end() ? "" : num(it->second.std));
        }
        row.push_back(num(a.corpus_bleu));
        out += io::csv_line(row);
    }
    return out;
}

}  // namespace tangles::metrics
