#pragma once

// Unicode helpers shared by every module: NFC normalization, lowercasing,
// whitespace and CJK tokenization, and word segmentation with offsets.

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <unicode/brkiter.h>
#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/uscript.h>
#include <unicode/utf8.h>

namespace tangles::text {

class TextError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

inline bool is_valid_utf8(std::string_view s) {
    const auto* p = reinterpret_cast<const uint8_t*>(s.data());
    int32_t i = 0;
    const auto n = static_cast<int32_t>(s.size());
    while (i < n) {
        UChar32 c;
        U8_NEXT(p, i, n, c);
        if (c < 0) return false;
    }
    return true;
}

/// Decodes UTF-8 into code points. Invalid sequences throw.
inline std::u32string to_codepoints(std::string_view s) {
    std::u32string out;
    out.reserve(s.size());
    const auto* p = reinterpret_cast<const uint8_t*>(s.data());
    int32_t i = 0;
    const auto n = static_cast<int32_t>(s.size());
    while (i < n) {
        UChar32 c;
        U8_NEXT(p, i, n, c);
        if (c < 0) throw TextError("invalid UTF-8 sequence");
        out.push_back(static_cast<char32_t>(c));
    }
    return out;
}

inline std::string from_codepoints(std::u32string_view cps) {
    std::string out;
    out.reserve(cps.size());
    for (char32_t c : cps) {
        char buf[4];
        int32_t len = 0;
        UBool err = false;
        U8_APPEND(reinterpret_cast<uint8_t*>(buf), len, 4, static_cast<UChar32>(c), err);
        if (err) throw TextError("code point not encodable");
        out.append(buf, static_cast<size_t>(len));
    }
    return out;
}

inline std::string nfc(std::string_view s) {
    UErrorCode status = U_ZERO_ERROR;
    const icu::Normalizer2* norm = icu::Normalizer2::getNFCInstance(status);
    if (U_FAILURE(status)) throw TextError("ICU NFC normalizer unavailable");
    icu::UnicodeString u = icu::UnicodeString::fromUTF8(icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
    icu::UnicodeString normalized = norm->normalize(u, status);
    if (U_FAILURE(status)) throw TextError("NFC normalization failed");
    std::string out;
    normalized.toUTF8String(out);
    return out;
}

/// NFC followed by root-locale lowercasing.
inline std::string lower(std::string_view s) {
    icu::UnicodeString u = icu::UnicodeString::fromUTF8(icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
    u.toLower(icu::Locale::getRoot());
    std::string out;
    u.toUTF8String(out);
    return nfc(out);
}

inline bool is_space(char32_t c) { return u_isUWhiteSpace(static_cast<UChar32>(c)); }

inline bool is_cjk(char32_t c) {
    UErrorCode status = U_ZERO_ERROR;
    const UScriptCode script = uscript_getScript(static_cast<UChar32>(c), &status);
    if (U_FAILURE(status)) return false;
    return script == USCRIPT_HAN || script == USCRIPT_HIRAGANA || script == USCRIPT_KATAKANA ||
           script == USCRIPT_HANGUL;
}

/// Splits on Unicode whitespace; no normalization.
inline std::vector<std::string> split_whitespace(std::string_view s) {
    std::vector<std::string> out;
    std::u32string current;
    for (char32_t c : to_codepoints(s)) {
        if (is_space(c)) {
            if (!current.empty()) out.push_back(from_codepoints(current));
            current.clear();
        } else {
            current.push_back(c);
        }
    }
    if (!current.empty()) out.push_back(from_codepoints(current));
    return out;
}

/// Collapses whitespace runs to a single ASCII space and trims, after NFC.
inline std::string normalize_spaces(std::string_view s) {
    std::string out;
    for (const auto& tok : split_whitespace(nfc(s))) {
        if (!out.empty()) out.push_back(' ');
        out += tok;
    }
    return out;
}

struct TokenizeOptions {
    /// Emit every CJK code point as its own token (international mode).
    bool cjk_split = false;
};

/// Metric tokenizer: NFC, whitespace split, optional per-CJK-codepoint split.
inline std::vector<std::string> tokenize(std::string_view s, TokenizeOptions opts = {}) {
    auto words = split_whitespace(nfc(s));
    if (!opts.cjk_split) return words;
    std::vector<std::string> out;
    for (const auto& w : words) {
        std::u32string run;
        for (char32_t c : to_codepoints(w)) {
            if (is_cjk(c)) {
                if (!run.empty()) out.push_back(from_codepoints(run));
                run.clear();
                out.push_back(from_codepoints(std::u32string(1, c)));
            } else {
                run.push_back(c);
            }
        }
        if (!run.empty()) out.push_back(from_codepoints(run));
    }
    return out;
}

/// A word produced by Unicode word segmentation. Offsets are in code points
/// of the NFC-normalized input.
struct WordToken {
    std::string text;
    size_t start = 0;
    size_t end = 0;
};

/// Unicode (UAX #29) word segmentation; punctuation and whitespace segments
/// are dropped. Text is NFC-normalized but case is preserved.
inline std::vector<WordToken> words(std::string_view s) {
    const std::string normalized = nfc(s);
    icu::UnicodeString u = icu::UnicodeString::fromUTF8(
        icu::StringPiece(normalized.data(), static_cast<int32_t>(normalized.size())));
    UErrorCode status = U_ZERO_ERROR;
    std::unique_ptr<icu::BreakIterator> it(icu::BreakIterator::createWordInstance(icu::Locale::getRoot(), status));
    if (U_FAILURE(status)) throw TextError("ICU word break iterator unavailable");
    it->setText(u);

    std::vector<WordToken> out;
    int32_t start = it->first();
    for (int32_t end = it->next(); end != icu::BreakIterator::DONE; start = end, end = it->next()) {
        if (it->getRuleStatus() == UBRK_WORD_NONE) continue;
        icu::UnicodeString piece;
        u.extractBetween(start, end, piece);
        WordToken tok;
        piece.toUTF8String(tok.text);
        tok.start = static_cast<size_t>(u.countChar32(0, start));
        tok.end = tok.start + static_cast<size_t>(piece.countChar32());
        out.push_back(std::move(tok));
    }
    return out;
}

/// Lowercased word strings, the unit for lexicon matching.
inline std::vector<std::string> lower_words(std::string_view s) {
    std::vector<std::string> out;
    for (auto& w : words(lower(s))) out.push_back(std::move(w.text));
    return out;
}

}  // namespace tangles::text
