#pragma once

// Artifact plumbing: RFC 4180 CSV reading/writing, JSONL line iteration and
// the provenance header every artifact carries.

#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tangles/hash.hpp"

namespace tangles::io {

inline constexpr std::string_view kToolName = "tangles";
inline constexpr std::string_view kToolVersion = "0.1.0";
inline constexpr std::string_view kHeaderKey = "_header";

class IoError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

/// Compact JSON with strict UTF-8 checking; keys keep insertion order for
/// ordered_json values.
template <typename Json>
std::string dump_line(const Json& j) {
    return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::strict);
}

/// Provenance header: tool version, effective config, its hash and seed.
inline nlohmann::ordered_json make_header(std::string_view command, const nlohmann::ordered_json& config,
                                          uint64_t seed) {
    nlohmann::ordered_json h;
    h["tool"] = kToolName;
    h["version"] = kToolVersion;
    h["command"] = command;
    h["config_hash"] = sha256_hex(dump_line(config)).substr(0, 16);
    h["seed"] = seed;
    h["config"] = config;
    nlohmann::ordered_json line;
    line[std::string(kHeaderKey)] = h;
    return line;
}

inline bool is_header(const nlohmann::json& j) { return j.is_object() && j.contains(std::string(kHeaderKey)); }

/// Invokes `fn(line_number, json)` for every non-blank, non-header line.
inline void for_each_jsonl(std::string_view content, const std::string& source,
                           const std::function<void(size_t, const nlohmann::json&)>& fn) {
    size_t line_no = 0;
    size_t pos = 0;
    while (pos <= content.size()) {
        auto nl = content.find('\n', pos);
        auto line = content.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.find_first_not_of(" \t") != std::string_view::npos) {
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::parse_error& e) {
                throw IoError(source + ":" + std::to_string(line_no) + ": malformed JSON: " + e.what());
            }
            if (!is_header(j)) fn(line_no, j);
        }
        if (nl == std::string_view::npos) break;
        pos = nl + 1;
    }
}

inline std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
    std::vector<nlohmann::json> out;
    for_each_jsonl(read_file(path), path.string(), [&](size_t, const nlohmann::json& j) { out.push_back(j); });
    return out;
}

/// The header object of a JSONL artifact, or null when absent.
inline nlohmann::json read_jsonl_header(const std::filesystem::path& path) {
    std::ifstream in(path);
    std::string first;
    if (!in || !std::getline(in, first)) return nullptr;
    try {
        auto j = nlohmann::json::parse(first);
        if (is_header(j)) return j.at(std::string(kHeaderKey));
    } catch (const nlohmann::json::parse_error&) {
    }
    return nullptr;
}

// ---------------------------------------------------------------------------
// CSV

struct CsvRow {
    size_t line = 0;  // physical line where the row starts
    std::vector<std::string> fields;
};

/// RFC 4180 parser: quoted fields may contain commas, quotes ("") and
/// newlines. Lines starting with '#' before the header are skipped.
inline std::vector<CsvRow> parse_csv(std::string_view content, const std::string& source) {
    std::vector<CsvRow> rows;
    size_t i = 0;
    size_t line = 1;
    bool seen_data = false;
    const size_t n = content.size();
    if (n >= 3 && content.substr(0, 3) == "\xEF\xBB\xBF") i = 3;
    while (i < n) {
        if (!seen_data && content[i] == '#') {
            while (i < n && content[i] != '\n') ++i;
            ++i;
            ++line;
            continue;
        }
        CsvRow row;
        row.line = line;
        std::string field;
        bool in_quotes = false;
        bool field_quoted = false;
        bool row_done = false;
        while (i < n && !row_done) {
            char c = content[i];
            if (in_quotes) {
                if (c == '"') {
                    if (i + 1 < n && content[i + 1] == '"') {
                        field.push_back('"');
                        i += 2;
                        continue;
                    }
                    in_quotes = false;
                    ++i;
                    continue;
                }
                if (c == '\n') ++line;
                field.push_back(c);
                ++i;
                continue;
            }
            switch (c) {
                case '"':
                    if (!field.empty()) throw IoError(source + ":" + std::to_string(line) + ": stray quote in field");
                    in_quotes = true;
                    field_quoted = true;
                    ++i;
                    break;
                case ',':
                    row.fields.push_back(std::move(field));
                    field.clear();
                    field_quoted = false;
                    ++i;
                    break;
                case '\r':
                    ++i;
                    break;
                case '\n':
                    ++i;
                    ++line;
                    row_done = true;
                    break;
                default:
                    if (field_quoted) throw IoError(source + ":" + std::to_string(line) + ": text after closing quote");
                    field.push_back(c);
                    ++i;
            }
        }
        if (in_quotes) throw IoError(source + ":" + std::to_string(row.line) + ": unterminated quoted field");
        row.fields.push_back(std::move(field));
        if (row.fields.size() == 1 && row.fields[0].empty()) continue;  // blank line
        seen_data = true;
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::string csv_escape(std::string_view s) {
    if (s.find_first_of(",\"\r\n") == std::string_view::npos && (s.empty() || s.front() != '#')) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

inline std::string csv_line(const std::vector<std::string>& fields) {
    std::string out;
    for (size_t i = 0; i < fields.size(); ++i) {
        if (i) out.push_back(',');
        out += csv_escape(fields[i]);
    }
    out.push_back('\n');
    return out;
}

/// `# tangles 0.1.0 <command> config_hash=... seed=...` comment line for CSV
/// artifacts.
inline std::string csv_header_comment(const nlohmann::ordered_json& header_line) {
    const auto& h = header_line.at(std::string(kHeaderKey));
    std::string out = "# ";
    out += h.at("tool").get<std::string>() + " " + h.at("version").get<std::string>() + " " +
           h.at("command").get<std::string>() + " config_hash=" + h.at("config_hash").get<std::string>() +
           " seed=" + std::to_string(h.at("seed").get<uint64_t>()) + "\n";
    return out;
}

}  // namespace tangles::io
