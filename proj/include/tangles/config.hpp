#pragma once

// Config and token files are TOML read through CLI11's config reader, so the
// CLI's --config overlay and the annotation token table share one parser.
// Values come back as strings, or arrays of strings when more than one
// value is given; callers convert.

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

namespace tangles::config {

class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline nlohmann::json to_tree(const std::vector<CLI::ConfigItem>& items, const std::string& source) {
    nlohmann::json root = nlohmann::json::object();
    for (const auto& it : items) {
        if (it.name == "++" || it.name == "--") continue;  // section markers
        nlohmann::json* t = &root;
        for (const auto& p : it.parents) {
            auto& next = (*t)[p];
            if (next.is_null()) next = nlohmann::json::object();
            if (!next.is_object()) throw ConfigError(source + ": '" + p + "' is both a value and a table");
            t = &next;
        }
        if (t->contains(it.name)) throw ConfigError(source + ": duplicate key '" + it.fullname() + "'");
        if (it.inputs.size() == 1) {
            (*t)[it.name] = it.inputs.front();
        } else {
            (*t)[it.name] = it.inputs;
        }
    }
    return root;
}

}  // namespace detail

inline nlohmann::json parse_toml(std::string_view content, const std::string& source = "<config>") {
    std::istringstream in{std::string(content)};
    try {
        return detail::to_tree(CLI::ConfigTOML().from_config(in), source);
    } catch (const CLI::Error& e) {
        throw ConfigError(source + ": " + e.what());
    }
}

inline nlohmann::json load_toml(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_toml(buf.str(), path.string());
}

/// Value at a dotted path, or nullptr.
inline const nlohmann::json* lookup(const nlohmann::json& root, std::string_view dotted) {
    const nlohmann::json* cur = &root;
    size_t pos = 0;
    while (true) {
        const auto dot = dotted.find('.', pos);
        const auto key = std::string(dotted.substr(pos, dot == std::string_view::npos ? std::string_view::npos : dot - pos));
        if (!cur->is_object() || !cur->contains(key)) return nullptr;
        cur = &(*cur)[key];
        if (dot == std::string_view::npos) return cur;
        pos = dot + 1;
    }
}

}  // namespace tangles::config
