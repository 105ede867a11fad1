#pragma once

// A small TOML-like format: `[section]` or `[section.name]` headers,
// `key = value` lines, `#` comments, optional double quotes around values.
// Values stay strings until a typed accessor reads them.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cdnb::harness {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ConfigSection {
    std::string name;  // "" for keys before any header
    std::map<std::string, std::string> values;
    std::map<std::string, std::size_t> lines;
    mutable std::set<std::string> read;

    [[nodiscard]] bool has(const std::string& key) const { return values.count(key) > 0; }

    [[nodiscard]] std::string str(const std::string& key, const std::string& fallback) const {
        auto it = values.find(key);
        if (it == values.end()) return fallback;
        read.insert(key);
        return it->second;
    }

    [[nodiscard]] double real(const std::string& key, double fallback) const {
        if (!has(key)) return fallback;
        const std::string v = str(key, "");
        try {
            std::size_t used = 0;
            const double d = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return d;
        } catch (const std::exception&) {
            throw error(key, "expected a number, got '" + v + "'");
        }
    }

    [[nodiscard]] std::size_t count(const std::string& key, std::size_t fallback) const {
        if (!has(key)) return fallback;
        const std::string v = str(key, "");
        std::size_t out = 0;
        const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc() || p != v.data() + v.size()) throw error(key, "expected a non-negative integer, got '" + v + "'");
        return out;
    }

    [[nodiscard]] bool flag(const std::string& key, bool fallback) const {
        if (!has(key)) return fallback;
        const std::string v = str(key, "");
        if (v == "true" || v == "yes" || v == "1") return true;
        if (v == "false" || v == "no" || v == "0") return false;
        throw error(key, "expected true or false, got '" + v + "'");
    }

    /// Comma-separated list with surrounding whitespace trimmed; empty items dropped.
    [[nodiscard]] std::vector<std::string> list(const std::string& key, std::vector<std::string> fallback) const;

    [[nodiscard]] ConfigError error(const std::string& key, const std::string& why) const {
        auto it = lines.find(key);
        const std::string where = it == lines.end() ? "" : " (line " + std::to_string(it->second) + ")";
        return ConfigError("config [" + name + "] " + key + where + ": " + why);
    }

    /// Fails on any key no accessor has read.
    void reject_unread() const {
        for (const auto& [k, v] : values)
            if (!read.count(k)) throw error(k, "unknown key");
    }
};

namespace detail {

inline std::string trim(std::string s) {
    auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

}  // namespace detail

inline std::vector<std::string> ConfigSection::list(const std::string& key, std::vector<std::string> fallback) const {
    if (!has(key)) return fallback;
    std::vector<std::string> out;
    std::stringstream ss(str(key, ""));
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = detail::trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

struct Config {
    std::vector<ConfigSection> sections;  // file order; the unnamed root comes first
    std::string origin = "<string>";

    [[nodiscard]] const ConfigSection* find(const std::string& name) const {
        for (const auto& s : sections)
            if (s.name == name) return &s;
        return nullptr;
    }
    [[nodiscard]] const ConfigSection& get(const std::string& name) const {
        static const ConfigSection empty;
        const ConfigSection* s = find(name);
        return s ? *s : empty;
    }
    /// Sections named `prefix.<something>`, in file order.
    [[nodiscard]] std::vector<const ConfigSection*> with_prefix(const std::string& prefix) const {
        std::vector<const ConfigSection*> out;
        for (const auto& s : sections)
            if (s.name.rfind(prefix + ".", 0) == 0) out.push_back(&s);
        return out;
    }
};

inline Config parse_config(const std::string& text, const std::string& origin = "<string>") {
    Config cfg;
    cfg.origin = origin;
    cfg.sections.push_back(ConfigSection{});
    std::istringstream in(text);
    std::string raw;
    std::size_t lineno = 0;
    auto fail = [&](const std::string& why) {
        return ConfigError(origin + ":" + std::to_string(lineno) + ": " + why);
    };
    while (std::getline(in, raw)) {
        ++lineno;
        std::string line = raw;
        bool quoted = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') quoted = !quoted;
            if (line[i] == '#' && !quoted) {
                line.resize(i);
                break;
            }
        }
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw fail("unterminated section header");
            const std::string name = detail::trim(line.substr(1, line.size() - 2));
            if (name.empty()) throw fail("empty section name");
            if (cfg.find(name)) throw fail("duplicate section [" + name + "]");
            ConfigSection s;
            s.name = name;
            cfg.sections.push_back(std::move(s));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw fail("expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty()) throw fail("missing key");
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        auto& sec = cfg.sections.back();
        if (sec.values.count(key)) throw fail("duplicate key " + key);
        sec.values[key] = value;
        sec.lines[key] = lineno;
    }
    return cfg;
}

inline Config load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read config file " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str(), path.string());
}

}  // namespace cdnb::harness
