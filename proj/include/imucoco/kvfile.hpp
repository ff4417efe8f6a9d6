#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "imucoco/errors.hpp"

namespace imucoco {

// Formats a double with enough digits to round-trip exactly through text.
inline std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Plain-text `key = value` files used for body and training configs.
// Lines starting with '#' and blank lines are ignored.
class KeyValueFile {
public:
    static KeyValueFile load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ValidationError("cannot open config file: " + path);
        return parse(in, path);
    }

    static KeyValueFile from_string(const std::string& text, const std::string& origin) {
        std::istringstream in(text);
        return parse(in, origin);
    }

    bool has(const std::string& key) const { return entries_.count(key) > 0; }

    double get_real(const std::string& key, double fallback) const {
        auto it = entries_.find(key);
        if (it == entries_.end()) return fallback;
        std::size_t pos = 0;
        double v = 0;
        try {
            v = std::stod(it->second, &pos);
        } catch (const std::exception&) {
            throw ConfigError(path_ + ": key `" + key + "` is not a number: " + it->second);
        }
        if (pos != it->second.size())
            throw ConfigError(path_ + ": key `" + key + "` is not a number: " + it->second);
        return v;
    }

    int get_int(const std::string& key, int fallback) const {
        auto it = entries_.find(key);
        if (it == entries_.end()) return fallback;
        std::size_t pos = 0;
        long v = 0;
        try {
            v = std::stol(it->second, &pos);
        } catch (const std::exception&) {
            throw ConfigError(path_ + ": key `" + key + "` is not an integer: " + it->second);
        }
        if (pos != it->second.size())
            throw ConfigError(path_ + ": key `" + key + "` is not an integer: " + it->second);
        return static_cast<int>(v);
    }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = entries_.find(key);
        return it == entries_.end() ? fallback : it->second;
    }

    const std::map<std::string, std::string>& entries() const { return entries_; }

private:
    static KeyValueFile parse(std::istream& in, const std::string& origin) {
        KeyValueFile kv;
        kv.path_ = origin;
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::string s = strip(line);
            if (s.empty() || s[0] == '#') continue;
            auto eq = s.find('=');
            if (eq == std::string::npos)
                throw ParseError(origin, lineno, "expected `key = value`, got: " + s);
            std::string key = strip(s.substr(0, eq));
            std::string value = strip(s.substr(eq + 1));
            if (key.empty()) throw ParseError(origin, lineno, "empty key");
            kv.entries_[key] = value;
        }
        return kv;
    }

    static std::string strip(const std::string& s) {
        auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return "";
        auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    std::string path_ = "<memory>";
    std::map<std::string, std::string> entries_;
};

}  // namespace imucoco
