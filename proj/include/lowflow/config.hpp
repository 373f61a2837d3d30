// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "lowflow/fmtio.hpp"

namespace lowflow {

// Plain-text run configuration: one `key = value` per line, '#' comments,
// blank lines ignored. Lookups record which keys were consumed so a run can
// reject misspelled keys instead of silently ignoring them.
class Config {
  public:
    static Config from_file(const std::string& path) {
        return from_lines(read_lines(path), path);
    }

    static Config from_string(const std::string& text, const std::string& name = "<string>") {
        std::vector<std::string> lines;
        for (auto part : split(text, '\n')) lines.emplace_back(part);
        return from_lines(lines, name);
    }

    bool has(const std::string& key) const { return entries_.count(key) != 0; }

    std::string get_string(const std::string& key) {
        auto it = entries_.find(key);
        if (it == entries_.end())
            throw UsageError(name_ + ": missing required key '" + key + "'");
        consumed_.insert(key);
        return it->second.value;
    }

    std::string get_string(const std::string& key, const std::string& fallback) {
        return has(key) ? get_string(key) : fallback;
    }

    double get_double(const std::string& key) { return to_double(key, get_string(key)); }
    double get_double(const std::string& key, double fallback) {
        return has(key) ? get_double(key) : fallback;
    }

    long long get_int(const std::string& key) { return to_int(key, get_string(key)); }
    long long get_int(const std::string& key, long long fallback) {
        return has(key) ? get_int(key) : fallback;
    }

    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) {
        if (!has(key)) return fallback;
        try {
            return parse_u64(get_string(key), where(key));
        } catch (const IoError& e) {
            throw UsageError(e.what());
        }
    }

    bool get_bool(const std::string& key, bool fallback) {
        if (!has(key)) return fallback;
        const std::string v = get_string(key);
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw UsageError(where(key) + ": expected true|false, got '" + v + "'");
    }

    std::vector<int> get_int_list(const std::string& key) {
        std::vector<int> out;
        for (auto part : split(get_string(key), ','))
            out.push_back(static_cast<int>(to_int(key, std::string(trim(part)))));
        return out;
    }

    std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) {
        return has(key) ? get_int_list(key) : fallback;
    }

    // Call after all lookups: any key never consumed is a config error.
    void reject_unknown_keys() const {
        for (const auto& [key, entry] : entries_)
            if (!consumed_.count(key))
                throw UsageError(name_ + ":" + std::to_string(entry.line) +
                                 ": unknown key '" + key + "'");
    }

    const std::string& name() const { return name_; }

  private:
    struct Entry {
        std::string value;
        int line;
    };

    static Config from_lines(const std::vector<std::string>& lines, const std::string& name) {
        Config cfg;
        cfg.name_ = name;
        for (std::size_t i = 0; i < lines.size(); ++i) {
            const int lineno = static_cast<int>(i) + 1;
            std::string_view s = trim(lines[i]);
            if (s.empty() || s.front() == '#') continue;
            auto eq = s.find('=');
            if (eq == std::string_view::npos)
                throw UsageError(name + ":" + std::to_string(lineno) + ": expected 'key = value'");
            std::string key{trim(s.substr(0, eq))};
            std::string value{trim(s.substr(eq + 1))};
            if (key.empty())
                throw UsageError(name + ":" + std::to_string(lineno) + ": empty key");
            if (cfg.entries_.count(key))
                throw UsageError(name + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
            cfg.entries_[key] = Entry{value, lineno};
        }
        return cfg;
    }

    std::string where(const std::string& key) const {
        auto it = entries_.find(key);
        int line = it == entries_.end() ? 0 : it->second.line;
        return name_ + ":" + std::to_string(line) + ": key '" + key + "'";
    }

    double to_double(const std::string& key, const std::string& v) const {
        try {
            return parse_double(v, where(key));
        } catch (const IoError& e) {
            throw UsageError(e.what());
        }
    }

    long long to_int(const std::string& key, const std::string& v) const {
        try {
            return parse_int(v, where(key));
        } catch (const IoError& e) {
            throw UsageError(e.what());
        }
    }

    std::string name_;
    std::map<std::string, Entry> entries_;
    std::set<std::string> consumed_;
};

}  // namespace lowflow
