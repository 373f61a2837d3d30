// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "lowflow/errors.hpp"

namespace lowflow {

// Shortest decimal string that round-trips the double exactly. Locale-free,
// '.' decimal point always.
inline std::string fmt_double(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

// Fixed 17 significant digits; used by the checkpoint format where the field
// width is part of the contract. Round-trips every finite double.
inline std::string fmt_double17(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
    return std::string(buf, r.ptr);
}

inline double parse_double(std::string_view s, const std::string& where) {
    double v = 0.0;
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size())
        throw IoError(where + ": bad number '" + std::string(s) + "'");
    return v;
}

inline long long parse_int(std::string_view s, const std::string& where) {
    long long v = 0;
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size())
        throw IoError(where + ": bad integer '" + std::string(s) + "'");
    return v;
}

// Seeds occupy the full unsigned range (derived substream seeds regularly
// exceed the signed maximum), so they get their own parser.
inline std::uint64_t parse_u64(std::string_view s, const std::string& where) {
    std::uint64_t v = 0;
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size())
        throw IoError(where + ": bad unsigned integer '" + std::string(s) + "'");
    return v;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == sep) {
            out.push_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

// CSV writer: UTF-8, LF line endings, '.' decimal separator. Values in this
// project never contain commas or quotes, so no quoting rules are needed.
class CsvWriter {
  public:
    CsvWriter(const std::string& path, const std::vector<std::string>& header) : path_(path) {
        out_.open(path, std::ios::binary);
        if (!out_) throw IoError("cannot open for writing: " + path);
        write_row_strings(header);
    }

    void write_row_strings(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_.put(',');
            out_ << cells[i];
        }
        out_.put('\n');
    }

    // Mixed row: already-formatted strings.
    template <typename... Ts>
    void row(const Ts&... cells) {
        std::vector<std::string> v{format_cell(cells)...};
        write_row_strings(v);
    }

    void close() {
        out_.close();
        if (!out_) throw IoError("write failed: " + path_);
    }

  private:
    static std::string format_cell(double v) { return fmt_double(v); }
    static std::string format_cell(int v) { return std::to_string(v); }
    static std::string format_cell(long v) { return std::to_string(v); }
    static std::string format_cell(long long v) { return std::to_string(v); }
    static std::string format_cell(unsigned long v) { return std::to_string(v); }
    static std::string format_cell(unsigned long long v) { return std::to_string(v); }
    static std::string format_cell(const std::string& v) { return v; }
    static std::string format_cell(const char* v) { return v; }

    std::string path_;
    std::ofstream out_;
};

inline std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

}  // namespace lowflow
