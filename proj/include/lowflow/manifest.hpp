// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "lowflow/errors.hpp"

namespace lowflow {

inline constexpr const char* kToolVersion = "0.1.0";

inline std::string utc_timestamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Provenance record for one CLI run. Written with status "running" before any
// compute starts, so an interrupted run leaves evidence behind, and rewritten
// once at the end. The config map holds every resolved key (defaults
// included); replaying it reproduces the run's outputs byte for byte.
struct RunManifest {
    std::string subcommand;
    std::map<std::string, std::string> config;
    std::uint64_t root_seed = 0;
    std::string tool_version = kToolVersion;
    std::string started_utc;
    std::string finished_utc;
    std::vector<std::string> outputs;
    std::string status = "running";  // running | ok | error
    std::string message;             // failure description when status == error
};

inline void write_manifest(const RunManifest& m, const std::string& path) {
    nlohmann::json j;
    j["subcommand"] = m.subcommand;
    j["config"] = m.config;
    j["root_seed"] = m.root_seed;
    j["tool_version"] = m.tool_version;
    j["started_utc"] = m.started_utc;
    j["finished_utc"] = m.finished_utc;
    j["outputs"] = m.outputs;
    j["status"] = m.status;
    if (!m.message.empty()) j["message"] = m.message;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
    out.close();
    if (!out) throw IoError("write failed: " + path);
}

inline RunManifest load_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path + ": " + e.what());
    }
    try {
        RunManifest m;
        m.subcommand = j.at("subcommand").get<std::string>();
        m.config = j.at("config").get<std::map<std::string, std::string>>();
        m.root_seed = j.at("root_seed").get<std::uint64_t>();
        m.tool_version = j.at("tool_version").get<std::string>();
        m.started_utc = j.at("started_utc").get<std::string>();
        m.finished_utc = j.at("finished_utc").get<std::string>();
        m.outputs = j.at("outputs").get<std::vector<std::string>>();
        m.status = j.at("status").get<std::string>();
        if (j.contains("message")) m.message = j.at("message").get<std::string>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path + ": " + e.what());
    }
}

inline RunManifest begin_manifest(const std::string& path, std::string subcommand,
                                  std::map<std::string, std::string> config,
                                  std::uint64_t root_seed, std::vector<std::string> outputs) {
    RunManifest m;
    m.subcommand = std::move(subcommand);
    m.config = std::move(config);
    m.root_seed = root_seed;
    m.outputs = std::move(outputs);
    m.started_utc = utc_timestamp();
    write_manifest(m, path);
    return m;
}

// Success path. Every output the manifest declared must exist by now.
inline void finish_manifest(RunManifest& m, const std::string& path) {
    for (const auto& f : m.outputs)
        if (!std::filesystem::exists(f))
            throw IoError("declared output was never written: " + f);
    m.status = "ok";
    m.finished_utc = utc_timestamp();
    write_manifest(m, path);
}

// Failure path; best effort, never throws (runs inside error handling).
inline void fail_manifest(RunManifest& m, const std::string& path,
                          const std::string& why) noexcept {
    m.status = "error";
    m.message = why;
    m.finished_utc = utc_timestamp();
    try {
        write_manifest(m, path);
    } catch (...) {
    }
}

}  // namespace lowflow
