#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "reachguard/common.hpp"

namespace reachguard {

// Flat key registry over INI-style sections ("section.key"). Unknown keys are
// rejected; numeric ranges are validated at load. Defaults live in the
// registry so a dump documents every key.
class RunConfig {
public:
    RunConfig();  // defaults only

    // Plain-text config: [section] headers, key = value lines, '#' comments.
    // A .json path is read as a run manifest (its "config" object).
    static RunConfig load(const std::string& path);

    void set(const std::string& key, const std::string& value);  // validated
    bool has(const std::string& key) const;

    double get_double(const std::string& key) const;
    long get_long(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    const std::string& get_string(const std::string& key) const;
    std::vector<int> get_int_list(const std::string& key) const;

    nlohmann::json to_json() const;           // resolved snapshot, all keys
    static const std::map<std::string, std::string>& documented_defaults();

private:
    std::map<std::string, std::string> values_;
};

// Run manifest: resolved config, seeds, artifact paths, tool version, and
// wall-clock timings. Written before any work starts; timings are filled in
// on completion.
struct RunManifest {
    nlohmann::json config;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> artifacts;
    std::string command;
    double wall_seconds = 0.0;

    void write(const std::string& path) const;
};

extern const char* kToolVersion;

}  // namespace reachguard
