#include "reachguard/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace reachguard {

const char* kToolVersion = "reachguard 1.0.0";

namespace {

enum class KeyType { real, integer, boolean, text, int_list };

struct KeySpec {
    KeyType type;
    std::string def;
    double lo = -1e300;
    double hi = 1e300;
    bool lo_open = false;
    bool hi_open = false;
    const char* doc = "";
};

const std::map<std::string, KeySpec>& registry() {
    static const std::map<std::string, KeySpec> reg = {
        {"run.seed", {KeyType::integer, "1", 0, 9.3e18, false, false, "master seed"}},
        {"run.out_dir", {KeyType::text, "runs/out", 0, 0, false, false, "artifact directory"}},
        {"run.threads", {KeyType::integer, "0", 0, 1024, false, false,
                         "worker cap; 0 = hardware (REACHGUARD_THREADS overrides)"}},

        {"system.name", {KeyType::text, "double_integrator", 0, 0, false, false,
                         "double_integrator | dubins | bike"}},
        {"system.bike_length", {KeyType::real, "3.0", 0.1, 20, false, false, "wheelbase, m"}},
        {"system.bike_a_min", {KeyType::real, "-4.0", -50, 0, false, false, "m/s^2"}},
        {"system.bike_a_max", {KeyType::real, "4.0", 0, 50, false, false, "m/s^2"}},
        {"system.bike_delta_min", {KeyType::real, "-0.5", -1.5, 0, false, false, "rad"}},
        {"system.bike_delta_max", {KeyType::real, "0.5", 0, 1.5, false, false, "rad"}},

        {"track.file", {KeyType::text, "data/stadium_track.txt", 0, 0, false, false,
                        "centerline file: 'width <w>' header then x y pairs"}},

        {"env.name", {KeyType::text, "di", 0, 0, false, false, "di | dubins | track"}},
        {"env.dt", {KeyType::real, "0.05", 1e-4, 1.0, false, false,
                    "integration step for classic envs, s"}},
        {"env.track_dt", {KeyType::real, "0.1", 1e-4, 1.0, false, false, "track env step, s"}},
        {"env.timeout_steps", {KeyType::integer, "3000", 1, 1000000, false, false, ""}},
        {"env.no_progress_window", {KeyType::integer, "100", 1, 100000, false, false, "steps"}},
        {"env.no_progress_min", {KeyType::real, "0.1", 0, 100, false, false, "meters"}},
        {"env.v_min", {KeyType::real, "0.0", 0, 10, false, false,
                       "idle-creep speed floor for the track env, m/s"}},
        {"env.reward_speed_weight", {KeyType::real, "100.0", 0, 1e6, false, false, "w1"}},
        {"env.reward_offtrack_weight", {KeyType::real, "1.0", 0, 1e6, false, false, "w2"}},
        {"env.spawn_speed_lo", {KeyType::real, "5.0", 0, 100, false, false, "m/s"}},
        {"env.spawn_speed_hi", {KeyType::real, "15.0", 0, 100, false, false, "m/s"}},

        {"solver.gamma", {KeyType::real, "0.9999", 0, 1, false, true, "discount, in [0,1)"}},
        {"solver.dt", {KeyType::real, "0.05", 1e-4, 1.0, false, false, ""}},
        {"solver.tol", {KeyType::real, "1e-6", 0, 1, true, false, "sup-norm residual"}},
        {"solver.max_iters", {KeyType::integer, "3000", 1, 1000000, false, false, ""}},
        {"solver.grid", {KeyType::int_list, "161,161", 2, 4096, false, false,
                         "nodes per dim"}},
        {"solver.controls", {KeyType::int_list, "21", 1, 1001, false, false,
                             "control samples per dim"}},
        {"solver.mode", {KeyType::text, "avoid", 0, 0, false, false, "avoid | reach"}},

        {"segment.length", {KeyType::real, "150.0", 10, 5000, false, false, "core length, m"}},
        {"segment.overlap", {KeyType::real, "50.0", 0, 1000, false, false, "m"}},
        {"segment.xy_resolution", {KeyType::real, "1.25", 0.1, 20, false, false, "m"}},
        {"segment.margin", {KeyType::real, "5.0", 0, 100, false, false, "m beyond the band"}},
        {"segment.v_lo", {KeyType::real, "0.0", 0, 50, false, false, "m/s"}},
        {"segment.v_hi", {KeyType::real, "20.0", 0.1, 100, false, false, "m/s"}},
        {"segment.v_nodes", {KeyType::integer, "9", 2, 401, false, false, ""}},
        {"segment.psi_nodes", {KeyType::integer, "30", 4, 721, false, false, ""}},
        {"segment.controls", {KeyType::int_list, "2,3", 1, 101, false, false, ""}},
        {"segment.gamma", {KeyType::real, "0.9999", 0, 1, false, true, ""}},
        {"segment.dt", {KeyType::real, "0.1", 1e-4, 1.0, false, false, ""}},
        {"segment.tol", {KeyType::real, "1e-4", 0, 1, true, false, ""}},
        {"segment.max_iters", {KeyType::integer, "400", 1, 100000, false, false, ""}},
        {"segment.freeze_below", {KeyType::real, "-3.5", -1000, 0, false, false,
                                  "freeze nodes with l at or below this"}},

        {"critic.rule", {KeyType::text, "hj", 0, 0, false, false, "hj | sqrl | cql"}},
        {"critic.gamma_start", {KeyType::real, "0.85", 0, 1, false, true, ""}},
        {"critic.gamma_end", {KeyType::real, "0.9999", 0, 1, false, false,
                              "capped below 1 by the schedule"}},
        {"critic.tau", {KeyType::real, "0.1", 0, 1, true, false, "polyak rate, in (0,1]"}},
        {"critic.lr", {KeyType::real, "0.001", 0, 1, true, false, ""}},
        {"critic.batch_size", {KeyType::integer, "64", 1, 65536, false, false, ""}},
        {"critic.alpha_cql", {KeyType::real, "0.01", 0, 1000, false, false, ""}},
        {"critic.warmup", {KeyType::integer, "2000", 0, 10000000, false, false, ""}},
        {"critic.buffer", {KeyType::integer, "10000", 1, 100000000, false, false, ""}},
        {"critic.eval_every", {KeyType::integer, "1000", 1, 10000000, false, false, ""}},
        {"critic.prioritized", {KeyType::boolean, "false", 0, 0, false, false,
                                "TD-error proportional replay"}},

        {"compare.task", {KeyType::text, "di", 0, 0, false, false, "di | dubins"}},
        {"compare.rules", {KeyType::text, "hj,sqrl,cql", 0, 0, false, false, ""}},
        {"compare.seeds", {KeyType::integer, "5", 1, 1000, false, false, ""}},
        {"compare.steps", {KeyType::integer, "25000", 1, 100000000, false, false, ""}},

        {"agent.epsilon", {KeyType::real, "3.0", 0, 1e6, false, false,
                           "gate margin, >= 0"}},
        {"agent.safety", {KeyType::text, "neural", 0, 0, false, false,
                          "neural | static:<grid dir> | none"}},
        {"agent.steps", {KeyType::integer, "50000", 1, 100000000, false, false, ""}},
        {"agent.warmup", {KeyType::integer, "2000", 0, 10000000, false, false, ""}},
        {"agent.eval_interval", {KeyType::integer, "5000", 1, 10000000, false, false, ""}},
        {"agent.eval_episodes", {KeyType::integer, "1", 1, 100, false, false, ""}},
        {"agent.buffer", {KeyType::integer, "250000", 1, 100000000, false, false, ""}},
        {"agent.batch_size", {KeyType::integer, "256", 1, 65536, false, false, ""}},
        {"agent.hidden", {KeyType::int_list, "32,32", 1, 4096, false, false, ""}},
        {"agent.lr_actor", {KeyType::real, "0.0003", 0, 1, true, false, ""}},
        {"agent.lr_critic", {KeyType::real, "0.001", 0, 1, true, false, ""}},
        {"agent.alpha", {KeyType::real, "0.2", 0, 100, false, false, "entropy weight"}},
        {"agent.gamma", {KeyType::real, "0.99", 0, 1, false, true, "performance discount"}},
        {"agent.tau_perf", {KeyType::real, "0.005", 0, 1, true, false, ""}},
        {"agent.tau_safety", {KeyType::real, "0.05", 0, 1, true, false, ""}},
        {"agent.gamma_start", {KeyType::real, "0.85", 0, 1, false, true, "safety anneal"}},
        {"agent.gamma_end", {KeyType::real, "1.0", 0, 1, false, false, ""}},
    };
    return reg;
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("key " + key + " expects a boolean, got '" + v + "'");
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string strip_quotes(std::string v) {
    if (v.size() >= 2 && ((v.front() == '"' && v.back() == '"') ||
                          (v.front() == '\'' && v.back() == '\'')))
        return v.substr(1, v.size() - 2);
    return v;
}

void validate_value(const std::string& key, const KeySpec& spec, const std::string& value) {
    auto check_range = [&](double x) {
        const bool lo_bad = spec.lo_open ? x <= spec.lo : x < spec.lo;
        const bool hi_bad = spec.hi_open ? x >= spec.hi : x > spec.hi;
        if (lo_bad || hi_bad) {
            std::ostringstream os;
            os << "key " << key << " = " << value << " out of range "
               << (spec.lo_open ? "(" : "[") << spec.lo << ", " << spec.hi
               << (spec.hi_open ? ")" : "]");
            throw ConfigError(os.str());
        }
    };
    switch (spec.type) {
        case KeyType::real: {
            char* end = nullptr;
            const double x = std::strtod(value.c_str(), &end);
            if (end == value.c_str() || *end != '\0' || !std::isfinite(x))
                throw ConfigError("key " + key + " expects a number, got '" + value + "'");
            check_range(x);
            break;
        }
        case KeyType::integer: {
            char* end = nullptr;
            const double x = std::strtod(value.c_str(), &end);
            if (end == value.c_str() || *end != '\0' || x != std::floor(x))
                throw ConfigError("key " + key + " expects an integer, got '" + value + "'");
            check_range(x);
            break;
        }
        case KeyType::boolean:
            parse_bool(value, key);
            break;
        case KeyType::text:
            break;
        case KeyType::int_list: {
            std::stringstream ss(value);
            std::string item;
            int count = 0;
            while (std::getline(ss, item, ',')) {
                item = trim(item);
                char* end = nullptr;
                const double x = std::strtod(item.c_str(), &end);
                if (end == item.c_str() || *end != '\0' || x != std::floor(x))
                    throw ConfigError("key " + key + " expects integers, got '" + value + "'");
                check_range(x);
                ++count;
            }
            if (count == 0) throw ConfigError("key " + key + " expects a nonempty list");
            break;
        }
    }
}

}  // namespace

RunConfig::RunConfig() {
    for (const auto& [key, spec] : registry()) values_[key] = spec.def;
}

RunConfig RunConfig::load(const std::string& path) {
    RunConfig cfg;
    if (path.size() > 5 && path.substr(path.size() - 5) == ".json") {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config: " + path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::parse_error&) {
            throw FormatError("bad JSON in " + path);
        }
        const nlohmann::json& conf = j.contains("config") ? j.at("config") : j;
        for (const auto& [key, value] : conf.items())
            cfg.set(key, value.is_string() ? value.get<std::string>() : value.dump());
        return cfg;
    }
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[' && line.back() == ']') {
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        const std::string value = strip_quotes(trim(line.substr(eq + 1)));
        if (!section.empty()) key = section + "." + key;
        cfg.set(key, value);
    }
    return cfg;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    const auto it = registry().find(key);
    if (it == registry().end()) throw ConfigError("unknown config key: " + key);
    validate_value(key, it->second, value);
    values_[key] = value;
}

bool RunConfig::has(const std::string& key) const { return values_.count(key) > 0; }

double RunConfig::get_double(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key: " + key);
    return std::strtod(it->second.c_str(), nullptr);
}

long RunConfig::get_long(const std::string& key) const {
    return static_cast<long>(get_double(key));
}

bool RunConfig::get_bool(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key: " + key);
    return parse_bool(it->second, key);
}

const std::string& RunConfig::get_string(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key: " + key);
    return it->second;
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
    const std::string& v = get_string(key);
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::atoi(trim(item).c_str()));
    return out;
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j;
    for (const auto& [k, v] : values_) j[k] = v;
    return j;
}

const std::map<std::string, std::string>& RunConfig::documented_defaults() {
    static const std::map<std::string, std::string> docs = [] {
        std::map<std::string, std::string> out;
        for (const auto& [key, spec] : registry()) {
            std::string doc = spec.def;
            if (spec.doc[0] != '\0') doc += "  # " + std::string(spec.doc);
            out[key] = doc;
        }
        return out;
    }();
    return docs;
}

void RunManifest::write(const std::string& path) const {
    nlohmann::json j;
    j["tool"] = kToolVersion;
    j["command"] = command;
    j["config"] = config;
    j["seeds"] = seeds;
    j["artifacts"] = artifacts;
    j["wall_seconds"] = wall_seconds;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest: " + path);
    out << j.dump(2) << "\n";
}

}  // namespace reachguard
