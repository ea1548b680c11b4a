#include "megcast/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace megcast {

namespace {

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

bool valid_name(const std::string& s) {
    if (s.empty()) return false;
    for (const char c : s)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') return false;
    return true;
}

[[noreturn]] void bad_value(const std::string& sec, const std::string& key, const char* want,
                            const std::string& got) {
    throw ConfigError("bad " + std::string(want) + " for " + sec + "." + key + ": '" + got + "'");
}

}  // namespace

bool RunConfig::has(const std::string& sec, const std::string& key) const {
    const auto s = sections.find(sec);
    return s != sections.end() && s->second.count(key) > 0;
}

const std::string& RunConfig::get(const std::string& sec, const std::string& key) const {
    const auto s = sections.find(sec);
    if (s != sections.end()) {
        const auto k = s->second.find(key);
        if (k != s->second.end()) return k->second;
    }
    throw ConfigError("missing required key " + sec + "." + key);
}

std::string RunConfig::get_or(const std::string& sec, const std::string& key,
                              const std::string& fallback) const {
    return has(sec, key) ? get(sec, key) : fallback;
}

int64_t RunConfig::get_int(const std::string& sec, const std::string& key) const {
    const std::string& v = get(sec, key);
    char* end = nullptr;
    const int64_t out = std::strtoll(v.c_str(), &end, 10);
    if (v.empty() || end != v.c_str() + v.size()) bad_value(sec, key, "integer", v);
    return out;
}

int64_t RunConfig::get_int(const std::string& sec, const std::string& key, int64_t fallback) const {
    return has(sec, key) ? get_int(sec, key) : fallback;
}

double RunConfig::get_double(const std::string& sec, const std::string& key) const {
    const std::string& v = get(sec, key);
    char* end = nullptr;
    const double out = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size()) bad_value(sec, key, "number", v);
    return out;
}

double RunConfig::get_double(const std::string& sec, const std::string& key, double fallback) const {
    return has(sec, key) ? get_double(sec, key) : fallback;
}

bool RunConfig::get_bool(const std::string& sec, const std::string& key) const {
    const std::string& v = get(sec, key);
    if (v == "true" || v == "yes" || v == "1") return true;
    if (v == "false" || v == "no" || v == "0") return false;
    bad_value(sec, key, "boolean", v);
}

bool RunConfig::get_bool(const std::string& sec, const std::string& key, bool fallback) const {
    return has(sec, key) ? get_bool(sec, key) : fallback;
}

void RunConfig::set(const std::string& sec, const std::string& key, const std::string& value) {
    if (!valid_name(sec)) throw ConfigError("bad section name '" + sec + "'");
    if (!valid_name(key)) throw ConfigError("bad key name '" + key + "'");
    sections[sec][key] = value;
}

void RunConfig::set_dotted(const std::string& assignment) {
    const size_t eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override needs section.key=value: '" + assignment + "'");
    const std::string path = trim(assignment.substr(0, eq));
    const size_t dot = path.find('.');
    if (dot == std::string::npos) throw ConfigError("override needs section.key=value: '" + assignment + "'");
    set(path.substr(0, dot), path.substr(dot + 1), trim(assignment.substr(eq + 1)));
}

std::string RunConfig::serialise() const {
    std::string out;
    for (const auto& [sec, keys] : sections) {
        out += "[" + sec + "]\n";
        for (const auto& [key, value] : keys) out += key + " = " + value + "\n";
        out += "\n";
    }
    return out;
}

RunConfig RunConfig::parse_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.front() == '[') {
            if (t.back() != ']') throw ConfigError("unterminated section header at line " + std::to_string(line_no));
            section = t.substr(1, t.size() - 2);
            if (!valid_name(section)) throw ConfigError("bad section name at line " + std::to_string(line_no));
            cfg.sections[section];
            continue;
        }
        const size_t eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError("expected key = value at line " + std::to_string(line_no));
        if (section.empty()) throw ConfigError("key outside any section at line " + std::to_string(line_no));
        const std::string key = trim(t.substr(0, eq));
        if (!valid_name(key)) throw ConfigError("bad key name at line " + std::to_string(line_no));
        if (cfg.sections[section].count(key))
            throw ConfigError("duplicate key " + section + "." + key + " at line " + std::to_string(line_no));
        cfg.sections[section][key] = trim(t.substr(eq + 1));
    }
    return cfg;
}

RunConfig RunConfig::load_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_text(buf.str());
}

void check_known_keys(const RunConfig& cfg, const ConfigSchema& schema) {
    for (const auto& [sec, keys] : cfg.sections) {
        const auto s = schema.find(sec);
        if (s == schema.end()) throw ConfigError("unknown config section [" + sec + "]");
        for (const auto& [key, value] : keys)
            if (!s->second.count(key)) throw ConfigError("unknown config key " + sec + "." + key);
    }
}

}  // namespace megcast
