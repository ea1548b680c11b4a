#pragma once

#include <map>
#include <set>
#include <string>

#include "megcast/common.hpp"

namespace megcast {

// Sectioned key-value configuration. The canonical text form lists sections
// and keys in sorted order, one "key = value" per line; parsing that form
// back yields an identical tree.
struct RunConfig {
    std::map<std::string, std::map<std::string, std::string>> sections;

    bool has(const std::string& sec, const std::string& key) const;
    const std::string& get(const std::string& sec, const std::string& key) const;  // ConfigError if absent
    std::string get_or(const std::string& sec, const std::string& key, const std::string& fallback) const;

    int64_t get_int(const std::string& sec, const std::string& key) const;
    int64_t get_int(const std::string& sec, const std::string& key, int64_t fallback) const;
    double get_double(const std::string& sec, const std::string& key) const;
    double get_double(const std::string& sec, const std::string& key, double fallback) const;
    bool get_bool(const std::string& sec, const std::string& key) const;
    bool get_bool(const std::string& sec, const std::string& key, bool fallback) const;

    void set(const std::string& sec, const std::string& key, const std::string& value);
    // "section.key=value" as given on the command line.
    void set_dotted(const std::string& assignment);

    std::string serialise() const;

    bool operator==(const RunConfig&) const = default;

    static RunConfig parse_text(const std::string& text);  // ConfigError on syntax
    static RunConfig load_file(const std::string& path);   // IoError when unreadable
};

// section -> allowed keys. Unknown sections or keys raise ConfigError.
using ConfigSchema = std::map<std::string, std::set<std::string>>;
void check_known_keys(const RunConfig& cfg, const ConfigSchema& schema);

}  // namespace megcast
