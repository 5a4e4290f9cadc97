#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace knpl::config {

// Flat sectioned key-value text. Grammar per line: blank and '#' comment
// lines are skipped; "[name]" opens a section; "key = value" (split at the
// first '=', both sides trimmed) adds an entry to the open section. Keys
// before any section header and duplicate keys are rejected. Values are
// plain text to end of line, no quoting or escapes.
//
// The canonical form sorts sections and keys, renders every entry as
// "key = value", and separates section blocks with one blank line, so equal
// configurations always hash equal.
class KvConfig {
public:
    static KvConfig parse(const std::string& text);
    static KvConfig load(const std::filesystem::path& path);

    std::string canonical() const;
    std::uint64_t hash() const; // fnv-1a of the canonical form

    // Hash of the canonical lines of a subset of sections; lets pipeline
    // stages depend only on the sections they actually read. Unknown section
    // names are an error so dependency lists cannot silently rot.
    std::uint64_t section_hash(const std::vector<std::string>& sections) const;

    bool has(const std::string& section, const std::string& key) const;
    bool has_section(const std::string& section) const;
    const std::string& get(const std::string& section, const std::string& key) const;
    std::string get_or(const std::string& section, const std::string& key,
                       const std::string& fallback) const;

    long long get_int(const std::string& section, const std::string& key) const;
    double get_double(const std::string& section, const std::string& key) const;
    bool get_bool(const std::string& section, const std::string& key) const;
    std::uint64_t get_u64(const std::string& section, const std::string& key) const;

    void set(const std::string& section, const std::string& key, const std::string& value);
    void set_int(const std::string& section, const std::string& key, long long value);
    void set_double(const std::string& section, const std::string& key, double value);
    void set_bool(const std::string& section, const std::string& key, bool value);
    void set_u64(const std::string& section, const std::string& key, std::uint64_t value);

    std::vector<std::string> section_names() const;
    std::vector<std::string> keys(const std::string& section) const;

private:
    std::map<std::string, std::map<std::string, std::string>> sections_;
};

} // namespace knpl::config
