#include "knpl/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "knpl/error.hpp"
#include "knpl/rng.hpp"

namespace knpl::config {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

[[noreturn]] void bad_line(std::size_t lineno, const std::string& line, const std::string& why) {
    raise(ErrorKind::Parse,
          "config line " + std::to_string(lineno) + ": " + why + ": \"" + line + "\"");
}

} // namespace

KvConfig KvConfig::parse(const std::string& text) {
    KvConfig out;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    bool in_section = false;
    std::size_t lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        if (!raw.empty() && raw.back() == '\r') raw.pop_back();
        const std::string line = trim(raw);
        if (line.empty() || line[0] == '#') continue;
        if (line[0] == '[') {
            const std::size_t close = line.find(']');
            if (close == std::string::npos) bad_line(lineno, raw, "unterminated section header");
            if (trim(line.substr(close + 1)).size() > 0)
                bad_line(lineno, raw, "text after section header");
            section = trim(line.substr(1, close - 1));
            if (section.empty()) bad_line(lineno, raw, "empty section name");
            in_section = true;
            out.sections_[section]; // a header alone still declares the section
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) bad_line(lineno, raw, "expected key = value");
        if (!in_section) bad_line(lineno, raw, "key outside any section");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) bad_line(lineno, raw, "empty key");
        const std::string value = trim(line.substr(eq + 1));
        auto& kvs = out.sections_[section];
        if (kvs.count(key))
            bad_line(lineno, raw, "duplicate key \"" + key + "\" in [" + section + "]");
        kvs[key] = value;
    }
    return out;
}

KvConfig KvConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorKind::Io, "cannot open config " + path.string());
    std::ostringstream body;
    body << in.rdbuf();
    return parse(body.str());
}

std::string KvConfig::canonical() const {
    std::string out;
    bool first = true;
    for (const auto& [name, kvs] : sections_) {
        if (!first) out += '\n';
        first = false;
        out += '[' + name + "]\n";
        for (const auto& [k, v] : kvs) out += k + " = " + v + '\n';
    }
    return out;
}

std::uint64_t KvConfig::hash() const { return fnv1a64(canonical()); }

std::uint64_t KvConfig::section_hash(const std::vector<std::string>& sections) const {
    std::vector<std::string> sorted = sections;
    std::sort(sorted.begin(), sorted.end());
    std::string blob;
    for (const auto& name : sorted) {
        auto it = sections_.find(name);
        if (it == sections_.end())
            raise(ErrorKind::Config, "section hash over unknown section [" + name + "]");
        blob += '[' + name + "]\n";
        for (const auto& [k, v] : it->second) blob += k + " = " + v + '\n';
    }
    return fnv1a64(blob);
}

bool KvConfig::has(const std::string& section, const std::string& key) const {
    auto it = sections_.find(section);
    return it != sections_.end() && it->second.count(key) > 0;
}

bool KvConfig::has_section(const std::string& section) const {
    return sections_.count(section) > 0;
}

const std::string& KvConfig::get(const std::string& section, const std::string& key) const {
    auto it = sections_.find(section);
    if (it != sections_.end()) {
        auto kv = it->second.find(key);
        if (kv != it->second.end()) return kv->second;
    }
    raise(ErrorKind::Config, "missing config entry [" + section + "] " + key);
}

std::string KvConfig::get_or(const std::string& section, const std::string& key,
                             const std::string& fallback) const {
    return has(section, key) ? get(section, key) : fallback;
}

long long KvConfig::get_int(const std::string& section, const std::string& key) const {
    const std::string& v = get(section, key);
    long long out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        raise(ErrorKind::Parse, "[" + section + "] " + key + " is not an integer: " + v);
    return out;
}

std::uint64_t KvConfig::get_u64(const std::string& section, const std::string& key) const {
    const std::string& v = get(section, key);
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        raise(ErrorKind::Parse, "[" + section + "] " + key + " is not an unsigned integer: " + v);
    return out;
}

double KvConfig::get_double(const std::string& section, const std::string& key) const {
    const std::string& v = get(section, key);
    if (v.empty()) raise(ErrorKind::Parse, "[" + section + "] " + key + " is empty");
    char* end = nullptr;
    const double out = std::strtod(v.c_str(), &end);
    if (end != v.c_str() + v.size())
        raise(ErrorKind::Parse, "[" + section + "] " + key + " is not a number: " + v);
    return out;
}

bool KvConfig::get_bool(const std::string& section, const std::string& key) const {
    const std::string& v = get(section, key);
    if (v == "true") return true;
    if (v == "false") return false;
    raise(ErrorKind::Parse, "[" + section + "] " + key + " is not true/false: " + v);
}

void KvConfig::set(const std::string& section, const std::string& key,
                   const std::string& value) {
    if (section.empty()) raise(ErrorKind::Config, "empty section name");
    if (key.empty()) raise(ErrorKind::Config, "empty key");
    sections_[section][key] = value;
}

void KvConfig::set_int(const std::string& section, const std::string& key, long long value) {
    set(section, key, std::to_string(value));
}

void KvConfig::set_double(const std::string& section, const std::string& key, double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    set(section, key, buf);
}

void KvConfig::set_bool(const std::string& section, const std::string& key, bool value) {
    set(section, key, value ? "true" : "false");
}

void KvConfig::set_u64(const std::string& section, const std::string& key,
                       std::uint64_t value) {
    set(section, key, std::to_string(value));
}

std::vector<std::string> KvConfig::section_names() const {
    std::vector<std::string> out;
    for (const auto& [name, kvs] : sections_) out.push_back(name);
    return out;
}

std::vector<std::string> KvConfig::keys(const std::string& section) const {
    auto it = sections_.find(section);
    if (it == sections_.end())
        raise(ErrorKind::Config, "unknown section [" + section + "]");
    std::vector<std::string> out;
    for (const auto& [k, v] : it->second) out.push_back(k);
    return out;
}

} // namespace knpl::config
