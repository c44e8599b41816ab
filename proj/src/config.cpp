#include "defleye/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace defleye {

namespace {

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::string strip_comment(const std::string& line) {
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') quoted = !quoted;
        if (line[i] == '#' && !quoted) return line.substr(0, i);
    }
    return line;
}

std::string format_number(double v) {
    char buf[48];
    if (v == static_cast<long long>(v) && std::abs(v) < 1e15)
        std::snprintf(buf, sizeof(buf), "%lld", static_cast<long long>(v));
    else
        std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

Config Config::parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_string(ss.str(), path);
}

Config Config::parse_string(const std::string& text, const std::string& origin) {
    Config cfg;
    cfg.origin_ = origin;
    std::istringstream in(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(strip_comment(line));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError(origin + ":" + std::to_string(line_no) + ": unterminated section");
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty())
                throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty section name");
            if (!cfg.sections_.count(section)) cfg.section_order_.push_back(section);
            cfg.sections_[section];
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
            value = value.substr(1, value.size() - 2);
        if (!cfg.sections_.count(section)) cfg.section_order_.push_back(section);
        cfg.sections_[section][key] = value;
    }
    return cfg;
}

bool Config::has(const std::string& section, const std::string& key) const {
    auto it = sections_.find(section);
    return it != sections_.end() && it->second.count(key) > 0;
}

std::vector<std::string> Config::sections_matching(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& name : section_order_)
        if (name.rfind(prefix, 0) == 0) out.push_back(name);
    return out;
}

const std::string& Config::raw(const std::string& section, const std::string& key) const {
    auto it = sections_.find(section);
    if (it == sections_.end())
        throw ConfigError(origin_ + ": missing section [" + section + "]");
    auto kt = it->second.find(key);
    if (kt == it->second.end())
        throw ConfigError(origin_ + ": missing key '" + key + "' in [" + section + "]");
    return kt->second;
}

double Config::get_double(const std::string& section, const std::string& key) const {
    const std::string& s = raw(section, key);
    size_t pos = 0;
    double v;
    try {
        v = std::stod(s, &pos);
    } catch (...) {
        throw ConfigError(origin_ + ": [" + section + "] " + key + " is not a number: " + s);
    }
    if (trim(s.substr(pos)).size())
        throw ConfigError(origin_ + ": [" + section + "] " + key + " is not a number: " + s);
    return v;
}

double Config::get_double(const std::string& section, const std::string& key,
                          double fallback) const {
    return has(section, key) ? get_double(section, key) : fallback;
}

int Config::get_int(const std::string& section, const std::string& key) const {
    const double v = get_double(section, key);
    const int i = static_cast<int>(v);
    if (v != i)
        throw ConfigError(origin_ + ": [" + section + "] " + key + " must be an integer");
    return i;
}

int Config::get_int(const std::string& section, const std::string& key, int fallback) const {
    return has(section, key) ? get_int(section, key) : fallback;
}

std::string Config::get_string(const std::string& section, const std::string& key) const {
    return raw(section, key);
}

std::string Config::get_string(const std::string& section, const std::string& key,
                               const std::string& fallback) const {
    return has(section, key) ? raw(section, key) : fallback;
}

std::vector<double> Config::get_list(const std::string& section, const std::string& key) const {
    std::string s = trim(raw(section, key));
    if (s.size() < 2 || s.front() != '[' || s.back() != ']')
        throw ConfigError(origin_ + ": [" + section + "] " + key + " must be a [list]");
    s = s.substr(1, s.size() - 2);
    std::vector<double> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        try {
            out.push_back(std::stod(item));
        } catch (...) {
            throw ConfigError(origin_ + ": [" + section + "] " + key + " has non-numeric item: " +
                              item);
        }
    }
    return out;
}

std::vector<double> Config::get_list(const std::string& section, const std::string& key,
                                     const std::vector<double>& fallback) const {
    return has(section, key) ? get_list(section, key) : fallback;
}

void Config::set(const std::string& section, const std::string& key, const std::string& value) {
    if (!sections_.count(section)) section_order_.push_back(section);
    sections_[section][key] = value;
}

void Config::set(const std::string& section, const std::string& key, double value) {
    set(section, key, format_number(value));
}

void Config::set(const std::string& section, const std::string& key,
                 const std::vector<double>& values) {
    std::string s = "[";
    for (size_t i = 0; i < values.size(); ++i) {
        if (i) s += ", ";
        s += format_number(values[i]);
    }
    s += "]";
    set(section, key, s);
}

std::string Config::serialize(const std::vector<std::string>& header_comments) const {
    std::string out;
    for (const auto& c : header_comments) out += "# " + c + "\n";
    if (!header_comments.empty()) out += "\n";
    for (const auto& name : section_order_) {
        out += "[" + name + "]\n";
        for (const auto& [key, value] : sections_.at(name)) {
            const bool needs_quotes =
                !value.empty() && value.find_first_of("#[]") != std::string::npos &&
                value.front() != '[';
            out += key + " = " + (needs_quotes ? "\"" + value + "\"" : value) + "\n";
        }
        out += "\n";
    }
    return out;
}

}  // namespace defleye
