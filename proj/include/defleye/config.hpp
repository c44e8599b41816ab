#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "defleye/error.hpp"

namespace defleye {

/// Structured text config: '#' comments, [section] headers, key = value lines.
/// Values are numbers, bare/quoted strings, or bracketed number lists.
class Config {
public:
    static Config parse_file(const std::string& path);
    static Config parse_string(const std::string& text, const std::string& origin = "<string>");

    bool has(const std::string& section, const std::string& key) const;
    std::vector<std::string> sections_matching(const std::string& prefix) const;

    double get_double(const std::string& section, const std::string& key) const;
    double get_double(const std::string& section, const std::string& key, double fallback) const;
    int get_int(const std::string& section, const std::string& key) const;
    int get_int(const std::string& section, const std::string& key, int fallback) const;
    std::string get_string(const std::string& section, const std::string& key) const;
    std::string get_string(const std::string& section, const std::string& key,
                           const std::string& fallback) const;
    std::vector<double> get_list(const std::string& section, const std::string& key) const;
    std::vector<double> get_list(const std::string& section, const std::string& key,
                                 const std::vector<double>& fallback) const;

    void set(const std::string& section, const std::string& key, const std::string& value);
    void set(const std::string& section, const std::string& key, double value);
    void set(const std::string& section, const std::string& key,
             const std::vector<double>& values);

    /// Serializes back to the structured text form, with an optional leading
    /// comment block (one line per entry, '#' added automatically).
    std::string serialize(const std::vector<std::string>& header_comments = {}) const;

    const std::string& origin() const { return origin_; }

private:
    const std::string& raw(const std::string& section, const std::string& key) const;
    std::map<std::string, std::map<std::string, std::string>> sections_;
    std::vector<std::string> section_order_;
    std::string origin_;
};

}  // namespace defleye
