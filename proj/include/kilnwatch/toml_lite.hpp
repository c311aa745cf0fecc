#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace kw::config {

// The TOML subset used by rules, label-user and CLI config files: `[table]`,
// `[[array-of-tables]]`, and `key = value` with string, integer, float, boolean or
// string-array values. Dotted keys, inline tables and multi-line strings are not supported.
using Value = std::variant<std::string, std::int64_t, double, bool, std::vector<std::string>>;

class Table {
public:
    void set(const std::string& key, Value v) { values_[key] = std::move(v); }
    bool has(const std::string& key) const { return values_.contains(key); }
    const std::map<std::string, Value>& values() const noexcept { return values_; }

    std::optional<std::string> get_string(const std::string& key) const;
    std::optional<double> get_number(const std::string& key) const;
    std::optional<std::int64_t> get_int(const std::string& key) const;
    std::optional<bool> get_bool(const std::string& key) const;
    // A string array, or a single string split on commas.
    std::optional<std::vector<std::string>> get_string_list(const std::string& key) const;

private:
    std::map<std::string, Value> values_;
};

struct Document {
    Table root;
    std::map<std::string, Table> tables;
    std::map<std::string, std::vector<Table>> arrays;

    const Table* table(const std::string& name) const {
        auto it = tables.find(name);
        return it == tables.end() ? nullptr : &it->second;
    }
    const std::vector<Table>& array(const std::string& name) const;
};

Document parse(std::istream& in);
Document parse_file(const std::filesystem::path& path);

}  // namespace kw::config
