#include "kilnwatch/toml_lite.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <sstream>

#include "kilnwatch/errors.hpp"

namespace kw::config {

namespace {

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

// Strips a trailing comment that is not inside a quoted string.
std::string strip_comment(const std::string& line) {
    char quote = 0;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quote) {
            if (c == '\\' && quote == '"') ++i;
            else if (c == quote) quote = 0;
        } else if (c == '"' || c == '\'') {
            quote = c;
        } else if (c == '#') {
            return line.substr(0, i);
        }
    }
    return line;
}

std::string parse_string(std::string_view v, std::size_t line) {
    const char q = v.front();
    if (v.size() < 2 || v.back() != q) throw ParseError("unterminated string", line);
    std::string out;
    for (std::size_t i = 1; i + 1 < v.size(); ++i) {
        if (q == '"' && v[i] == '\\' && i + 2 < v.size()) {
            const char e = v[++i];
            switch (e) {
                case 'n': out += '\n'; break;
                case 't': out += '\t'; break;
                case '"': out += '"'; break;
                case '\\': out += '\\'; break;
                default: throw ParseError(std::string("unsupported escape \\") + e, line);
            }
        } else {
            out += v[i];
        }
    }
    return out;
}

Value parse_value(const std::string& raw, std::size_t line) {
    const std::string v = trim(raw);
    if (v.empty()) throw ParseError("missing value", line);
    if (v.front() == '"' || v.front() == '\'') return parse_string(v, line);
    if (v == "true") return true;
    if (v == "false") return false;
    if (v.front() == '[') {
        if (v.back() != ']') throw ParseError("unterminated array", line);
        std::vector<std::string> items;
        std::string inner = v.substr(1, v.size() - 2);
        std::size_t i = 0;
        while (i < inner.size()) {
            while (i < inner.size() && (inner[i] == ' ' || inner[i] == ',' || inner[i] == '\t')) ++i;
            if (i >= inner.size()) break;
            if (inner[i] == '"' || inner[i] == '\'') {
                const char q = inner[i];
                auto end = inner.find(q, i + 1);
                if (end == std::string::npos) throw ParseError("unterminated string in array", line);
                items.push_back(inner.substr(i + 1, end - i - 1));
                i = end + 1;
            } else {
                auto end = inner.find(',', i);
                items.push_back(trim(inner.substr(i, end == std::string::npos ? std::string::npos : end - i)));
                i = end == std::string::npos ? inner.size() : end;
            }
        }
        return items;
    }
    std::string num;
    std::copy_if(v.begin(), v.end(), std::back_inserter(num), [](char c) { return c != '_'; });
    const bool is_float = num.find_first_of(".eE") != std::string::npos;
    if (!is_float) {
        std::int64_t i = 0;
        auto [p, ec] = std::from_chars(num.data(), num.data() + num.size(), i);
        if (ec == std::errc() && p == num.data() + num.size()) return i;
    }
    try {
        std::size_t used = 0;
        double d = std::stod(num, &used);
        if (used == num.size()) return d;
    } catch (const std::exception&) {
    }
    throw ParseError("cannot parse value `" + v + "`", line);
}

}  // namespace

std::optional<std::string> Table::get_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    if (auto* s = std::get_if<std::string>(&it->second)) return *s;
    throw ValidationError("config key `" + key + "` must be a string");
}

std::optional<double> Table::get_number(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    if (auto* d = std::get_if<double>(&it->second)) return *d;
    if (auto* i = std::get_if<std::int64_t>(&it->second)) return static_cast<double>(*i);
    throw ValidationError("config key `" + key + "` must be a number");
}

std::optional<std::int64_t> Table::get_int(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    if (auto* i = std::get_if<std::int64_t>(&it->second)) return *i;
    throw ValidationError("config key `" + key + "` must be an integer");
}

std::optional<bool> Table::get_bool(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    if (auto* b = std::get_if<bool>(&it->second)) return *b;
    throw ValidationError("config key `" + key + "` must be a boolean");
}

std::optional<std::vector<std::string>> Table::get_string_list(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    if (auto* l = std::get_if<std::vector<std::string>>(&it->second)) return *l;
    if (auto* s = std::get_if<std::string>(&it->second)) {
        std::vector<std::string> out;
        std::stringstream ss(*s);
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = trim(item);
            if (!item.empty()) out.push_back(item);
        }
        return out;
    }
    throw ValidationError("config key `" + key + "` must be a string or string array");
}

const std::vector<Table>& Document::array(const std::string& name) const {
    static const std::vector<Table> kEmpty;
    auto it = arrays.find(name);
    return it == arrays.end() ? kEmpty : it->second;
}

Document parse(std::istream& in) {
    Document doc;
    Table* current = &doc.root;
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = trim(strip_comment(raw));
        if (line.empty()) continue;
        if (line.rfind("[[", 0) == 0) {
            if (line.size() < 5 || line.substr(line.size() - 2) != "]]") throw ParseError("bad array-table header", line_no);
            auto& arr = doc.arrays[trim(line.substr(2, line.size() - 4))];
            arr.emplace_back();
            current = &arr.back();
            continue;
        }
        if (line.front() == '[') {
            if (line.back() != ']') throw ParseError("bad table header", line_no);
            current = &doc.tables[trim(line.substr(1, line.size() - 2))];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError("expected key = value", line_no);
        std::string key = trim(line.substr(0, eq));
        if (key.size() >= 2 && (key.front() == '"' || key.front() == '\'')) key = parse_string(key, line_no);
        if (key.empty()) throw ParseError("empty key", line_no);
        current->set(key, parse_value(line.substr(eq + 1), line_no));
    }
    return doc;
}

Document parse_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return parse(in);
}

}  // namespace kw::config
