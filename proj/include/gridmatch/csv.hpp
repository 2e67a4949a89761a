#pragma once

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gridmatch::csv {

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline double to_double(const std::string& s, const std::string& context) {
    try {
        std::size_t pos = 0;
        double v = std::stod(trim(s), &pos);
        if (pos != trim(s).size()) throw std::invalid_argument("trailing junk");
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("bad number '" + s + "' in " + context);
    }
}

inline int to_int(const std::string& s, const std::string& context) {
    try {
        std::size_t pos = 0;
        int v = std::stoi(trim(s), &pos);
        if (pos != trim(s).size()) throw std::invalid_argument("trailing junk");
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("bad integer '" + s + "' in " + context);
    }
}

// Parse "key=value,key=value" directive lines such as "#base_mva=1,slack=1".
inline std::vector<std::pair<std::string, std::string>> parse_directives(const std::string& line) {
    std::vector<std::pair<std::string, std::string>> out;
    std::string body = line;
    if (!body.empty() && body[0] == '#') body = body.substr(1);
    for (const auto& kv : split(body)) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw std::runtime_error("bad directive '" + kv + "'");
        out.emplace_back(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
    return out;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << content;
}

// Fixed formatting for CSV output so repeated runs are byte-identical.
inline std::string num(double v, int precision = 9) {
    if (v == 0.0) v = 0.0;  // normalize -0
    std::ostringstream ss;
    ss.precision(precision);
    ss << v;
    return ss.str();
}

}  // namespace gridmatch::csv
