#ifndef ACTIMOOD_CSV_HPP
#define ACTIMOOD_CSV_HPP

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

namespace actimood {
namespace csv {

// Input that fails structural validation (bad header, malformed row).
// The CLI maps this to exit code 2.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

inline double parse_double(const std::string& s, std::size_t row, const std::string& col) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw ValidationError("row " + std::to_string(row) + ": column '" + col +
                              "' is not a number: '" + s + "'");
    return v;
}

inline std::int64_t parse_int(const std::string& s, std::size_t row, const std::string& col) {
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw ValidationError("row " + std::to_string(row) + ": column '" + col +
                              "' is not an integer: '" + s + "'");
    return v;
}

// Shortest representation that round-trips exactly; keeps emitted files
// byte-stable across runs.
inline std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

inline void expect_header(const std::vector<std::string>& got,
                          const std::vector<std::string>& want, const std::string& file) {
    if (got.size() != want.size())
        throw ValidationError(file + ": expected " + std::to_string(want.size()) +
                              " header columns, found " + std::to_string(got.size()));
    for (std::size_t i = 0; i < want.size(); ++i)
        if (got[i] != want[i])
            throw ValidationError(file + ": header column " + std::to_string(i + 1) +
                                  " should be '" + want[i] + "', found '" + got[i] + "'");
}

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open input file: " + path);
    return in;
}

inline std::ofstream open_output(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open output file: " + path);
    return out;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace csv
}  // namespace actimood

#endif
