#pragma once

// Minimal numeric CSV reading and writing. Fields are split on a single
// delimiter character; the first row is a header.

#include "isodrl/core.hpp"

#include <charconv>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace isodrl {

struct NumericTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;

    std::size_t column(std::string_view name) const {
        for (std::size_t k = 0; k < header.size(); ++k)
            if (header[k] == name) return k;
        fail(ErrorKind::schema_error, "missing column '" + std::string(name) + "'");
    }

    std::vector<double> column_values(std::size_t k) const {
        std::vector<double> out;
        out.reserve(rows.size());
        for (const auto& row : rows) out.push_back(row.at(k));
        return out;
    }
};

namespace detail {

inline std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\"");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\"");
    return std::string(s.substr(first, last - first + 1));
}

inline std::vector<std::string> split(std::string_view line, char delimiter) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(delimiter, start);
        out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline char sniff_delimiter(std::string_view header_line) {
    std::size_t semis = 0, commas = 0;
    for (char c : header_line) {
        semis += c == ';';
        commas += c == ',';
    }
    return semis > commas ? ';' : ',';
}

} // namespace detail

/// Reads a headered numeric CSV. The delimiter is detected from the header
/// when not given.
inline NumericTable read_numeric_csv(const std::string& path, std::optional<char> delimiter = std::nullopt) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io_error, "cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) fail(ErrorKind::io_error, "'" + path + "' is empty");
    const char delim = delimiter.value_or(detail::sniff_delimiter(line));

    NumericTable table;
    table.header = detail::split(line, delim);
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto fields = detail::split(line, delim);
        if (fields.size() != table.header.size())
            fail(ErrorKind::schema_error, path + ":" + std::to_string(line_no) + ": expected " +
                                              std::to_string(table.header.size()) + " fields, found " +
                                              std::to_string(fields.size()));
        std::vector<double> row(fields.size());
        for (std::size_t k = 0; k < fields.size(); ++k) {
            const std::string& f = fields[k];
            const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), row[k]);
            if (ec != std::errc() || ptr != f.data() + f.size())
                fail(ErrorKind::io_error, path + ":" + std::to_string(line_no) + ": column " + std::to_string(k + 1) +
                                              " ('" + table.header[k] + "') is not numeric: '" + f + "'");
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

/// Reads a single numeric column by name, or the only column when the file
/// has one.
inline std::vector<double> read_column(const std::string& path, const std::string& name = "") {
    const NumericTable t = read_numeric_csv(path);
    if (name.empty()) {
        if (t.header.size() != 1)
            fail(ErrorKind::schema_error, "'" + path + "' has several columns; name the one to use");
        return t.column_values(0);
    }
    return t.column_values(t.column(name));
}

inline std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

inline void write_numeric_csv(std::ostream& out, const std::vector<std::string>& header,
                              const std::vector<std::vector<double>>& columns) {
    for (std::size_t k = 0; k < header.size(); ++k) out << (k ? "," : "") << header[k];
    out << '\n';
    const std::size_t rows = columns.empty() ? 0 : columns[0].size();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t k = 0; k < columns.size(); ++k) out << (k ? "," : "") << format_double(columns[k][r]);
        out << '\n';
    }
}

} // namespace isodrl
