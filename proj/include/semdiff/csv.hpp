#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "semdiff/text.hpp"

namespace semdiff {

/// RFC-4180 style CSV writer: header row, '.' decimal, UTF-8, LF line ends.
/// Doubles are written with 17 significant digits so reruns are byte-stable.
class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header) : header_(std::move(header)) {}

    void add_row(std::vector<std::string> row) {
        if (row.size() != header_.size())
            throw std::invalid_argument("CsvWriter: row width does not match header");
        rows_.push_back(std::move(row));
    }

    std::string to_string() const {
        std::ostringstream os;
        write_line(os, header_);
        for (const auto& r : rows_) write_line(os, r);
        return os.str();
    }

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("CsvWriter: cannot open " + path);
        f << to_string();
    }

    static std::string field(double x) {
        if (std::isnan(x)) return "nan";
        return format_g17(x);
    }
    static std::string field(int x) { return std::to_string(x); }
    static std::string field(std::uint64_t x) { return std::to_string(x); }
    static std::string field(bool x) { return x ? "1" : "0"; }

private:
    static void write_line(std::ostringstream& os, const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) os << ',';
            os << quoted(cells[i]);
        }
        os << '\n';
    }
    static std::string quoted(const std::string& s) {
        if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
        std::string out = "\"";
        for (char c : s) {
            if (c == '"') out += '"';
            out += c;
        }
        out += '"';
        return out;
    }

    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

/// Minimal CSV reader for the files this project writes.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        throw std::invalid_argument("CsvTable: missing column " + name);
    }
};

inline CsvTable parse_csv(const std::string& text) {
    CsvTable t;
    std::vector<std::string> row;
    std::string cell;
    bool in_quotes = false;
    bool first_row = true;
    const auto end_cell = [&]() {
        row.push_back(cell);
        cell.clear();
    };
    const auto end_row = [&]() {
        end_cell();
        if (first_row) {
            t.header = row;
            first_row = false;
        } else {
            t.rows.push_back(row);
        }
        row.clear();
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    cell += '"';
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                cell += c;
            }
        } else if (c == '"') {
            in_quotes = true;
        } else if (c == ',') {
            end_cell();
        } else if (c == '\n') {
            end_row();
        } else if (c != '\r') {
            cell += c;
        }
    }
    if (!cell.empty() || !row.empty()) end_row();
    return t;
}

inline CsvTable load_csv(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_csv: cannot open " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return parse_csv(os.str());
}

} // namespace semdiff
