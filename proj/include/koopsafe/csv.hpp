#pragma once

// Small CSV layer shared by the corpus files and the governor logs. Numbers
// are written in the shortest form that parses back to the identical double,
// so files round-trip without loss; '#' lines before the header carry
// provenance metadata and are preserved on read.

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "koopsafe/errors.hpp"

namespace koopsafe {

inline std::string csv_num(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string csv_int(long long v) { return std::to_string(v); }

class CsvWriter {
  public:
    explicit CsvWriter(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw Error("cannot open '" + path + "' for writing");
    }

    void comment(const std::string& text) { out_ << "# " << text << "\n"; }

    void row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << ',';
            out_ << cells[i];
        }
        out_ << '\n';
    }

    void close() { out_.close(); }

  private:
    std::ofstream out_;
};

struct CsvTable {
    std::vector<std::string> comments;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        throw FormatError("csv is missing column '" + name + "'");
    }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    cells.push_back(cur);
    return cells;
}

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path + "' for reading");
    CsvTable t;
    std::string line;
    bool have_header = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (!have_header) t.comments.push_back(line);
            continue;
        }
        if (!have_header) {
            t.header = split_csv_line(line);
            have_header = true;
            continue;
        }
        auto cells = split_csv_line(line);
        if (cells.size() != t.header.size())
            throw FormatError("'" + path + "': row has " + std::to_string(cells.size()) +
                              " cells, header has " + std::to_string(t.header.size()));
        t.rows.push_back(std::move(cells));
    }
    if (!have_header) throw FormatError("'" + path + "': no header row");
    return t;
}

// Empty cells are allowed (e.g. the radius column on straights) and map to 0.
inline double csv_to_double(const std::string& cell, const char* what) {
    if (cell.empty()) return 0.0;
    char* end = nullptr;
    const double v = std::strtod(cell.c_str(), &end);
    if (end == cell.c_str() || *end != '\0')
        throw FormatError(std::string("bad numeric cell for ") + what + ": '" + cell + "'");
    return v;
}

}  // namespace koopsafe
