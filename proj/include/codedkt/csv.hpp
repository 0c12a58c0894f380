#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace codedkt::csv {

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(std::string_view name) const;  // -1 when absent
};

// RFC 4180 reader: quoted fields, doubled-quote escapes, fields may span lines.
// Accepts both LF and CRLF. Throws std::runtime_error when the file is missing.
Table read_file(const std::string& path);
Table parse(std::string_view text);

std::string escape(std::string_view field);
std::string format_row(const std::vector<std::string>& fields);

}  // namespace codedkt::csv
