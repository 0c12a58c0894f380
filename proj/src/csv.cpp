#include "codedkt/csv.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace codedkt::csv {

int Table::column(std::string_view name) const {
    for (size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) return static_cast<int>(i);
    }
    return -1;
}

Table parse(std::string_view text) {
    Table table;
    std::vector<std::string> row;
    std::string field;
    bool in_quotes = false;
    bool any_field = false;

    auto end_field = [&] {
        row.push_back(std::move(field));
        field.clear();
        any_field = false;
    };
    auto end_row = [&] {
        end_field();
        if (table.header.empty()) {
            table.header = std::move(row);
        } else {
            table.rows.push_back(std::move(row));
        }
        row.clear();
    };

    for (size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
            case '"':
                in_quotes = true;
                any_field = true;
                break;
            case ',':
                end_field();
                any_field = true;  // a comma implies a following field
                break;
            case '\r':
                break;
            case '\n':
                end_row();
                break;
            default:
                field.push_back(c);
                any_field = true;
                break;
        }
    }
    if (!field.empty() || any_field || !row.empty()) end_row();
    return table;
}

Table read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

std::string escape(std::string_view field) {
    const bool needs_quotes =
        field.find_first_of(",\"\r\n") != std::string_view::npos;
    if (!needs_quotes) return std::string(field);
    std::string out;
    out.reserve(field.size() + 2);
    out.push_back('"');
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

std::string format_row(const std::vector<std::string>& fields) {
    std::string out;
    for (size_t i = 0; i < fields.size(); ++i) {
        if (i) out.push_back(',');
        out += escape(fields[i]);
    }
    out.push_back('\n');
    return out;
}

}  // namespace codedkt::csv
