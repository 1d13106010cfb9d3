// SPDX-License-Identifier: Apache-2.0
#include "epl/csv.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>

#include "epl/error.hpp"

namespace epl {

std::size_t CsvTable::column(std::string_view name) const
{
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw FormatError("csv: missing column " + std::string(name));
    return static_cast<std::size_t>(it - header.begin());
}

std::vector<std::string> split_csv_line(std::string_view line)
{
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        fields.emplace_back(line.substr(start, comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return fields;
}

CsvTable parse_csv(std::string_view text, const std::string& source, std::string_view expected_header)
{
    CsvTable t;
    std::size_t line_no = 0, pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        std::string_view line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        if (t.header.empty()) {
            if (!expected_header.empty() && line != expected_header) {
                throw FormatError(source + ": unexpected header '" + std::string(line) + "'");
            }
            t.header = split_csv_line(line);
            continue;
        }
        auto fields = split_csv_line(line);
        if (fields.size() != t.header.size()) {
            throw FormatError(source + ": line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                              " fields, expected " + std::to_string(t.header.size()));
        }
        t.rows.push_back(std::move(fields));
    }
    if (t.header.empty()) throw FormatError(source + ": empty CSV");
    return t;
}

CsvTable read_csv(const std::filesystem::path& file, std::string_view expected_header)
{
    std::ifstream in(file, std::ios::binary);
    if (!in) throw ArtifactError(file.string(), "missing artifact");
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_csv(text, file.string(), expected_header);
}

}  // namespace epl
