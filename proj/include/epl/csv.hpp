// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace epl {

/// Unquoted comma-separated table; fields never contain commas or newlines.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    /// Column index by name; throws FormatError if absent.
    std::size_t column(std::string_view name) const;
};

std::vector<std::string> split_csv_line(std::string_view line);

/// Parses text; every row must have as many fields as the header. When
/// `expected_header` is non-empty the header line must match it exactly.
CsvTable parse_csv(std::string_view text, const std::string& source, std::string_view expected_header = {});
CsvTable read_csv(const std::filesystem::path& file, std::string_view expected_header = {});

}  // namespace epl
