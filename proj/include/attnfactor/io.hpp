#ifndef ATTNFACTOR_IO_HPP
#define ATTNFACTOR_IO_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "attnfactor/common.hpp"

namespace attnfactor {

// Formats a double with enough digits to round-trip exactly; used by every
// CSV writer so that re-runs are byte identical.
std::string format_double(double v);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const CsvTable& table);

// Dense numeric matrix I/O. `write_matrix_csv` emits an optional header row.
void write_matrix_csv(const std::filesystem::path& path, const Matrix& m,
                      const std::vector<std::string>& col_names = {});
Matrix read_matrix_csv(const std::filesystem::path& path, bool has_header);

// Parses "YYYY-MM" into a month index (year * 12 + month - 1).
// Throws ConfigError naming the offending text otherwise.
std::int64_t parse_year_month(const std::string& text);
std::string format_year_month(std::int64_t month_index);

// FNV-1a 64-bit; used for config hashes and artifact checksums.
std::uint64_t fnv1a64(const void* data, std::size_t len);
std::uint64_t fnv1a64(const std::string& s);
std::uint64_t checksum_file(const std::filesystem::path& path);
std::string hex64(std::uint64_t v);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace attnfactor

#endif
