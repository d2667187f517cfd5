#include "attnfactor/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace attnfactor {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open CSV file: " + path.string());
  CsvTable table;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty() && in.eof()) break;
    auto cells = split_line(line);
    if (first) {
      table.header = std::move(cells);
      first = false;
    } else {
      table.rows.push_back(std::move(cells));
    }
  }
  if (first) throw ConfigError("empty CSV file: " + path.string());
  return table;
}

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write CSV file: " + path.string());
  for (std::size_t j = 0; j < table.header.size(); ++j) {
    if (j) out << ',';
    out << table.header[j];
  }
  out << '\n';
  for (const auto& row : table.rows) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) out << ',';
      out << row[j];
    }
    out << '\n';
  }
}

void write_matrix_csv(const std::filesystem::path& path, const Matrix& m,
                      const std::vector<std::string>& col_names) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write CSV file: " + path.string());
  if (!col_names.empty()) {
    for (std::size_t j = 0; j < col_names.size(); ++j) {
      if (j) out << ',';
      out << col_names[j];
    }
    out << '\n';
  }
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << format_double(m(i, j));
    }
    out << '\n';
  }
}

Matrix read_matrix_csv(const std::filesystem::path& path, bool has_header) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open CSV file: " + path.string());
  std::string line;
  std::vector<std::vector<double>> rows;
  bool skip = has_header;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (skip) {
      skip = false;
      continue;
    }
    auto cells = split_line(line);
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) row.push_back(std::stod(c));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) return Matrix(0, 0);
  Matrix m(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size())
      throw ConfigError("ragged CSV matrix in " + path.string());
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  }
  return m;
}

std::int64_t parse_year_month(const std::string& text) {
  int year = 0, month = 0;
  char dash = 0;
  std::istringstream ss(text);
  if (!(ss >> year >> dash >> month) || dash != '-' || month < 1 || month > 12)
    throw ConfigError("malformed date (expected YYYY-MM): '" + text + "'");
  return static_cast<std::int64_t>(year) * 12 + (month - 1);
}

std::string format_year_month(std::int64_t month_index) {
  std::int64_t year = month_index / 12;
  std::int64_t month = month_index % 12 + 1;
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04lld-%02lld", static_cast<long long>(year),
                static_cast<long long>(month));
  return std::string(buf);
}

std::uint64_t fnv1a64(const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::uint64_t checksum_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open file for checksum: " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    std::streamsize got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
    if (got < static_cast<std::streamsize>(sizeof(buf))) break;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write file: " + path.string());
  out << text;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  return nlohmann::json::parse(read_text_file(path));
}

}  // namespace attnfactor
