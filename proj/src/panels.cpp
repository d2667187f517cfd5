#include "attnfactor/panels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "attnfactor/io.hpp"

namespace attnfactor::panels {

std::string to_string(Frequency f) { return f == Frequency::High ? "high" : "low"; }

Frequency frequency_from_string(const std::string& s) {
  if (s == "high" || s == "monthly") return Frequency::High;
  if (s == "low" || s == "quarterly") return Frequency::Low;
  throw ConfigError("unknown frequency: '" + s + "'");
}

void Panel::validate() const {
  require(values.rows() == static_cast<Eigen::Index>(timestamps.size()),
          "panel row count does not match timestamp count");
  require(values.cols() == static_cast<Eigen::Index>(meta.size()),
          "panel column count does not match metadata count");
  require(missing_mask.rows() == values.rows() && missing_mask.cols() == values.cols(),
          "panel mask shape mismatch");
  for (std::size_t i = 1; i < timestamps.size(); ++i)
    require(timestamps[i] > timestamps[i - 1], "panel timestamps must be strictly increasing");
  std::set<int> ids;
  for (const auto& m : meta)
    require(ids.insert(m.id).second, "duplicate series id in panel: " + m.name);
  for (Eigen::Index t = 0; t < values.rows(); ++t)
    for (Eigen::Index j = 0; j < values.cols(); ++j)
      if (!missing_mask(t, j))
        require(std::isfinite(values(t, j)),
                "non-finite unmasked value in series " + meta[j].name);
}

std::optional<Eigen::Index> StandardizationStats::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<Eigen::Index>(i);
  return std::nullopt;
}

namespace {

std::int64_t month_to_panel_timestamp(std::int64_t month_index, Frequency f) {
  return f == Frequency::High ? month_index : month_index / 3;
}

std::int64_t panel_timestamp_to_month(std::int64_t ts, Frequency f) {
  // Quarterly timestamps map to the quarter-end month.
  return f == Frequency::High ? ts : 3 * ts + 2;
}

}  // namespace

Panel load_csv(const std::filesystem::path& path, const Schema& schema) {
  CsvTable table = read_csv(path);
  require(!table.header.empty() && table.header[0] == "date",
          "CSV header must start with a 'date' column: " + path.string());

  std::vector<SeriesMeta> meta;
  for (std::size_t j = 1; j < table.header.size(); ++j) {
    auto it = schema.find(table.header[j]);
    if (it == schema.end())
      throw ConfigError("column '" + table.header[j] + "' not present in schema (" +
                        path.string() + ")");
    meta.push_back(it->second);
  }
  for (const auto& [name, m] : schema) {
    (void)m;
    if (std::find(table.header.begin() + 1, table.header.end(), name) == table.header.end())
      throw ConfigError("missing mnemonic '" + name + "' in " + path.string());
  }
  require(!meta.empty(), "CSV has no data columns: " + path.string());
  Frequency freq = meta[0].frequency;
  for (const auto& m : meta)
    require(m.frequency == freq, "mixed frequencies within one CSV: " + path.string());

  struct Row {
    std::int64_t ts;
    std::vector<std::string> cells;
  };
  std::vector<Row> rows;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& r = table.rows[i];
    if (r.size() != table.header.size())
      throw ConfigError("row " + std::to_string(i + 2) + " has " + std::to_string(r.size()) +
                        " cells, expected " + std::to_string(table.header.size()) + " (" +
                        path.string() + ")");
    std::int64_t month;
    try {
      month = parse_year_month(r[0]);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(e.what()) + " at row " + std::to_string(i + 2) + " of " +
                        path.string());
    }
    rows.push_back({month_to_panel_timestamp(month, freq), r});
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const Row& a, const Row& b) { return a.ts < b.ts; });
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i].ts == rows[i - 1].ts)
      throw ConfigError("duplicate timestamp '" + rows[i].cells[0] + "' in " + path.string());

  Panel panel;
  panel.meta = meta;
  panel.values = Matrix::Zero(rows.size(), meta.size());
  panel.missing_mask = BoolMatrix::Constant(rows.size(), meta.size(), false);
  panel.timestamps.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    panel.timestamps.push_back(rows[i].ts);
    for (std::size_t j = 0; j < meta.size(); ++j) {
      const std::string& cell = rows[i].cells[j + 1];
      if (cell.empty() || cell == "NA" || cell == "NaN") {
        panel.missing_mask(i, j) = true;
      } else {
        try {
          panel.values(i, j) = std::stod(cell);
        } catch (const std::exception&) {
          throw ConfigError("unparseable value '" + cell + "' at row " + std::to_string(i + 2) +
                            ", column " + meta[j].name + " (" + path.string() + ")");
        }
      }
    }
  }
  panel.validate();
  return panel;
}

void save_panel(const std::filesystem::path& base, const Panel& panel) {
  panel.validate();
  Frequency freq = panel.meta.empty() ? Frequency::High : panel.meta[0].frequency;
  CsvTable table;
  table.header.push_back("date");
  for (const auto& m : panel.meta) table.header.push_back(m.name);
  for (Eigen::Index t = 0; t < panel.rows(); ++t) {
    std::vector<std::string> row;
    row.push_back(format_year_month(panel_timestamp_to_month(panel.timestamps[t], freq)));
    for (Eigen::Index j = 0; j < panel.cols(); ++j)
      row.push_back(panel.missing_mask(t, j) ? std::string()
                                             : format_double(panel.values(t, j)));
    table.rows.push_back(std::move(row));
  }
  write_csv(base.string() + ".csv", table);

  nlohmann::json sidecar = nlohmann::json::array();
  for (const auto& m : panel.meta)
    sidecar.push_back({{"id", m.id},
                       {"name", m.name},
                       {"frequency", to_string(m.frequency)},
                       {"category", m.category}});
  write_json_file(base.string() + ".meta.json", sidecar);
}

Panel load_panel(const std::filesystem::path& base) {
  nlohmann::json sidecar = read_json_file(base.string() + ".meta.json");
  Schema schema;
  for (const auto& entry : sidecar) {
    SeriesMeta m;
    m.id = entry.at("id").get<int>();
    m.name = entry.at("name").get<std::string>();
    m.frequency = frequency_from_string(entry.at("frequency").get<std::string>());
    m.category = entry.at("category").get<std::string>();
    schema[m.name] = m;
  }
  return load_csv(base.string() + ".csv", schema);
}

StandardizationStats standardize_fit(const Panel& panel, std::int64_t in_sample_end) {
  panel.validate();
  StandardizationStats stats;
  stats.fit_start = panel.timestamps.empty() ? 0 : panel.timestamps.front();
  stats.fit_end = in_sample_end;
  stats.means = Vector::Zero(panel.cols());
  stats.stddevs = Vector::Zero(panel.cols());
  for (Eigen::Index j = 0; j < panel.cols(); ++j) {
    std::vector<double> obs;
    for (Eigen::Index t = 0; t < panel.rows(); ++t)
      if (!panel.missing_mask(t, j) && panel.timestamps[t] <= in_sample_end)
        obs.push_back(panel.values(t, j));
    std::set<double> distinct(obs.begin(), obs.end());
    if (distinct.size() < 2)
      throw NumericError("degenerate series '" + panel.meta[j].name +
                         "': fewer than two distinct in-sample values");
    double mu = std::accumulate(obs.begin(), obs.end(), 0.0) / static_cast<double>(obs.size());
    double ss = 0.0;
    for (double v : obs) ss += (v - mu) * (v - mu);
    double sd = std::sqrt(ss / static_cast<double>(obs.size() - 1));
    if (sd <= 0.0)
      throw NumericError("degenerate series '" + panel.meta[j].name + "': zero variance");
    stats.names.push_back(panel.meta[j].name);
    stats.means(j) = mu;
    stats.stddevs(j) = sd;
  }
  return stats;
}

namespace {

Panel affine_transform(const Panel& panel, const StandardizationStats& stats, bool invert) {
  Panel out = panel;
  for (Eigen::Index j = 0; j < panel.cols(); ++j) {
    auto idx = stats.index_of(panel.meta[j].name);
    if (!idx)
      throw ArgumentError("series '" + panel.meta[j].name + "' missing from standardization stats");
    double mu = stats.means(*idx);
    double sd = stats.stddevs(*idx);
    for (Eigen::Index t = 0; t < panel.rows(); ++t) {
      if (panel.missing_mask(t, j)) continue;
      out.values(t, j) =
          invert ? panel.values(t, j) * sd + mu : (panel.values(t, j) - mu) / sd;
    }
  }
  return out;
}

}  // namespace

Panel standardize_apply(const Panel& panel, const StandardizationStats& stats) {
  return affine_transform(panel, stats, false);
}

Panel standardize_invert(const Panel& panel, const StandardizationStats& stats) {
  return affine_transform(panel, stats, true);
}

Panel collapse_to_low_frequency(const Panel& high, int r, CollapseMethod method) {
  require(r >= 1, "frequency ratio r must be >= 1");
  high.validate();
  if (r == 1) return high;

  // Index rows by timestamp for calendar grouping.
  std::map<std::int64_t, Eigen::Index> row_of;
  for (Eigen::Index t = 0; t < high.rows(); ++t) row_of[high.timestamps[t]] = t;

  std::vector<std::int64_t> periods;
  std::int64_t first = high.timestamps.front();
  std::int64_t last = high.timestamps.back();
  for (std::int64_t p = first / r + (first % r != 0 ? 1 : 0); p * r + r - 1 <= last; ++p) {
    bool complete = true;
    for (int k = 0; k < r; ++k)
      if (row_of.find(p * r + k) == row_of.end()) complete = false;
    if (complete) periods.push_back(p);
  }

  Panel out;
  out.meta = high.meta;
  for (auto& m : out.meta) m.frequency = Frequency::Low;
  out.values = Matrix::Zero(periods.size(), high.cols());
  out.missing_mask = BoolMatrix::Constant(periods.size(), high.cols(), false);
  for (std::size_t i = 0; i < periods.size(); ++i) {
    out.timestamps.push_back(periods[i]);
    for (Eigen::Index j = 0; j < high.cols(); ++j) {
      if (method == CollapseMethod::Last) {
        Eigen::Index src = row_of.at(periods[i] * r + r - 1);
        out.values(i, j) = high.values(src, j);
        out.missing_mask(i, j) = high.missing_mask(src, j);
      } else {
        double sum = 0.0;
        int n = 0;
        for (int k = 0; k < r; ++k) {
          Eigen::Index src = row_of.at(periods[i] * r + k);
          if (!high.missing_mask(src, j)) {
            sum += high.values(src, j);
            ++n;
          }
        }
        if (n == 0) {
          out.missing_mask(i, j) = true;
        } else {
          out.values(i, j) = sum / n;
        }
      }
    }
  }
  out.validate();
  return out;
}

std::pair<Panel, Panel> align_common_clock(const Panel& high, const Panel& low, int r) {
  require(r >= 1, "frequency ratio r must be >= 1");
  Panel collapsed = collapse_to_low_frequency(high, r, CollapseMethod::Last);
  if (collapsed.rows() == 0 || low.rows() == 0)
    throw ArgumentError("alignment failed: empty panel after collapsing");
  std::int64_t start = std::max(collapsed.timestamps.front(), low.timestamps.front());
  std::int64_t end = std::min(collapsed.timestamps.back(), low.timestamps.back());
  if (start > end)
    throw ArgumentError("alignment failed: calendar spans do not overlap");

  auto slice = [&](const Panel& p) {
    std::vector<Eigen::Index> keep;
    for (Eigen::Index t = 0; t < p.rows(); ++t)
      if (p.timestamps[t] >= start && p.timestamps[t] <= end) keep.push_back(t);
    Panel out;
    out.meta = p.meta;
    out.values = Matrix::Zero(keep.size(), p.cols());
    out.missing_mask = BoolMatrix::Constant(keep.size(), p.cols(), false);
    for (std::size_t i = 0; i < keep.size(); ++i) {
      out.timestamps.push_back(p.timestamps[keep[i]]);
      out.values.row(i) = p.values.row(keep[i]);
      out.missing_mask.row(i) = p.missing_mask.row(keep[i]);
    }
    return out;
  };
  Panel a = slice(collapsed);
  Panel b = slice(low);
  if (a.rows() != b.rows() || a.timestamps != b.timestamps)
    throw ArgumentError("alignment failed: panels have gaps within the shared span");
  return {a, b};
}

VariableManifest load_variable_manifest(const std::filesystem::path& path) {
  nlohmann::json doc = read_json_file(path);
  VariableManifest manifest;
  int next_id = 0;
  auto read_block = [&](const char* key, Frequency freq, Schema& schema,
                        std::vector<std::string>& order) {
    for (const auto& entry : doc.at(key)) {
      SeriesMeta m;
      m.id = next_id++;
      m.name = entry.at("mnemonic").get<std::string>();
      m.frequency = freq;
      m.category = entry.value("category", "");
      schema[m.name] = m;
      order.push_back(m.name);
    }
  };
  read_block("monthly", Frequency::High, manifest.monthly, manifest.monthly_order);
  read_block("quarterly", Frequency::Low, manifest.quarterly, manifest.quarterly_order);
  return manifest;
}

}  // namespace attnfactor::panels
