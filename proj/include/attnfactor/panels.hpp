#ifndef ATTNFACTOR_PANELS_HPP
#define ATTNFACTOR_PANELS_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "attnfactor/common.hpp"

namespace attnfactor::panels {

enum class Frequency { High, Low };

std::string to_string(Frequency f);
Frequency frequency_from_string(const std::string& s);

struct SeriesMeta {
  int id = 0;
  std::string name;
  Frequency frequency = Frequency::High;
  std::string category;
};

// A T x N panel on a single-frequency integer clock. Timestamps are period
// indices (months since year 0 for high frequency, quarters since year 0 for
// low frequency); calendar dates are mapped at ingestion. `missing_mask` is
// true where a cell is unobserved; values are never imputed here.
struct Panel {
  Matrix values;
  std::vector<std::int64_t> timestamps;
  std::vector<SeriesMeta> meta;
  BoolMatrix missing_mask;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
  bool has_missing() const { return missing_mask.any(); }
  void validate() const;  // throws on broken invariants
};

struct StandardizationStats {
  std::vector<std::string> names;
  Vector means;
  Vector stddevs;
  std::int64_t fit_start = 0;
  std::int64_t fit_end = 0;

  std::optional<Eigen::Index> index_of(const std::string& name) const;
};

using Schema = std::map<std::string, SeriesMeta>;

// CSV dialect: comma separated, first column `date` as YYYY-MM (quarterly
// panels use the quarter-end month), empty cells are missing. Every non-date
// column must appear in the schema and every schema entry must be present.
Panel load_csv(const std::filesystem::path& path, const Schema& schema);

// Writes <base>.csv plus a <base>.meta.json sidecar with per-column
// {name, frequency, category}. load_csv of the pair is the inverse.
void save_panel(const std::filesystem::path& base, const Panel& panel);
Panel load_panel(const std::filesystem::path& base);

StandardizationStats standardize_fit(const Panel& panel, std::int64_t in_sample_end);
Panel standardize_apply(const Panel& panel, const StandardizationStats& stats);
Panel standardize_invert(const Panel& panel, const StandardizationStats& stats);

enum class CollapseMethod { Last, Mean };

// Collapses a high-frequency panel onto the r-times-slower clock. Periods are
// calendar aligned (low period t' covers high periods r*t' .. r*t'+r-1) and
// incomplete periods at either end are dropped.
Panel collapse_to_low_frequency(const Panel& high, int r, CollapseMethod method);

// Truncates both panels to a shared low-frequency clock; the high panel is
// collapsed with method=last. Throws if the calendar overlap is empty.
std::pair<Panel, Panel> align_common_clock(const Panel& high, const Panel& low, int r);

// Appendix-style variable manifest: {"monthly": [{mnemonic, category,
// description}...], "quarterly": [...]}. Ids are assigned in file order,
// monthly block first.
struct VariableManifest {
  Schema monthly;
  Schema quarterly;
  std::vector<std::string> monthly_order;
  std::vector<std::string> quarterly_order;
};
VariableManifest load_variable_manifest(const std::filesystem::path& path);

}  // namespace attnfactor::panels

#endif
