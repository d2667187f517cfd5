#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "attnfactor/io.hpp"
#include "attnfactor/panels.hpp"
#include "attnfactor/rng.hpp"

using namespace attnfactor;
using namespace attnfactor::panels;

namespace {

Schema make_schema(const std::vector<std::string>& names, Frequency freq) {
  Schema schema;
  int id = 0;
  for (const auto& n : names) schema[n] = SeriesMeta{id++, n, freq, "test"};
  return schema;
}

std::filesystem::path write_temp(const std::string& name, const std::string& text) {
  auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream out(path);
  out << text;
  return path;
}

Panel simple_panel(const std::vector<double>& values, Frequency freq = Frequency::Low) {
  Panel p;
  p.values = Matrix(values.size(), 1);
  p.missing_mask = BoolMatrix::Constant(values.size(), 1, false);
  for (std::size_t i = 0; i < values.size(); ++i) {
    p.values(i, 0) = values[i];
    p.timestamps.push_back(static_cast<std::int64_t>(i));
  }
  p.meta.push_back(SeriesMeta{0, "s1", freq, "test"});
  return p;
}

}  // namespace

TEST_CASE("load_csv: blank cell becomes a masked entry") {
  auto path = write_temp("attnfactor_p1.csv",
                         "date,a,b\n2000-01,1.0,2.0\n2000-02,,3.0\n2000-03,4.0,5.0\n");
  Panel p = load_csv(path, make_schema({"a", "b"}, Frequency::High));
  CHECK(p.rows() == 3);
  CHECK(p.cols() == 2);
  CHECK(p.missing_mask(1, 0));
  CHECK_FALSE(p.missing_mask(1, 1));
  CHECK(p.values(2, 1) == 5.0);
  std::filesystem::remove(path);
}

TEST_CASE("load_csv: appendix-style quarterly manifest gives N=13 low-frequency columns") {
  auto manifest = load_variable_manifest(std::filesystem::path(ATTNFACTOR_TEST_SOURCE_DIR) /
                                         "data/variable_manifest.json");
  CHECK(manifest.quarterly.size() == 13);
  CHECK(manifest.monthly.size() == 35);
  std::string header = "date";
  for (const auto& name : manifest.quarterly_order) header += "," + name;
  std::string body;
  for (int q = 0; q < 4; ++q) {
    body += "\n" + format_year_month(2000 * 12 + 3 * q + 2);
    for (int j = 0; j < 13; ++j) body += "," + std::to_string(q + j * 0.5);
  }
  auto path = write_temp("attnfactor_p2.csv", header + body + "\n");
  Panel p = load_csv(path, manifest.quarterly);
  CHECK(p.cols() == 13);
  for (const auto& m : p.meta) CHECK(m.frequency == Frequency::Low);
  CHECK(p.rows() == 4);
  std::filesystem::remove(path);
}

TEST_CASE("load_csv: malformed and duplicate dates raise structured errors") {
  auto bad_date = write_temp("attnfactor_p3.csv", "date,a\nnot-a-date,1\n");
  CHECK_THROWS_WITH_AS(load_csv(bad_date, make_schema({"a"}, Frequency::High)),
                       doctest::Contains("row 2"), ConfigError);
  auto dup = write_temp("attnfactor_p4.csv", "date,a\n2001-05,1\n2001-05,2\n");
  CHECK_THROWS_WITH_AS(load_csv(dup, make_schema({"a"}, Frequency::High)),
                       doctest::Contains("duplicate timestamp"), ConfigError);
  auto missing = write_temp("attnfactor_p5.csv", "date,a\n2001-05,1\n");
  CHECK_THROWS_WITH_AS(load_csv(missing, make_schema({"a", "b"}, Frequency::High)),
                       doctest::Contains("missing mnemonic 'b'"), ConfigError);
  std::filesystem::remove(bad_date);
  std::filesystem::remove(dup);
  std::filesystem::remove(missing);
}

TEST_CASE("load_csv: rows are sorted by timestamp") {
  auto path = write_temp("attnfactor_p6.csv", "date,a\n2000-03,3\n2000-01,1\n2000-02,2\n");
  Panel p = load_csv(path, make_schema({"a"}, Frequency::High));
  CHECK(p.values(0, 0) == 1.0);
  CHECK(p.values(2, 0) == 3.0);
  std::filesystem::remove(path);
}

TEST_CASE("standardize_fit: [1,2,3] has mean 2, sd 1; out-of-sample values are ignored") {
  Panel p = simple_panel({1, 2, 3, 100});
  auto full = standardize_fit(p, 10);
  CHECK(full.means(0) != doctest::Approx(2.0));
  auto stats = standardize_fit(p, 2);  // timestamps 0,1,2 only
  CHECK(stats.means(0) == doctest::Approx(2.0));
  CHECK(stats.stddevs(0) == doctest::Approx(1.0));
}

TEST_CASE("standardize_fit: constant in-sample series raises naming the series") {
  Panel p = simple_panel({5, 5, 5});
  CHECK_THROWS_WITH_AS(standardize_fit(p, 10), doctest::Contains("s1"), NumericError);
}

TEST_CASE("standardize_apply: exact hand case and all-masked column") {
  Panel p = simple_panel({1, 2, 3});
  auto stats = standardize_fit(p, 10);
  Panel z = standardize_apply(p, stats);
  CHECK(z.values(0, 0) == doctest::Approx(-1.0));
  CHECK(z.values(1, 0) == doctest::Approx(0.0));
  CHECK(z.values(2, 0) == doctest::Approx(1.0));

  Panel masked = p;
  masked.missing_mask.setConstant(true);
  Panel out = standardize_apply(masked, stats);
  CHECK(out.values == masked.values);

  StandardizationStats empty_stats;
  CHECK_THROWS_AS(standardize_apply(p, empty_stats), ArgumentError);
}

TEST_CASE("standardize round trip recovers the input to 1e-12") {
  Rng rng(3);
  Panel p;
  p.values = Matrix(40, 3);
  p.missing_mask = BoolMatrix::Constant(40, 3, false);
  for (int i = 0; i < 40; ++i) {
    p.timestamps.push_back(i);
    for (int j = 0; j < 3; ++j) p.values(i, j) = rng.normal(5.0 * j, 2.0 + j);
  }
  for (int j = 0; j < 3; ++j)
    p.meta.push_back(SeriesMeta{j, "v" + std::to_string(j), Frequency::High, ""});
  auto stats = standardize_fit(p, 100);
  Panel z = standardize_apply(p, stats);
  Panel back = standardize_invert(z, stats);
  CHECK((back.values - p.values).cwiseAbs().maxCoeff() < 1e-12);

  // In-sample moments after standardization.
  for (int j = 0; j < 3; ++j) {
    double m = z.values.col(j).mean();
    double v = (z.values.col(j).array() - m).square().sum() / 39.0;
    CHECK(std::abs(m) < 1e-10);
    CHECK(std::abs(v - 1.0) < 1e-8);
  }
}

TEST_CASE("collapse_to_low_frequency: last and mean on monthly [1..6], r=3") {
  Panel p = simple_panel({1, 2, 3, 4, 5, 6}, Frequency::High);
  Panel last = collapse_to_low_frequency(p, 3, CollapseMethod::Last);
  CHECK(last.rows() == 2);
  CHECK(last.values(0, 0) == 3.0);
  CHECK(last.values(1, 0) == 6.0);
  Panel mean = collapse_to_low_frequency(p, 3, CollapseMethod::Mean);
  CHECK(mean.values(0, 0) == doctest::Approx(2.0));
  CHECK(mean.values(1, 0) == doctest::Approx(5.0));
  Panel same = collapse_to_low_frequency(p, 1, CollapseMethod::Last);
  CHECK(same.values == p.values);
  CHECK_THROWS_AS(collapse_to_low_frequency(p, 0, CollapseMethod::Last), ArgumentError);
}

TEST_CASE("align_common_clock: matching spans and trailing-row drop") {
  Panel high = simple_panel({1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12}, Frequency::High);
  Panel low = simple_panel({10, 20, 30, 40}, Frequency::Low);
  auto [h, l] = align_common_clock(high, low, 3);
  CHECK(h.rows() == 4);
  CHECK(l.rows() == 4);
  CHECK(h.values(0, 0) == 3.0);  // last value of the first quarter

  Panel high13 = simple_panel({1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13}, Frequency::High);
  auto [h2, l2] = align_common_clock(high13, low, 3);
  CHECK(h2.rows() == 4);  // partial 5th quarter dropped

  Panel far = low;
  for (auto& ts : far.timestamps) ts += 1000;
  CHECK_THROWS_AS(align_common_clock(high, far, 3), ArgumentError);
}

TEST_CASE("collapse with method=last commutes with standardization (affine map)") {
  Rng rng(17);
  Panel p;
  const int t = 36;
  p.values = Matrix(t, 2);
  p.missing_mask = BoolMatrix::Constant(t, 2, false);
  for (int i = 0; i < t; ++i) {
    p.timestamps.push_back(i);
    p.values(i, 0) = rng.normal(3.0, 2.0);
    p.values(i, 1) = rng.normal(-1.0, 0.5);
  }
  p.meta.push_back(SeriesMeta{0, "a", Frequency::High, ""});
  p.meta.push_back(SeriesMeta{1, "b", Frequency::High, ""});

  auto stats = standardize_fit(p, 1000);
  Panel std_then_collapse =
      collapse_to_low_frequency(standardize_apply(p, stats), 3, CollapseMethod::Last);
  Panel collapse_only = collapse_to_low_frequency(p, 3, CollapseMethod::Last);
  for (Eigen::Index i = 0; i < collapse_only.rows(); ++i)
    for (Eigen::Index j = 0; j < 2; ++j)
      CHECK(std_then_collapse.values(i, j) ==
            doctest::Approx((collapse_only.values(i, j) - stats.means(j)) / stats.stddevs(j))
                .epsilon(1e-12));
}

TEST_CASE("save/load round trip is the identity on values, masks and timestamps") {
  Panel p = simple_panel({1.5, -2.25, 3.125}, Frequency::Low);
  p.missing_mask(1, 0) = true;
  auto base = std::filesystem::temp_directory_path() / "attnfactor_roundtrip";
  save_panel(base, p);
  Panel back = load_panel(base);
  CHECK(back.timestamps == p.timestamps);
  CHECK(back.missing_mask == p.missing_mask);
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    if (!p.missing_mask(i, 0)) CHECK(back.values(i, 0) == p.values(i, 0));
  // Idempotence: a second save/load of the loaded panel is identical.
  auto base2 = std::filesystem::temp_directory_path() / "attnfactor_roundtrip2";
  save_panel(base2, back);
  CHECK(read_text_file(base.string() + ".csv") == read_text_file(base2.string() + ".csv"));
  for (auto ext : {".csv", ".meta.json"}) {
    std::filesystem::remove(base.string() + ext);
    std::filesystem::remove(base2.string() + ext);
  }
}
