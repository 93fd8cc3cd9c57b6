#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <vector>

#include "dact/cpe.hpp"

using namespace dact;

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<std::vector<double>> cpe_rows(int n, int dim) {
  const FrequencySchedule s = make_frequency_schedule(n, dim);
  std::vector<std::vector<double>> rows;
  rows.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) rows.push_back(cpe_embed(i, s));
  return rows;
}

// Sign alternation count per column, zeros (|x| < 1e-12) skipped. Matches the
// reference evaluation used to freeze the expected pattern.
std::vector<int> sign_changes(const std::vector<std::vector<double>>& rows) {
  const size_t dim = rows[0].size();
  std::vector<int> out(dim, 0);
  for (size_t d = 0; d < dim; ++d) {
    int prev = 0;
    for (const auto& row : rows) {
      const double v = row[d];
      if (std::fabs(v) < 1e-12) continue;
      const int sgn = v > 0 ? 1 : -1;
      if (prev != 0 && sgn != prev) ++out[d];
      prev = sgn;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("wavelength schedule matches closed form and stays in range") {
  for (int n : {16, 20, 50, 100, 257}) {
    const FrequencySchedule s = make_frequency_schedule(n, 64);
    REQUIRE(s.wavelengths.size() == 64);
    const double base = std::pow(static_cast<double>(n), 1.0 / 32.0);
    for (int d = 0; d < 64; ++d) {
      const double lam = s.wavelengths[static_cast<size_t>(d)];
      CHECK(lam >= base - 1e-12);
      CHECK(lam <= n + 1e-12);
      if (d >= 32) CHECK(lam == static_cast<double>(n));
    }
    // non-decreasing across and within the groups of three
    for (int d = 1; d < 64; ++d)
      CHECK(s.wavelengths[static_cast<size_t>(d)] >=
            s.wavelengths[static_cast<size_t>(d - 1)] - 1e-12);
  }
  const FrequencySchedule s20 = make_frequency_schedule(20, 64);
  CHECK(s20.wavelengths[0] == doctest::Approx(1.393480258875401).epsilon(1e-12));
  CHECK(s20.wavelengths[31] == doctest::Approx(10.253727754649020).epsilon(1e-12));
  CHECK(s20.wavelengths[32] == 20.0);
  CHECK(s20.omega(32) == doctest::Approx(2.0 * 3.14159265358979323846 / 20.0));
}

TEST_CASE("schedule rejects bad sizes") {
  CHECK_THROWS_AS(make_frequency_schedule(1, 64), std::invalid_argument);
  CHECK_THROWS_AS(make_frequency_schedule(20, 63), std::invalid_argument);
  CHECK_THROWS_AS(make_frequency_schedule(20, 2), std::invalid_argument);
  const FrequencySchedule s = make_frequency_schedule(20, 64);
  CHECK_THROWS_AS(cpe_embed(-1, s), std::out_of_range);
  CHECK_THROWS_AS(cpe_embed(20, s), std::out_of_range);
  CHECK_THROWS_AS(abs_pe_embed(-1, 64), std::out_of_range);
}

TEST_CASE("position zero row is the alternating 0/1 pattern") {
  for (int n : {16, 20, 100}) {
    const FrequencySchedule s = make_frequency_schedule(n, 64);
    const std::vector<double> row = cpe_embed(0, s);
    for (int d = 0; d < 64; ++d) {
      if (d % 2 == 0)
        CHECK(std::fabs(row[static_cast<size_t>(d)]) < 1e-9);
      else
        CHECK(row[static_cast<size_t>(d)] == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
  const std::vector<double> a0 = abs_pe_embed(0, 64);
  for (int d = 0; d < 64; ++d)
    CHECK(a0[static_cast<size_t>(d)] == doctest::Approx(d % 2 == 0 ? 0.0 : 1.0));
}

TEST_CASE("cyclic adjacency: first and last positions correlate like neighbors") {
  for (int n : {8, 16, 20, 50, 100}) {
    const auto rows = cpe_rows(n, 64);
    const double d01 = dot(rows[0], rows[1]);
    const double d_last = dot(rows[0], rows[static_cast<size_t>(n - 1)]);
    const double d_mid = dot(rows[0], rows[static_cast<size_t>(n / 2)]);
    CHECK(d01 > d_mid);
    CHECK(d_last > d_mid);
  }
  const auto rows = cpe_rows(20, 64);
  const double d01 = dot(rows[0], rows[1]);
  CHECK(d01 == doctest::Approx(17.680768472719).epsilon(1e-9));
  CHECK(dot(rows[0], rows[10]) == doctest::Approx(-26.0).epsilon(1e-9));
  CHECK(dot(rows[0], rows[19]) == doctest::Approx(17.680768472719).epsilon(1e-9));
  // head and tail are exact mirror positions
  CHECK(std::fabs(d01 - dot(rows[0], rows[19])) / std::fabs(d01) < 1e-6);
}

TEST_CASE("absolute encoding correlates by distance and is not cyclic") {
  const int dim = 64;
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 20; ++i) rows.push_back(abs_pe_embed(i, dim));
  const double d01 = dot(rows[0], rows[1]);
  const double d10 = dot(rows[0], rows[10]);
  const double d19 = dot(rows[0], rows[19]);
  CHECK(d01 == doctest::Approx(30.916831661619).epsilon(1e-9));
  CHECK(d10 == doctest::Approx(21.051628824608).epsilon(1e-9));
  CHECK(d19 == doctest::Approx(19.973660771847).epsilon(1e-9));
  CHECK(d01 > d10);
  CHECK(d10 > d19);
  CHECK(d19 < 0.7 * d01);  // tail stays far from head, unlike the cyclic table
}

TEST_CASE("waveform is reflection-symmetric and periodic") {
  for (double lambda : {1.393480258875401, 3.7, 20.0}) {
    for (bool even : {true, false}) {
      for (double u : {0.1, 0.25 * lambda, 0.49 * lambda, 0.77 * lambda}) {
        CHECK(cpe_wave(lambda - u, lambda, even) ==
              doctest::Approx(cpe_wave(lambda + u, lambda, even)).epsilon(1e-12));
      }
      for (double z : {0.3, 1.1, 2.9}) {
        CHECK(cpe_wave(z, lambda, even) ==
              doctest::Approx(cpe_wave(z + 2.0 * lambda, lambda, even))
                  .epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("rows are pairwise distinct up to n=1000") {
  const auto rows = cpe_rows(1000, 64);
  auto sorted = rows;
  std::sort(sorted.begin(), sorted.end());
  for (size_t i = 1; i < sorted.size(); ++i) {
    double max_diff = 0.0;
    for (size_t d = 0; d < 64; ++d)
      max_diff = std::max(max_diff, std::fabs(sorted[i][d] - sorted[i - 1][d]));
    CHECK(max_diff > 1e-9);
  }
  std::vector<std::vector<double>> abs_rows;
  for (int i = 0; i < 300; ++i) abs_rows.push_back(abs_pe_embed(i, 64));
  std::sort(abs_rows.begin(), abs_rows.end());
  for (size_t i = 1; i < abs_rows.size(); ++i) CHECK(abs_rows[i] != abs_rows[i - 1]);
}

TEST_CASE("table rows equal the per-position embedding and stay in [-1,1]") {
  for (PositionalMethod m : {PositionalMethod::kCpe, PositionalMethod::kAbsPe}) {
    for (int n : {16, 20, 50, 100}) {
      const PositionalTable t = build_table(n, 64, m);
      REQUIRE(t.rows.shape == std::vector<int64_t>({n, 64}));
      CHECK(t.reused_frequencies == false);
      const FrequencySchedule s = make_frequency_schedule(n, 64);
      for (int i = 0; i < n; ++i) {
        const std::vector<double> row = m == PositionalMethod::kCpe
                                            ? cpe_embed(i, s)
                                            : abs_pe_embed(i, 64);
        for (int d = 0; d < 64; ++d) {
          const float v = t.rows.at(i, d);
          CHECK(v == static_cast<float>(row[static_cast<size_t>(d)]));
          CHECK(std::fabs(v) <= 1.0f + 1e-6f);
        }
      }
    }
  }
}

TEST_CASE("n=16 digit pattern: slow columns double their period") {
  const auto rows = cpe_rows(16, 64);
  const std::vector<int> changes = sign_changes(rows);
  const std::vector<int> expected = {
      11, 6, 11, 15, 0, 15, 6, 11, 6, 9, 5, 9, 4, 7, 4, 7, 4, 7, 3, 6, 3, 6,
      3,  6, 3,  6,  3, 6,  3, 6,  2, 4, 1, 2, 1, 2, 1, 2, 1, 2, 1, 2, 1, 2,
      1,  2, 1,  2,  1, 2,  1, 2,  1, 2, 1, 2, 1, 2, 1, 2, 1, 2, 1, 2};
  CHECK(changes == expected);
  // sampled oscillation slows as the wavelength grows
  CHECK(changes[0] >= 8);
  for (int d = 32; d < 64; ++d) CHECK(changes[static_cast<size_t>(d)] <= 2);
}

TEST_CASE("frequency reuse keeps old wavelengths at a new size") {
  const FrequencySchedule s20 = make_frequency_schedule(20, 64);
  const PositionalTable t = build_table(100, 64, PositionalMethod::kCpe, &s20);
  CHECK(t.reused_frequencies == true);
  FrequencySchedule respaced = s20;
  respaced.n = 100;
  for (int i = 0; i < 100; ++i) {
    const std::vector<double> row = cpe_embed(i, respaced);
    for (int d = 0; d < 64; ++d)
      CHECK(t.rows.at(i, d) == static_cast<float>(row[static_cast<size_t>(d)]));
  }
  FrequencySchedule bad = s20;
  bad.dim = 32;
  bad.wavelengths.resize(32);
  CHECK_THROWS_AS(build_table(100, 64, PositionalMethod::kCpe, &bad),
                  std::invalid_argument);
  CHECK_THROWS_AS(build_table(100, 64, PositionalMethod::kAbsPe, &s20),
                  std::invalid_argument);

  CHECK(should_reuse_frequencies(30, 20) == false);
  CHECK(should_reuse_frequencies(40, 20) == false);  // factor 2 still regenerates
  CHECK(should_reuse_frequencies(41, 20) == true);
  CHECK(should_reuse_frequencies(10, 20) == false);
  CHECK(should_reuse_frequencies(9, 20) == true);
  CHECK_THROWS_AS(should_reuse_frequencies(0, 20), std::invalid_argument);
}

TEST_CASE("csv writer emits one row per position") {
  const PositionalTable t = build_table(3, 4, PositionalMethod::kCpe);
  std::ostringstream out;
  write_table_csv(t, out);
  std::istringstream in(out.str());
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    std::istringstream cells(line);
    std::string cell;
    int col = 0;
    while (std::getline(cells, cell, ',')) {
      CHECK(std::stof(cell) == doctest::Approx(t.rows.at(row, col)).epsilon(1e-5));
      ++col;
    }
    CHECK(col == 4);
    ++row;
  }
  CHECK(row == 3);
}

TEST_CASE("table construction is bit-deterministic") {
  const PositionalTable a = build_table(50, 64, PositionalMethod::kCpe);
  const PositionalTable b = build_table(50, 64, PositionalMethod::kCpe);
  REQUIRE(a.rows.data.size() == b.rows.data.size());
  CHECK(std::memcmp(a.rows.data.data(), b.rows.data.data(),
                    a.rows.data.size() * sizeof(float)) == 0);
}

TEST_CASE("method names round-trip") {
  CHECK(positional_method_name(PositionalMethod::kCpe) == "cpe");
  CHECK(positional_method_name(PositionalMethod::kAbsPe) == "abspe");
  CHECK(positional_method_from_name("cpe") == PositionalMethod::kCpe);
  CHECK(positional_method_from_name("abspe") == PositionalMethod::kAbsPe);
  CHECK_THROWS_AS(positional_method_from_name("fourier"), std::invalid_argument);
}
