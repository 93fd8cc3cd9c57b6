#include "dact/cpe.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

namespace dact {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
}

std::string positional_method_name(PositionalMethod method) {
  return method == PositionalMethod::kCpe ? "cpe" : "abspe";
}

PositionalMethod positional_method_from_name(const std::string& name) {
  if (name == "cpe") return PositionalMethod::kCpe;
  if (name == "abspe") return PositionalMethod::kAbsPe;
  throw std::invalid_argument("unknown positional method: " + name);
}

double FrequencySchedule::omega(int d) const {
  return kTwoPi / wavelengths.at(static_cast<size_t>(d));
}

FrequencySchedule make_frequency_schedule(int n, int dim) {
  if (n < 2) throw std::invalid_argument("frequency schedule needs n >= 2");
  if (dim < 4 || dim % 2 != 0)
    throw std::invalid_argument("frequency schedule needs even dim >= 4");
  const int half = dim / 2;
  const double base = std::pow(static_cast<double>(n), 1.0 / half);
  FrequencySchedule s;
  s.n = n;
  s.dim = dim;
  s.wavelengths.resize(static_cast<size_t>(dim));
  for (int d = 0; d < dim; ++d) {
    if (d < half) {
      const double frac = static_cast<double>(3 * (d / 3) + 1) / dim;
      s.wavelengths[static_cast<size_t>(d)] = frac * (n - base) + base;
    } else {
      s.wavelengths[static_cast<size_t>(d)] = static_cast<double>(n);
    }
  }
  return s;
}

double cpe_wave(double z, double lambda, bool even_dim) {
  const double arg =
      (kTwoPi / lambda) * std::fabs(std::fmod(z, 2.0 * lambda) - lambda);
  return even_dim ? std::sin(arg) : std::cos(arg);
}

std::vector<double> cpe_embed(int i, const FrequencySchedule& schedule) {
  if (i < 0 || i >= schedule.n)
    throw std::out_of_range("cpe_embed position out of range");
  std::vector<double> row(static_cast<size_t>(schedule.dim));
  const double n = static_cast<double>(schedule.n);
  for (int d = 0; d < schedule.dim; ++d) {
    const double lambda = schedule.wavelengths[static_cast<size_t>(d)];
    // ceil(n / lambda) degenerates to 1 when lambda == n; taking that branch
    // exactly avoids float-boundary flicker in the ceiling.
    const double cycles = lambda == n ? 1.0 : std::ceil(n / lambda);
    const double z = (static_cast<double>(i) / n) * lambda * cycles;
    row[static_cast<size_t>(d)] = cpe_wave(z, lambda, d % 2 == 0);
  }
  return row;
}

std::vector<double> abs_pe_embed(int i, int dim) {
  if (i < 0) throw std::out_of_range("abs_pe_embed position out of range");
  if (dim < 2 || dim % 2 != 0)
    throw std::invalid_argument("abs_pe_embed needs even dim >= 2");
  std::vector<double> row(static_cast<size_t>(dim));
  for (int d = 0; d < dim; ++d) {
    const double freq =
        std::pow(10000.0, -static_cast<double>((d / 2) * 2) / dim);
    const double angle = static_cast<double>(i) * freq;
    row[static_cast<size_t>(d)] = d % 2 == 0 ? std::sin(angle) : std::cos(angle);
  }
  return row;
}

PositionalTable build_table(int n, int dim, PositionalMethod method,
                            const FrequencySchedule* reuse) {
  PositionalTable t;
  t.n = n;
  t.dim = dim;
  t.method = method;
  t.rows = Tensor({n, dim});
  if (method == PositionalMethod::kAbsPe) {
    if (reuse != nullptr)
      throw std::invalid_argument("frequency reuse applies to the cyclic method only");
    for (int i = 0; i < n; ++i) {
      const std::vector<double> row = abs_pe_embed(i, dim);
      for (int d = 0; d < dim; ++d)
        t.rows.at(i, d) = static_cast<float>(row[static_cast<size_t>(d)]);
    }
    return t;
  }
  FrequencySchedule schedule;
  if (reuse != nullptr) {
    if (reuse->dim != dim)
      throw std::invalid_argument("reused frequency schedule has mismatched dim");
    schedule = *reuse;
    schedule.n = n;  // keep wavelengths, re-space positions for the new size
    t.reused_frequencies = true;
  } else {
    schedule = make_frequency_schedule(n, dim);
  }
  for (int i = 0; i < n; ++i) {
    const std::vector<double> row = cpe_embed(i, schedule);
    for (int d = 0; d < dim; ++d)
      t.rows.at(i, d) = static_cast<float>(row[static_cast<size_t>(d)]);
  }
  return t;
}

bool should_reuse_frequencies(int n_new, int n_old) {
  if (n_new <= 0 || n_old <= 0)
    throw std::invalid_argument("sizes must be positive");
  const double ratio = static_cast<double>(n_new) / n_old;
  return ratio < 0.5 || ratio > 2.0;
}

void write_table_csv(const PositionalTable& table, std::ostream& out) {
  for (int i = 0; i < table.n; ++i) {
    for (int d = 0; d < table.dim; ++d) {
      if (d > 0) out << ',';
      out << table.rows.at(i, d);
    }
    out << '\n';
  }
}

}  // namespace dact
