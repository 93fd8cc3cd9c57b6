#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "dact/tensor.hpp"

namespace dact {

enum class PositionalMethod { kCpe, kAbsPe };

std::string positional_method_name(PositionalMethod method);
PositionalMethod positional_method_from_name(const std::string& name);

// Per-dimension wavelengths for the cyclic encoding. Dimensions come in
// groups of three sharing a wavelength; the upper half is pinned to n so the
// slowest components sweep exactly one cycle over the tour.
struct FrequencySchedule {
  int n = 0;
  int dim = 0;
  std::vector<double> wavelengths;  // size dim

  double omega(int d) const;  // 2*pi / wavelength[d]
};

// n >= 2, dim even and >= 4, else std::invalid_argument.
FrequencySchedule make_frequency_schedule(int n, int dim);

// One waveform sample: sin (even dims) or cos (odd dims) of
// omega * |(z mod 2*lambda) - lambda|; reflection-symmetric, period 2*lambda.
double cpe_wave(double z, double lambda, bool even_dim);

// Row i of the cyclic table, double precision. 0 <= i < schedule.n.
std::vector<double> cpe_embed(int i, const FrequencySchedule& schedule);

// Classic sinusoidal encoding, geometric wavelengths base 10000.
std::vector<double> abs_pe_embed(int i, int dim);

struct PositionalTable {
  int n = 0;
  int dim = 0;
  PositionalMethod method = PositionalMethod::kCpe;
  bool reused_frequencies = false;
  Tensor rows;  // [n, dim]
};

// Builds the n x dim table. When reuse is given (cyclic method only), its
// wavelengths are kept while positions are re-spaced for the new n — the
// generalization mode for sizes far from the training size. Mismatched dim
// in reuse -> std::invalid_argument.
PositionalTable build_table(int n, int dim, PositionalMethod method,
                            const FrequencySchedule* reuse = nullptr);

// Default strategy: regenerate frequencies when the new size is within a
// factor of two of the old one, otherwise reuse the old frequencies.
bool should_reuse_frequencies(int n_new, int n_old);

// One line per position, comma-separated values.
void write_table_csv(const PositionalTable& table, std::ostream& out);

}  // namespace dact
