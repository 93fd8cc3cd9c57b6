#include "dact/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace dact {

int64_t shape_numel(const std::vector<int64_t>& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const std::vector<int64_t>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

Tensor::Tensor(std::vector<int64_t> s, float fill) : shape(std::move(s)) {
  for (int64_t d : shape)
    if (d <= 0) throw std::invalid_argument("Tensor: non-positive dim in " + shape_str(shape));
  data.assign(static_cast<size_t>(shape_numel(shape)), fill);
}

Tensor Tensor::scalar(float v) {
  Tensor t;
  t.shape = {1};
  t.data = {v};
  return t;
}

Tensor Tensor::from(std::vector<int64_t> s, std::vector<float> values) {
  if (shape_numel(s) != static_cast<int64_t>(values.size()))
    throw std::invalid_argument("Tensor::from: size mismatch for " + shape_str(s));
  Tensor t;
  t.shape = std::move(s);
  t.data = std::move(values);
  return t;
}

int64_t Tensor::numel() const { return static_cast<int64_t>(data.size()); }

int64_t Tensor::cols() const {
  if (shape.empty()) throw std::invalid_argument("Tensor::cols on rank-0 tensor");
  return shape.back();
}

int64_t Tensor::rows() const { return cols() == 0 ? 0 : numel() / cols(); }

bool Tensor::all_finite() const {
  for (float v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace dact
