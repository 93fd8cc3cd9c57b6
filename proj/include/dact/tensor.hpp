#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dact {

// Dense row-major float32 tensor, rank 0..3. The last dimension is the
// feature/column axis for every row-wise op in this codebase.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s, float fill = 0.0f);
  static Tensor scalar(float v);
  static Tensor from(std::vector<int64_t> s, std::vector<float> values);

  int64_t numel() const;
  int rank() const { return static_cast<int>(shape.size()); }
  // rows() collapses all leading dimensions; cols() is the last dimension.
  int64_t cols() const;
  int64_t rows() const;

  float& at(int64_t r, int64_t c) { return data[r * cols() + c]; }
  float at(int64_t r, int64_t c) const { return data[r * cols() + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;
};

std::string shape_str(const std::vector<int64_t>& s);
int64_t shape_numel(const std::vector<int64_t>& s);

}  // namespace dact
