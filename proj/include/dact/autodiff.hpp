#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dact/tensor.hpp"

namespace dact {

// Trainable tensor with gradient accumulator and Adam state.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor adam_m, adam_v;
  int64_t adam_step = 0;

  Param(std::string n, Tensor v);
  int64_t numel() const { return value.numel(); }
  void zero_grad();
};

class Graph;

// Handle to a node on a graph's tape.
struct Var {
  Graph* g = nullptr;
  int32_t id = -1;
  const Tensor& val() const;
};

// Reverse-mode tape. Thread-confined: a graph must be built and differentiated
// on one thread. Construct with grad=false for cheap inference-only forwards;
// calling backward on such a graph throws.
class Graph {
 public:
  explicit Graph(bool grad = true) : grad_(grad) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return grad_; }

  Var input(Tensor t);
  // Like input, but participates in backward; read the result with grad_of.
  Var leaf(Tensor t);

  // x [*, a] -> [*, b]; W [a, b]; optional bias [b]
  Var linear(Var x, Param& W, Param* b = nullptr);
  Var matmul(Var a, Var b);                    // [n,k] x [k,m]
  Var bmm_nt(Var a, Var b);                    // [R,n,k] x [R,m,k] -> [R,n,m]
  Var bmm(Var a, Var b);                       // [R,n,m] x [R,m,k] -> [R,n,k]
  Var split_heads(Var x, int m);               // [B,N,m*d] -> [B*m,N,d]
  Var merge_heads(Var x, int m);               // [B*m,N,d] -> [B,N,m*d]
  Var concat_last(const std::vector<Var>& xs);

  Var relu(Var x);
  Var tanh_act(Var x);
  Var scale(Var x, float c);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var neg(Var x);
  Var abs_val(Var x);
  Var square(Var x);
  Var exp_val(Var x);
  Var min_ew(Var a, Var b);
  Var max_ew(Var a, Var b);
  Var clamp_scalar(Var x, float lo, float hi);
  Var clamp_tensor(Var x, const Tensor& lo, const Tensor& hi);
  Var sub_const(Var x, const Tensor& c);
  Var mul_const(Var x, const Tensor& c);

  Var add_bcast_row(Var x, Var row);           // [B,N,d] + [B,d]
  Var reduce_max_mid(Var x);                   // [B,N,d] -> [B,d]
  Var reduce_mean_mid(Var x);                  // [B,N,d] -> [B,d]
  Var mean_all(Var x);                         // -> [1]

  // Gather rows of a constant table; out [n_idx, table_cols]. The table never
  // receives gradients (positional tables are frozen).
  Var rows_from(const Tensor& table, const std::vector<int32_t>& idx);

  Var softmax_rows(Var x);
  // mask: same shape, 1.0 = forbidden entry (exact zero probability).
  Var softmax_masked(Var x, const Tensor& mask);
  // log softmax of row r evaluated at picks[r]; out [rows]. Stable LSE.
  Var log_prob_pick(Var logits, const Tensor& mask, const std::vector<int64_t>& picks);
  Var layer_norm(Var x, Param& gain, Param& offset);  // eps 1e-5, per row

  Var reshape(Var x, std::vector<int64_t> s);

  void backward(Var loss);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  const Tensor& grad_of(Var v) const;
  size_t size() const { return nodes_.size(); }

 private:
  friend struct Var;
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool grad_alloc = false;
    std::function<void()> back;
  };
  std::vector<Node> nodes_;
  bool grad_ = true;
  bool consumed_ = false;

  Var push(Tensor value, bool requires_grad);
  Tensor& grad_buf(int32_t id);
  Node& node(int32_t id) { return nodes_[id]; }
};

constexpr float kLayerNormEps = 1e-5f;

}  // namespace dact
