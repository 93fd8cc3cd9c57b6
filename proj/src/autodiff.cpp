#include "dact/autodiff.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>

namespace dact {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<MatRM>;
using CMap = Eigen::Map<const MatRM>;

static CMap mat(const Tensor& t, int64_t r, int64_t c) { return CMap(t.data.data(), r, c); }
static Map mat(Tensor& t, int64_t r, int64_t c) { return Map(t.data.data(), r, c); }

Param::Param(std::string n, Tensor v)
    : name(std::move(n)),
      value(std::move(v)),
      grad(value.shape, 0.0f),
      adam_m(value.shape, 0.0f),
      adam_v(value.shape, 0.0f) {}

void Param::zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0f); }

const Tensor& Var::val() const { return g->value(*this); }

Var Graph::push(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = grad_ && requires_grad;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int32_t>(nodes_.size() - 1)};
}

Tensor& Graph::grad_buf(int32_t id) {
  Node& n = nodes_[id];
  if (!n.grad_alloc) {
    n.grad = Tensor(n.value.shape, 0.0f);
    n.grad_alloc = true;
  }
  return n.grad;
}

const Tensor& Graph::grad_of(Var v) const {
  const Node& n = nodes_[v.id];
  if (!n.grad_alloc) throw std::runtime_error("grad_of: node has no gradient");
  return n.grad;
}

Var Graph::input(Tensor t) { return push(std::move(t), false); }

Var Graph::leaf(Tensor t) { return push(std::move(t), true); }

static void check_same(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                                " vs " + shape_str(b.shape));
}

Var Graph::linear(Var x, Param& W, Param* b) {
  const Tensor& xv = value(x);
  if (W.value.rank() != 2 || xv.cols() != W.value.shape[0])
    throw std::invalid_argument("linear: " + shape_str(xv.shape) + " x " + shape_str(W.value.shape));
  int64_t R = xv.rows(), A = xv.cols(), B = W.value.shape[1];
  if (b && b->value.numel() != B) throw std::invalid_argument("linear: bad bias size");

  std::vector<int64_t> oshape = xv.shape;
  oshape.back() = B;
  Tensor out(oshape);
  mat(out, R, B).noalias() = mat(xv, R, A) * mat(W.value, A, B);
  if (b) mat(out, R, B).rowwise() += Eigen::Map<const Eigen::RowVectorXf>(b->value.data.data(), B);

  Var y = push(std::move(out), true);
  if (!grad_) return y;
  Param* bp = b;
  Param* Wp = &W;
  int32_t xi = x.id, yi = y.id;
  nodes_[yi].back = [this, xi, yi, Wp, bp, R, A, B]() {
    const Tensor& dy = nodes_[yi].grad;
    const Tensor& xv2 = nodes_[xi].value;
    mat(Wp->grad, A, B).noalias() += mat(xv2, R, A).transpose() * mat(dy, R, B);
    if (bp)
      Eigen::Map<Eigen::RowVectorXf>(bp->grad.data.data(), B) += mat(dy, R, B).colwise().sum();
    if (nodes_[xi].requires_grad)
      mat(grad_buf(xi), R, A).noalias() += mat(dy, R, B) * mat(Wp->value, A, B).transpose();
  };
  return y;
}

Var Graph::matmul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.shape[1] != bv.shape[0])
    throw std::invalid_argument("matmul: " + shape_str(av.shape) + " x " + shape_str(bv.shape));
  int64_t n = av.shape[0], k = av.shape[1], m = bv.shape[1];
  Tensor out({n, m});
  mat(out, n, m).noalias() = mat(av, n, k) * mat(bv, k, m);
  bool req = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  Var y = push(std::move(out), req);
  if (!grad_ || !req) return y;
  int32_t ai = a.id, bi = b.id, yi = y.id;
  nodes_[yi].back = [this, ai, bi, yi, n, k, m]() {
    const Tensor& dy = nodes_[yi].grad;
    if (nodes_[ai].requires_grad)
      mat(grad_buf(ai), n, k).noalias() += mat(dy, n, m) * mat(nodes_[bi].value, k, m).transpose();
    if (nodes_[bi].requires_grad)
      mat(grad_buf(bi), k, m).noalias() += mat(nodes_[ai].value, n, k).transpose() * mat(dy, n, m);
  };
  return y;
}

static void check_bmm(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rank() != 3 || b.rank() != 3 || a.shape[0] != b.shape[0])
    throw std::invalid_argument(std::string(op) + ": want rank-3 with equal batch, got " +
                                shape_str(a.shape) + " x " + shape_str(b.shape));
}

Var Graph::bmm_nt(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  check_bmm(av, bv, "bmm_nt");
  if (av.shape[2] != bv.shape[2]) throw std::invalid_argument("bmm_nt: inner dim mismatch");
  int64_t R = av.shape[0], n = av.shape[1], k = av.shape[2], m = bv.shape[1];
  Tensor out({R, n, m});
  for (int64_t r = 0; r < R; ++r) {
    CMap A(av.data.data() + r * n * k, n, k);
    CMap B(bv.data.data() + r * m * k, m, k);
    Map C(out.data.data() + r * n * m, n, m);
    C.noalias() = A * B.transpose();
  }
  bool req = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  Var y = push(std::move(out), req);
  if (!grad_ || !req) return y;
  int32_t ai = a.id, bi = b.id, yi = y.id;
  nodes_[yi].back = [this, ai, bi, yi, R, n, k, m]() {
    const Tensor& dy = nodes_[yi].grad;
    const Tensor& av2 = nodes_[ai].value;
    const Tensor& bv2 = nodes_[bi].value;
    for (int64_t r = 0; r < R; ++r) {
      CMap dC(dy.data.data() + r * n * m, n, m);
      if (nodes_[ai].requires_grad) {
        Map dA(grad_buf(ai).data.data() + r * n * k, n, k);
        dA.noalias() += dC * CMap(bv2.data.data() + r * m * k, m, k);
      }
      if (nodes_[bi].requires_grad) {
        Map dB(grad_buf(bi).data.data() + r * m * k, m, k);
        dB.noalias() += dC.transpose() * CMap(av2.data.data() + r * n * k, n, k);
      }
    }
  };
  return y;
}

Var Graph::bmm(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  check_bmm(av, bv, "bmm");
  if (av.shape[2] != bv.shape[1]) throw std::invalid_argument("bmm: inner dim mismatch");
  int64_t R = av.shape[0], n = av.shape[1], m = av.shape[2], k = bv.shape[2];
  Tensor out({R, n, k});
  for (int64_t r = 0; r < R; ++r) {
    CMap A(av.data.data() + r * n * m, n, m);
    CMap B(bv.data.data() + r * m * k, m, k);
    Map C(out.data.data() + r * n * k, n, k);
    C.noalias() = A * B;
  }
  bool req = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  Var y = push(std::move(out), req);
  if (!grad_ || !req) return y;
  int32_t ai = a.id, bi = b.id, yi = y.id;
  nodes_[yi].back = [this, ai, bi, yi, R, n, m, k]() {
    const Tensor& dy = nodes_[yi].grad;
    const Tensor& av2 = nodes_[ai].value;
    const Tensor& bv2 = nodes_[bi].value;
    for (int64_t r = 0; r < R; ++r) {
      CMap dC(dy.data.data() + r * n * k, n, k);
      if (nodes_[ai].requires_grad) {
        Map dA(grad_buf(ai).data.data() + r * n * m, n, m);
        dA.noalias() += dC * CMap(bv2.data.data() + r * m * k, m, k).transpose();
      }
      if (nodes_[bi].requires_grad) {
        Map dB(grad_buf(bi).data.data() + r * m * k, m, k);
        dB.noalias() += CMap(av2.data.data() + r * n * m, n, m).transpose() * dC;
      }
    }
  };
  return y;
}

Var Graph::split_heads(Var x, int m) {
  const Tensor& xv = value(x);
  if (xv.rank() != 3 || xv.shape[2] % m != 0)
    throw std::invalid_argument("split_heads: bad shape " + shape_str(xv.shape));
  int64_t B = xv.shape[0], N = xv.shape[1], D = xv.shape[2], d = D / m;
  Tensor out({B * m, N, d});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < m; ++h)
      for (int64_t i = 0; i < N; ++i) {
        const float* src = xv.data.data() + (b * N + i) * D + h * d;
        float* dst = out.data.data() + ((b * m + h) * N + i) * d;
        std::copy(src, src + d, dst);
      }
  Var y = push(std::move(out), nodes_[x.id].requires_grad);
  if (!grad_ || !nodes_[y.id].requires_grad) return y;
  int32_t xi = x.id, yi = y.id;
  nodes_[yi].back = [this, xi, yi, B, N, D, d, m]() {
    const Tensor& dy = nodes_[yi].grad;
    Tensor& dx = grad_buf(xi);
    for (int64_t b = 0; b < B; ++b)
      for (int64_t h = 0; h < m; ++h)
        for (int64_t i = 0; i < N; ++i) {
          const float* src = dy.data.data() + ((b * m + h) * N + i) * d;
          float* dst = dx.data.data() + (b * N + i) * D + h * d;
          for (int64_t c = 0; c < d; ++c) dst[c] += src[c];
        }
  };
  return y;
}

Var Graph::merge_heads(Var x, int m) {
  const Tensor& xv = value(x);
  if (xv.rank() != 3 || xv.shape[0] % m != 0)
    throw std::invalid_argument("merge_heads: bad shape " + shape_str(xv.shape));
  int64_t B = xv.shape[0] / m, N = xv.shape[1], d = xv.shape[2], D = d * m;
  Tensor out({B, N, D});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < m; ++h)
      for (int64_t i = 0; i < N; ++i) {
        const float* src = xv.data.data() + ((b * m + h) * N + i) * d;
        float* dst = out.data.data() + (b * N + i) * D + h * d;
        std::copy(src, src + d, dst);
      }
  Var y = push(std::move(out), nodes_[x.id].requires_grad);
  if (!grad_ || !nodes_[y.id].requires_grad) return y;
  int32_t xi = x.id, yi = y.id;
  nodes_[yi].back = [this, xi, yi, B, N, d, D, m]() {
    const Tensor& dy = nodes_[yi].grad;
    Tensor& dx = grad_buf(xi);
    for (int64_t b = 0; b < B; ++b)
      for (int64_t h = 0; h < m; ++h)
        for (int64_t i = 0; i < N; ++i) {
          const float* src = dy.data.data() + (b * N + i) * D + h * d;
          float* dst = dx.data.data() + ((b * m + h) * N + i) * d;
          for (int64_t c = 0; c < d; ++c) dst[c] += src[c];
        }
  };
  return y;
}

Var Graph::concat_last(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_last: empty");
  int64_t R = value(xs[0]).rows();
  int64_t C = 0;
  bool req = false;
  for (const Var& v : xs) {
    if (value(v).rows() != R) throw std::invalid_argument("concat_last: row mismatch");
    C += value(v).cols();
    req = req || nodes_[v.id].requires_grad;
  }
  std::vector<int64_t> oshape = value(xs[0]).shape;
  oshape.back() = C;
  Tensor out(oshape);
  int64_t off = 0;
  for (const Var& v : xs) {
    const Tensor& xv = value(v);
    int64_t c = xv.cols();
    for (int64_t r = 0; r < R; ++r)
      std::copy(xv.data.data() + r * c, xv.data.data() + (r + 1) * c,
                out.data.data() + r * C + off);
    off += c;
  }
  Var y = push(std::move(out), req);
  if (!grad_ || !req) return y;
  std::vector<int32_t> ids;
  for (const Var& v : xs) ids.push_back(v.id);
  int32_t yi = y.id;
  nodes_[yi].back = [this, ids, yi, R, C]() {
    const Tensor& dy = nodes_[yi].grad;
    int64_t off2 = 0;
    for (int32_t xi : ids) {
      int64_t c = nodes_[xi].value.cols();
      if (nodes_[xi].requires_grad) {
        Tensor& dx = grad_buf(xi);
        for (int64_t r = 0; r < R; ++r) {
          const float* src = dy.data.data() + r * C + off2;
          float* dst = dx.data.data() + r * c;
          for (int64_t k = 0; k < c; ++k) dst[k] += src[k];
        }
      }
      off2 += c;
    }
  };
  return y;
}

// -- elementwise ---------------------------------------------------------

Var Graph::relu(Var x) {
  const Tensor& xv = value(x);
  Tensor out(xv.shape);
  for (int64_t i = 0; i < xv.numel(); ++i) out.data[i] = xv.data[i] > 0.0f ? xv.data[i] : 0.0f;
  Var y = push(std::move(out), nodes_[x.id].requires_grad);
  if (!grad_ || !nodes_[y.id].requires_grad) return y;
  int32_t xi = x.id, yi = y.id;
  nodes_[yi].back = [this, xi, yi]() {
    const Tensor& dy = nodes_[yi].grad;
    const Tensor& xv2 = nodes_[xi].value;
    Tensor& dx = grad_buf(xi);
    for (int64_t i = 0; i < dy.numel(); ++i)
      if (xv2.data[i] > 0.0f) dx.data[i] += dy.data[i];
  };
  return y;
}

Var Graph::tanh_act(Var x) {
  const Tensor& xv = value(x);
  Tensor out(xv.shape);
  for (int64_t i = 0; i < xv.numel(); ++i) out.data[i] = std::tanh(xv.data[i]);
  Var y = push(std::move(out), nodes_[x.id].requires_grad);
  if (!grad_ || !nodes_[y.id].requires_grad) return y;
  int32_t xi = x.id, yi = y.id;
  nodes_[yi].back = [this, xi, yi]() {
    const Tensor& dy = nodes_[yi].grad;
    const Tensor& yv = nodes_[yi].value;
    Tensor& dx = grad_buf(xi);
    for (int64_t i = 0; i < dy.numel(); ++i) dx.data[i] += dy.data[i] * (1.0f - yv.data[i] * yv.data[i]);
  };
  return y;
}

Var Graph::scale(Var x, float c) {
  const Tensor& xv = value(x);
  Tensor out(xv.shape);
  for (int64_t i = 0; i < xv.numel(); ++i) out.data[i] = xv.data[i] * c;
  Var y = push(std::move(out), nodes_[x.id].requires_grad);
  if (!grad_ || !nodes_[y.id].requires_grad) return y;
  int32_t xi = x.id, yi = y.id;
  nodes_[yi].back = [this, xi, yi, c]() {
    const Tensor& dy = nodes_[yi].grad;
    Tensor& dx = grad_buf(xi);
    for (int64_t i = 0; i < dy.numel(); ++i) dx.data[i] += dy.data[i] * c;
  };
  return y;
}

Var Graph::add(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  check_same(av, bv, "add");
  Tensor out(av.shape);
  for (int64_t i = 0; i < av.numel(); ++i) out.data[i] = av.data[i] + bv.data[i];
  bool req = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  Var y = push(std::move(out), req);
  if (!grad_ || !req) return y;
  int32_t ai = a.id, bi = b.id, yi = y.id;
  nodes_[yi].back = [this, ai, bi, yi]() {
    const Tensor& dy = nodes_[yi].grad;
    if (nodes_[ai].requires_grad) {
      Tensor& da = grad_buf(ai);
      for (int64_t i = 0; i < dy.numel(); ++i) da.data[i] += dy.data[i];
    }
    if (nodes_[bi].requires_grad) {
      Tensor& db = grad_buf(bi);
      for (int64_t i = 0; i < dy.numel(); ++i) db.data[i] += dy.data[i];
    }
  };
  return y;
}

Var Graph::sub(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  check_same(av, bv, "sub");
  Tensor out(av.shape);
  for (int64_t i = 0; i < av.numel(); ++i) out.data[i] = av.data[i] - bv.data[i];
  bool req = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  Var y = push(std::move(out), req);
  if (!grad_ || !req) return y;
  int32_t ai = a.id, bi = b.id, yi = y.id;
  nodes_[yi].back = [this, ai, bi, yi]() {
    const Tensor& dy = nodes_[yi].grad;
    if (nodes_[ai].requires_grad) {
      Tensor& da = grad_buf(ai);
      for (int64_t i = 0; i < dy.numel(); ++i) da.data[i] += dy.data[i];
    }
    if (nodes_[bi].requires_grad) {
      Tensor& db = grad_buf(bi);
      for (int64_t i = 0; i < dy.numel(); ++i) db.data[i] -= dy.data[i];
    }
  };
  return y;
}

Var Graph::mul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  check_same(av, bv, "mul");
  Tensor out(av.shape);
  for (int64_t i = 0; i < av.numel(); ++i) out.data[i] = av.data[i] * bv.data[i];
  bool req = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  Var y = push(std::move(out), req);
  if (!grad_ || !req) return y;
  int32_t ai = a.id, bi = b.id, yi = y.id;
  nodes_[yi].back = [this, ai, bi, yi]() {
    const Tensor& dy = nodes_[yi].grad;
    const Tensor& av2 = nodes_[ai].value;
    const Tensor& bv2 = nodes_[bi].value;
    if (nodes_[ai].requires_grad) {
      Tensor& da = grad_buf(ai);
      for (int64_t i = 0; i < dy.numel(); ++i) da.data[i] += dy.data[i] * bv2.data[i];
    }
    if (nodes_[bi].requires_grad) {
      Tensor& db = grad_buf(bi);
      for (int64_t i = 0; i < dy.numel(); ++i) db.data[i] += dy.data[i] * av2.data[i];
    }
  };
  return y;
}

Var Graph::neg(Var x) { return scale(x, -1.0f); }

Var Graph::abs_val(Var x) {
  const Tensor& xv = value(x);
  Tensor out(xv.shape);
  for (int64_t i = 0; i < xv.numel(); ++i) out.data[i] = std::fabs(xv.data[i]);
  Var y = push(std::move(out), nodes_[x.id].requires_grad);
  if (!grad_ || !nodes_[y.id].requires_grad) return y;
  int32_t xi = x.id, yi = y.id;
  nodes_[yi].back = [this, xi, yi]() {
    const Tensor& dy = nodes_[yi].grad;
    const Tensor& xv2 = nodes_[xi].value;
    Tensor& dx = grad_buf(xi);
    for (int64_t i = 0; i < dy.numel(); ++i) {
      float s = xv2.data[i] > 0.0f ? 1.0f : (xv2.data[i] < 0.0f ? -1.0f : 0.0f);
      dx.data[i] += dy.data[i] * s;
    }
  };
  return y;
}

Var Graph::square(Var x) {
  const Tensor& xv = value(x);
  Tensor out(xv.shape);
  for (int64_t i = 0; i < xv.numel(); ++i) out.data[i] = xv.data[i] * xv.data[i];
  Var y = push(std::move(out), nodes_[x.id].requires_grad);
  if (!grad_ || !nodes_[y.id].requires_grad) return y;
  int32_t xi = x.id, yi = y.id;
  nodes_[yi].back = [this, xi, yi]() {
    const Tensor& dy = nodes_[yi].grad;
    const Tensor& xv2 = nodes_[xi].value;
    Tensor& dx = grad_buf(xi);
    for (int64_t i = 0; i < dy.numel(); ++i) dx.data[i] += dy.data[i] * 2.0f * xv2.data[i];
  };
  return y;
}

Var Graph::exp_val(Var x) {
  const Tensor& xv = value(x);
  Tensor out(xv.shape);
  for (int64_t i = 0; i < xv.numel(); ++i) out.data[i] = std::exp(xv.data[i]);
  Var y = push(std::move(out), nodes_[x.id].requires_grad);
  if (!grad_ || !nodes_[y.id].requires_grad) return y;
  int32_t xi = x.id, yi = y.id;
  nodes_[yi].back = [this, xi, yi]() {
    const Tensor& dy = nodes_[yi].grad;
    const Tensor& yv = nodes_[yi].value;
    Tensor& dx = grad_buf(xi);
    for (int64_t i = 0; i < dy.numel(); ++i) dx.data[i] += dy.data[i] * yv.data[i];
  };
  return y;
}

Var Graph::min_ew(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  check_same(av, bv, "min_ew");
  Tensor out(av.shape);
  for (int64_t i = 0; i < av.numel(); ++i) out.data[i] = std::min(av.data[i], bv.data[i]);
  bool req = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  Var y = push(std::move(out), req);
  if (!grad_ || !req) return y;
  int32_t ai = a.id, bi = b.id, yi = y.id;
  nodes_[yi].back = [this, ai, bi, yi]() {
    const Tensor& dy = nodes_[yi].grad;
    const Tensor& av2 = nodes_[ai].value;
    const Tensor& bv2 = nodes_[bi].value;
    for (int64_t i = 0; i < dy.numel(); ++i) {
      bool take_a = av2.data[i] <= bv2.data[i];
      if (take_a && nodes_[ai].requires_grad) grad_buf(ai).data[i] += dy.data[i];
      if (!take_a && nodes_[bi].requires_grad) grad_buf(bi).data[i] += dy.data[i];
    }
  };
  return y;
}

Var Graph::max_ew(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  check_same(av, bv, "max_ew");
  Tensor out(av.shape);
  for (int64_t i = 0; i < av.numel(); ++i) out.data[i] = std::max(av.data[i], bv.data[i]);
  bool req = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  Var y = push(std::move(out), req);
  if (!grad_ || !req) return y;
  int32_t ai = a.id, bi = b.id, yi = y.id;
  nodes_[yi].back = [this, ai, bi, yi]() {
    const Tensor& dy = nodes_[yi].grad;
    const Tensor& av2 = nodes_[ai].value;
    const Tensor& bv2 = nodes_[bi].value;
    for (int64_t i = 0; i < dy.numel(); ++i) {
      bool take_a = av2.data[i] >= bv2.data[i];
      if (take_a && nodes_[ai].requires_grad) grad_buf(ai).data[i] += dy.data[i];
      if (!take_a && nodes_[bi].requires_grad) grad_buf(bi).data[i] += dy.data[i];
    }
  };
  return y;
}

Var Graph::clamp_scalar(Var x, float lo, float hi) {
  const Tensor& xv = value(x);
  Tensor out(xv.shape);
  for (int64_t i = 0; i < xv.numel(); ++i) out.data[i] = std::min(hi, std::max(lo, xv.data[i]));
  Var y = push(std::move(out), nodes_[x.id].requires_grad);
  if (!grad_ || !nodes_[y.id].requires_grad) return y;
  int32_t xi = x.id, yi = y.id;
  nodes_[yi].back = [this, xi, yi, lo, hi]() {
    const Tensor& dy = nodes_[yi].grad;
    const Tensor& xv2 = nodes_[xi].value;
    Tensor& dx = grad_buf(xi);
    for (int64_t i = 0; i < dy.numel(); ++i)
      if (xv2.data[i] >= lo && xv2.data[i] <= hi) dx.data[i] += dy.data[i];
  };
  return y;
}

Var Graph::clamp_tensor(Var x, const Tensor& lo, const Tensor& hi) {
  const Tensor& xv = value(x);
  check_same(xv, lo, "clamp_tensor");
  check_same(xv, hi, "clamp_tensor");
  Tensor out(xv.shape);
  for (int64_t i = 0; i < xv.numel(); ++i)
    out.data[i] = std::min(hi.data[i], std::max(lo.data[i], xv.data[i]));
  Var y = push(std::move(out), nodes_[x.id].requires_grad);
  if (!grad_ || !nodes_[y.id].requires_grad) return y;
  int32_t xi = x.id, yi = y.id;
  Tensor lo_c = lo, hi_c = hi;
  nodes_[yi].back = [this, xi, yi, lo_c, hi_c]() {
    const Tensor& dy = nodes_[yi].grad;
    const Tensor& xv2 = nodes_[xi].value;
    Tensor& dx = grad_buf(xi);
    for (int64_t i = 0; i < dy.numel(); ++i)
      if (xv2.data[i] >= lo_c.data[i] && xv2.data[i] <= hi_c.data[i]) dx.data[i] += dy.data[i];
  };
  return y;
}

Var Graph::sub_const(Var x, const Tensor& c) {
  const Tensor& xv = value(x);
  check_same(xv, c, "sub_const");
  Tensor out(xv.shape);
  for (int64_t i = 0; i < xv.numel(); ++i) out.data[i] = xv.data[i] - c.data[i];
  Var y = push(std::move(out), nodes_[x.id].requires_grad);
  if (!grad_ || !nodes_[y.id].requires_grad) return y;
  int32_t xi = x.id, yi = y.id;
  nodes_[yi].back = [this, xi, yi]() {
    const Tensor& dy = nodes_[yi].grad;
    Tensor& dx = grad_buf(xi);
    for (int64_t i = 0; i < dy.numel(); ++i) dx.data[i] += dy.data[i];
  };
  return y;
}

Var Graph::mul_const(Var x, const Tensor& c) {
  const Tensor& xv = value(x);
  check_same(xv, c, "mul_const");
  Tensor out(xv.shape);
  for (int64_t i = 0; i < xv.numel(); ++i) out.data[i] = xv.data[i] * c.data[i];
  Var y = push(std::move(out), nodes_[x.id].requires_grad);
  if (!grad_ || !nodes_[y.id].requires_grad) return y;
  int32_t xi = x.id, yi = y.id;
  Tensor cc = c;
  nodes_[yi].back = [this, xi, yi, cc]() {
    const Tensor& dy = nodes_[yi].grad;
    Tensor& dx = grad_buf(xi);
    for (int64_t i = 0; i < dy.numel(); ++i) dx.data[i] += dy.data[i] * cc.data[i];
  };
  return y;
}

// -- broadcast / reductions ---------------------------------------------

static void check_bcast(const Tensor& x, const Tensor& row, const char* op) {
  if (x.rank() != 3 || row.rank() != 2 || x.shape[0] != row.shape[0] || x.shape[2] != row.shape[1])
    throw std::invalid_argument(std::string(op) + ": " + shape_str(x.shape) + " with " +
                                shape_str(row.shape));
}

Var Graph::add_bcast_row(Var x, Var row) {
  const Tensor& xv = value(x);
  const Tensor& rv = value(row);
  check_bcast(xv, rv, "add_bcast_row");
  int64_t B = xv.shape[0], N = xv.shape[1], d = xv.shape[2];
  Tensor out(xv.shape);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t i = 0; i < N; ++i)
      for (int64_t k = 0; k < d; ++k)
        out.data[(b * N + i) * d + k] = xv.data[(b * N + i) * d + k] + rv.data[b * d + k];
  bool req = nodes_[x.id].requires_grad || nodes_[row.id].requires_grad;
  Var y = push(std::move(out), req);
  if (!grad_ || !req) return y;
  int32_t xi = x.id, ri = row.id, yi = y.id;
  nodes_[yi].back = [this, xi, ri, yi, B, N, d]() {
    const Tensor& dy = nodes_[yi].grad;
    if (nodes_[xi].requires_grad) {
      Tensor& dx = grad_buf(xi);
      for (int64_t i = 0; i < dy.numel(); ++i) dx.data[i] += dy.data[i];
    }
    if (nodes_[ri].requires_grad) {
      Tensor& dr = grad_buf(ri);
      for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < N; ++i)
          for (int64_t k = 0; k < d; ++k) dr.data[b * d + k] += dy.data[(b * N + i) * d + k];
    }
  };
  return y;
}

Var Graph::reduce_max_mid(Var x) {
  const Tensor& xv = value(x);
  if (xv.rank() != 3) throw std::invalid_argument("reduce_max_mid: want rank 3");
  int64_t B = xv.shape[0], N = xv.shape[1], d = xv.shape[2];
  Tensor out({B, d});
  std::vector<int32_t> arg(static_cast<size_t>(B * d), 0);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t k = 0; k < d; ++k) {
      float best = xv.data[(b * N) * d + k];
      int32_t bi = 0;
      for (int64_t i = 1; i < N; ++i) {
        float v = xv.data[(b * N + i) * d + k];
        if (v > best) { best = v; bi = static_cast<int32_t>(i); }
      }
      out.data[b * d + k] = best;
      arg[b * d + k] = bi;
    }
  Var y = push(std::move(out), nodes_[x.id].requires_grad);
  if (!grad_ || !nodes_[y.id].requires_grad) return y;
  int32_t xi = x.id, yi = y.id;
  nodes_[yi].back = [this, xi, yi, B, N, d, arg]() {
    const Tensor& dy = nodes_[yi].grad;
    Tensor& dx = grad_buf(xi);
    for (int64_t b = 0; b < B; ++b)
      for (int64_t k = 0; k < d; ++k)
        dx.data[(b * N + arg[b * d + k]) * d + k] += dy.data[b * d + k];
  };
  return y;
}

Var Graph::reduce_mean_mid(Var x) {
  const Tensor& xv = value(x);
  if (xv.rank() != 3) throw std::invalid_argument("reduce_mean_mid: want rank 3");
  int64_t B = xv.shape[0], N = xv.shape[1], d = xv.shape[2];
  Tensor out({B, d});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t k = 0; k < d; ++k) {
      double s = 0.0;
      for (int64_t i = 0; i < N; ++i) s += xv.data[(b * N + i) * d + k];
      out.data[b * d + k] = static_cast<float>(s / static_cast<double>(N));
    }
  Var y = push(std::move(out), nodes_[x.id].requires_grad);
  if (!grad_ || !nodes_[y.id].requires_grad) return y;
  int32_t xi = x.id, yi = y.id;
  nodes_[yi].back = [this, xi, yi, B, N, d]() {
    const Tensor& dy = nodes_[yi].grad;
    Tensor& dx = grad_buf(xi);
    float inv = 1.0f / static_cast<float>(N);
    for (int64_t b = 0; b < B; ++b)
      for (int64_t i = 0; i < N; ++i)
        for (int64_t k = 0; k < d; ++k) dx.data[(b * N + i) * d + k] += dy.data[b * d + k] * inv;
  };
  return y;
}

Var Graph::mean_all(Var x) {
  const Tensor& xv = value(x);
  double s = 0.0;
  for (float v : xv.data) s += v;
  int64_t n = xv.numel();
  Tensor out = Tensor::scalar(static_cast<float>(s / static_cast<double>(n)));
  Var y = push(std::move(out), nodes_[x.id].requires_grad);
  if (!grad_ || !nodes_[y.id].requires_grad) return y;
  int32_t xi = x.id, yi = y.id;
  nodes_[yi].back = [this, xi, yi, n]() {
    float g = nodes_[yi].grad.data[0] / static_cast<float>(n);
    Tensor& dx = grad_buf(xi);
    for (int64_t i = 0; i < n; ++i) dx.data[i] += g;
  };
  return y;
}

Var Graph::rows_from(const Tensor& table, const std::vector<int32_t>& idx) {
  if (table.rank() != 2) throw std::invalid_argument("rows_from: table must be rank 2");
  int64_t d = table.shape[1];
  Tensor out({static_cast<int64_t>(idx.size()), d});
  for (size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= table.shape[0])
      throw std::invalid_argument("rows_from: index out of range");
    std::copy(table.data.data() + idx[r] * d, table.data.data() + (idx[r] + 1) * d,
              out.data.data() + r * d);
  }
  return push(std::move(out), false);
}

Var Graph::reshape(Var x, std::vector<int64_t> s) {
  const Tensor& xv = value(x);
  if (shape_numel(s) != xv.numel())
    throw std::invalid_argument("reshape: numel mismatch " + shape_str(xv.shape) + " -> " + shape_str(s));
  Tensor out;
  out.shape = std::move(s);
  out.data = xv.data;
  Var y = push(std::move(out), nodes_[x.id].requires_grad);
  if (!grad_ || !nodes_[y.id].requires_grad) return y;
  int32_t xi = x.id, yi = y.id;
  nodes_[yi].back = [this, xi, yi]() {
    const Tensor& dy = nodes_[yi].grad;
    Tensor& dx = grad_buf(xi);
    for (int64_t i = 0; i < dy.numel(); ++i) dx.data[i] += dy.data[i];
  };
  return y;
}

// -- row-wise normalizations --------------------------------------------

Var Graph::softmax_rows(Var x) {
  const Tensor& xv = value(x);
  int64_t R = xv.rows(), C = xv.cols();
  Tensor out(xv.shape);
  for (int64_t r = 0; r < R; ++r) {
    const float* xi = xv.data.data() + r * C;
    float* yi = out.data.data() + r * C;
    float mx = xi[0];
    for (int64_t c = 1; c < C; ++c) mx = std::max(mx, xi[c]);
    double s = 0.0;
    for (int64_t c = 0; c < C; ++c) {
      yi[c] = std::exp(xi[c] - mx);
      s += yi[c];
    }
    float inv = static_cast<float>(1.0 / s);
    for (int64_t c = 0; c < C; ++c) yi[c] *= inv;
  }
  Var y = push(std::move(out), nodes_[x.id].requires_grad);
  if (!grad_ || !nodes_[y.id].requires_grad) return y;
  int32_t xi_id = x.id, yi_id = y.id;
  nodes_[yi_id].back = [this, xi_id, yi_id, R, C]() {
    const Tensor& dy = nodes_[yi_id].grad;
    const Tensor& yv = nodes_[yi_id].value;
    Tensor& dx = grad_buf(xi_id);
    for (int64_t r = 0; r < R; ++r) {
      const float* p = yv.data.data() + r * C;
      const float* g = dy.data.data() + r * C;
      float* d = dx.data.data() + r * C;
      double dot = 0.0;
      for (int64_t c = 0; c < C; ++c) dot += static_cast<double>(p[c]) * g[c];
      for (int64_t c = 0; c < C; ++c) d[c] += p[c] * (g[c] - static_cast<float>(dot));
    }
  };
  return y;
}

Var Graph::softmax_masked(Var x, const Tensor& mask) {
  const Tensor& xv = value(x);
  check_same(xv, mask, "softmax_masked");
  int64_t R = xv.rows(), C = xv.cols();
  Tensor out(xv.shape);
  for (int64_t r = 0; r < R; ++r) {
    const float* xi = xv.data.data() + r * C;
    const float* mi = mask.data.data() + r * C;
    float* yi = out.data.data() + r * C;
    float mx = -std::numeric_limits<float>::infinity();
    for (int64_t c = 0; c < C; ++c)
      if (mi[c] == 0.0f) mx = std::max(mx, xi[c]);
    if (!std::isfinite(mx))
      throw std::domain_error("softmax_masked: fully masked row " + std::to_string(r));
    double s = 0.0;
    for (int64_t c = 0; c < C; ++c) {
      if (mi[c] == 0.0f) {
        yi[c] = std::exp(xi[c] - mx);
        s += yi[c];
      } else {
        yi[c] = 0.0f;
      }
    }
    float inv = static_cast<float>(1.0 / s);
    for (int64_t c = 0; c < C; ++c) yi[c] *= inv;
  }
  Var y = push(std::move(out), nodes_[x.id].requires_grad);
  if (!grad_ || !nodes_[y.id].requires_grad) return y;
  int32_t xi_id = x.id, yi_id = y.id;
  nodes_[yi_id].back = [this, xi_id, yi_id, R, C]() {
    const Tensor& dy = nodes_[yi_id].grad;
    const Tensor& yv = nodes_[yi_id].value;
    Tensor& dx = grad_buf(xi_id);
    for (int64_t r = 0; r < R; ++r) {
      const float* p = yv.data.data() + r * C;
      const float* g = dy.data.data() + r * C;
      float* d = dx.data.data() + r * C;
      double dot = 0.0;
      for (int64_t c = 0; c < C; ++c) dot += static_cast<double>(p[c]) * g[c];
      // masked entries have p == 0, so they contribute and receive nothing
      for (int64_t c = 0; c < C; ++c) d[c] += p[c] * (g[c] - static_cast<float>(dot));
    }
  };
  return y;
}

Var Graph::log_prob_pick(Var logits, const Tensor& mask, const std::vector<int64_t>& picks) {
  const Tensor& xv = value(logits);
  check_same(xv, mask, "log_prob_pick");
  int64_t R = xv.rows(), C = xv.cols();
  if (static_cast<int64_t>(picks.size()) != R)
    throw std::invalid_argument("log_prob_pick: one pick per row required");
  Tensor out({R});
  for (int64_t r = 0; r < R; ++r) {
    if (picks[r] < 0 || picks[r] >= C) throw std::invalid_argument("log_prob_pick: pick out of range");
    if (mask.data[r * C + picks[r]] != 0.0f)
      throw std::invalid_argument("log_prob_pick: picked a masked entry");
    const float* xi = xv.data.data() + r * C;
    const float* mi = mask.data.data() + r * C;
    float mx = -std::numeric_limits<float>::infinity();
    for (int64_t c = 0; c < C; ++c)
      if (mi[c] == 0.0f) mx = std::max(mx, xi[c]);
    if (!std::isfinite(mx)) throw std::domain_error("log_prob_pick: fully masked row");
    double s = 0.0;
    for (int64_t c = 0; c < C; ++c)
      if (mi[c] == 0.0f) s += std::exp(static_cast<double>(xi[c]) - mx);
    double lse = mx + std::log(s);
    out.data[r] = static_cast<float>(xi[picks[r]] - lse);
  }
  Var y = push(std::move(out), nodes_[logits.id].requires_grad);
  if (!grad_ || !nodes_[y.id].requires_grad) return y;
  int32_t xi_id = logits.id, yi_id = y.id;
  Tensor mask_c = mask;
  std::vector<int64_t> picks_c = picks;
  nodes_[yi_id].back = [this, xi_id, yi_id, mask_c, picks_c, R, C]() {
    const Tensor& dy = nodes_[yi_id].grad;
    const Tensor& xv2 = nodes_[xi_id].value;
    Tensor& dx = grad_buf(xi_id);
    for (int64_t r = 0; r < R; ++r) {
      const float* xi = xv2.data.data() + r * C;
      const float* mi = mask_c.data.data() + r * C;
      float* d = dx.data.data() + r * C;
      float go = dy.data[r];
      float mx = -std::numeric_limits<float>::infinity();
      for (int64_t c = 0; c < C; ++c)
        if (mi[c] == 0.0f) mx = std::max(mx, xi[c]);
      double s = 0.0;
      for (int64_t c = 0; c < C; ++c)
        if (mi[c] == 0.0f) s += std::exp(static_cast<double>(xi[c]) - mx);
      for (int64_t c = 0; c < C; ++c) {
        if (mi[c] != 0.0f) continue;
        float p = static_cast<float>(std::exp(static_cast<double>(xi[c]) - mx) / s);
        float ind = (c == picks_c[r]) ? 1.0f : 0.0f;
        d[c] += go * (ind - p);
      }
    }
  };
  return y;
}

Var Graph::layer_norm(Var x, Param& gain, Param& offset) {
  const Tensor& xv = value(x);
  int64_t R = xv.rows(), C = xv.cols();
  if (gain.value.numel() != C || offset.value.numel() != C)
    throw std::invalid_argument("layer_norm: gain/offset must have size " + std::to_string(C));
  Tensor out(xv.shape);
  Tensor xhat(xv.shape);
  std::vector<float> inv_std(static_cast<size_t>(R));
  for (int64_t r = 0; r < R; ++r) {
    const float* xi = xv.data.data() + r * C;
    double mu = 0.0;
    for (int64_t c = 0; c < C; ++c) mu += xi[c];
    mu /= static_cast<double>(C);
    double var = 0.0;
    for (int64_t c = 0; c < C; ++c) {
      double d = xi[c] - mu;
      var += d * d;
    }
    var /= static_cast<double>(C);
    float inv = static_cast<float>(1.0 / std::sqrt(var + static_cast<double>(kLayerNormEps)));
    inv_std[r] = inv;
    float* xh = xhat.data.data() + r * C;
    float* yo = out.data.data() + r * C;
    for (int64_t c = 0; c < C; ++c) {
      xh[c] = (xi[c] - static_cast<float>(mu)) * inv;
      yo[c] = xh[c] * gain.value.data[c] + offset.value.data[c];
    }
  }
  Var y = push(std::move(out), true);
  if (!grad_) return y;
  int32_t xi_id = x.id, yi_id = y.id;
  Param* gp = &gain;
  Param* op = &offset;
  Tensor xhat_c = std::move(xhat);
  std::vector<float> inv_c = std::move(inv_std);
  nodes_[yi_id].back = [this, xi_id, yi_id, gp, op, xhat_c, inv_c, R, C]() {
    const Tensor& dy = nodes_[yi_id].grad;
    for (int64_t r = 0; r < R; ++r) {
      const float* g = dy.data.data() + r * C;
      const float* xh = xhat_c.data.data() + r * C;
      for (int64_t c = 0; c < C; ++c) {
        gp->grad.data[c] += g[c] * xh[c];
        op->grad.data[c] += g[c];
      }
    }
    if (nodes_[xi_id].requires_grad) {
      Tensor& dx = grad_buf(xi_id);
      for (int64_t r = 0; r < R; ++r) {
        const float* g = dy.data.data() + r * C;
        const float* xh = xhat_c.data.data() + r * C;
        float* d = dx.data.data() + r * C;
        double m1 = 0.0, m2 = 0.0;  // mean(dy*gain), mean(dy*gain*xhat)
        for (int64_t c = 0; c < C; ++c) {
          double dg = static_cast<double>(g[c]) * gp->value.data[c];
          m1 += dg;
          m2 += dg * xh[c];
        }
        m1 /= static_cast<double>(C);
        m2 /= static_cast<double>(C);
        for (int64_t c = 0; c < C; ++c) {
          float dg = g[c] * gp->value.data[c];
          d[c] += inv_c[r] * (dg - static_cast<float>(m1) - xh[c] * static_cast<float>(m2));
        }
      }
    }
  };
  return y;
}

void Graph::backward(Var loss) {
  if (loss.g != this) throw std::invalid_argument("backward: var from another graph");
  if (!grad_) throw std::runtime_error("backward: graph recorded without gradients");
  if (consumed_) throw std::runtime_error("backward: tape already consumed");
  Node& ln = nodes_[loss.id];
  if (!ln.requires_grad) throw std::invalid_argument("backward: loss is detached from parameters");
  if (ln.value.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
  grad_buf(loss.id).data[0] = 1.0f;
  consumed_ = true;
  for (int32_t i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.grad_alloc && n.back) n.back();
  }
}

}  // namespace dact
