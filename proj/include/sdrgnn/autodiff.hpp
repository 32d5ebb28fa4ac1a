#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sdrgnn/errors.hpp"
#include "sdrgnn/rng.hpp"
#include "sdrgnn/tensor.hpp"

namespace sdrgnn {

// Reverse-mode differentiation over a dynamically recorded graph. Every op
// returns a fresh node holding its value, its parents, and a closure that
// pushes the node's gradient into the parents. Nodes are created in
// topological order, so backward() just replays reachable nodes by
// descending creation index. Gradients accumulate additively, so a value
// used twice gets both contributions.
struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;
  bool grad_live = false;  // grad allocated and zeroed for the current pass?
  bool requires_grad = false;
  uint64_t order = 0;
  std::vector<Var> parents;
  std::function<void(Node&)> backprop;

  Tensor& ensure_grad() {
    if (!grad_live) {
      grad = Tensor::zeros(value.shape());
      grad_live = true;
    }
    return grad;
  }
};

namespace detail {
inline uint64_t next_order() {
  static uint64_t counter = 0;
  return ++counter;
}

inline Var make_node(Tensor value, std::vector<Var> parents,
                     std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->order = next_order();
  for (const auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}
}  // namespace detail

// A value that takes no gradient.
inline Var constant(Tensor v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->order = detail::next_order();
  return n;
}

// A differentiable leaf (parameters are these).
inline Var leaf(Tensor v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->order = detail::next_order();
  n->requires_grad = true;
  return n;
}

inline void require_rank2(const Var& a, const char* who) {
  if (a->value.rank() != 2) throw ShapeError(std::string(who) + ": expected rank-2 tensor, got " + a->value.shape_str());
}

// ---------------------------------------------------------------------------
// Arithmetic

inline Var matmul(const Var& a, const Var& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const int64_t m = a->value.extent(0), k = a->value.extent(1);
  const int64_t k2 = b->value.extent(0), n = b->value.extent(1);
  if (k != k2)
    throw ShapeError("matmul: inner extents differ, " + a->value.shape_str() + " vs " +
                     b->value.shape_str());
  Tensor out({m, n});
  const auto& A = a->value.data();
  const auto& B = b->value.data();
  auto& O = out.data();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t p = 0; p < k; ++p) {
      const double av = A[static_cast<size_t>(i * k + p)];
      if (av == 0.0) continue;
      const double* brow = B.data() + p * n;
      double* orow = O.data() + i * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  return detail::make_node(std::move(out), {a, b}, [a, b, m, k, n](Node& self) {
    const auto& G = self.grad.data();
    if (a->requires_grad) {
      auto& GA = a->ensure_grad().data();
      const auto& B = b->value.data();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
          const double g = G[static_cast<size_t>(i * n + j)];
          if (g == 0.0) continue;
          const double* brow = B.data() + j;  // column j
          for (int64_t p = 0; p < k; ++p) GA[static_cast<size_t>(i * k + p)] += g * brow[p * n];
        }
    }
    if (b->requires_grad) {
      auto& GB = b->ensure_grad().data();
      const auto& A = a->value.data();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t p = 0; p < k; ++p) {
          const double av = A[static_cast<size_t>(i * k + p)];
          if (av == 0.0) continue;
          const double* grow = G.data() + i * n;
          for (int64_t j = 0; j < n; ++j) GB[static_cast<size_t>(p * n + j)] += av * grow[j];
        }
    }
  });
}

inline void require_same_shape(const Var& a, const Var& b, const char* who) {
  if (!a->value.same_shape(b->value))
    throw ShapeError(std::string(who) + ": shapes differ, " + a->value.shape_str() + " vs " +
                     b->value.shape_str());
}

inline Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
  return detail::make_node(std::move(out), {a, b}, [a, b](Node& self) {
    if (a->requires_grad) {
      auto& ga = a->ensure_grad();
      for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += self.grad[i];
    }
    if (b->requires_grad) {
      auto& gb = b->ensure_grad();
      for (int64_t i = 0; i < gb.numel(); ++i) gb[i] += self.grad[i];
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
  return detail::make_node(std::move(out), {a, b}, [a, b](Node& self) {
    if (a->requires_grad) {
      auto& ga = a->ensure_grad();
      for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += self.grad[i];
    }
    if (b->requires_grad) {
      auto& gb = b->ensure_grad();
      for (int64_t i = 0; i < gb.numel(); ++i) gb[i] -= self.grad[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
  return detail::make_node(std::move(out), {a, b}, [a, b](Node& self) {
    if (a->requires_grad) {
      auto& ga = a->ensure_grad();
      for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += self.grad[i] * b->value[i];
    }
    if (b->requires_grad) {
      auto& gb = b->ensure_grad();
      for (int64_t i = 0; i < gb.numel(); ++i) gb[i] += self.grad[i] * a->value[i];
    }
  });
}

inline Var scale(const Var& a, double c) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
  return detail::make_node(std::move(out), {a}, [a, c](Node& self) {
    if (!a->requires_grad) return;
    auto& ga = a->ensure_grad();
    for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += c * self.grad[i];
  });
}

// Adds a length-d bias to every row of an n x d matrix.
inline Var add_rowwise(const Var& m, const Var& bias) {
  require_rank2(m, "add_rowwise");
  if (bias->value.rank() != 1 || bias->value.extent(0) != m->value.extent(1))
    throw ShapeError("add_rowwise: bias " + bias->value.shape_str() + " does not match " +
                     m->value.shape_str());
  const int64_t n = m->value.extent(0), d = m->value.extent(1);
  Tensor out = m->value;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) out.at(i, j) += bias->value[j];
  return detail::make_node(std::move(out), {m, bias}, [m, bias, n, d](Node& self) {
    if (m->requires_grad) {
      auto& gm = m->ensure_grad();
      for (int64_t i = 0; i < gm.numel(); ++i) gm[i] += self.grad[i];
    }
    if (bias->requires_grad) {
      auto& gb = bias->ensure_grad();
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) gb[j] += self.grad.at(i, j);
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

namespace detail {
inline Var unary(const Var& a, std::function<double(double)> f,
                 std::function<double(double, double)> df /* (x, y) -> dy/dx */) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = f(out[i]);
  Tensor y = out;
  return make_node(std::move(out), {a}, [a, df = std::move(df), y = std::move(y)](Node& self) {
    if (!a->requires_grad) return;
    auto& ga = a->ensure_grad();
    for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += self.grad[i] * df(a->value[i], y[i]);
  });
}
}  // namespace detail

inline Var relu(const Var& a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var leaky_relu(const Var& a, double slope) {
  return detail::unary(
      a, [slope](double x) { return x >= 0.0 ? x : slope * x; },
      [slope](double x, double) { return x >= 0.0 ? 1.0 : slope; });
}

inline Var tanh_op(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(const Var& a) {
  return detail::unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var exp_op(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var reciprocal(const Var& a) {
  return detail::unary(
      a, [](double x) { return 1.0 / x; }, [](double, double y) { return -y * y; });
}

// log(max(x, floor)); flat below the floor so the gradient stays finite.
inline Var log_clamped(const Var& a, double floor_v) {
  return detail::unary(
      a, [floor_v](double x) { return std::log(x < floor_v ? floor_v : x); },
      [floor_v](double x, double) { return x < floor_v ? 0.0 : 1.0 / x; });
}

// ---------------------------------------------------------------------------
// Shape ops

inline Var transpose(const Var& a) {
  require_rank2(a, "transpose");
  const int64_t n = a->value.extent(0), d = a->value.extent(1);
  Tensor out({d, n});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) out.at(j, i) = a->value.at(i, j);
  return detail::make_node(std::move(out), {a}, [a, n, d](Node& self) {
    if (!a->requires_grad) return;
    auto& ga = a->ensure_grad();
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < d; ++j) ga.at(i, j) += self.grad.at(j, i);
  });
}

inline Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const int64_t rank = parts[0]->value.rank();
  if (rank == 1) {
    if (axis != 0) throw ShapeError("concat: rank-1 tensors concat along axis 0 only");
    int64_t total = 0;
    for (const auto& p : parts) {
      if (p->value.rank() != 1) throw ShapeError("concat: mixed ranks");
      total += p->value.extent(0);
    }
    Tensor out({total});
    int64_t off = 0;
    for (const auto& p : parts) {
      for (int64_t i = 0; i < p->value.numel(); ++i) out[off + i] = p->value[i];
      off += p->value.numel();
    }
    return detail::make_node(std::move(out), parts, [parts](Node& self) {
      int64_t off = 0;
      for (const auto& p : parts) {
        if (p->requires_grad) {
          auto& gp = p->ensure_grad();
          for (int64_t i = 0; i < gp.numel(); ++i) gp[i] += self.grad[off + i];
        }
        off += p->value.numel();
      }
    });
  }
  if (rank != 2 || (axis != 0 && axis != 1)) throw ShapeError("concat: unsupported rank/axis");
  const int64_t fixed = parts[0]->value.extent(1 - axis);
  int64_t total = 0;
  for (const auto& p : parts) {
    if (p->value.rank() != 2 || p->value.extent(1 - axis) != fixed)
      throw ShapeError("concat: off-axis extents differ, " + parts[0]->value.shape_str() +
                       " vs " + p->value.shape_str());
    total += p->value.extent(axis);
  }
  Tensor out(axis == 0 ? std::vector<int64_t>{total, fixed} : std::vector<int64_t>{fixed, total});
  int64_t off = 0;
  for (const auto& p : parts) {
    const int64_t len = p->value.extent(axis);
    if (axis == 0) {
      for (int64_t i = 0; i < len; ++i)
        for (int64_t j = 0; j < fixed; ++j) out.at(off + i, j) = p->value.at(i, j);
    } else {
      for (int64_t i = 0; i < fixed; ++i)
        for (int64_t j = 0; j < len; ++j) out.at(i, off + j) = p->value.at(i, j);
    }
    off += len;
  }
  return detail::make_node(std::move(out), parts, [parts, axis, fixed](Node& self) {
    int64_t off = 0;
    for (const auto& p : parts) {
      const int64_t len = p->value.extent(axis);
      if (p->requires_grad) {
        auto& gp = p->ensure_grad();
        if (axis == 0) {
          for (int64_t i = 0; i < len; ++i)
            for (int64_t j = 0; j < fixed; ++j) gp.at(i, j) += self.grad.at(off + i, j);
        } else {
          for (int64_t i = 0; i < fixed; ++i)
            for (int64_t j = 0; j < len; ++j) gp.at(i, j) += self.grad.at(i, off + j);
        }
      }
      off += len;
    }
  });
}

inline Var slice(const Var& a, int axis, int64_t start, int64_t len) {
  if (a->value.rank() == 1) {
    if (axis != 0 || start < 0 || start + len > a->value.extent(0))
      throw ShapeError("slice: out of range");
    Tensor out({len});
    for (int64_t i = 0; i < len; ++i) out[i] = a->value[start + i];
    return detail::make_node(std::move(out), {a}, [a, start, len](Node& self) {
      if (!a->requires_grad) return;
      auto& ga = a->ensure_grad();
      for (int64_t i = 0; i < len; ++i) ga[start + i] += self.grad[i];
    });
  }
  require_rank2(a, "slice");
  const int64_t n = a->value.extent(0), d = a->value.extent(1);
  if (axis != 0 && axis != 1) throw ShapeError("slice: bad axis");
  if (start < 0 || start + len > a->value.extent(axis)) throw ShapeError("slice: out of range");
  Tensor out(axis == 0 ? std::vector<int64_t>{len, d} : std::vector<int64_t>{n, len});
  if (axis == 0) {
    for (int64_t i = 0; i < len; ++i)
      for (int64_t j = 0; j < d; ++j) out.at(i, j) = a->value.at(start + i, j);
  } else {
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < len; ++j) out.at(i, j) = a->value.at(i, start + j);
  }
  return detail::make_node(std::move(out), {a}, [a, axis, start, len, n, d](Node& self) {
    if (!a->requires_grad) return;
    auto& ga = a->ensure_grad();
    if (axis == 0) {
      for (int64_t i = 0; i < len; ++i)
        for (int64_t j = 0; j < d; ++j) ga.at(start + i, j) += self.grad.at(i, j);
    } else {
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < len; ++j) ga.at(i, start + j) += self.grad.at(i, j);
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(const Var& a) {
  double s = 0.0;
  for (int64_t i = 0; i < a->value.numel(); ++i) s += a->value[i];
  return detail::make_node(Tensor::scalar(s), {a}, [a](Node& self) {
    if (!a->requires_grad) return;
    auto& ga = a->ensure_grad();
    const double g = self.grad[0];
    for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += g;
  });
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a->value.numel())); }

// ---------------------------------------------------------------------------
// Softmax

// Numerically stable softmax along `axis` (rank-1: axis 0; rank-2: 0 or 1).
inline Var softmax(const Var& a, int axis) {
  const int64_t rank = a->value.rank();
  if (rank != 1 && rank != 2) throw ShapeError("softmax: rank must be 1 or 2");
  if ((rank == 1 && axis != 0) || (rank == 2 && axis != 0 && axis != 1))
    throw ShapeError("softmax: bad axis");
  const int64_t n = rank == 1 ? 1 : a->value.extent(0);
  const int64_t d = rank == 1 ? a->value.extent(0) : a->value.extent(1);
  Tensor out = a->value;
  auto slice_softmax = [&](int64_t base, int64_t stride, int64_t count) {
    double mx = out[base];
    for (int64_t i = 1; i < count; ++i) mx = std::max(mx, out[base + i * stride]);
    double z = 0.0;
    for (int64_t i = 0; i < count; ++i) {
      double e = std::exp(out[base + i * stride] - mx);
      out[base + i * stride] = e;
      z += e;
    }
    for (int64_t i = 0; i < count; ++i) out[base + i * stride] /= z;
  };
  if (rank == 1 || axis == 1) {
    for (int64_t i = 0; i < n; ++i) slice_softmax(i * d, 1, d);
  } else {
    for (int64_t j = 0; j < d; ++j) slice_softmax(j, d, n);
  }
  Tensor y = out;
  return detail::make_node(std::move(out), {a},
                           [a, axis, rank, n, d, y = std::move(y)](Node& self) {
    if (!a->requires_grad) return;
    auto& ga = a->ensure_grad();
    auto slice_back = [&](int64_t base, int64_t stride, int64_t count) {
      double dot = 0.0;
      for (int64_t i = 0; i < count; ++i)
        dot += self.grad[base + i * stride] * y[base + i * stride];
      for (int64_t i = 0; i < count; ++i) {
        const int64_t k = base + i * stride;
        ga[k] += y[k] * (self.grad[k] - dot);
      }
    };
    if (rank == 1 || axis == 1) {
      for (int64_t i = 0; i < n; ++i) slice_back(i * d, 1, d);
    } else {
      for (int64_t j = 0; j < d; ++j) slice_back(j, d, n);
    }
  });
}

// ---------------------------------------------------------------------------
// Gather / scatter

inline Var gather_rows(const Var& m, std::vector<int64_t> idx) {
  require_rank2(m, "gather_rows");
  const int64_t n = m->value.extent(0), d = m->value.extent(1);
  for (int64_t i : idx)
    if (i < 0 || i >= n) throw ShapeError("gather_rows: index out of range");
  Tensor out({static_cast<int64_t>(idx.size()), d});
  for (size_t r = 0; r < idx.size(); ++r)
    for (int64_t j = 0; j < d; ++j) out.at(static_cast<int64_t>(r), j) = m->value.at(idx[r], j);
  return detail::make_node(std::move(out), {m}, [m, idx = std::move(idx), d](Node& self) {
    if (!m->requires_grad) return;
    auto& gm = m->ensure_grad();
    for (size_t r = 0; r < idx.size(); ++r)
      for (int64_t j = 0; j < d; ++j) gm.at(idx[r], j) += self.grad.at(static_cast<int64_t>(r), j);
  });
}

// Sums row r of `rows` into output row idx[r].
inline Var scatter_add_rows(const Var& rows, std::vector<int64_t> idx, int64_t n_out) {
  require_rank2(rows, "scatter_add_rows");
  if (static_cast<int64_t>(idx.size()) != rows->value.extent(0))
    throw ShapeError("scatter_add_rows: index count mismatch");
  const int64_t d = rows->value.extent(1);
  for (int64_t i : idx)
    if (i < 0 || i >= n_out) throw ShapeError("scatter_add_rows: index out of range");
  Tensor out({n_out, d});
  for (size_t r = 0; r < idx.size(); ++r)
    for (int64_t j = 0; j < d; ++j) out.at(idx[r], j) += rows->value.at(static_cast<int64_t>(r), j);
  return detail::make_node(std::move(out), {rows}, [rows, idx = std::move(idx), d](Node& self) {
    if (!rows->requires_grad) return;
    auto& gr = rows->ensure_grad();
    for (size_t r = 0; r < idx.size(); ++r)
      for (int64_t j = 0; j < d; ++j)
        gr.at(static_cast<int64_t>(r), j) += self.grad.at(idx[r], j);
  });
}

// out[i] = m[i, cols[i]].
inline Var select_per_row(const Var& m, std::vector<int64_t> cols) {
  require_rank2(m, "select_per_row");
  const int64_t n = m->value.extent(0), d = m->value.extent(1);
  if (static_cast<int64_t>(cols.size()) != n) throw ShapeError("select_per_row: need one column per row");
  for (int64_t c : cols)
    if (c < 0 || c >= d) throw ShapeError("select_per_row: column out of range");
  Tensor out({n});
  for (int64_t i = 0; i < n; ++i) out[i] = m->value.at(i, cols[static_cast<size_t>(i)]);
  return detail::make_node(std::move(out), {m}, [m, cols = std::move(cols), n](Node& self) {
    if (!m->requires_grad) return;
    auto& gm = m->ensure_grad();
    for (int64_t i = 0; i < n; ++i) gm.at(i, cols[static_cast<size_t>(i)]) += self.grad[i];
  });
}

// Row i of m scaled by weights[i]; weights is rank-1 of extent n.
inline Var scale_rows(const Var& m, const Var& weights) {
  require_rank2(m, "scale_rows");
  const int64_t n = m->value.extent(0), d = m->value.extent(1);
  if (weights->value.rank() != 1 || weights->value.extent(0) != n)
    throw ShapeError("scale_rows: weights " + weights->value.shape_str() + " vs matrix " +
                     m->value.shape_str());
  Tensor out = m->value;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) out.at(i, j) *= weights->value[i];
  return detail::make_node(std::move(out), {m, weights}, [m, weights, n, d](Node& self) {
    if (m->requires_grad) {
      auto& gm = m->ensure_grad();
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) gm.at(i, j) += self.grad.at(i, j) * weights->value[i];
    }
    if (weights->requires_grad) {
      auto& gw = weights->ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (int64_t j = 0; j < d; ++j) s += self.grad.at(i, j) * m->value.at(i, j);
        gw[i] += s;
      }
    }
  });
}

// Column j of m scaled by weights[j]; weights is rank-1 of extent d.
inline Var scale_cols(const Var& m, const Var& weights) {
  require_rank2(m, "scale_cols");
  const int64_t n = m->value.extent(0), d = m->value.extent(1);
  if (weights->value.rank() != 1 || weights->value.extent(0) != d)
    throw ShapeError("scale_cols: weights " + weights->value.shape_str() + " vs matrix " +
                     m->value.shape_str());
  Tensor out = m->value;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) out.at(i, j) *= weights->value[j];
  return detail::make_node(std::move(out), {m, weights}, [m, weights, n, d](Node& self) {
    if (m->requires_grad) {
      auto& gm = m->ensure_grad();
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) gm.at(i, j) += self.grad.at(i, j) * weights->value[j];
    }
    if (weights->requires_grad) {
      auto& gw = weights->ensure_grad();
      for (int64_t j = 0; j < d; ++j) {
        double s = 0.0;
        for (int64_t i = 0; i < n; ++i) s += self.grad.at(i, j) * m->value.at(i, j);
        gw[j] += s;
      }
    }
  });
}

// Builds an n x m matrix with values[k] placed at (rows[k], cols[k]), zero
// elsewhere. Positions must be distinct.
inline Var scatter_matrix(const Var& values, std::vector<int64_t> rows, std::vector<int64_t> cols,
                          int64_t n, int64_t m) {
  if (values->value.rank() != 1 || values->value.extent(0) != static_cast<int64_t>(rows.size()) ||
      rows.size() != cols.size())
    throw ShapeError("scatter_matrix: positions and values disagree");
  Tensor out({n, m});
  for (size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= n || cols[k] < 0 || cols[k] >= m)
      throw ShapeError("scatter_matrix: position out of range");
    out.at(rows[k], cols[k]) = values->value[static_cast<int64_t>(k)];
  }
  return detail::make_node(std::move(out), {values},
                           [values, rows = std::move(rows), cols = std::move(cols)](Node& self) {
    if (!values->requires_grad) return;
    auto& gv = values->ensure_grad();
    for (size_t k = 0; k < rows.size(); ++k)
      gv[static_cast<int64_t>(k)] += self.grad.at(rows[k], cols[k]);
  });
}

// ---------------------------------------------------------------------------
// Dropout

// In training, zeroes each element with probability p and scales survivors by
// 1/(1-p); outside training it is the identity.
inline Var dropout(const Var& a, double p, bool training, Rng& rng) {
  if (p < 0.0 || p >= 1.0)
    throw ConfigError("dropout: rate must lie in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return a;
  const double keep_scale = 1.0 / (1.0 - p);
  Tensor mask(a->value.shape());
  for (int64_t i = 0; i < mask.numel(); ++i) mask[i] = rng.uniform() < p ? 0.0 : keep_scale;
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= mask[i];
  return detail::make_node(std::move(out), {a}, [a, mask = std::move(mask)](Node& self) {
    if (!a->requires_grad) return;
    auto& ga = a->ensure_grad();
    for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += self.grad[i] * mask[i];
  });
}

// ---------------------------------------------------------------------------
// Backward

// Propagates d(loss)/d(node) into every reachable node that wants gradients.
// `loss` must be scalar (rank 0 or a single element).
inline void backward(const Var& loss) {
  if (loss->value.numel() != 1)
    throw ShapeError("backward: loss must be scalar, got " + loss->value.shape_str());
  // Collect reachable subgraph.
  std::vector<Node*> nodes;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{loss.get()};
  seen.insert(loss.get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    nodes.push_back(n);
    for (const auto& p : n->parents)
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
  }
  std::sort(nodes.begin(), nodes.end(),
            [](const Node* a, const Node* b) { return a->order > b->order; });
  auto& g = loss->ensure_grad();
  g[0] += 1.0;
  for (Node* n : nodes)
    if (n->requires_grad && n->backprop) n->backprop(*n);
  // Interior nodes are freed with the graph; leaves keep their grads until
  // the optimizer consumes them. Mark interior grads stale so a later pass
  // re-zeroes them if the node is somehow reused.
  for (Node* n : nodes)
    if (n->backprop) n->grad_live = false;
}

}  // namespace sdrgnn
