/*
 * Copyright 2026 The pairrel Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace pairrel {

using Mask = std::vector<std::uint8_t>;

inline std::size_t mask_count(std::span<const std::uint8_t> mask) {
  std::size_t n = 0;
  for (auto m : mask) n += m != 0;
  return n;
}

struct Parameter {
  std::string name;
  Tensor value;
  bool trainable = true;
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Reverse-mode tape. Nodes are appended in creation order, so the node
/// vector is already a topological order: every parent precedes its children.
/// Single-threaded; build one graph per forward pass.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor& out_grad)>;

  struct Options {
    bool grad_enabled = true;
    bool training = false;
    double dropout_rate = 0.0;
    std::uint64_t dropout_seed = 0;
  };

  Graph() : Graph(Options{}) {}
  explicit Graph(Options opts) : opts_(opts), dropout_rng_(opts.dropout_seed) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value) { return push(std::move(value), false, {}); }

  Var leaf(Tensor value, bool requires_grad) {
    return push(std::move(value), requires_grad && opts_.grad_enabled, {});
  }

  /// Binds a parameter. Binding the same parameter object twice returns the
  /// same node so gradients from every use accumulate in one place.
  Var parameter(const Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{this, it->second.second};
    Var v = leaf(p.value, p.trainable);
    param_nodes_.emplace(&p, std::pair{p.name, v.id});
    return v;
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient of the last backward pass, or nullptr if the node was not reached.
  const Tensor* grad(Var v) const {
    const auto& n = nodes_.at(v.id);
    return n.has_grad ? &n.grad : nullptr;
  }

  bool training() const noexcept { return opts_.training; }
  double dropout_rate() const noexcept { return opts_.dropout_rate; }
  Rng& dropout_rng() noexcept { return dropout_rng_; }

  /// Folds the on/off pattern of a piecewise-linear op into a running hash.
  /// Two forward passes with equal signatures took the same linear pieces.
  void note_kinks(std::span<const double> pre_activation) {
    for (double v : pre_activation) kink_signature_ = hash_combine(kink_signature_, v > 0.0 ? 1 : 0);
  }
  std::uint64_t kink_signature() const noexcept { return kink_signature_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Records an op result. `backward` runs only if some parent needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward) {
    return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward));
  }

  Var record(Tensor value, std::span<const Var> parents, BackwardFn backward) {
    bool needs = false;
    for (Var p : parents) needs = needs || nodes_[p.id].requires_grad;
    return push(std::move(value), needs, needs ? std::move(backward) : BackwardFn{});
  }

  /// Accumulates into a node's gradient, allocating it on first touch.
  void accumulate(std::size_t id, const Tensor& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    Tensor& dst = grad_slot(id);
    require_same_shape(dst, g, "accumulate");
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }

  /// Writable gradient slot for kernels that accumulate in place.
  Tensor& grad_slot(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Tensor(n.value.rows(), n.value.cols());
      n.has_grad = true;
    }
    return n.grad;
  }

  void backward(Var loss) {
    if (loss.graph != this) throw InvalidArgument("backward: loss belongs to another graph");
    const Tensor& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw InvalidArgument("backward: loss must be scalar, got " + lv.shape_str());
    }
    for (auto& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor();
    }
    if (!nodes_[loss.id].requires_grad) return;
    grad_slot(loss.id)[0] = 1.0;
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.has_grad || !n.backward) continue;
      // Callbacks only touch gradient slots of earlier nodes; the node vector
      // itself does not grow during backward, so the reference stays valid.
      n.backward(*this, n.grad);
    }
  }

  /// Gradients keyed by parameter name, for trainable parameters the last
  /// backward pass reached. Frozen parameters never appear.
  std::map<std::string, Tensor> parameter_grads() const {
    std::map<std::string, Tensor> out;
    for (const auto& [ptr, entry] : param_nodes_) {
      const Node& n = nodes_[entry.second];
      if (!n.requires_grad || !n.has_grad) continue;
      auto [it, fresh] = out.emplace(entry.first, n.grad);
      if (!fresh)
        for (std::size_t i = 0; i < n.grad.size(); ++i) it->second[i] += n.grad[i];
    }
    return out;
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
  };

  Var push(Tensor value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Tensor(), requires_grad, false, std::move(fn)});
    return Var{this, nodes_.size() - 1};
  }

  Options opts_;
  Rng dropout_rng_;
  std::uint64_t kink_signature_ = 0;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::pair<std::string, std::size_t>> param_nodes_;
};

inline const Tensor& Var::value() const { return graph->value(*this); }

/// Softmax over the positions whose mask bit is set. Masked positions get
/// exactly 0; an all-zero mask yields the all-zero vector.
inline std::vector<double> masked_softmax(std::span<const double> logits, std::span<const std::uint8_t> mask) {
  if (logits.size() != mask.size()) {
    throw InvalidArgument("masked_softmax: " + std::to_string(logits.size()) + " logits vs " +
                          std::to_string(mask.size()) + " mask bits");
  }
  std::vector<double> out(logits.size(), 0.0);
  double max_logit = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (mask[i]) {
      max_logit = std::max(max_logit, logits[i]);
      any = true;
    }
  }
  if (!any) return out;
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (mask[i]) {
      out[i] = std::exp(logits[i] - max_logit);
      total += out[i];
    }
  }
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (mask[i]) out[i] /= total;
  }
  return out;
}

namespace ops {

namespace detail {
inline void check_graph(Var a, Var b) {
  if (a.graph != b.graph) throw InvalidArgument("ops: operands belong to different graphs");
}
}  // namespace detail

inline Var add(Var a, Var b) {
  detail::check_graph(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape(x, y, "add");
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
  return a.graph->record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
    g.accumulate(a.id, go);
    g.accumulate(b.id, go);
  });
}

inline Var sub(Var a, Var b) {
  detail::check_graph(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape(x, y, "sub");
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
  return a.graph->record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
    g.accumulate(a.id, go);
    if (g.requires_grad(b.id)) {
      Tensor neg = go;
      for (auto& v : neg.values()) v = -v;
      g.accumulate(b.id, neg);
    }
  });
}

/// Sum of many same-shaped nodes.
inline Var add_n(std::span<const Var> xs) {
  if (xs.empty()) throw InvalidArgument("add_n: no operands");
  Var acc = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return acc;
}

inline Var mul(Var a, Var b) {
  detail::check_graph(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape(x, y, "mul");
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  return a.graph->record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
    if (g.requires_grad(a.id)) {
      Tensor ga = go;
      const Tensor& y = g.value(b);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= y[i];
      g.accumulate(a.id, ga);
    }
    if (g.requires_grad(b.id)) {
      Tensor gb = go;
      const Tensor& x = g.value(a);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= x[i];
      g.accumulate(b.id, gb);
    }
  });
}

inline Var scale(Var a, double s) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= s;
  return a.graph->record(std::move(out), {a}, [a, s](Graph& g, const Tensor& go) {
    Tensor ga = go;
    for (auto& v : ga.values()) v *= s;
    g.accumulate(a.id, ga);
  });
}

inline Var matmul(Var a, Var b) {
  detail::check_graph(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.cols() != y.rows()) {
    throw InvalidArgument("matmul: inner dimensions differ, " + x.shape_str() + " * " + y.shape_str());
  }
  Tensor out(x.rows(), y.cols());
  kernels::matmul_acc(x, y, out);
  return a.graph->record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
    if (g.requires_grad(a.id)) kernels::matmul_bt_acc(go, g.value(b), g.grad_slot(a.id));
    if (g.requires_grad(b.id)) kernels::matmul_at_acc(g.value(a), go, g.grad_slot(b.id));
  });
}

/// Adds a 1 x c row to every row of `a`.
inline Var add_row(Var a, Var row) {
  detail::check_graph(a, row);
  const Tensor& x = a.value();
  const Tensor& r = row.value();
  if (r.rows() != 1 || r.cols() != x.cols()) {
    throw InvalidArgument("add_row: row " + r.shape_str() + " does not broadcast over " + x.shape_str());
  }
  Tensor out = x;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += r[j];
  return a.graph->record(std::move(out), {a, row}, [a, row](Graph& g, const Tensor& go) {
    g.accumulate(a.id, go);
    if (g.requires_grad(row.id)) {
      Tensor& gr = g.grad_slot(row.id);
      for (std::size_t i = 0; i < go.rows(); ++i)
        for (std::size_t j = 0; j < go.cols(); ++j) gr[j] += go(i, j);
    }
  });
}

inline Var relu(Var a) {
  a.graph->note_kinks(a.value().values());
  Tensor out = a.value();
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  return a.graph->record(std::move(out), {a}, [a](Graph& g, const Tensor& go) {
    const Tensor& x = g.value(a);
    Tensor ga = go;
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (!(x[i] > 0.0)) ga[i] = 0.0;
    g.accumulate(a.id, ga);
  });
}

/// Stops gradient flow. The value is shared, not recomputed.
inline Var detach(Var a) { return a.graph->constant(a.value()); }

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.graph->record(Tensor(1, 1, s), {a}, [a](Graph& g, const Tensor& go) {
    const Tensor& x = g.value(a);
    g.accumulate(a.id, Tensor(x.rows(), x.cols(), go[0]));
  });
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw InvalidArgument("concat_cols: no operands");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (Var p : parts) {
    detail::check_graph(parts[0], p);
    if (p.rows() != rows) throw InvalidArgument("concat_cols: row counts differ");
    cols += p.cols();
  }
  Tensor out(rows, cols);
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& x = p.value();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) out(i, off + j) = x(i, j);
    off += x.cols();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return parts[0].graph->record(std::move(out), parts, [ps](Graph& g, const Tensor& go) {
    std::size_t off = 0;
    for (Var p : ps) {
      const std::size_t c = g.value(p).cols();
      if (g.requires_grad(p.id)) {
        Tensor& dst = g.grad_slot(p.id);
        for (std::size_t i = 0; i < go.rows(); ++i)
          for (std::size_t j = 0; j < c; ++j) dst(i, j) += go(i, off + j);
      }
      off += c;
    }
  });
}

inline Var concat_cols(Var a, Var b) {
  const Var parts[] = {a, b};
  return concat_cols(std::span<const Var>(parts));
}

/// First `n` rows of `a`; rows past the end of `a` are zero.
inline Var take_rows(Var a, std::size_t n) {
  const Tensor& x = a.value();
  Tensor out(n, x.cols());
  const std::size_t keep = std::min(n, x.rows());
  for (std::size_t i = 0; i < keep; ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(i, j);
  return a.graph->record(std::move(out), {a}, [a, keep](Graph& g, const Tensor& go) {
    Tensor& dst = g.grad_slot(a.id);
    for (std::size_t i = 0; i < keep; ++i)
      for (std::size_t j = 0; j < go.cols(); ++j) dst(i, j) += go(i, j);
  });
}

/// Repeats a 1 x c row `n` times.
inline Var broadcast_rows(Var row, std::size_t n) {
  const Tensor& r = row.value();
  if (r.rows() != 1) throw InvalidArgument("broadcast_rows: expected a row, got " + r.shape_str());
  Tensor out(n, r.cols());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < r.cols(); ++j) out(i, j) = r[j];
  return row.graph->record(std::move(out), {row}, [row](Graph& g, const Tensor& go) {
    Tensor& dst = g.grad_slot(row.id);
    for (std::size_t i = 0; i < go.rows(); ++i)
      for (std::size_t j = 0; j < go.cols(); ++j) dst[j] += go(i, j);
  });
}

/// Zeroes the rows whose mask bit is 0.
inline Var mask_rows(Var a, const Mask& mask) {
  const Tensor& x = a.value();
  if (mask.size() != x.rows()) {
    throw InvalidArgument("mask_rows: mask length " + std::to_string(mask.size()) + " vs " +
                          std::to_string(x.rows()) + " rows");
  }
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    if (mask[i])
      for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(i, j);
  return a.graph->record(std::move(out), {a}, [a, mask](Graph& g, const Tensor& go) {
    Tensor& dst = g.grad_slot(a.id);
    for (std::size_t i = 0; i < go.rows(); ++i)
      if (mask[i])
        for (std::size_t j = 0; j < go.cols(); ++j) dst(i, j) += go(i, j);
  });
}

/// Mean of the rows at mask = 1: sum_t m_t H_t / sum_t m_t. Rows at mask = 0
/// are never read, so their contents cannot leak into the result.
inline Var masked_mean(Var a, const Mask& mask) {
  const Tensor& x = a.value();
  if (mask.size() != x.rows()) {
    throw InvalidArgument("pool: mask length " + std::to_string(mask.size()) + " vs " +
                          std::to_string(x.rows()) + " rows");
  }
  const std::size_t n = mask_count(mask);
  if (n == 0) throw EmptyPool("pool: mask selects no rows");
  Tensor out(1, x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    if (mask[i])
      for (std::size_t j = 0; j < x.cols(); ++j) out[j] += x(i, j);
  const double denom = static_cast<double>(n);
  for (auto& v : out.values()) v /= denom;
  return a.graph->record(std::move(out), {a}, [a, mask, denom](Graph& g, const Tensor& go) {
    Tensor& dst = g.grad_slot(a.id);
    for (std::size_t i = 0; i < dst.rows(); ++i)
      if (mask[i])
        for (std::size_t j = 0; j < dst.cols(); ++j) dst(i, j) += go[j] / denom;
  });
}

/// Row-wise layer normalization with population variance.
inline Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Tensor& xv = x.value();
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  const std::size_t d = xv.cols();
  if (gv.rows() != 1 || gv.cols() != d || !gv.same_shape(bv)) {
    throw InvalidArgument("layer_norm: gain/bias must be 1x" + std::to_string(d));
  }
  if (!(eps > 0.0)) throw InvalidArgument("layer_norm: eps must be positive");
  Tensor xhat(xv.rows(), d);
  Tensor inv_std(xv.rows(), 1);
  Tensor out(xv.rows(), d);
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xv(i, j);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xv(i, j) - mean) * (xv(i, j) - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < d; ++j) {
      xhat(i, j) = (xv(i, j) - mean) * is;
      out(i, j) = gv[j] * xhat(i, j) + bv[j];
    }
  }
  return x.graph->record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& g, const Tensor& go) {
        const std::size_t rows = go.rows(), d = go.cols();
        const Tensor& gv = g.value(gain);
        if (g.requires_grad(gain.id) || g.requires_grad(bias.id)) {
          Tensor dg(1, d), db(1, d);
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < d; ++j) {
              dg[j] += go(i, j) * xhat(i, j);
              db[j] += go(i, j);
            }
          g.accumulate(gain.id, dg);
          g.accumulate(bias.id, db);
        }
        if (g.requires_grad(x.id)) {
          Tensor& dx = g.grad_slot(x.id);
          std::vector<double> dxhat(d);
          for (std::size_t i = 0; i < rows; ++i) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              dxhat[j] = go(i, j) * gv[j];
              mean_d += dxhat[j];
              mean_dx += dxhat[j] * xhat(i, j);
            }
            mean_d /= static_cast<double>(d);
            mean_dx /= static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j)
              dx(i, j) += inv_std[i] * (dxhat[j] - mean_d - xhat(i, j) * mean_dx);
          }
        }
      });
}

/// Inverted dropout. Identity unless the graph is in training mode with a
/// positive rate.
inline Var dropout(Var a) {
  Graph& g = *a.graph;
  const double rate = g.dropout_rate();
  if (!g.training() || rate <= 0.0) return a;
  if (rate >= 1.0) throw InvalidArgument("dropout: rate must be < 1");
  const Tensor& x = a.value();
  Tensor keep(x.rows(), x.cols());
  const double s = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = g.dropout_rng().uniform() >= rate ? s : 0.0;
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= keep[i];
  return g.record(std::move(out), {a}, [a, keep = std::move(keep)](Graph& gr, const Tensor& go) {
    Tensor ga = go;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= keep[i];
    gr.accumulate(a.id, ga);
  });
}

/// Scaled dot-product attention over already-projected queries, keys and
/// values, split into `heads` column blocks. Masked keys get zero weight; with
/// no valid key every output row is zero.
inline Var attention(Var q, Var k, Var v, const Mask& key_mask, std::size_t heads) {
  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  const Tensor& V = v.value();
  const std::size_t d = Q.cols();
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) +
                      " heads");
  }
  if (K.cols() != d || V.cols() != d || K.rows() != V.rows()) {
    throw InvalidArgument("attention: Q " + Q.shape_str() + ", K " + K.shape_str() + ", V " + V.shape_str());
  }
  if (key_mask.size() != K.rows()) throw InvalidArgument("attention: key mask length differs from key count");
  const std::size_t tq = Q.rows(), tk = K.rows(), dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor out(tq, d);
  // Attention weights per head, stacked: heads blocks of tq x tk.
  Tensor weights(heads * tq, tk);
  std::vector<double> logits(tk);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t c0 = h * dh;
    for (std::size_t i = 0; i < tq; ++i) {
      for (std::size_t j = 0; j < tk; ++j) {
        if (!key_mask[j]) {
          logits[j] = 0.0;
          continue;
        }
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += Q(i, c0 + c) * K(j, c0 + c);
        logits[j] = s * sc;
      }
      const auto w = masked_softmax(logits, key_mask);
      for (std::size_t j = 0; j < tk; ++j) {
        weights(h * tq + i, j) = w[j];
        if (w[j] == 0.0) continue;
        for (std::size_t c = 0; c < dh; ++c) out(i, c0 + c) += w[j] * V(j, c0 + c);
      }
    }
  }
  return q.graph->record(
      std::move(out), {q, k, v},
      [q, k, v, heads, dh, sc, weights = std::move(weights)](Graph& g, const Tensor& go) {
        const Tensor& Q = g.value(q);
        const Tensor& K = g.value(k);
        const Tensor& V = g.value(v);
        const std::size_t tq = Q.rows(), tk = K.rows();
        const bool gq = g.requires_grad(q.id), gk = g.requires_grad(k.id), gv = g.requires_grad(v.id);
        Tensor* dQ = gq ? &g.grad_slot(q.id) : nullptr;
        Tensor* dK = gk ? &g.grad_slot(k.id) : nullptr;
        Tensor* dV = gv ? &g.grad_slot(v.id) : nullptr;
        std::vector<double> dw(tk), ds(tk);
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t c0 = h * dh;
          for (std::size_t i = 0; i < tq; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < tk; ++j) {
              const double w = weights(h * tq + i, j);
              if (w == 0.0) {
                dw[j] = 0.0;
                continue;
              }
              double s = 0.0;
              for (std::size_t c = 0; c < dh; ++c) s += go(i, c0 + c) * V(j, c0 + c);
              dw[j] = s;
              dot += s * w;
              if (dV)
                for (std::size_t c = 0; c < dh; ++c) (*dV)(j, c0 + c) += w * go(i, c0 + c);
            }
            for (std::size_t j = 0; j < tk; ++j) {
              const double w = weights(h * tq + i, j);
              ds[j] = w == 0.0 ? 0.0 : w * (dw[j] - dot) * sc;
            }
            for (std::size_t j = 0; j < tk; ++j) {
              if (ds[j] == 0.0) continue;
              for (std::size_t c = 0; c < dh; ++c) {
                if (dQ) (*dQ)(i, c0 + c) += ds[j] * K(j, c0 + c);
                if (dK) (*dK)(j, c0 + c) += ds[j] * Q(i, c0 + c);
              }
            }
          }
        }
      });
}

/// Gathers rows of `table` by index.
inline Var embedding(Var table, std::span<const std::int32_t> ids) {
  const Tensor& t = table.value();
  Tensor out(ids.size(), t.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= t.rows()) {
      throw InvalidArgument("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                            std::to_string(t.rows()) + " rows");
    }
    for (std::size_t j = 0; j < t.cols(); ++j) out(i, j) = t(static_cast<std::size_t>(ids[i]), j);
  }
  std::vector<std::int32_t> idv(ids.begin(), ids.end());
  return table.graph->record(std::move(out), {table}, [table, idv = std::move(idv)](Graph& g, const Tensor& go) {
    Tensor& dst = g.grad_slot(table.id);
    for (std::size_t i = 0; i < idv.size(); ++i)
      for (std::size_t j = 0; j < go.cols(); ++j) dst(static_cast<std::size_t>(idv[i]), j) += go(i, j);
  });
}

/// -log softmax(logits)[label] for a 1 x C row, via log-sum-exp.
inline Var softmax_cross_entropy(Var logits, std::size_t label) {
  const Tensor& z = logits.value();
  if (z.rows() != 1 || label >= z.cols()) throw InvalidArgument("softmax_cross_entropy: bad label or shape");
  double m = z[0];
  for (double v : z.values()) m = std::max(m, v);
  double s = 0.0;
  for (double v : z.values()) s += std::exp(v - m);
  const double lse = m + std::log(s);
  return logits.graph->record(Tensor(1, 1, lse - z[label]), {logits}, [logits, label, lse](Graph& g, const Tensor& go) {
    const Tensor& z = g.value(logits);
    Tensor gz(1, z.cols());
    for (std::size_t c = 0; c < z.cols(); ++c) gz[c] = go[0] * std::exp(z[c] - lse);
    gz[label] -= go[0];
    g.accumulate(logits.id, gz);
  });
}

/// -log p for a binary label under p(y=1) = sigmoid(logit); stable form
/// max(l, 0) - y l + log1p(exp(-|l|)).
inline Var sigmoid_cross_entropy(Var logit, int label) {
  const Tensor& z = logit.value();
  if (z.size() != 1 || (label != 0 && label != 1)) throw InvalidArgument("sigmoid_cross_entropy: bad label or shape");
  const double l = z[0];
  const double y = label;
  const double loss = std::max(l, 0.0) - y * l + std::log1p(std::exp(-std::abs(l)));
  return logit.graph->record(Tensor(1, 1, loss), {logit}, [logit, y](Graph& g, const Tensor& go) {
    const double l = g.value(logit)[0];
    const double p = l >= 0 ? 1.0 / (1.0 + std::exp(-l)) : std::exp(l) / (1.0 + std::exp(l));
    g.accumulate(logit.id, Tensor(1, 1, go[0] * (p - y)));
  });
}

}  // namespace ops

}  // namespace pairrel
