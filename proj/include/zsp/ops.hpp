#pragma once

// Differentiable tensor operations. Matrix kernels go through Eigen maps over
// the row-major value buffers; each operation defines its own backward rule.

#include <Eigen/Core>

#include "zsp/tensor.hpp"

namespace zsp {

namespace detail {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const MatR>;
using MutMap = Eigen::Map<MatR>;

inline ConstMap as_matrix(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return ConstMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
inline MutMap as_matrix(std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return MutMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(t.shape()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }
inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  const double pdf = std::exp(-0.5 * x * x) * 0.3989422804014327;
  return cdf + x * pdf;
}

}  // namespace detail

/// Rank-2 matrix product.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0))
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  std::vector<double> out(n * m);
  detail::as_matrix(out, n, m).noalias() =
      detail::as_matrix(a.node()->value, n, k) * detail::as_matrix(b.node()->value, k, m);
  auto an = a.node_ptr(), bn = b.node_ptr();
  return detail::make_result({n, m}, std::move(out), {&a, &b}, [an, bn, n, k, m](detail::Node& self) {
    auto dc = detail::as_matrix(std::as_const(self.grad), n, m);
    if (an->requires_grad)
      detail::as_matrix(an->grad_buffer(), n, k).noalias() +=
          dc * detail::as_matrix(std::as_const(bn->value), k, m).transpose();
    if (bn->requires_grad)
      detail::as_matrix(bn->grad_buffer(), k, m).noalias() +=
          detail::as_matrix(std::as_const(an->value), n, k).transpose() * dc;
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  auto an = a.node_ptr(), bn = b.node_ptr();
  return detail::make_result(a.shape(), std::move(out), {&a, &b}, [an, bn](detail::Node& self) {
    for (auto* p : {an.get(), bn.get()}) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

/// x [N x D] plus a bias row broadcast over the N rows.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  detail::require_rank(x, 2, "add_bias");
  if (bias.size() != x.dim(1))
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match " +
                         shape_str(x.shape()));
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<double> out(x.values().begin(), x.values().end());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] += bias[c];
  auto xn = x.node_ptr(), bn = bias.node_ptr();
  return detail::make_result(x.shape(), std::move(out), {&x, &bias}, [xn, bn, n, d](detail::Node& self) {
    if (xn->requires_grad) {
      auto& g = xn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->grad_buffer();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) g[c] += self.grad[r * d + c];
    }
  });
}

/// Elementwise product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto an = a.node_ptr(), bn = b.node_ptr();
  return detail::make_result(a.shape(), std::move(out), {&a, &b}, [an, bn](detail::Node& self) {
    if (an->requires_grad) {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->value[i];
    }
  });
}

inline Tensor scale(const Tensor& x, double s) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s;
  auto xn = x.node_ptr();
  return detail::make_result(x.shape(), std::move(out), {&x}, [xn, s](detail::Node& self) {
    auto& g = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

inline Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  auto xn = x.node_ptr();
  return detail::make_result({1}, {total}, {&x}, [xn](detail::Node& self) {
    auto& g = xn->grad_buffer();
    for (double& v : g) v += self.grad[0];
  });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<double> out(x.values().begin(), x.values().end());
  auto xn = x.node_ptr();
  return detail::make_result(std::move(shape), std::move(out), {&x}, [xn](detail::Node& self) {
    auto& g = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// Exact (erf-based) GELU.
inline Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::gelu(x[i]);
  auto xn = x.node_ptr();
  return detail::make_result(x.shape(), std::move(out), {&x}, [xn](detail::Node& self) {
    auto& g = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * detail::gelu_grad(xn->value[i]);
  });
}

/// Numerically stable softmax along `axis`.
inline Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank())
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for shape " +
                         shape_str(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t len = x.dim(axis);
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = x[base];
      for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, x[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double e = std::exp(x[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= z;
    }
  auto xn = x.node_ptr();
  return detail::make_result(x.shape(), std::move(out), {&x}, [xn, outer, inner, len](detail::Node& self) {
    auto& g = xn->grad_buffer();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < len; ++j)
          dot += self.grad[base + j * inner] * self.value[base + j * inner];
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t idx = base + j * inner;
          g[idx] += self.value[idx] * (self.grad[idx] - dot);
        }
      }
  });
}

/// Normalizes over the last dimension, then applies gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() == 0) throw DimensionError("layer_norm: scalar input");
  const std::size_t d = x.dim(x.rank() - 1);
  if (gain.size() != d || bias.size() != d)
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
                         shape_str(bias.shape()) + " do not match last dimension of " +
                         shape_str(x.shape()));
  const std::size_t rows = x.size() / d;
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = x.values().data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += row[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (row[c] - mean) * rstd[r];
      xhat[r * d + c] = h;
      out[r * d + c] = gain[c] * h + bias[c];
    }
  }
  auto xn = x.node_ptr(), gn = gain.node_ptr(), bn = bias.node_ptr();
  return detail::make_result(
      x.shape(), std::move(out), {&x, &gain, &bias},
      [xn, gn, bn, d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](detail::Node& self) {
        const auto& dy = self.grad;
        if (gn->requires_grad) {
          auto& g = gn->grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d; ++c) g[c] += dy[r * d + c] * xhat[r * d + c];
        }
        if (bn->requires_grad) {
          auto& g = bn->grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d; ++c) g[c] += dy[r * d + c];
        }
        if (xn->requires_grad) {
          auto& g = xn->grad_buffer();
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
              const double dh = dy[r * d + c] * gn->value[c];
              mean_dh += dh;
              mean_dh_h += dh * xhat[r * d + c];
            }
            mean_dh *= inv_d;
            mean_dh_h *= inv_d;
            for (std::size_t c = 0; c < d; ++c) {
              const double dh = dy[r * d + c] * gn->value[c];
              g[r * d + c] += rstd[r] * (dh - mean_dh - xhat[r * d + c] * mean_dh_h);
            }
          }
        }
      });
}

/// Row gather: out[i] = table[ids[i]].
inline Tensor embedding(const Tensor& table, std::span<const TokenId> ids) {
  detail::require_rank(table, 2, "embedding");
  const std::size_t rows = table.dim(0), d = table.dim(1);
  if (ids.empty()) throw DimensionError("embedding: empty id list");
  std::vector<TokenId> idx(ids.begin(), ids.end());
  std::vector<double> out(idx.size() * d);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= rows)
      throw IndexError("embedding: id " + std::to_string(idx[i]) + " outside table of " +
                       std::to_string(rows) + " rows");
    std::copy_n(table.values().data() + static_cast<std::size_t>(idx[i]) * d, d, out.data() + i * d);
  }
  auto tn = table.node_ptr();
  const std::size_t n = idx.size();
  return detail::make_result({n, d}, std::move(out), {&table}, [tn, d, idx = std::move(idx)](detail::Node& self) {
    auto& g = tn->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      double* dst = g.data() + static_cast<std::size_t>(idx[i]) * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] += self.grad[i * d + c];
    }
  });
}

/// [N x A] and [N x B] side by side -> [N x (A+B)].
inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "concat_cols");
  detail::require_rank(b, 2, "concat_cols");
  if (a.dim(0) != b.dim(0))
    throw DimensionError("concat_cols: row mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  const std::size_t n = a.dim(0), da = a.dim(1), db = b.dim(1), w = da + db;
  std::vector<double> out(n * w);
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(a.values().data() + r * da, da, out.data() + r * w);
    std::copy_n(b.values().data() + r * db, db, out.data() + r * w + da);
  }
  auto an = a.node_ptr(), bn = b.node_ptr();
  return detail::make_result({n, w}, std::move(out), {&a, &b}, [an, bn, n, da, db, w](detail::Node& self) {
    if (an->requires_grad) {
      auto& g = an->grad_buffer();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < da; ++c) g[r * da + c] += self.grad[r * w + c];
    }
    if (bn->requires_grad) {
      auto& g = bn->grad_buffer();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < db; ++c) g[r * db + c] += self.grad[r * w + da + c];
    }
  });
}

/// Multi-head causal self-attention over `batch` sequences of `seq_len`
/// positions each. q, k and v are [batch*seq_len x d_model], head h owning
/// columns [h*d_head, (h+1)*d_head). Position t attends to positions <= t of
/// its own sequence.
inline Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t batch,
                               std::size_t seq_len, std::size_t n_heads) {
  detail::require_rank(q, 2, "causal_attention");
  detail::require_same_shape(q, k, "causal_attention");
  detail::require_same_shape(q, v, "causal_attention");
  const std::size_t d = q.dim(1);
  if (q.dim(0) != batch * seq_len)
    throw DimensionError("causal_attention: " + std::to_string(q.dim(0)) + " rows for batch " +
                         std::to_string(batch) + " x length " + std::to_string(seq_len));
  if (n_heads == 0 || d % n_heads != 0)
    throw DimensionError("causal_attention: width " + std::to_string(d) + " not divisible into " +
                         std::to_string(n_heads) + " heads");
  const std::size_t dh = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t T = seq_len;
  // probs[(b*H + h)*T*T + i*T + j]
  std::vector<double> probs(batch * n_heads * T * T, 0.0);
  std::vector<double> out(q.size(), 0.0);
  const double* Q = q.values().data();
  const double* K = k.values().data();
  const double* V = v.values().data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < n_heads; ++h) {
      double* P = probs.data() + (b * n_heads + h) * T * T;
      for (std::size_t i = 0; i < T; ++i) {
        const double* qi = Q + (b * T + i) * d + h * dh;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
          const double* kj = K + (b * T + j) * d + h * dh;
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          s *= inv_sqrt;
          P[i * T + j] = s;
          mx = std::max(mx, s);
        }
        double z = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          const double e = std::exp(P[i * T + j] - mx);
          P[i * T + j] = e;
          z += e;
        }
        double* oi = out.data() + (b * T + i) * d + h * dh;
        for (std::size_t j = 0; j <= i; ++j) {
          P[i * T + j] /= z;
          const double p = P[i * T + j];
          const double* vj = V + (b * T + j) * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += p * vj[c];
        }
      }
    }
  auto qn = q.node_ptr(), kn = k.node_ptr(), vn = v.node_ptr();
  return detail::make_result(
      q.shape(), std::move(out), {&q, &k, &v},
      [qn, kn, vn, batch, n_heads, T, d, dh, inv_sqrt, probs = std::move(probs)](detail::Node& self) {
        auto& gq = qn->grad_buffer();
        auto& gk = kn->grad_buffer();
        auto& gv = vn->grad_buffer();
        const double* Q = qn->value.data();
        const double* K = kn->value.data();
        const double* V = vn->value.data();
        const double* dO = self.grad.data();
        std::vector<double> dS(T);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t h = 0; h < n_heads; ++h) {
            const double* P = probs.data() + (b * n_heads + h) * T * T;
            for (std::size_t i = 0; i < T; ++i) {
              const double* doi = dO + (b * T + i) * d + h * dh;
              double dot = 0.0;
              for (std::size_t j = 0; j <= i; ++j) {
                const double* vj = V + (b * T + j) * d + h * dh;
                double dp = 0.0;
                for (std::size_t c = 0; c < dh; ++c) dp += doi[c] * vj[c];
                dS[j] = dp;
                dot += dp * P[i * T + j];
                double* gvj = gv.data() + (b * T + j) * d + h * dh;
                const double p = P[i * T + j];
                for (std::size_t c = 0; c < dh; ++c) gvj[c] += p * doi[c];
              }
              const double* qi = Q + (b * T + i) * d + h * dh;
              double* gqi = gq.data() + (b * T + i) * d + h * dh;
              for (std::size_t j = 0; j <= i; ++j) {
                const double ds = P[i * T + j] * (dS[j] - dot) * inv_sqrt;
                const double* kj = K + (b * T + j) * d + h * dh;
                double* gkj = gk.data() + (b * T + j) * d + h * dh;
                for (std::size_t c = 0; c < dh; ++c) {
                  gqi[c] += ds * kj[c];
                  gkj[c] += ds * qi[c];
                }
              }
            }
          }
      });
}

/// Masked token-level negative log-likelihood. `logits` is [.. x V] with one
/// row per target; rows whose mask is 0 contribute nothing. Returns the sum
/// over counted rows, or the mean when `mean` is set.
inline Tensor cross_entropy(const Tensor& logits, std::span<const TokenId> targets,
                            std::span<const std::uint8_t> mask, bool mean) {
  if (logits.rank() < 2) throw DimensionError("cross_entropy_loss: logits need rank >= 2");
  const std::size_t V = logits.dim(logits.rank() - 1);
  const std::size_t rows = logits.size() / V;
  if (targets.size() != rows || mask.size() != rows)
    throw DimensionError("cross_entropy_loss: " + std::to_string(rows) + " logit rows but " +
                         std::to_string(targets.size()) + " targets and " +
                         std::to_string(mask.size()) + " mask entries");
  std::size_t count = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    ++count;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= V)
      throw IndexError("cross_entropy_loss: target " + std::to_string(targets[r]) +
                       " outside vocabulary of " + std::to_string(V));
  }
  if (count == 0) throw ContractError("cross_entropy_loss: degenerate batch (mask is all zero)");
  const double norm = mean ? 1.0 / static_cast<double>(count) : 1.0;
  std::vector<double> probs(logits.size(), 0.0);
  std::vector<std::size_t> active;
  active.reserve(count);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    active.push_back(r);
    const double* row = logits.values().data() + r * V;
    double mx = row[0];
    for (std::size_t c = 1; c < V; ++c) mx = std::max(mx, row[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < V; ++c) {
      probs[r * V + c] = std::exp(row[c] - mx);
      z += probs[r * V + c];
    }
    for (std::size_t c = 0; c < V; ++c) probs[r * V + c] /= z;
    total += -(row[targets[r]] - mx - std::log(z));
  }
  std::vector<TokenId> tgt(targets.begin(), targets.end());
  auto ln = logits.node_ptr();
  return detail::make_result(
      {1}, {total * norm}, {&logits},
      [ln, V, norm, probs = std::move(probs), active = std::move(active), tgt = std::move(tgt)](detail::Node& self) {
        auto& g = ln->grad_buffer();
        const double up = self.grad[0] * norm;
        for (std::size_t r : active) {
          for (std::size_t c = 0; c < V; ++c) g[r * V + c] += up * probs[r * V + c];
          g[r * V + static_cast<std::size_t>(tgt[r])] -= up;
        }
      });
}

/// Mean masked negative log-likelihood.
inline Tensor cross_entropy_loss(const Tensor& logits, std::span<const TokenId> targets,
                                 std::span<const std::uint8_t> mask) {
  return cross_entropy(logits, targets, mask, true);
}

}  // namespace zsp
