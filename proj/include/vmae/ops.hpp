#pragma once

#include <cmath>
#include <memory>
#include <numbers>

#include "vmae/tensor.hpp"

// Differentiable primitives over 2-D tape values. Every function records one
// node whose backward rule writes input gradients through Tape::accumulate.

namespace vmae {

namespace detail {

template <typename Scalar>
void require_same_tape(const Var<Scalar>& a, const Var<Scalar>& b, const char* op) {
  if (&a.tape() != &b.tape()) throw ContractError(std::string(op) + ": operands on different tapes");
}

template <typename Scalar>
void require_same_shape(const Var<Scalar>& a, const Var<Scalar>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape " + shape_string(a.value()) + " vs " +
                         shape_string(b.value()));
  }
}

template <typename Scalar>
Scalar normal_cdf(Scalar x) {
  return Scalar(0.5) * (Scalar(1) + std::erf(x / std::numbers::sqrt2_v<Scalar>));
}

template <typename Scalar>
Scalar normal_pdf(Scalar x) {
  return std::exp(Scalar(-0.5) * x * x) / std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);
}

template <typename Derived>
void softmax_rows_inplace(Eigen::MatrixBase<Derived>& s) {
  for (Index r = 0; r < s.rows(); ++r) {
    auto row = s.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_tape(a, b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner extents differ, " + shape_string(a.value()) + " vs " +
                         shape_string(b.value()));
  }
  const Index ia = a.id(), ib = b.id();
  return a.tape().record(a.value() * b.value(), {ia, ib}, [ia, ib](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

/// x·W + b with b broadcast over rows.
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias) {
  if (x.cols() != weight.rows()) {
    throw DimensionError("linear: input " + shape_string(x.value()) + " vs weight " +
                         shape_string(weight.value()));
  }
  if (bias.rows() != 1 || bias.cols() != weight.cols()) {
    throw DimensionError("linear: bias " + shape_string(bias.value()) + " vs weight " +
                         shape_string(weight.value()));
  }
  Matrix<Scalar> out = x.value() * weight.value();
  out.rowwise() += bias.value().row(0);
  const Index ix = x.id(), iw = weight.id(), ib = bias.id();
  return x.tape().record(std::move(out), {ix, iw, ib},
                         [ix, iw, ib](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                           if (t.requires_grad(ix)) t.accumulate(ix, g * t.value(iw).transpose());
                           if (t.requires_grad(iw)) t.accumulate(iw, t.value(ix).transpose() * g);
                           if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
                         });
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_tape(a, b, "add");
  detail::require_same_shape(a, b, "add");
  const Index ia = a.id(), ib = b.id();
  return a.tape().record(a.value() + b.value(), {ia, ib}, [ia, ib](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_tape(a, b, "sub");
  detail::require_same_shape(a, b, "sub");
  const Index ia = a.id(), ib = b.id();
  return a.tape().record(a.value() - b.value(), {ia, ib}, [ia, ib](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

/// Elementwise product.
template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_tape(a, b, "mul");
  detail::require_same_shape(a, b, "mul");
  const Index ia = a.id(), ib = b.id();
  return a.tape().record(a.value().cwiseProduct(b.value()), {ia, ib},
                         [ia, ib](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                           if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                           if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                         });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  const Index ia = a.id();
  return a.tape().record(a.value() * s, {ia}, [ia, s](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(ia, g * s);
  });
}

/// a + c for a constant c of the same shape (no gradient to c).
template <typename Scalar, typename Derived>
Var<Scalar> add_constant(const Var<Scalar>& a, const Eigen::MatrixBase<Derived>& c) {
  if (a.rows() != c.rows() || a.cols() != c.cols()) {
    throw DimensionError("add_constant: shape " + shape_string(a.value()) + " vs " + shape_string(c));
  }
  const Index ia = a.id();
  return a.tape().record(a.value() + c, {ia}, [ia](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(ia, g);
  });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  Matrix<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  const Index ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    const auto& v = t.value(ia);
    t.accumulate(ia, Matrix<Scalar>::Constant(v.rows(), v.cols(), g(0, 0)));
  });
}

/// Column means over rows: [N×D] -> [1×D].
template <typename Scalar>
Var<Scalar> mean_rows(const Var<Scalar>& a) {
  const Index ia = a.id();
  const Scalar inv = Scalar(1) / static_cast<Scalar>(a.rows());
  return a.tape().record(a.value().colwise().sum() * inv, {ia},
                         [ia, inv](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                           const Index n = t.value(ia).rows();
                           t.accumulate(ia, g.replicate(n, 1) * inv);
                         });
}

/// Exact Gaussian-CDF GELU, x·Φ(x).
template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& a) {
  const Index ia = a.id();
  Matrix<Scalar> out = a.value().unaryExpr([](Scalar x) { return x * detail::normal_cdf(x); });
  return a.tape().record(std::move(out), {ia}, [ia](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    const auto& x = t.value(ia);
    Matrix<Scalar> d = x.unaryExpr([](Scalar v) { return detail::normal_cdf(v) + v * detail::normal_pdf(v); });
    t.accumulate(ia, g.cwiseProduct(d));
  });
}

/// Per-row standardization over the last axis followed by gamma/beta affine.
template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta, Scalar eps) {
  const Index d = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d) {
    throw DimensionError("layer_norm: input " + shape_string(x.value()) + " vs gamma " +
                         shape_string(gamma.value()) + ", beta " + shape_string(beta.value()));
  }
  if (!(eps >= Scalar(0))) throw ConfigError("layer_norm: eps must be non-negative");
  const auto& xv = x.value();
  const Index n = xv.rows();
  auto xhat = std::make_shared<Matrix<Scalar>>(n, d);
  auto inv_std = std::make_shared<Vector<Scalar>>(n);
  for (Index r = 0; r < n; ++r) {
    const Scalar mean = xv.row(r).mean();
    const Scalar var = (xv.row(r).array() - mean).square().mean();
    const Scalar is = Scalar(1) / std::sqrt(var + eps);
    (*inv_std)(r) = is;
    xhat->row(r) = (xv.row(r).array() - mean) * is;
  }
  Matrix<Scalar> out = xhat->array().rowwise() * gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  const Index ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape().record(std::move(out), {ix, ig, ib},
                         [ix, ig, ib, xhat, inv_std](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                           if (t.requires_grad(ig)) t.accumulate(ig, g.cwiseProduct(*xhat).colwise().sum());
                           if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
                           if (!t.requires_grad(ix)) return;
                           Matrix<Scalar> dxhat = g.array().rowwise() * t.value(ig).row(0).array();
                           Matrix<Scalar> dx(dxhat.rows(), dxhat.cols());
                           for (Index r = 0; r < dxhat.rows(); ++r) {
                             const Scalar m1 = dxhat.row(r).mean();
                             const Scalar m2 = dxhat.row(r).cwiseProduct(xhat->row(r)).mean();
                             dx.row(r) = (dxhat.row(r).array() - m1 - xhat->row(r).array() * m2) * (*inv_std)(r);
                           }
                           t.accumulate(ix, dx);
                         });
}

template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& a) {
  Matrix<Scalar> p = a.value();
  detail::softmax_rows_inplace(p);
  auto saved = std::make_shared<Matrix<Scalar>>(p);
  const Index ia = a.id();
  return a.tape().record(std::move(p), {ia}, [ia, saved](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    const auto& p = *saved;
    Vector<Scalar> dot = g.cwiseProduct(p).rowwise().sum();
    t.accumulate(ia, p.cwiseProduct(g - dot.replicate(1, g.cols())));
  });
}

/// Attention weights per head for a fused [N×3D] query/key/value matrix.
template <typename Scalar>
std::vector<Matrix<Scalar>> attention_weights(const Matrix<Scalar>& qkv, Index heads) {
  const Index n = qkv.rows();
  const Index d = qkv.cols() / 3;
  const Index dh = d / heads;
  const Scalar scl = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  std::vector<Matrix<Scalar>> out;
  out.reserve(static_cast<std::size_t>(heads));
  for (Index h = 0; h < heads; ++h) {
    Matrix<Scalar> s = (qkv.block(0, h * dh, n, dh) * qkv.block(0, d + h * dh, n, dh).transpose()) * scl;
    detail::softmax_rows_inplace(s);
    out.push_back(std::move(s));
  }
  return out;
}

/// Dense multi-head self-attention. Input is the fused projection
/// [q | k | v] of width 3·D; output is the concatenation of head outputs
/// [N×D]. Every token attends to every token.
template <typename Scalar>
Var<Scalar> attention(const Var<Scalar>& qkv, Index heads) {
  if (qkv.cols() % 3 != 0) throw DimensionError("attention: qkv width not divisible by 3, " + shape_string(qkv.value()));
  const Index n = qkv.rows();
  const Index d = qkv.cols() / 3;
  if (heads <= 0 || d % heads != 0) {
    throw ConfigError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  }
  const Index dh = d / heads;
  const Scalar scl = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  const auto& x = qkv.value();
  auto probs = std::make_shared<std::vector<Matrix<Scalar>>>(attention_weights<Scalar>(x, heads));
  Matrix<Scalar> out(n, d);
  for (Index h = 0; h < heads; ++h) {
    out.block(0, h * dh, n, dh).noalias() = (*probs)[h] * x.block(0, 2 * d + h * dh, n, dh);
  }
  const Index iq = qkv.id();
  return qkv.tape().record(std::move(out), {iq},
                           [iq, probs, heads, d, dh, scl](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                             const auto& x = t.value(iq);
                             const Index n = x.rows();
                             Matrix<Scalar> dqkv(n, 3 * d);
                             for (Index h = 0; h < heads; ++h) {
                               const auto& p = (*probs)[h];
                               auto q = x.block(0, h * dh, n, dh);
                               auto k = x.block(0, d + h * dh, n, dh);
                               auto v = x.block(0, 2 * d + h * dh, n, dh);
                               auto go = g.block(0, h * dh, n, dh);
                               dqkv.block(0, 2 * d + h * dh, n, dh).noalias() = p.transpose() * go;
                               Matrix<Scalar> dp = go * v.transpose();
                               Vector<Scalar> dot = dp.cwiseProduct(p).rowwise().sum();
                               Matrix<Scalar> ds = p.cwiseProduct(dp - dot.replicate(1, n)) * scl;
                               dqkv.block(0, h * dh, n, dh).noalias() = ds * k;
                               dqkv.block(0, d + h * dh, n, dh).noalias() = ds.transpose() * q;
                             }
                             t.accumulate(iq, dqkv);
                           });
}

/// Selects rows by index, in the given order.
template <typename Scalar>
Var<Scalar> gather_rows(const Var<Scalar>& a, std::span<const Index> rows) {
  const auto& v = a.value();
  Matrix<Scalar> out(static_cast<Index>(rows.size()), v.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= v.rows()) {
      throw DimensionError("gather_rows: index " + std::to_string(rows[i]) + " outside " + shape_string(v));
    }
    out.row(static_cast<Index>(i)) = v.row(rows[i]);
  }
  const Index ia = a.id();
  std::vector<Index> idx(rows.begin(), rows.end());
  return a.tape().record(std::move(out), {ia}, [ia, idx = std::move(idx)](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    const auto& v = t.value(ia);
    Matrix<Scalar> d = Matrix<Scalar>::Zero(v.rows(), v.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) d.row(idx[i]) += g.row(static_cast<Index>(i));
    t.accumulate(ia, d);
  });
}

/// Places `rows` at the given positions of a [total×D] matrix and fills the
/// remaining positions with the single [1×D] row `fill`.
template <typename Scalar>
Var<Scalar> scatter_rows(const Var<Scalar>& rows, std::span<const Index> positions, Index total,
                         const Var<Scalar>& fill) {
  detail::require_same_tape(rows, fill, "scatter_rows");
  if (static_cast<Index>(positions.size()) != rows.rows()) {
    throw DimensionError("scatter_rows: " + std::to_string(positions.size()) + " positions for " +
                         std::to_string(rows.rows()) + " rows");
  }
  if (fill.rows() != 1 || fill.cols() != rows.cols()) {
    throw DimensionError("scatter_rows: fill " + shape_string(fill.value()) + " vs rows " +
                         shape_string(rows.value()));
  }
  std::vector<std::uint8_t> placed(static_cast<std::size_t>(total), 0);
  for (Index p : positions) {
    if (p < 0 || p >= total || placed[static_cast<std::size_t>(p)]) {
      throw DimensionError("scatter_rows: invalid or repeated position " + std::to_string(p));
    }
    placed[static_cast<std::size_t>(p)] = 1;
  }
  Matrix<Scalar> out = fill.value().replicate(total, 1);
  for (std::size_t i = 0; i < positions.size(); ++i) out.row(positions[i]) = rows.value().row(static_cast<Index>(i));
  const Index ir = rows.id(), iff = fill.id();
  std::vector<Index> pos(positions.begin(), positions.end());
  return rows.tape().record(
      std::move(out), {ir, iff},
      [ir, iff, pos = std::move(pos), placed = std::move(placed)](Tape<Scalar>& t, const Matrix<Scalar>& g) {
        if (t.requires_grad(ir)) {
          Matrix<Scalar> d(static_cast<Index>(pos.size()), g.cols());
          for (std::size_t i = 0; i < pos.size(); ++i) d.row(static_cast<Index>(i)) = g.row(pos[i]);
          t.accumulate(ir, d);
        }
        if (t.requires_grad(iff)) {
          RowVector<Scalar> d = RowVector<Scalar>::Zero(g.cols());
          for (Index r = 0; r < g.rows(); ++r) {
            if (!placed[static_cast<std::size_t>(r)]) d += g.row(r);
          }
          t.accumulate(iff, d);
        }
      });
}

/// Mean over all entries of (pred - target)^2.
template <typename Scalar, typename Derived>
Var<Scalar> mean_squared_error(const Var<Scalar>& pred, const Eigen::MatrixBase<Derived>& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw DimensionError("mean_squared_error: prediction " + shape_string(pred.value()) + " vs target " +
                         shape_string(target));
  }
  auto diff = std::make_shared<Matrix<Scalar>>(pred.value() - target);
  const Scalar count = static_cast<Scalar>(diff->size());
  Matrix<Scalar> out(1, 1);
  out(0, 0) = diff->squaredNorm() / count;
  const Index ip = pred.id();
  return pred.tape().record(std::move(out), {ip}, [ip, diff, count](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(ip, *diff * (Scalar(2) * g(0, 0) / count));
  });
}

/// Mean softmax cross-entropy of [N×C] logits against N class labels.
template <typename Scalar>
Var<Scalar> cross_entropy(const Var<Scalar>& logits, std::span<const int> labels) {
  const Index n = logits.rows();
  const Index c = logits.cols();
  if (static_cast<Index>(labels.size()) != n) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
  }
  auto probs = std::make_shared<Matrix<Scalar>>(logits.value());
  Scalar total = 0;
  for (Index r = 0; r < n; ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= c) throw DimensionError("cross_entropy: label " + std::to_string(y) + " outside " + std::to_string(c) + " classes");
    auto row = probs->row(r);
    const Scalar mx = row.maxCoeff();
    const Scalar lse = mx + std::log((row.array() - mx).exp().sum());
    total += lse - row(y);
    row = (row.array() - lse).exp().matrix();
  }
  Matrix<Scalar> out(1, 1);
  out(0, 0) = total / static_cast<Scalar>(n);
  std::vector<int> ys(labels.begin(), labels.end());
  const Index il = logits.id();
  return logits.tape().record(std::move(out), {il}, [il, probs, ys = std::move(ys)](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    Matrix<Scalar> d = *probs;
    for (std::size_t r = 0; r < ys.size(); ++r) d(static_cast<Index>(r), ys[r]) -= Scalar(1);
    t.accumulate(il, d * (g(0, 0) / static_cast<Scalar>(ys.size())));
  });
}

}  // namespace vmae
