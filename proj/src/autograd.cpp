// SPDX-License-Identifier: Apache-2.0
#include "lister/autograd.hpp"

#include <cmath>
#include <memory>
#include <numbers>

#include "lister/kernels.hpp"

namespace lister::ad {

// ---- GradientSet -----------------------------------------------------------

Matrix& GradientSet::at(const Parameter& p) {
  auto it = grads_.find(&p);
  if (it == grads_.end())
    it = grads_.emplace(&p, Matrix::Zero(p.value.rows(), p.value.cols())).first;
  return it->second;
}

const Matrix* GradientSet::find(const Parameter& p) const {
  auto it = grads_.find(&p);
  return it == grads_.end() ? nullptr : &it->second;
}

void GradientSet::add(const GradientSet& other) {
  for (const auto& [p, g] : other.grads_) at(*p) += g;
}

void GradientSet::scale(Real s) {
  for (auto& [p, g] : grads_) g *= s;
}

Real GradientSet::squared_norm() const {
  Real total = 0;
  for (const auto& [p, g] : grads_) total += g.squaredNorm();
  return total;
}

// ---- Tape ------------------------------------------------------------------

Var Tape::constant(Matrix value) {
  Node& n = nodes_.emplace_back();
  n.own = std::move(value);
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::param(const Parameter& p) {
  if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var(this, it->second);
  Node& n = nodes_.emplace_back();
  n.external = &p.value;
  n.param = &p;
  n.needs_grad = record_;
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_ids_.emplace(&p, id);
  return Var(this, id);
}

Var Tape::push(Matrix value, std::initializer_list<Var> inputs, Backward fn) {
  Node& n = nodes_.emplace_back();
  n.own = std::move(value);
  if (record_) {
    for (const Var& v : inputs) n.needs_grad = n.needs_grad || nodes_[v.id()].needs_grad;
    if (n.needs_grad) n.backward = std::move(fn);
  }
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::push(Matrix value, const std::vector<Var>& inputs, Backward fn) {
  Node& n = nodes_.emplace_back();
  n.own = std::move(value);
  if (record_) {
    for (const Var& v : inputs) n.needs_grad = n.needs_grad || nodes_[v.id()].needs_grad;
    if (n.needs_grad) n.backward = std::move(fn);
  }
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

const Matrix& Tape::value(Var v) const {
  const Node& n = nodes_[v.id()];
  return n.external ? *n.external : n.own;
}

Matrix& Tape::grad(Var v) {
  Node& n = nodes_[v.id()];
  if (!n.has_grad) {
    const Matrix& val = n.external ? *n.external : n.own;
    n.grad = Matrix::Zero(val.rows(), val.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var loss, GradientSet& sink, Real weight) {
  if (!record_) throw Error("backward() on a non-recording tape");
  if (loss.rows() != 1 || loss.cols() != 1) throw Error("backward() needs a 1x1 loss");
  grad(loss)(0, 0) += 1.0;
  for (int i = loss.id(); i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.has_grad) continue;
    if (n.param) {
      sink.at(*n.param) += weight * n.grad;
    } else if (n.backward) {
      n.backward(*this, n.grad);
    }
  }
}

// ---- linear algebra --------------------------------------------------------

namespace {

void require_same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error(std::string(op) + ": shape mismatch");
}

}  // namespace

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw Error("matmul: inner dimensions differ");
  Matrix out = a.value() * b.value();
  return a.tape().push(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.grad(a).noalias() += g * b.value().transpose();
    if (t.needs_grad(b)) t.grad(b).noalias() += a.value().transpose() * g;
  });
}

Var matmul_nt(Var a, Var b) {
  if (a.cols() != b.cols()) throw Error("matmul_nt: inner dimensions differ");
  Matrix out = a.value() * b.value().transpose();
  return a.tape().push(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.grad(a).noalias() += g * b.value();
    if (t.needs_grad(b)) t.grad(b).noalias() += g.transpose() * a.value();
  });
}

Var matmul_tn(Var a, Var b) {
  if (a.rows() != b.rows()) throw Error("matmul_tn: inner dimensions differ");
  Matrix out = a.value().transpose() * b.value();
  return a.tape().push(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.grad(a).noalias() += b.value() * g.transpose();
    if (t.needs_grad(b)) t.grad(b).noalias() += a.value() * g;
  });
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Matrix out = a.value() + b.value();
  return a.tape().push(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.grad(a) += g;
    if (t.needs_grad(b)) t.grad(b) += g;
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Matrix out = a.value() - b.value();
  return a.tape().push(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.grad(a) += g;
    if (t.needs_grad(b)) t.grad(b) -= g;
  });
}

Var hadamard(Var a, Var b) {
  require_same_shape(a, b, "hadamard");
  Matrix out = a.value().cwiseProduct(b.value());
  return a.tape().push(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.grad(a) += g.cwiseProduct(b.value());
    if (t.needs_grad(b)) t.grad(b) += g.cwiseProduct(a.value());
  });
}

Var scale(Var a, Real s) {
  Matrix out = a.value() * s;
  return a.tape().push(std::move(out), {a}, [a, s](Tape& t, const Matrix& g) {
    t.grad(a) += s * g;
  });
}

Var add_scalar(Var a, Var s) {
  Matrix out = a.value().array() + s.scalar();
  return a.tape().push(std::move(out), {a, s}, [a, s](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.grad(a) += g;
    if (t.needs_grad(s)) t.grad(s)(0, 0) += g.sum();
  });
}

Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw Error("add_row: shape mismatch");
  Matrix out = a.value().rowwise() + row.value().row(0);
  return a.tape().push(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.grad(a) += g;
    if (t.needs_grad(row)) t.grad(row) += g.colwise().sum();
  });
}

Var add_col(Var a, Var col) {
  if (col.cols() != 1 || col.rows() != a.rows()) throw Error("add_col: shape mismatch");
  Matrix out = a.value().colwise() + col.value().col(0);
  return a.tape().push(std::move(out), {a, col}, [a, col](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.grad(a) += g;
    if (t.needs_grad(col)) t.grad(col) += g.rowwise().sum();
  });
}

Var transpose(Var a) {
  Matrix out = a.value().transpose();
  return a.tape().push(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.grad(a) += g.transpose();
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("concat_rows: no inputs");
  Index rows = 0;
  const Index cols = parts.front().cols();
  for (const Var& p : parts) {
    if (p.cols() != cols) throw Error("concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return parts.front().tape().push(std::move(out), parts, [parts](Tape& t, const Matrix& g) {
    Index r0 = 0;
    for (const Var& p : parts) {
      const Index n = p.rows();
      if (t.needs_grad(p)) t.grad(p) += g.middleRows(r0, n);
      r0 += n;
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("concat_cols: no inputs");
  Index cols = 0;
  const Index rows = parts.front().rows();
  for (const Var& p : parts) {
    if (p.rows() != rows) throw Error("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return parts.front().tape().push(std::move(out), parts, [parts](Tape& t, const Matrix& g) {
    Index c0 = 0;
    for (const Var& p : parts) {
      const Index n = p.cols();
      if (t.needs_grad(p)) t.grad(p) += g.middleCols(c0, n);
      c0 += n;
    }
  });
}

Var slice_rows(Var a, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > a.rows()) throw Error("slice_rows: out of range");
  Matrix out = a.value().middleRows(begin, count);
  return a.tape().push(std::move(out), {a}, [a, begin, count](Tape& t, const Matrix& g) {
    t.grad(a).middleRows(begin, count) += g;
  });
}

Var slice_cols(Var a, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > a.cols()) throw Error("slice_cols: out of range");
  Matrix out = a.value().middleCols(begin, count);
  return a.tape().push(std::move(out), {a}, [a, begin, count](Tape& t, const Matrix& g) {
    t.grad(a).middleCols(begin, count) += g;
  });
}

// ---- pointwise -------------------------------------------------------------

Var gelu(Var a) {
  constexpr Real kInvSqrt2 = 0.70710678118654752440;
  Matrix out = a.value().unaryExpr([](Real x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); });
  return a.tape().push(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    constexpr Real kInvSqrt2Pi = 0.39894228040143267794;
    Matrix d = a.value().unaryExpr([](Real x) {
      return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
    });
    t.grad(a) += g.cwiseProduct(d);
  });
}

Var mask_mul(Var a, const Matrix& pattern) {
  if (pattern.rows() != a.rows() || pattern.cols() != a.cols()) throw Error("mask_mul: shape mismatch");
  Matrix out = a.value().cwiseProduct(pattern);
  return a.tape().push(std::move(out), {a}, [a, pattern](Tape& t, const Matrix& g) {
    t.grad(a) += g.cwiseProduct(pattern);
  });
}

Var masked_softmax_rows(Var logits, const Mask& col_mask) {
  if (static_cast<Index>(col_mask.size()) != logits.cols()) throw Error("masked_softmax_rows: mask size");
  Matrix out = kernels::masked_softmax_rows<Real>(logits.value(), col_mask);
  Tape& tape = logits.tape();
  const int self = static_cast<int>(tape.size());
  return tape.push(std::move(out), {logits}, [logits, self](Tape& t, const Matrix& g) {
    const Matrix& y = t.value(Var(&t, self));
    RowVector dots = (g.cwiseProduct(y)).rowwise().sum().transpose();
    Matrix dx = y.cwiseProduct(g);
    for (Index r = 0; r < y.rows(); ++r) dx.row(r) -= dots[r] * y.row(r);
    t.grad(logits) += dx;
  });
}

Var masked_softmax_entries(Var logits, const Mask& entry_mask) {
  if (static_cast<Index>(entry_mask.size()) != logits.rows() * logits.cols())
    throw Error("masked_softmax_entries: mask size");
  Matrix out = kernels::masked_softmax_entries<Real>(logits.value(), entry_mask);
  Tape& tape = logits.tape();
  const int self = static_cast<int>(tape.size());
  return tape.push(std::move(out), {logits}, [logits, self](Tape& t, const Matrix& g) {
    const Matrix& y = t.value(Var(&t, self));
    RowVector dots = (g.cwiseProduct(y)).rowwise().sum().transpose();
    Matrix dx = y.cwiseProduct(g);
    for (Index r = 0; r < y.rows(); ++r) dx.row(r) -= dots[r] * y.row(r);
    t.grad(logits) += dx;
  });
}

Var layer_norm_rows(Var a, Var gamma, Var beta, Real eps) {
  const Index n = a.cols();
  if (gamma.cols() != n || beta.cols() != n) throw Error("layer_norm_rows: shape mismatch");
  const Matrix& x = a.value();
  auto xhat = std::make_shared<Matrix>(x.rows(), n);
  auto inv_std = std::make_shared<RowVector>(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    const Real mu = x.row(r).mean();
    const Real var = (x.row(r).array() - mu).square().mean();
    (*inv_std)[r] = 1.0 / std::sqrt(var + eps);
    xhat->row(r) = (x.row(r).array() - mu) * (*inv_std)[r];
  }
  Matrix out = (xhat->array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  return a.tape().push(std::move(out), {a, gamma, beta},
                       [a, gamma, beta, xhat, inv_std, n](Tape& t, const Matrix& g) {
    if (t.needs_grad(gamma)) t.grad(gamma) += g.cwiseProduct(*xhat).colwise().sum();
    if (t.needs_grad(beta)) t.grad(beta) += g.colwise().sum();
    if (!t.needs_grad(a)) return;
    Matrix dxhat = g.array().rowwise() * gamma.value().row(0).array();
    Matrix& da = t.grad(a);
    for (Index r = 0; r < g.rows(); ++r) {
      const Real m1 = dxhat.row(r).mean();
      const Real m2 = dxhat.row(r).dot(xhat->row(r)) / static_cast<Real>(n);
      da.row(r) += (*inv_std)[r] * (dxhat.row(r).array() - m1 - xhat->row(r).array() * m2).matrix();
    }
  });
}

Var sum_all(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape().push(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.grad(a).array() += g(0, 0);
  });
}

// ---- convolution -----------------------------------------------------------

namespace {

void im2col(const Matrix& x, const ConvGeometry& g, Matrix& cols) {
  const Index ho = g.out_height(), wo = g.out_width();
  cols.resize(g.in_channels * g.kernel_h * g.kernel_w, ho * wo);
  for (Index ci = 0; ci < g.in_channels; ++ci) {
    const Real* src = x.row(ci).data();
    for (Index dy = 0; dy < g.kernel_h; ++dy) {
      for (Index dx = 0; dx < g.kernel_w; ++dx) {
        Real* dst = cols.row((ci * g.kernel_h + dy) * g.kernel_w + dx).data();
        for (Index oy = 0; oy < ho; ++oy) {
          const Index iy = oy * g.stride_h - g.pad_h + dy * g.dilation_h;
          Real* drow = dst + oy * wo;
          if (iy < 0 || iy >= g.height) {
            std::fill(drow, drow + wo, 0.0);
            continue;
          }
          const Real* srow = src + iy * g.width;
          for (Index ox = 0; ox < wo; ++ox) {
            const Index ix = ox * g.stride_w - g.pad_w + dx * g.dilation_w;
            drow[ox] = (ix < 0 || ix >= g.width) ? 0.0 : srow[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const Matrix& cols, const ConvGeometry& g, Matrix& dx_out) {
  const Index ho = g.out_height(), wo = g.out_width();
  for (Index ci = 0; ci < g.in_channels; ++ci) {
    Real* dst = dx_out.row(ci).data();
    for (Index dy = 0; dy < g.kernel_h; ++dy) {
      for (Index dx = 0; dx < g.kernel_w; ++dx) {
        const Real* src = cols.row((ci * g.kernel_h + dy) * g.kernel_w + dx).data();
        for (Index oy = 0; oy < ho; ++oy) {
          const Index iy = oy * g.stride_h - g.pad_h + dy * g.dilation_h;
          if (iy < 0 || iy >= g.height) continue;
          Real* drow = dst + iy * g.width;
          const Real* srow = src + oy * wo;
          for (Index ox = 0; ox < wo; ++ox) {
            const Index ix = ox * g.stride_w - g.pad_w + dx * g.dilation_w;
            if (ix >= 0 && ix < g.width) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(Var x, Var weight, Var bias, const ConvGeometry& g) {
  if (x.rows() != g.in_channels || x.cols() != g.height * g.width)
    throw Error("conv2d: input does not match geometry");
  if (weight.cols() != g.in_channels * g.kernel_h * g.kernel_w)
    throw Error("conv2d: weight does not match geometry");
  if (bias.rows() != weight.rows() || bias.cols() != 1) throw Error("conv2d: bias shape");
  if (g.out_height() < 1 || g.out_width() < 1) throw Error("conv2d: empty output");

  auto cols = std::make_shared<Matrix>();
  im2col(x.value(), g, *cols);
  Matrix out(weight.rows(), cols->cols());
  out.noalias() = weight.value() * (*cols);
  out.colwise() += bias.value().col(0);
  Tape& tape = x.tape();
  if (!tape.recording()) return tape.push(std::move(out), {x, weight, bias}, {});
  return tape.push(std::move(out), {x, weight, bias}, [x, weight, bias, g, cols](Tape& t, const Matrix& gout) {
    if (t.needs_grad(weight)) t.grad(weight).noalias() += gout * cols->transpose();
    if (t.needs_grad(bias)) t.grad(bias) += gout.rowwise().sum();
    if (t.needs_grad(x)) {
      Matrix dcols(cols->rows(), cols->cols());
      dcols.noalias() = weight.value().transpose() * gout;
      col2im_add(dcols, g, t.grad(x));
    }
  });
}

// ---- losses ----------------------------------------------------------------

Var cross_entropy_rows(Var logits, const std::vector<int>& targets) {
  const Matrix& z = logits.value();
  if (static_cast<Index>(targets.size()) != z.rows()) throw Error("cross_entropy_rows: target count");
  Mask all(static_cast<std::size_t>(z.cols()), 1);
  auto probs = std::make_shared<Matrix>(kernels::masked_softmax_rows<Real>(z, all));
  Real loss = 0;
  for (Index r = 0; r < z.rows(); ++r) {
    const int cls = targets[static_cast<std::size_t>(r)];
    if (cls < 0 || cls >= z.cols()) throw Error("class id " + std::to_string(cls) + " out of range");
    // log-sum-exp form keeps the value finite for saturated logits
    const Real hi = z.row(r).maxCoeff();
    const Real lse = hi + std::log((z.row(r).array() - hi).exp().sum());
    loss += lse - z(r, cls);
  }
  const Real rows = static_cast<Real>(z.rows());
  Matrix out(1, 1);
  out(0, 0) = loss / rows;
  return logits.tape().push(std::move(out), {logits}, [logits, probs, targets, rows](Tape& t, const Matrix& g) {
    Matrix d = *probs;
    for (Index r = 0; r < d.rows(); ++r) d(r, targets[static_cast<std::size_t>(r)]) -= 1.0;
    t.grad(logits) += (g(0, 0) / rows) * d;
  });
}

Var neg_log_entry(Var a, Index r, Index c, Real floor) {
  const Real v = a.value()(r, c);
  Matrix out(1, 1);
  out(0, 0) = -std::log(std::max(v, floor));
  return a.tape().push(std::move(out), {a}, [a, r, c, v, floor](Tape& t, const Matrix& g) {
    if (v > floor) t.grad(a)(r, c) -= g(0, 0) / v;
  });
}

Var sum_a_log_a(Var a, Real floor) {
  const Matrix& x = a.value();
  Real total = 0;
  for (Index i = 0; i < x.size(); ++i) {
    const Real v = x.data()[i];
    if (v > 0) total += v * std::log(std::max(v, floor));
  }
  Matrix out(1, 1);
  out(0, 0) = total;
  return a.tape().push(std::move(out), {a}, [a, floor](Tape& t, const Matrix& g) {
    const Matrix& x = a.value();
    Matrix& d = t.grad(a);
    for (Index i = 0; i < x.size(); ++i) {
      const Real v = x.data()[i];
      d.data()[i] += g(0, 0) * (std::log(std::max(v, floor)) + (v > floor ? 1.0 : 0.0));
    }
  });
}

}  // namespace lister::ad
