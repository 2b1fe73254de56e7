// SPDX-License-Identifier: Apache-2.0
//
// A small reverse-mode differentiation tape over row-major matrices.
//
// One Tape is built per sample and thrown away after backward(). Parameters
// live outside the tape; their gradients are accumulated into a GradientSet so
// that several tapes (e.g. the samples of a batch) can feed one optimizer step.
#pragma once

#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "lister/types.hpp"

namespace lister::ad {

/// A named trainable tensor. Always stored as a 2-D matrix.
struct Parameter {
  std::string name;
  Matrix value;
  bool decay = true;  // subject to decoupled weight decay
};

/// Accumulated dL/dparam, keyed by parameter identity.
class GradientSet {
 public:
  Matrix& at(const Parameter& p);
  const Matrix* find(const Parameter& p) const;
  void add(const GradientSet& other);
  void scale(Real s);
  void clear() { grads_.clear(); }
  Real squared_norm() const;

 private:
  std::unordered_map<const Parameter*, Matrix> grads_;
};

class Tape;

/// Handle to a node on a tape. Cheap to copy.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Real scalar() const { return value()(0, 0); }
  Tape& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& out_grad)>;

  /// With record=false the tape only evaluates (no closures, no gradients).
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Matrix value);
  /// Leaf bound to a parameter; repeated calls return the same node.
  Var param(const Parameter& p);

  /// Adds an op node. `fn` runs during backward() with the node's gradient.
  Var push(Matrix value, std::initializer_list<Var> inputs, Backward fn);
  Var push(Matrix value, const std::vector<Var>& inputs, Backward fn);

  const Matrix& value(Var v) const;
  bool needs_grad(Var v) const { return nodes_[v.id()].needs_grad; }
  /// Gradient buffer of `v`, zero-initialised on first touch.
  Matrix& grad(Var v);

  /// Seeds d(loss)/d(loss) = 1 (loss must be 1x1) and propagates, adding leaf
  /// gradients into `sink` scaled by `weight`.
  void backward(Var loss, GradientSet& sink, Real weight = 1.0);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix own;
    const Matrix* external = nullptr;  // parameter storage
    const Parameter* param = nullptr;
    Matrix grad;
    bool has_grad = false;
    bool needs_grad = false;
    Backward backward;
  };

  bool record_;
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_ids_;
};

inline const Matrix& Var::value() const { return tape_->value(*this); }

// ---- ops -------------------------------------------------------------------

Var matmul(Var a, Var b);     // a b
Var matmul_nt(Var a, Var b);  // a b^T
Var matmul_tn(Var a, Var b);  // a^T b
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, Real s);
Var add_scalar(Var a, Var s);     // s is 1x1, broadcast to every entry
Var add_row(Var a, Var row);      // row is 1 x cols, broadcast down rows
Var add_col(Var a, Var col);      // col is rows x 1, broadcast across columns
Var transpose(Var a);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(Var a, Index begin, Index count);
Var slice_cols(Var a, Index begin, Index count);
Var gelu(Var a);
/// Elementwise product with a constant (e.g. a 0/1 validity pattern).
Var mask_mul(Var a, const Matrix& pattern);
Var masked_softmax_rows(Var logits, const Mask& col_mask);
Var masked_softmax_entries(Var logits, const Mask& entry_mask);
Var layer_norm_rows(Var a, Var gamma, Var beta, Real eps = 1e-5);
Var sum_all(Var a);

/// Geometry of a 2-D convolution over a (channels, height*width) matrix.
struct ConvGeometry {
  Index in_channels = 1, height = 1, width = 1;
  Index kernel_h = 3, kernel_w = 3;
  Index stride_h = 1, stride_w = 1;
  Index pad_h = 1, pad_w = 1;
  Index dilation_h = 1, dilation_w = 1;

  Index out_height() const { return (height + 2 * pad_h - dilation_h * (kernel_h - 1) - 1) / stride_h + 1; }
  Index out_width() const { return (width + 2 * pad_w - dilation_w * (kernel_w - 1) - 1) / stride_w + 1; }
};

/// x: (Cin, H*W); weight: (Cout, Cin*kh*kw); bias: (Cout, 1).
/// Result: (Cout, Ho*Wo). Out-of-range taps read zero.
Var conv2d(Var x, Var weight, Var bias, const ConvGeometry& g);

/// Mean cross-entropy of row-wise softmax(logits) against class ids.
Var cross_entropy_rows(Var logits, const std::vector<int>& targets);
/// -log(max(a(r, c), floor)) as a 1x1 node.
Var neg_log_entry(Var a, Index r, Index c, Real floor);
/// sum_{jk} a_jk log(max(a_jk, floor)); entries <= 0 contribute 0.
Var sum_a_log_a(Var a, Real floor);

}  // namespace lister::ad
