#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "vilsum/tensor.hpp"

namespace vilsum {

/// Handle to a node on a Tape.
struct Var {
  int i = -1;
  bool valid() const { return i >= 0; }
};

/// Captures attention weights (averaged over heads) for inspection.
struct AttnProbe {
  std::vector<Tensor> weights;  // one Tq x Tk matrix per recorded attention call
};

/// Records primitive applications in creation order; creation order is a
/// topological order, so the backward sweep replays nodes exactly once in
/// reverse. Leaves reference external parameter tensors and accumulate
/// their gradients into the tensor's grad buffer when backward() finishes.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // -- node creation ------------------------------------------------------
  Var leaf(Tensor& param);
  Var constant(Tensor value);

  // -- primitives ---------------------------------------------------------
  Var matmul(Var a, Var b);                 // [m,k] x [k,n] -> [m,n]
  Var matmul_nt(Var a, Var b);              // [m,k] x [n,k]^T -> [m,n]
  Var add(Var a, Var b);                    // same shape
  Var add_rowvec(Var x, Var b);             // [m,n] + [n] broadcast over rows
  Var scale(Var x, float c);
  Var reshape(Var x, std::vector<int> shape);
  Var concat_rows(const std::vector<Var>& parts);
  Var slice_rows(Var x, int row_begin, int row_end);
  Var embed(Var table, std::span<const int> ids);
  Var softmax(Var x, int axis);
  Var layer_norm(Var x, Var gain, Var bias);    // over last dim, eps 1e-5
  Var gelu(Var x);
  Var rowmax(Var x);                        // [r,c] -> [c], per-column max
  Var row_l2_normalize(Var x);              // each row scaled to unit length

  /// Scaled dot-product multi-head attention. q:[Tq,d] k,v:[Tk,d].
  /// key_padding, when given, has Tk entries; nonzero marks a padded key
  /// that receives exactly zero attention weight. causal restricts query i
  /// to keys j <= i.
  Var attention(Var q, Var k, Var v, int n_heads,
                const std::vector<std::uint8_t>* key_padding = nullptr,
                bool causal = false, AttnProbe* probe = nullptr);

  /// Mean token-level NLL of targets under row-wise softmax of logits
  /// [n,V]. Rows whose target equals ignore_index are excluded from the
  /// mean.
  Var cross_entropy(Var logits, std::span<const int> targets, int ignore_index = -1);

  /// Mean binary cross-entropy of sigmoid(logits[i]) vs labels[i], logits rank-1.
  Var bce_logits(Var logits, std::span<const float> labels);

  /// Mean bidirectional triplet hinge over a similarity matrix whose
  /// diagonal holds matched pairs: relu(margin - s_ii + s_ij) summed over
  /// both anchor directions, averaged over the 2n(n-1) terms.
  Var triplet_hinge(Var sim, float margin);

  // -- execution ----------------------------------------------------------
  /// Seeds d(loss)/d(loss)=1 and replays the tape backward, accumulating
  /// leaf gradients into their parameter tensors. Loss must be scalar.
  void backward(Var loss);

  const Tensor& val(Var v) const;
  /// Gradient buffer of a node after backward(); zeros if untouched.
  std::vector<float> grad_of(Var v) const;
  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;               // unused for leaves
    Tensor* external = nullptr; // leaves only
    std::vector<float> grad;
    bool touched = false;
    std::function<void(Tape&)> back;
  };

  Var push(Tensor value, std::function<void(Tape&)> back);
  std::vector<float>& acc(int idx);  // grad buffer for accumulation, marks touched
  const Node& node(Var v) const;

  std::vector<Node> nodes_;
  bool ran_backward_ = false;
};

/// base_lr * min(1, step/warmup_steps): linear ramp, then constant.
float warmup_lr(long step, float base_lr, long warmup_steps);

/// Plain cosine similarity of two equal-length vectors (not differentiable).
float cosine(std::span<const float> a, std::span<const float> b);

}  // namespace vilsum
