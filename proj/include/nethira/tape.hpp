#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace nethira::autodiff {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Handle to a node recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

/// Reverse-mode automatic differentiation over row-major matrices.
///
/// Every op records its output value and a closure that pushes the output
/// gradient back to its inputs. Attention, layer norm and the losses are
/// fused ops with hand-written backward passes. Parameters are referenced,
/// not copied; their gradients are added into a caller-owned sink when
/// backward() finishes, so one tape per sample can run on its own thread.
class Tape {
 public:
  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// `value` must outlive the tape. With a null sink the node is a constant.
  Var parameter(const Matrix& value, Matrix* grad_sink);

  const Matrix& value(Var v) const;
  /// Gradient after backward(); an empty matrix if nothing reached the node.
  const Matrix& grad(Var v) const { return nodes_[v.id].grad; }
  double scalar(Var v) const { return value(v)(0, 0); }

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  /// Adds a [1, n] row to every row of a.
  Var add_row(Var a, Var row);
  Var scale(Var a, double factor);
  Var gelu(Var a);
  Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
  /// Rows of `table` picked by index (embedding lookup).
  Var gather_rows(Var table, std::span<const std::size_t> rows);
  Var slice_rows(Var a, std::size_t begin, std::size_t count);
  Var mean_rows(Var a);
  /// Multi-head scaled dot-product attention over pre-projected q, k, v.
  /// With `causal`, query i only attends to keys j <= i.
  Var attention(Var q, Var k, Var v, std::size_t heads, bool causal);
  /// Sum over rows of -log softmax(logits_r)[targets_r]; returns [1, 1].
  Var cross_entropy(Var logits, std::span<const std::size_t> targets);
  /// KL(softmax(p) || softmax(q)) for [1, n] logits; returns [1, 1].
  Var kl_divergence(Var p_logits, Var q_logits, bool stop_grad_p = false);

  /// Seeds d(root)/d(root) = 1 and runs the recorded closures in reverse.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    const Matrix* ref = nullptr;
    Matrix grad;
    Matrix* sink = nullptr;
    bool needs_grad = false;
    std::function<void(Tape&, std::size_t)> back;
  };

  Var push(Matrix value, bool needs_grad, std::function<void(Tape&, std::size_t)> back);
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  Matrix& grad_of(std::size_t id);
  const Matrix& out_grad(std::size_t id) const { return nodes_[id].grad; }

  std::vector<Node> nodes_;
};

/// Row-wise softmax helpers shared by the tape and the standalone losses.
Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& logits);
double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& logits);

}  // namespace nethira::autodiff
