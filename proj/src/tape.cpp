#include "nethira/tape.hpp"

#include <cassert>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>

namespace nethira::autodiff {

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;
constexpr Eigen::Index kAttentionBlock = 64;

}  // namespace

Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& logits) {
  const double m = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - m).exp();
  return e / e.sum();
}

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& logits) {
  const double m = logits.maxCoeff();
  return m + std::log((logits.array() - m).exp().sum());
}

Var Tape::push(Matrix value, bool needs_grad, std::function<void(Tape&, std::size_t)> back) {
  Node node;
  node.value = std::move(value);
  node.needs_grad = needs_grad;
  if (needs_grad) node.back = std::move(back);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Matrix& Tape::grad_of(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) {
    const Matrix& v = n.ref ? *n.ref : n.value;
    n.grad = Matrix::Zero(v.rows(), v.cols());
  }
  return n.grad;
}

const Matrix& Tape::value(Var v) const {
  const Node& n = nodes_[v.id];
  return n.ref ? *n.ref : n.value;
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::parameter(const Matrix& value, Matrix* grad_sink) {
  Node node;
  node.ref = &value;
  node.sink = grad_sink;
  node.needs_grad = grad_sink != nullptr;
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Tape::matmul(Var a, Var b) {
  Matrix out = value(a) * value(b);
  return push(std::move(out), needs_grad(a) || needs_grad(b), [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.out_grad(self);
    if (t.needs_grad(a)) t.grad_of(a.id).noalias() += g * t.value(b).transpose();
    if (t.needs_grad(b)) t.grad_of(b.id).noalias() += t.value(a).transpose() * g;
  });
}

Var Tape::add(Var a, Var b) {
  assert(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols());
  Matrix out = value(a) + value(b);
  return push(std::move(out), needs_grad(a) || needs_grad(b), [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.out_grad(self);
    if (t.needs_grad(a)) t.grad_of(a.id) += g;
    if (t.needs_grad(b)) t.grad_of(b.id) += g;
  });
}

Var Tape::add_row(Var a, Var row) {
  Matrix out = value(a);
  out.rowwise() += value(row).row(0);
  return push(std::move(out), needs_grad(a) || needs_grad(row),
              [a, row](Tape& t, std::size_t self) {
                const Matrix& g = t.out_grad(self);
                if (t.needs_grad(a)) t.grad_of(a.id) += g;
                if (t.needs_grad(row)) t.grad_of(row.id) += g.colwise().sum();
              });
}

Var Tape::scale(Var a, double factor) {
  Matrix out = value(a) * factor;
  return push(std::move(out), needs_grad(a), [a, factor](Tape& t, std::size_t self) {
    t.grad_of(a.id) += t.out_grad(self) * factor;
  });
}

Var Tape::gelu(Var a) {
  const Matrix& x = value(a);
  Eigen::ArrayXXd xa = x.array();
  Eigen::ArrayXXd th = (kGeluC * (xa + kGeluA * xa.cube())).tanh();
  Matrix out = (0.5 * xa * (1.0 + th)).matrix();
  return push(std::move(out), needs_grad(a), [a, th = std::move(th)](Tape& t, std::size_t self) {
    const Eigen::ArrayXXd xa = t.value(a).array();
    const Eigen::ArrayXXd d =
        0.5 * (1.0 + th) + 0.5 * xa * (1.0 - th.square()) * kGeluC * (1.0 + 3.0 * kGeluA * xa.square());
    t.grad_of(a.id).array() += t.out_grad(self).array() * d;
  });
}

Var Tape::layer_norm(Var x, Var gain, Var bias, double eps) {
  const Matrix& in = value(x);
  const Eigen::Index rows = in.rows();
  const Eigen::Index cols = in.cols();
  auto xhat = std::make_shared<Matrix>(rows, cols);
  auto inv_std = std::make_shared<Eigen::VectorXd>(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mean = in.row(r).mean();
    const double var = (in.row(r).array() - mean).square().mean();
    (*inv_std)(r) = 1.0 / std::sqrt(var + eps);
    xhat->row(r) = (in.row(r).array() - mean) * (*inv_std)(r);
  }
  Matrix out = xhat->array().rowwise() * value(gain).row(0).array();
  out.rowwise() += value(bias).row(0);
  const bool ng = needs_grad(x) || needs_grad(gain) || needs_grad(bias);
  return push(std::move(out), ng, [x, gain, bias, xhat, inv_std](Tape& t, std::size_t self) {
    const Matrix& g = t.out_grad(self);
    if (t.needs_grad(gain)) t.grad_of(gain.id) += (g.array() * xhat->array()).colwise().sum().matrix();
    if (t.needs_grad(bias)) t.grad_of(bias.id) += g.colwise().sum();
    if (!t.needs_grad(x)) return;
    const Matrix dxhat = g.array().rowwise() * t.value(gain).row(0).array();
    const double n = static_cast<double>(dxhat.cols());
    Matrix& gx = t.grad_of(x.id);
    for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
      const double mean_d = dxhat.row(r).sum() / n;
      const double mean_dx = dxhat.row(r).dot(xhat->row(r)) / n;
      gx.row(r).array() +=
          (*inv_std)(r) * (dxhat.row(r).array() - mean_d - xhat->row(r).array() * mean_dx);
    }
  });
}

Var Tape::gather_rows(Var table, std::span<const std::size_t> rows) {
  const Matrix& tab = value(table);
  Matrix out(static_cast<Eigen::Index>(rows.size()), tab.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = tab.row(static_cast<Eigen::Index>(rows[i]));
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return push(std::move(out), needs_grad(table),
              [table, idx = std::move(idx)](Tape& t, std::size_t self) {
                const Matrix& g = t.out_grad(self);
                Matrix& gt = t.grad_of(table.id);
                for (std::size_t i = 0; i < idx.size(); ++i) {
                  gt.row(static_cast<Eigen::Index>(idx[i])) += g.row(static_cast<Eigen::Index>(i));
                }
              });
}

Var Tape::slice_rows(Var a, std::size_t begin, std::size_t count) {
  Matrix out = value(a).middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(count));
  return push(std::move(out), needs_grad(a), [a, begin, count](Tape& t, std::size_t self) {
    t.grad_of(a.id).middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(count)) +=
        t.out_grad(self);
  });
}

Var Tape::mean_rows(Var a) {
  const Matrix& in = value(a);
  Matrix out = in.colwise().mean();
  const double inv = 1.0 / static_cast<double>(in.rows());
  return push(std::move(out), needs_grad(a), [a, inv](Tape& t, std::size_t self) {
    t.grad_of(a.id).rowwise() += t.out_grad(self).row(0) * inv;
  });
}

Var Tape::attention(Var q, Var k, Var v, std::size_t heads, bool causal) {
  const Matrix& Q = value(q);
  const Matrix& K = value(k);
  const Matrix& V = value(v);
  const Eigen::Index tq = Q.rows();
  const Eigen::Index tk = K.rows();
  const Eigen::Index dh = Q.cols() / static_cast<Eigen::Index>(heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // Query rows are processed in blocks so each score tile stays cache
  // resident. probs[h] keeps the full [tq, tk] softmax for the backward pass;
  // under the causal mask only the first key_end(block) columns are touched.
  auto key_end = [=](Eigen::Index row_end) { return causal ? std::min(row_end, tk) : tk; };
  auto probs = std::make_shared<std::vector<Matrix>>(heads);
  Matrix out(tq, Q.cols());
  for (std::size_t h = 0; h < heads; ++h) {
    const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
    Matrix& P = (*probs)[h];
    P.resize(tq, tk);
    const Matrix Qh = Q.middleCols(c0, dh) * scale;
    const Matrix Kh = K.middleCols(c0, dh);
    const Matrix Vh = V.middleCols(c0, dh);
    for (Eigen::Index r0 = 0; r0 < tq; r0 += kAttentionBlock) {
      const Eigen::Index nr = std::min(kAttentionBlock, tq - r0);
      const Eigen::Index nk = key_end(r0 + nr);
      auto tile = P.block(r0, 0, nr, nk);
      tile.noalias() = Qh.middleRows(r0, nr) * Kh.topRows(nk).transpose();
      for (Eigen::Index i = 0; i < nr; ++i) {
        const Eigen::Index n = causal ? std::min<Eigen::Index>(r0 + i + 1, tk) : nk;
        auto row = tile.row(i).head(n).array();
        const double m = row.maxCoeff();
        row = (row - m).exp();
        row /= row.sum();
        if (n < nk) tile.row(i).segment(n, nk - n).setZero();
      }
      out.block(r0, c0, nr, dh).noalias() = tile * Vh.topRows(nk);
    }
  }
  const bool ng = needs_grad(q) || needs_grad(k) || needs_grad(v);
  return push(std::move(out), ng, [q, k, v, heads, dh, scale, probs, key_end](Tape& t, std::size_t self) {
    const Matrix& g = t.out_grad(self);
    const Matrix& Q = t.value(q);
    const Matrix& K = t.value(k);
    const Matrix& V = t.value(v);
    const Eigen::Index tq = Q.rows();
    const bool gq = t.needs_grad(q);
    const bool gk = t.needs_grad(k);
    const bool gv = t.needs_grad(v);
    for (std::size_t h = 0; h < heads; ++h) {
      const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
      const Matrix& P = (*probs)[h];
      const Matrix Qh = Q.middleCols(c0, dh) * scale;
      const Matrix Kh = K.middleCols(c0, dh);
      const Matrix Vh = V.middleCols(c0, dh);
      const Matrix gh = g.middleCols(c0, dh);
      Matrix dq = Matrix::Zero(tq, dh);
      Matrix dk = Matrix::Zero(K.rows(), dh);
      Matrix dv = Matrix::Zero(K.rows(), dh);
      Matrix ds;
      for (Eigen::Index r0 = 0; r0 < tq; r0 += kAttentionBlock) {
        const Eigen::Index nr = std::min(kAttentionBlock, tq - r0);
        const Eigen::Index nk = key_end(r0 + nr);
        const auto tile = P.block(r0, 0, nr, nk);
        const auto g_rows = gh.middleRows(r0, nr);
        if (gv) dv.topRows(nk).noalias() += tile.transpose() * g_rows;
        if (!gq && !gk) continue;
        // Softmax backward: dS = P * (dP - rowsum(dP * P)).
        ds.noalias() = g_rows * Vh.topRows(nk).transpose();
        const Eigen::VectorXd inner = (ds.array() * tile.array()).rowwise().sum();
        ds = (tile.array() * (ds.array().colwise() - inner.array())).matrix();
        if (gq) dq.middleRows(r0, nr).noalias() += ds * Kh.topRows(nk);
        if (gk) dk.topRows(nk).noalias() += ds.transpose() * Qh.middleRows(r0, nr);
      }
      if (gq) t.grad_of(q.id).middleCols(c0, dh) += dq * scale;
      if (gk) t.grad_of(k.id).middleCols(c0, dh) += dk;
      if (gv) t.grad_of(v.id).middleCols(c0, dh) += dv;
    }
  });
}

Var Tape::cross_entropy(Var logits, std::span<const std::size_t> targets) {
  const Matrix& z = value(logits);
  assert(static_cast<std::size_t>(z.rows()) == targets.size());
  auto probs = std::make_shared<Matrix>(z.rows(), z.cols());
  double loss = 0.0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const Eigen::VectorXd row = z.row(r).transpose();
    const double lse = log_sum_exp(row);
    loss += lse - row(static_cast<Eigen::Index>(targets[static_cast<std::size_t>(r)]));
    probs->row(r) = (row.array() - lse).exp().matrix().transpose();
  }
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  Matrix out(1, 1);
  out(0, 0) = loss;
  return push(std::move(out), needs_grad(logits),
              [logits, probs, tgt = std::move(tgt)](Tape& t, std::size_t self) {
                const double g = t.out_grad(self)(0, 0);
                Matrix& gz = t.grad_of(logits.id);
                gz += *probs * g;
                for (std::size_t r = 0; r < tgt.size(); ++r) {
                  gz(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(tgt[r])) -= g;
                }
              });
}

Var Tape::kl_divergence(Var p_logits, Var q_logits, bool stop_grad_p) {
  const Eigen::VectorXd a = value(p_logits).row(0).transpose();
  const Eigen::VectorXd b = value(q_logits).row(0).transpose();
  const Eigen::VectorXd log_p = a.array() - log_sum_exp(a);
  const Eigen::VectorXd log_q = b.array() - log_sum_exp(b);
  const Eigen::VectorXd p = log_p.array().exp();
  const Eigen::VectorXd q = log_q.array().exp();
  const Eigen::VectorXd r = log_p - log_q;
  const double kl = p.dot(r);
  Matrix out(1, 1);
  out(0, 0) = kl;
  const bool grad_p = !stop_grad_p && needs_grad(p_logits);
  return push(std::move(out), grad_p || needs_grad(q_logits),
              [p_logits, q_logits, grad_p, p, q, r, kl](Tape& t, std::size_t self) {
                const double g = t.out_grad(self)(0, 0);
                if (grad_p) {
                  t.grad_of(p_logits.id).row(0) += (g * p.array() * (r.array() - kl)).matrix().transpose();
                }
                if (t.needs_grad(q_logits)) t.grad_of(q_logits.id).row(0) += (g * (q - p)).transpose();
              });
}

void Tape::backward(Var root) {
  grad_of(root.id).setConstant(1.0);
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) continue;
    if (n.back) n.back(*this, i);
    if (n.sink != nullptr) *n.sink += n.grad;
  }
}

}  // namespace nethira::autodiff
