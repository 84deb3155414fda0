#pragma once

// Independent reference computations shared by the unit and acceptance tests.
// Everything here is written from the definitions with plain loops in long
// double and deliberately avoids the library's own math.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "nethira/model.hpp"

namespace oracle {

using nethira::Matrix;
using nethira::Token;

inline std::vector<long double> softmax(const std::vector<long double>& z) {
  long double m = z[0];
  for (long double v : z) m = std::max(m, v);
  long double s = 0;
  for (long double v : z) s += std::exp(v - m);
  std::vector<long double> p;
  for (long double v : z) p.push_back(std::exp(v - m) / s);
  return p;
}

inline std::vector<long double> row(const Matrix& m, Eigen::Index r) {
  std::vector<long double> out;
  for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  return out;
}

/// -sum over masked t of log softmax(logits[t])[target[t]].
inline long double reconstruction_loss(const Matrix& logits, std::span<const Token> target,
                                       std::span<const std::size_t> masked) {
  long double loss = 0;
  for (std::size_t t : masked) {
    const auto p = softmax(row(logits, static_cast<Eigen::Index>(t)));
    loss -= std::log(p[target[t]]);
  }
  return loss;
}

inline long double kl(const std::vector<long double>& p, const std::vector<long double>& q) {
  long double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] * (std::log(p[i]) - std::log(q[i]));
  return s;
}

inline long double cross_entropy(const std::vector<long double>& logits, int label) {
  return -std::log(softmax(logits)[static_cast<std::size_t>(label)]);
}

inline long double finetune_loss(const std::vector<long double>& raw, const std::vector<long double>& proto,
                                 const std::vector<long double>& packet, int label, long double lambda) {
  const auto p = softmax(raw);
  return cross_entropy(raw, label) + lambda * (kl(p, softmax(proto)) + kl(p, softmax(packet)));
}

struct Counts {
  std::vector<std::size_t> tp, fp, fn;
};

inline Counts count(std::span<const int> truth, std::span<const int> pred, std::size_t n_classes) {
  Counts c{std::vector<std::size_t>(n_classes), std::vector<std::size_t>(n_classes),
           std::vector<std::size_t>(n_classes)};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    for (std::size_t k = 0; k < n_classes; ++k) {
      const bool is_t = truth[i] == static_cast<int>(k);
      const bool is_p = pred[i] == static_cast<int>(k);
      c.tp[k] += is_t && is_p;
      c.fp[k] += !is_t && is_p;
      c.fn[k] += is_t && !is_p;
    }
  }
  return c;
}

struct Macro {
  std::vector<double> precision, recall, f1;
  double macro_precision = 0, macro_recall = 0, macro_f1 = 0;
};

/// Per-class PR/RC/F1 from direct TP/FP/FN counts; 0 for any 0/0.
inline Macro macro_metrics(std::span<const int> truth, std::span<const int> pred, std::size_t n_classes) {
  const Counts c = count(truth, pred, n_classes);
  Macro m;
  for (std::size_t k = 0; k < n_classes; ++k) {
    const double tp = static_cast<double>(c.tp[k]);
    const double pr = c.tp[k] + c.fp[k] == 0 ? 0.0 : tp / static_cast<double>(c.tp[k] + c.fp[k]);
    const double rc = c.tp[k] + c.fn[k] == 0 ? 0.0 : tp / static_cast<double>(c.tp[k] + c.fn[k]);
    const double f1 = pr + rc == 0.0 ? 0.0 : 2.0 * pr * rc / (pr + rc);
    m.precision.push_back(pr);
    m.recall.push_back(rc);
    m.f1.push_back(f1);
    m.macro_precision += pr;
    m.macro_recall += rc;
    m.macro_f1 += f1;
  }
  return m;
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;
};

/// Central differences of `loss` against the analytic gradient `analytic`
/// for every scalar parameter. Relative error is |a - n| / max(|a|, |n|, floor).
inline GradCheck gradient_check(nethira::Model& model, const nethira::Gradients& analytic,
                                const std::function<double()>& loss, double h = 1e-3, double floor = 1e-6) {
  GradCheck out;
  auto& params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& w = params[i].value;
    for (Eigen::Index k = 0; k < w.size(); ++k) {
      double& x = w.data()[k];
      const double saved = x;
      auto at = [&](double offset) {
        x = saved + offset;
        return loss();
      };
      // Five-point central stencil.
      const double numeric = (at(-2 * h) - 8 * at(-h) + 8 * at(h) - at(2 * h)) / (12 * h);
      x = saved;
      const double a = analytic.tensors[i].data()[k];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst = params[i].name + "[" + std::to_string(k) + "]";
      }
      ++out.checked;
    }
  }
  return out;
}

}  // namespace oracle
