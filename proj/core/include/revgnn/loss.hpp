#pragma once

#include <vector>

#include "revgnn/graph.hpp"
#include "revgnn/tensor.hpp"

namespace revgnn {

enum class LossKind { softmax_ce, bce_logits };

template <class S>
struct LossResult {
  S value = 0;
  Mat<S> grad;  // d(loss)/d(logits), zero outside the active mask
};

// Mean-reduced loss over rows flagged in active_mask. Cross entropy reduces
// over active rows; binary cross entropy over active rows * targets. Both in
// numerically stable log-sum-exp / softplus form.
template <class S>
LossResult<S> loss_and_grad(const Mat<S>& logits, const LabelSet& labels,
                            const std::vector<std::uint8_t>& active_mask, LossKind kind) {
  require(static_cast<index_t>(active_mask.size()) == logits.rows(), "loss: mask length mismatch");
  index_t n_active = 0;
  for (auto m : active_mask) n_active += m != 0;
  require(n_active > 0, "loss: empty active set");

  LossResult<S> out;
  out.grad = Mat<S>(logits.rows(), logits.cols());
  const index_t t = logits.cols();
  double loss = 0.0;  // accumulate in double regardless of S

  if (kind == LossKind::softmax_ce) {
    require(!labels.multilabel(), "softmax_ce needs class labels");
    require(static_cast<index_t>(labels.class_ids.size()) == logits.rows(), "loss: label count mismatch");
    const S inv = S(1) / static_cast<S>(n_active);
    for (index_t n = 0; n < logits.rows(); ++n) {
      if (!active_mask[static_cast<std::size_t>(n)]) continue;
      const S* zr = logits.row(n);
      const index_t y = labels.class_ids[static_cast<std::size_t>(n)];
      S mx = zr[0];
      for (index_t c = 1; c < t; ++c) mx = std::max(mx, zr[c]);
      S sum = 0;
      for (index_t c = 0; c < t; ++c) sum += std::exp(zr[c] - mx);
      const S lse = mx + std::log(sum);
      loss += static_cast<double>(lse - zr[y]);
      S* gr = out.grad.row(n);
      for (index_t c = 0; c < t; ++c) gr[c] = std::exp(zr[c] - lse) * inv;
      gr[y] -= inv;
    }
    loss /= static_cast<double>(n_active);
  } else {
    require(labels.multilabel(), "bce_logits needs a binary label matrix");
    require(labels.binary.rows() == logits.rows() && labels.binary.cols() == t,
            "loss: binary label shape mismatch");
    const S inv = S(1) / static_cast<S>(n_active * t);
    for (index_t n = 0; n < logits.rows(); ++n) {
      if (!active_mask[static_cast<std::size_t>(n)]) continue;
      const S* zr = logits.row(n);
      S* gr = out.grad.row(n);
      for (index_t c = 0; c < t; ++c) {
        const S z = zr[c];
        const auto y = static_cast<S>(labels.binary(n, c));
        loss += static_cast<double>(std::max(z, S(0)) - z * y + std::log1p(std::exp(-std::abs(z))));
        const S sigma = S(1) / (S(1) + std::exp(-z));
        gr[c] = (sigma - y) * inv;
      }
    }
    loss /= static_cast<double>(n_active * t);
  }
  out.value = static_cast<S>(loss);
  return out;
}

// Probability transforms used by multi-view prediction averaging.
template <class S>
Mat<S> softmax_rows(const Mat<S>& logits) {
  Mat<S> p(logits.rows(), logits.cols());
  for (index_t n = 0; n < logits.rows(); ++n) {
    const S* zr = logits.row(n);
    S* pr = p.row(n);
    S mx = zr[0];
    for (index_t c = 1; c < logits.cols(); ++c) mx = std::max(mx, zr[c]);
    S sum = 0;
    for (index_t c = 0; c < logits.cols(); ++c) {
      pr[c] = std::exp(zr[c] - mx);
      sum += pr[c];
    }
    for (index_t c = 0; c < logits.cols(); ++c) pr[c] /= sum;
  }
  return p;
}

template <class S>
Mat<S> sigmoid_all(const Mat<S>& logits) {
  Mat<S> p(logits.rows(), logits.cols());
  for (index_t i = 0; i < logits.size(); ++i) p.data()[i] = S(1) / (S(1) + std::exp(-logits.data()[i]));
  return p;
}

}  // namespace revgnn
