#include "revgnn/metrics.hpp"

#include <algorithm>
#include <numeric>

namespace revgnn {

double roc_auc(const Mat<double>& scores, const Mat<double>& labels,
               const std::vector<std::uint8_t>& mask) {
  require(scores.same_shape(labels), "roc_auc: score/label shape mismatch");
  require(static_cast<index_t>(mask.size()) == scores.rows(), "roc_auc: mask length mismatch");

  std::vector<index_t> rows;
  for (index_t n = 0; n < scores.rows(); ++n)
    if (mask[static_cast<std::size_t>(n)]) rows.push_back(n);
  require(!rows.empty(), "roc_auc: empty evaluation set");

  double total = 0.0;
  index_t valid_cols = 0;
  std::vector<index_t> order(rows.size());
  std::vector<double> rank(rows.size());

  for (index_t c = 0; c < scores.cols(); ++c) {
    index_t n_pos = 0;
    for (index_t r : rows) n_pos += labels(r, c) > 0.5;
    const auto n = static_cast<index_t>(rows.size());
    const index_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) continue;

    std::iota(order.begin(), order.end(), index_t{0});
    std::sort(order.begin(), order.end(), [&](index_t a, index_t b) {
      return scores(rows[static_cast<std::size_t>(a)], c) < scores(rows[static_cast<std::size_t>(b)], c);
    });
    // mid-rank assignment over tied score runs
    std::size_t i = 0;
    while (i < order.size()) {
      std::size_t j = i;
      const double v = scores(rows[static_cast<std::size_t>(order[i])], c);
      while (j < order.size() && scores(rows[static_cast<std::size_t>(order[j])], c) == v) ++j;
      const double mid = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
      for (std::size_t k = i; k < j; ++k) rank[static_cast<std::size_t>(order[k])] = mid;
      i = j;
    }
    double rank_sum_pos = 0.0;
    for (std::size_t k = 0; k < rows.size(); ++k)
      if (labels(rows[k], c) > 0.5) rank_sum_pos += rank[k];
    const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
    total += u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
    ++valid_cols;
  }
  if (valid_cols == 0) throw numeric_error("roc_auc: no label column has both classes");
  return total / static_cast<double>(valid_cols);
}

double accuracy(const Mat<double>& scores, const std::vector<index_t>& class_ids,
                const std::vector<std::uint8_t>& mask) {
  require(static_cast<index_t>(class_ids.size()) == scores.rows(), "accuracy: label count mismatch");
  require(static_cast<index_t>(mask.size()) == scores.rows(), "accuracy: mask length mismatch");
  index_t n_active = 0, hits = 0;
  for (index_t n = 0; n < scores.rows(); ++n) {
    if (!mask[static_cast<std::size_t>(n)]) continue;
    ++n_active;
    index_t best = 0;
    for (index_t c = 1; c < scores.cols(); ++c)
      if (scores(n, c) > scores(n, best)) best = c;
    hits += best == class_ids[static_cast<std::size_t>(n)];
  }
  require(n_active > 0, "accuracy: empty evaluation set");
  return static_cast<double>(hits) / static_cast<double>(n_active);
}

}  // namespace revgnn
