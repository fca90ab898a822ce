#pragma once

#include <vector>

#include "revgnn/tensor.hpp"

namespace revgnn {

// Mann-Whitney ROC-AUC with mid-rank tie handling, averaged over label
// columns that contain at least one positive and one negative among the
// evaluated rows; columns violating that are skipped. Throws numeric_error
// when no column is valid.
double roc_auc(const Mat<double>& scores, const Mat<double>& labels,
               const std::vector<std::uint8_t>& mask);

// Fraction of masked rows whose argmax score equals the class id (lowest
// index wins ties).
double accuracy(const Mat<double>& scores, const std::vector<index_t>& class_ids,
                const std::vector<std::uint8_t>& mask);

}  // namespace revgnn
