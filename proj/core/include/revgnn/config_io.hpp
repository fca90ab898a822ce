#pragma once

#include <map>
#include <string>

#include "revgnn/model.hpp"

namespace revgnn {

inline std::string to_string(Arch a) {
  switch (a) {
    case Arch::res: return "res";
    case Arch::rev: return "rev";
    case Arch::wt_res: return "wt_res";
    case Arch::wt_rev: return "wt_rev";
    case Arch::deq: return "deq";
  }
  return "?";
}

inline std::string to_string(Operator op) {
  switch (op) {
    case Operator::gcn: return "gcn";
    case Operator::sage: return "sage";
    case Operator::gen: return "gen";
  }
  return "?";
}

inline std::string to_string(AggKind k) {
  switch (k) {
    case AggKind::sum: return "sum";
    case AggKind::mean: return "mean";
    case AggKind::max: return "max";
    case AggKind::softmax: return "softmax";
  }
  return "?";
}

inline std::string to_string(NormKind k) { return k == NormKind::layer ? "layer" : "batch"; }

Arch arch_from_string(const std::string& s);
Operator operator_from_string(const std::string& s);
AggKind agg_from_string(const std::string& s);
NormKind norm_from_string(const std::string& s);

// Flat key=value form of a model configuration plus its IO widths, used by
// both the checkpoint container and the config echo in summaries.
std::map<std::string, std::string> model_config_to_kv(const ModelConfig& cfg, index_t num_features,
                                                      index_t num_edge_features, index_t num_outputs);
ModelConfig model_config_from_kv(const std::map<std::string, std::string>& kv, index_t& num_features,
                                 index_t& num_edge_features, index_t& num_outputs);

}  // namespace revgnn
