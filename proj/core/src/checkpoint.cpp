#include "revgnn/config_io.hpp"

namespace revgnn {

Arch arch_from_string(const std::string& s) {
  if (s == "res") return Arch::res;
  if (s == "rev") return Arch::rev;
  if (s == "wt_res") return Arch::wt_res;
  if (s == "wt_rev") return Arch::wt_rev;
  if (s == "deq") return Arch::deq;
  throw input_error("unknown arch '" + s + "' (expected res|rev|wt_res|wt_rev|deq)");
}

Operator operator_from_string(const std::string& s) {
  if (s == "gcn") return Operator::gcn;
  if (s == "sage") return Operator::sage;
  if (s == "gen") return Operator::gen;
  throw input_error("unknown operator '" + s + "' (expected gcn|sage|gen)");
}

AggKind agg_from_string(const std::string& s) {
  if (s == "sum") return AggKind::sum;
  if (s == "mean") return AggKind::mean;
  if (s == "max") return AggKind::max;
  if (s == "softmax") return AggKind::softmax;
  throw input_error("unknown aggregation '" + s + "' (expected sum|mean|max|softmax)");
}

NormKind norm_from_string(const std::string& s) {
  if (s == "layer") return NormKind::layer;
  if (s == "batch") return NormKind::batch;
  throw input_error("unknown norm '" + s + "' (expected layer|batch)");
}

std::map<std::string, std::string> model_config_to_kv(const ModelConfig& cfg, index_t num_features,
                                                      index_t num_edge_features, index_t num_outputs) {
  std::map<std::string, std::string> kv;
  kv["arch"] = to_string(cfg.arch);
  kv["operator"] = to_string(cfg.op);
  kv["layers"] = std::to_string(cfg.layers);
  kv["channels"] = std::to_string(cfg.channels);
  kv["groups"] = std::to_string(cfg.groups);
  kv["agg"] = to_string(cfg.agg);
  kv["beta"] = std::to_string(cfg.beta);
  kv["dropout"] = std::to_string(cfg.dropout);
  kv["norm"] = to_string(cfg.norm);
  kv["deq_max_iter"] = std::to_string(cfg.deq_max_iter);
  kv["deq_tol_forward"] = std::to_string(cfg.deq_tol_forward);
  kv["deq_tol_backward"] = std::to_string(cfg.deq_tol_backward);
  kv["num_features"] = std::to_string(num_features);
  kv["num_edge_features"] = std::to_string(num_edge_features);
  kv["num_outputs"] = std::to_string(num_outputs);
  return kv;
}

ModelConfig model_config_from_kv(const std::map<std::string, std::string>& kv, index_t& num_features,
                                 index_t& num_edge_features, index_t& num_outputs) {
  auto need = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    require(it != kv.end(), "config: missing key " + key);
    return it->second;
  };
  ModelConfig cfg;
  cfg.arch = arch_from_string(need("arch"));
  cfg.op = operator_from_string(need("operator"));
  cfg.layers = std::stoll(need("layers"));
  cfg.channels = std::stoll(need("channels"));
  cfg.groups = std::stoll(need("groups"));
  cfg.agg = agg_from_string(need("agg"));
  cfg.beta = std::stod(need("beta"));
  cfg.dropout = std::stod(need("dropout"));
  cfg.norm = norm_from_string(need("norm"));
  cfg.deq_max_iter = std::stoll(need("deq_max_iter"));
  cfg.deq_tol_forward = std::stod(need("deq_tol_forward"));
  cfg.deq_tol_backward = std::stod(need("deq_tol_backward"));
  num_features = std::stoll(need("num_features"));
  num_edge_features = std::stoll(need("num_edge_features"));
  num_outputs = std::stoll(need("num_outputs"));
  cfg.validate();
  return cfg;
}

}  // namespace revgnn
