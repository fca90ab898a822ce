#pragma once

#include <string>

#include "revgnn/graph.hpp"

namespace revgnn {

// On-disk dataset layout (tab-separated text, UTF-8):
//   nodes.tsv   node_id followed by D feature columns
//   edges.tsv   src, dst, then optional F edge-feature columns
//   labels.tsv  node_id, then one class index or T binary columns
//   splits.tsv  node_id, one of train|valid|test
//   meta.tsv    num_nodes, num_classes, task (multiclass|multilabel),
//               directed (0|1)
// Node ids must be 0..N-1 contiguous. Parsing is strict; malformed rows
// abort with their line number. Undirected datasets (directed=0) store each
// edge once; the loader inserts both directions.
struct Dataset {
  CsrGraph graph;
  Mat<double> features;
  LabelSet labels;
  index_t num_classes = 0;
  bool multilabel = false;
  bool directed = false;
};

Dataset load_dataset(const std::string& dir);
void save_dataset(const std::string& dir, const Dataset& data);

struct SbmSpec {
  index_t num_nodes = 2000;
  index_t num_classes = 4;
  double p_in = 0.02;
  double p_out = 0.002;
  index_t feature_dim = 16;
  double feature_noise = 1.0;
  std::uint64_t seed = 1;
};

// Stochastic block model: node features are a one-hot class centroid plus
// Gaussian noise; splits are a random 60/20/20 partition.
Dataset gen_sbm(const SbmSpec& spec);

// Node features built by sum-aggregating incident edge features (the
// initialization used when a dataset carries edge features but no node
// features).
Mat<double> features_from_edge_sums(const CsrGraph& g);

}  // namespace revgnn
