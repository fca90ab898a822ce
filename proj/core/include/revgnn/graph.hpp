#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "revgnn/common.hpp"
#include "revgnn/tensor.hpp"

namespace revgnn {

// Compressed sparse row adjacency. Rows are source nodes; within each row the
// destination indices are strictly increasing (duplicates are merged at build
// time). A column-oriented view (in-edges, used by message aggregation) is
// derived once at construction. Immutable after construction; transforms
// return new graphs.
struct CsrGraph {
  index_t num_nodes = 0;
  std::vector<index_t> row_ptr;  // length num_nodes + 1
  std::vector<index_t> col_idx;  // length num_edges
  Mat<double> edge_feat;         // optional, num_edges x F (empty when absent)

  // derived in-edge view: for target u, edges (v,u) with v = in_src[k] at
  // original edge slot in_edge_id[k], k in [in_ptr[u], in_ptr[u+1])
  std::vector<index_t> in_ptr;
  std::vector<index_t> in_src;
  std::vector<index_t> in_edge_id;

  index_t num_edges() const { return static_cast<index_t>(col_idx.size()); }
  bool has_edge_feat() const { return !edge_feat.empty(); }
  index_t edge_feat_dim() const { return edge_feat.cols(); }

  index_t out_degree(index_t u) const { return row_ptr[u + 1] - row_ptr[u]; }
  index_t in_degree(index_t u) const { return in_ptr[u + 1] - in_ptr[u]; }

  bool has_all_self_loops() const;
};

using EdgeList = std::vector<std::pair<index_t, index_t>>;

// Builds a canonical CSR graph. Duplicate (src,dst) pairs are merged and
// their features averaged; features are permuted consistently with sorting.
CsrGraph build_csr(const EdgeList& edges, index_t num_nodes, const Mat<double>& edge_feat = {});

// Enumerates edges back out of a graph, in CSR order.
EdgeList edge_list(const CsrGraph& g);

// Symmetric closure: for every edge (u,v) the edge (v,u) exists afterwards.
// Features of an inserted reverse edge copy the forward edge. Idempotent.
CsrGraph to_undirected(const CsrGraph& g);

// Ensures each node carries exactly one self-loop. Self-loop features are
// zero vectors when edge features exist.
CsrGraph add_self_loops(const CsrGraph& g);

// Symmetric-normalization weight 1/sqrt(deg(u)*deg(v)) per edge (u,v), with
// degrees counted on the self-looped graph. Requires self-loops.
std::vector<double> gcn_norm_weights(const CsrGraph& g);

// Node labels plus train/valid/test membership. Single-label tasks use
// class_ids; multi-label tasks use the binary matrix.
struct LabelSet {
  std::vector<index_t> class_ids;  // length N (multiclass) or empty
  Mat<double> binary;              // N x T (multilabel) or empty
  std::vector<std::uint8_t> train_mask, valid_mask, test_mask;

  bool multilabel() const { return !binary.empty(); }
  index_t num_targets() const;
  void validate(index_t num_nodes, index_t num_classes) const;
};

struct Partition {
  std::vector<index_t> part_of;  // node -> part id
  index_t num_parts = 0;

  std::vector<index_t> members(index_t part_id) const;
};

// Chunks a random permutation of the nodes into num_parts near-equal parts
// (sizes differ by at most one). Deterministic for a fixed seed.
Partition random_partition(const CsrGraph& g, index_t num_parts, std::uint64_t seed);

struct Subgraph {
  CsrGraph graph;
  Mat<double> features;
  LabelSet labels;
  std::vector<index_t> local_to_global;
};

// Keeps only edges with both endpoints inside the part; node rows are
// re-indexed densely in ascending global order.
Subgraph induced_subgraph(const CsrGraph& g, const Mat<double>& features, const LabelSet& labels,
                          const Partition& part, index_t part_id);

}  // namespace revgnn
