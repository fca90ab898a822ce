#include "revgnn/graph.hpp"

#include <algorithm>
#include <numeric>

namespace revgnn {

namespace {

// Sorts edges by (src, dst), merges duplicates (averaging features), fills
// row_ptr/col_idx and the derived in-edge view.
CsrGraph finalize_csr(std::vector<std::pair<index_t, index_t>> edges, index_t num_nodes,
                      Mat<double> feat) {
  const bool has_feat = !feat.empty();
  std::vector<index_t> order(edges.size());
  std::iota(order.begin(), order.end(), index_t{0});
  std::sort(order.begin(), order.end(), [&](index_t a, index_t b) {
    return edges[static_cast<std::size_t>(a)] < edges[static_cast<std::size_t>(b)];
  });

  CsrGraph g;
  g.num_nodes = num_nodes;
  g.row_ptr.assign(static_cast<std::size_t>(num_nodes) + 1, 0);

  std::vector<index_t> merged_src;
  merged_src.reserve(edges.size());
  g.col_idx.reserve(edges.size());
  std::vector<double> feat_rows;
  const index_t F = has_feat ? feat.cols() : 0;

  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    const auto& e = edges[static_cast<std::size_t>(order[i])];
    while (j < order.size() && edges[static_cast<std::size_t>(order[j])] == e) ++j;
    merged_src.push_back(e.first);
    g.col_idx.push_back(e.second);
    if (has_feat) {
      for (index_t c = 0; c < F; ++c) {
        double acc = 0.0;
        for (std::size_t k = i; k < j; ++k) acc += feat(order[k], c);
        feat_rows.push_back(acc / static_cast<double>(j - i));
      }
    }
    i = j;
  }

  for (index_t src : merged_src) g.row_ptr[static_cast<std::size_t>(src) + 1]++;
  for (index_t n = 0; n < num_nodes; ++n) g.row_ptr[static_cast<std::size_t>(n) + 1] += g.row_ptr[static_cast<std::size_t>(n)];

  if (has_feat) {
    const index_t M = static_cast<index_t>(g.col_idx.size());
    g.edge_feat = Mat<double>(M, F);
    std::copy(feat_rows.begin(), feat_rows.end(), g.edge_feat.data());
  }

  // in-edge view, ordered by (dst, src); edge ids refer to CSR slots
  const index_t M = g.num_edges();
  g.in_ptr.assign(static_cast<std::size_t>(num_nodes) + 1, 0);
  g.in_src.resize(static_cast<std::size_t>(M));
  g.in_edge_id.resize(static_cast<std::size_t>(M));
  for (index_t e = 0; e < M; ++e) g.in_ptr[static_cast<std::size_t>(g.col_idx[static_cast<std::size_t>(e)]) + 1]++;
  for (index_t n = 0; n < num_nodes; ++n) g.in_ptr[static_cast<std::size_t>(n) + 1] += g.in_ptr[static_cast<std::size_t>(n)];
  std::vector<index_t> cursor(g.in_ptr.begin(), g.in_ptr.end() - 1);
  // CSR slot order is (src, dst)-sorted, so scanning slots in order yields
  // in-lists sorted by src for each dst.
  for (index_t u = 0; u < num_nodes; ++u) {
    for (index_t e = g.row_ptr[static_cast<std::size_t>(u)]; e < g.row_ptr[static_cast<std::size_t>(u) + 1]; ++e) {
      const index_t v = g.col_idx[static_cast<std::size_t>(e)];
      const index_t slot = cursor[static_cast<std::size_t>(v)]++;
      g.in_src[static_cast<std::size_t>(slot)] = u;
      g.in_edge_id[static_cast<std::size_t>(slot)] = e;
    }
  }
  return g;
}

}  // namespace

bool CsrGraph::has_all_self_loops() const {
  for (index_t u = 0; u < num_nodes; ++u) {
    bool found = false;
    for (index_t e = row_ptr[static_cast<std::size_t>(u)]; e < row_ptr[static_cast<std::size_t>(u) + 1]; ++e) {
      if (col_idx[static_cast<std::size_t>(e)] == u) {
        found = true;
        break;
      }
    }
    if (!found) return false;
  }
  return true;
}

CsrGraph build_csr(const EdgeList& edges, index_t num_nodes, const Mat<double>& edge_feat) {
  require(num_nodes >= 0, "build_csr: negative node count");
  if (!edge_feat.empty()) {
    require(edge_feat.rows() == static_cast<index_t>(edges.size()),
            "build_csr: edge feature row count does not match edge count");
  }
  for (const auto& [s, d] : edges) {
    require(s >= 0 && s < num_nodes && d >= 0 && d < num_nodes, "build_csr: edge index out of range");
  }
  return finalize_csr(edges, num_nodes, edge_feat);
}

EdgeList edge_list(const CsrGraph& g) {
  EdgeList out;
  out.reserve(static_cast<std::size_t>(g.num_edges()));
  for (index_t u = 0; u < g.num_nodes; ++u) {
    for (index_t e = g.row_ptr[static_cast<std::size_t>(u)]; e < g.row_ptr[static_cast<std::size_t>(u) + 1]; ++e) {
      out.emplace_back(u, g.col_idx[static_cast<std::size_t>(e)]);
    }
  }
  return out;
}

CsrGraph to_undirected(const CsrGraph& g) {
  EdgeList edges = edge_list(g);
  const index_t M = g.num_edges();
  const index_t F = g.edge_feat_dim();
  EdgeList all = edges;
  Mat<double> feat;
  if (g.has_edge_feat()) {
    feat = Mat<double>(2 * M, F);
    for (index_t e = 0; e < M; ++e) {
      for (index_t c = 0; c < F; ++c) {
        feat(e, c) = g.edge_feat(e, c);
        feat(M + e, c) = g.edge_feat(e, c);  // reversed copy inherits forward features
      }
    }
  }
  all.reserve(2 * edges.size());
  for (const auto& [s, d] : edges) all.emplace_back(d, s);
  // duplicate merging makes this idempotent; a symmetric pair that already
  // exists collapses back to one slot per direction (features averaged with
  // an identical copy, hence unchanged)
  return finalize_csr(std::move(all), g.num_nodes, std::move(feat));
}

CsrGraph add_self_loops(const CsrGraph& g) {
  EdgeList edges = edge_list(g);
  const index_t M = g.num_edges();
  const index_t F = g.edge_feat_dim();
  std::vector<std::uint8_t> has_loop(static_cast<std::size_t>(g.num_nodes), 0);
  for (const auto& [s, d] : edges)
    if (s == d) has_loop[static_cast<std::size_t>(s)] = 1;

  index_t missing = 0;
  for (auto b : has_loop) missing += (b == 0);

  Mat<double> feat;
  if (g.has_edge_feat()) {
    feat = Mat<double>(M + missing, F);
    for (index_t e = 0; e < M; ++e)
      for (index_t c = 0; c < F; ++c) feat(e, c) = g.edge_feat(e, c);
    // appended rows stay zero: self-loop features are zero vectors
  }
  for (index_t u = 0; u < g.num_nodes; ++u)
    if (!has_loop[static_cast<std::size_t>(u)]) edges.emplace_back(u, u);
  return finalize_csr(std::move(edges), g.num_nodes, std::move(feat));
}

std::vector<double> gcn_norm_weights(const CsrGraph& g) {
  require(g.has_all_self_loops(), "gcn_norm_weights: graph must contain self-loops");
  std::vector<double> w(static_cast<std::size_t>(g.num_edges()));
  for (index_t u = 0; u < g.num_nodes; ++u) {
    const double du = static_cast<double>(g.out_degree(u));
    for (index_t e = g.row_ptr[static_cast<std::size_t>(u)]; e < g.row_ptr[static_cast<std::size_t>(u) + 1]; ++e) {
      const double dv = static_cast<double>(g.out_degree(g.col_idx[static_cast<std::size_t>(e)]));
      w[static_cast<std::size_t>(e)] = 1.0 / std::sqrt(du * dv);
    }
  }
  return w;
}

index_t LabelSet::num_targets() const {
  if (multilabel()) return binary.cols();
  index_t mx = 0;
  for (index_t c : class_ids) mx = std::max(mx, c + 1);
  return mx;
}

void LabelSet::validate(index_t num_nodes, index_t num_classes) const {
  if (multilabel()) {
    require(binary.rows() == num_nodes, "LabelSet: binary label row count mismatch");
  } else {
    require(static_cast<index_t>(class_ids.size()) == num_nodes, "LabelSet: class id count mismatch");
    for (index_t c : class_ids) require(c >= 0 && c < num_classes, "LabelSet: class index out of range");
  }
  require(static_cast<index_t>(train_mask.size()) == num_nodes &&
              static_cast<index_t>(valid_mask.size()) == num_nodes &&
              static_cast<index_t>(test_mask.size()) == num_nodes,
          "LabelSet: split mask length mismatch");
  for (index_t i = 0; i < num_nodes; ++i) {
    int n = int(train_mask[static_cast<std::size_t>(i)]) + int(valid_mask[static_cast<std::size_t>(i)]) +
            int(test_mask[static_cast<std::size_t>(i)]);
    require(n <= 1, "LabelSet: split masks overlap");
  }
}

std::vector<index_t> Partition::members(index_t part_id) const {
  std::vector<index_t> out;
  for (index_t n = 0; n < static_cast<index_t>(part_of.size()); ++n)
    if (part_of[static_cast<std::size_t>(n)] == part_id) out.push_back(n);
  return out;
}

Partition random_partition(const CsrGraph& g, index_t num_parts, std::uint64_t seed) {
  const index_t N = g.num_nodes;
  require(num_parts >= 1 && num_parts <= N, "random_partition: num_parts out of range");
  std::vector<index_t> perm(static_cast<std::size_t>(N));
  std::iota(perm.begin(), perm.end(), index_t{0});
  Rng rng(hash_combine(seed, 0x7061727473ull));  // "parts"
  for (index_t i = N - 1; i > 0; --i) {
    const auto j = static_cast<index_t>(rng.uniform_int(static_cast<std::uint64_t>(i) + 1));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  // first (N mod P) parts take ceil(N/P) nodes, the rest floor(N/P)
  Partition p;
  p.num_parts = num_parts;
  p.part_of.assign(static_cast<std::size_t>(N), 0);
  const index_t base = N / num_parts;
  const index_t extra = N % num_parts;
  index_t pos = 0;
  for (index_t part = 0; part < num_parts; ++part) {
    const index_t take = base + (part < extra ? 1 : 0);
    for (index_t k = 0; k < take; ++k) p.part_of[static_cast<std::size_t>(perm[static_cast<std::size_t>(pos++)])] = part;
  }
  return p;
}

Subgraph induced_subgraph(const CsrGraph& g, const Mat<double>& features, const LabelSet& labels,
                          const Partition& part, index_t part_id) {
  require(part_id >= 0 && part_id < part.num_parts, "induced_subgraph: part id out of range");
  require(static_cast<index_t>(part.part_of.size()) == g.num_nodes, "induced_subgraph: partition size mismatch");

  Subgraph sub;
  std::vector<index_t> global_to_local(static_cast<std::size_t>(g.num_nodes), -1);
  for (index_t n = 0; n < g.num_nodes; ++n) {
    if (part.part_of[static_cast<std::size_t>(n)] == part_id) {
      global_to_local[static_cast<std::size_t>(n)] = static_cast<index_t>(sub.local_to_global.size());
      sub.local_to_global.push_back(n);
    }
  }
  const index_t n_local = static_cast<index_t>(sub.local_to_global.size());

  EdgeList edges;
  std::vector<index_t> kept_edge_ids;
  for (index_t u = 0; u < g.num_nodes; ++u) {
    const index_t lu = global_to_local[static_cast<std::size_t>(u)];
    if (lu < 0) continue;
    for (index_t e = g.row_ptr[static_cast<std::size_t>(u)]; e < g.row_ptr[static_cast<std::size_t>(u) + 1]; ++e) {
      const index_t lv = global_to_local[static_cast<std::size_t>(g.col_idx[static_cast<std::size_t>(e)])];
      if (lv < 0) continue;
      edges.emplace_back(lu, lv);
      kept_edge_ids.push_back(e);
    }
  }
  Mat<double> feat;
  if (g.has_edge_feat()) {
    feat = Mat<double>(static_cast<index_t>(edges.size()), g.edge_feat_dim());
    for (std::size_t k = 0; k < kept_edge_ids.size(); ++k)
      for (index_t c = 0; c < g.edge_feat_dim(); ++c)
        feat(static_cast<index_t>(k), c) = g.edge_feat(kept_edge_ids[k], c);
  }
  // local ids preserve global order, so the (src,dst)-sorted edge enumeration
  // above is already canonical
  sub.graph = finalize_csr(std::move(edges), n_local, std::move(feat));

  if (!features.empty()) {
    sub.features = Mat<double>(n_local, features.cols());
    for (index_t l = 0; l < n_local; ++l)
      for (index_t c = 0; c < features.cols(); ++c)
        sub.features(l, c) = features(sub.local_to_global[static_cast<std::size_t>(l)], c);
  }

  if (labels.multilabel()) {
    sub.labels.binary = Mat<double>(n_local, labels.binary.cols());
    for (index_t l = 0; l < n_local; ++l)
      for (index_t c = 0; c < labels.binary.cols(); ++c)
        sub.labels.binary(l, c) = labels.binary(sub.local_to_global[static_cast<std::size_t>(l)], c);
  } else if (!labels.class_ids.empty()) {
    sub.labels.class_ids.resize(static_cast<std::size_t>(n_local));
    for (index_t l = 0; l < n_local; ++l)
      sub.labels.class_ids[static_cast<std::size_t>(l)] = labels.class_ids[static_cast<std::size_t>(sub.local_to_global[static_cast<std::size_t>(l)])];
  }
  auto slice_mask = [&](const std::vector<std::uint8_t>& mask) {
    std::vector<std::uint8_t> out(static_cast<std::size_t>(n_local), 0);
    if (!mask.empty())
      for (index_t l = 0; l < n_local; ++l) out[static_cast<std::size_t>(l)] = mask[static_cast<std::size_t>(sub.local_to_global[static_cast<std::size_t>(l)])];
    return out;
  };
  sub.labels.train_mask = slice_mask(labels.train_mask);
  sub.labels.valid_mask = slice_mask(labels.valid_mask);
  sub.labels.test_mask = slice_mask(labels.test_mask);
  return sub;
}

}  // namespace revgnn
