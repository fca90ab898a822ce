#include <algorithm>
#include <set>

#include "doctest.h"
#include "revgnn/graph.hpp"

using namespace revgnn;

namespace {

CsrGraph two_cycle() { return build_csr({{0, 1}, {1, 0}}, 2); }

EdgeList random_edges(Rng& rng, index_t n, double p) {
  EdgeList e;
  for (index_t u = 0; u < n; ++u)
    for (index_t v = 0; v < n; ++v)
      if (u != v && rng.uniform() < p) e.emplace_back(u, v);
  return e;
}

}  // namespace

TEST_CASE("build_csr canonical examples") {
  CsrGraph g = two_cycle();
  CHECK(g.row_ptr == std::vector<index_t>{0, 1, 2});
  CHECK(g.col_idx == std::vector<index_t>{1, 0});

  CsrGraph empty = build_csr({}, 3);
  CHECK(empty.row_ptr == std::vector<index_t>{0, 0, 0, 0});
  CHECK(empty.col_idx.empty());

  CsrGraph sorted = build_csr({{1, 0}, {0, 2}, {0, 1}}, 3);
  CHECK(sorted.row_ptr == std::vector<index_t>{0, 2, 3, 3});
  CHECK(sorted.col_idx == std::vector<index_t>{1, 2, 0});
}

TEST_CASE("build_csr rejects bad input") {
  CHECK_THROWS_AS(build_csr({{0, 3}}, 3), input_error);
  CHECK_THROWS_AS(build_csr({{-1, 0}}, 3), input_error);
  Mat<double> feat(2, 1, {1.0, 2.0});
  CHECK_THROWS_AS(build_csr({{0, 1}}, 2, feat), input_error);
}

TEST_CASE("build_csr merges duplicates with feature averaging") {
  Mat<double> feat(3, 2, {1.0, 2.0, 3.0, 6.0, 5.0, 10.0});
  CsrGraph g = build_csr({{0, 1}, {0, 1}, {1, 0}}, 2, feat);
  CHECK(g.num_edges() == 2);
  CHECK(g.edge_feat(0, 0) == doctest::Approx(2.0));  // mean(1, 3)
  CHECK(g.edge_feat(0, 1) == doctest::Approx(4.0));  // mean(2, 6)
  CHECK(g.edge_feat(1, 0) == doctest::Approx(5.0));
}

TEST_CASE("edge enumeration round-trips through build_csr") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const index_t n = 5 + static_cast<index_t>(rng.uniform_int(40));
    CsrGraph g = build_csr(random_edges(rng, n, 0.15), n);
    CsrGraph h = build_csr(edge_list(g), n);
    CHECK(g.row_ptr == h.row_ptr);
    CHECK(g.col_idx == h.col_idx);
  }
}

TEST_CASE("to_undirected examples") {
  CsrGraph cyc = to_undirected(two_cycle());
  CHECK(cyc.col_idx == std::vector<index_t>{1, 0});  // already symmetric

  CsrGraph arc = to_undirected(build_csr({{0, 1}}, 2));
  CHECK(arc.num_edges() == 2);
  CHECK(arc.col_idx == std::vector<index_t>{1, 0});

  CsrGraph tri = to_undirected(build_csr({{0, 1}, {1, 2}, {2, 0}}, 3));
  CHECK(tri.num_edges() == 6);
}

TEST_CASE("to_undirected is symmetric and idempotent on random graphs") {
  Rng rng(5);
  for (int trial = 0; trial < 8; ++trial) {
    const index_t n = 2 + static_cast<index_t>(rng.uniform_int(62));
    CsrGraph g = to_undirected(build_csr(random_edges(rng, n, 0.1), n));
    std::set<std::pair<index_t, index_t>> edges;
    for (auto [u, v] : edge_list(g)) edges.insert({u, v});
    for (auto [u, v] : edges) CHECK(edges.count({v, u}) == 1);
    CsrGraph h = to_undirected(g);
    CHECK(g.col_idx == h.col_idx);
    CHECK(g.row_ptr == h.row_ptr);
  }
}

TEST_CASE("to_undirected copies features onto reversed edges") {
  Mat<double> feat(1, 2, {3.0, 4.0});
  CsrGraph g = to_undirected(build_csr({{0, 1}}, 2, feat));
  CHECK(g.edge_feat(0, 0) == doctest::Approx(3.0));
  CHECK(g.edge_feat(1, 0) == doctest::Approx(3.0));
  CHECK(g.edge_feat(1, 1) == doctest::Approx(4.0));
}

TEST_CASE("add_self_loops examples") {
  CsrGraph empty = add_self_loops(build_csr({}, 2));
  CHECK(edge_list(empty) == EdgeList{{0, 0}, {1, 1}});

  CsrGraph has_loop = add_self_loops(build_csr({{0, 0}}, 1));
  CHECK(has_loop.num_edges() == 1);

  CsrGraph cyc = add_self_loops(two_cycle());
  CHECK(cyc.num_edges() == 4);
  CHECK(add_self_loops(cyc).num_edges() == 4);  // idempotent
}

TEST_CASE("add_self_loops gives zero features to new loops") {
  Mat<double> feat(1, 2, {7.0, 8.0});
  CsrGraph g = add_self_loops(build_csr({{0, 1}}, 2, feat));
  // canonical order: (0,0), (0,1), (1,1)
  CHECK(g.edge_feat(0, 0) == doctest::Approx(0.0));
  CHECK(g.edge_feat(1, 0) == doctest::Approx(7.0));
  CHECK(g.edge_feat(2, 1) == doctest::Approx(0.0));
}

TEST_CASE("gcn_norm_weights examples") {
  CsrGraph single = build_csr({{0, 0}}, 1);
  auto w1 = gcn_norm_weights(single);
  CHECK(w1.size() == 1);
  CHECK(w1[0] == doctest::Approx(1.0));

  CsrGraph cyc = add_self_loops(two_cycle());
  for (double w : gcn_norm_weights(cyc)) CHECK(w == doctest::Approx(0.5));

  // star K1,2 with node 0 at the center
  CsrGraph star = add_self_loops(to_undirected(build_csr({{0, 1}, {0, 2}}, 3)));
  auto w = gcn_norm_weights(star);
  EdgeList edges = edge_list(star);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    auto [u, v] = edges[i];
    if (u == v) continue;
    CHECK(w[i] == doctest::Approx(1.0 / std::sqrt(6.0)));  // deg(center)=3, deg(leaf)=2
  }
}

TEST_CASE("gcn_norm_weights requires self-loops") {
  CHECK_THROWS_AS(gcn_norm_weights(two_cycle()), input_error);
}

TEST_CASE("random_partition examples") {
  CsrGraph g4 = build_csr({}, 4);
  Partition p1 = random_partition(g4, 1, 3);
  for (index_t part : p1.part_of) CHECK(part == 0);

  Partition p4 = random_partition(g4, 4, 3);
  std::set<index_t> seen(p4.part_of.begin(), p4.part_of.end());
  CHECK(seen.size() == 4);

  CsrGraph g10 = build_csr({}, 10);
  Partition p3 = random_partition(g10, 3, 7);
  std::vector<index_t> sizes(3, 0);
  for (index_t part : p3.part_of) sizes[static_cast<std::size_t>(part)]++;
  std::sort(sizes.begin(), sizes.end());
  CHECK(sizes == std::vector<index_t>{3, 3, 4});
}

TEST_CASE("random_partition size multiset depends only on (N, P)") {
  CsrGraph g = build_csr({}, 23);
  for (std::uint64_t seed : {1ull, 9ull, 42ull}) {
    Partition p = random_partition(g, 4, seed);
    std::vector<index_t> sizes(4, 0);
    for (index_t part : p.part_of) sizes[static_cast<std::size_t>(part)]++;
    std::sort(sizes.begin(), sizes.end());
    CHECK(sizes == std::vector<index_t>{5, 6, 6, 6});
  }
  Partition a = random_partition(g, 4, 7);
  Partition b = random_partition(g, 4, 7);
  CHECK(a.part_of == b.part_of);  // deterministic per seed
  CHECK_THROWS_AS(random_partition(g, 0, 1), input_error);
  CHECK_THROWS_AS(random_partition(g, 24, 1), input_error);
}

TEST_CASE("induced_subgraph examples") {
  CsrGraph g = add_self_loops(two_cycle());
  Mat<double> x(2, 2, {1.0, 2.0, 3.0, 4.0});
  LabelSet labels;
  labels.class_ids = {0, 1};
  labels.train_mask = {1, 0};
  labels.valid_mask = {0, 1};
  labels.test_mask = {0, 0};

  Partition whole;
  whole.num_parts = 1;
  whole.part_of = {0, 0};
  Subgraph sub = induced_subgraph(g, x, labels, whole, 0);
  CHECK(sub.graph.col_idx == g.col_idx);
  CHECK(sub.graph.row_ptr == g.row_ptr);
  CHECK(sub.local_to_global == std::vector<index_t>{0, 1});

  Partition split;
  split.num_parts = 2;
  split.part_of = {0, 1};
  Subgraph s0 = induced_subgraph(g, x, labels, split, 0);
  CHECK(s0.graph.num_nodes == 1);
  CHECK(s0.graph.num_edges() == 1);  // the self-loop survives
  CHECK(s0.features(0, 0) == doctest::Approx(1.0));
  CHECK(s0.labels.class_ids[0] == 0);

  // a 2-cycle without loops split into singletons loses every edge
  CsrGraph bare = two_cycle();
  Subgraph b0 = induced_subgraph(bare, x, labels, split, 0);
  Subgraph b1 = induced_subgraph(bare, x, labels, split, 1);
  CHECK(b0.graph.num_edges() == 0);
  CHECK(b1.graph.num_edges() == 0);
}

TEST_CASE("induced subgraph edge counts sum to at most M") {
  Rng rng(17);
  const index_t n = 40;
  CsrGraph g = to_undirected(build_csr(random_edges(rng, n, 0.1), n));
  Mat<double> x(n, 1);
  LabelSet labels;
  labels.class_ids.assign(static_cast<std::size_t>(n), 0);
  labels.train_mask.assign(static_cast<std::size_t>(n), 1);
  labels.valid_mask.assign(static_cast<std::size_t>(n), 0);
  labels.test_mask.assign(static_cast<std::size_t>(n), 0);
  for (index_t parts : {1, 3, 7}) {
    Partition p = random_partition(g, parts, 123);
    index_t total = 0;
    std::vector<std::uint8_t> covered(static_cast<std::size_t>(n), 0);
    for (index_t k = 0; k < parts; ++k) {
      Subgraph s = induced_subgraph(g, x, labels, p, k);
      total += s.graph.num_edges();
      for (index_t global : s.local_to_global) covered[static_cast<std::size_t>(global)] = 1;
    }
    if (parts == 1)
      CHECK(total == g.num_edges());
    else
      CHECK(total <= g.num_edges());
    CHECK(std::count(covered.begin(), covered.end(), 1) == n);
  }
}
