#include "doctest.h"
#include "rev_reference.hpp"
#include "revgnn/rev_block.hpp"
#include "test_util.hpp"

using namespace revgnn;
using namespace testutil;

namespace {

void zero_sub_block(SubBlockParams<double>& f) {
  f.conv.weight.zero();
  f.conv.bias.zero();
}

std::vector<double> flatten_block_grads(const RevBlockParams<double>& g) {
  std::vector<double> out;
  for (const auto& f : g.sub_blocks) append_sub_params(out, f);
  return out;
}

GroupedFeatures<double> copy_groups(const GroupedFeatures<double>& xs) { return xs; }

double groups_max_diff(const GroupedFeatures<double>& a, const GroupedFeatures<double>& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, max_abs_diff(a[i], b[i]));
  return worst;
}

}  // namespace

TEST_CASE("group_split examples and exact round-trip") {
  Mat<double> x(1, 4, {1, 2, 3, 4});
  GroupedFeatures<double> gs = group_split(x, 2);
  CHECK(gs[0](0, 0) == 1.0);
  CHECK(gs[0](0, 1) == 2.0);
  CHECK(gs[1](0, 0) == 3.0);
  CHECK(gs[1](0, 1) == 4.0);

  GroupedFeatures<double> each = group_split(x, 4);
  CHECK(each.size() == 4);
  CHECK(each[2].cols() == 1);

  Rng rng(3);
  Mat<double> big = random_mat(rng, 8, 6);
  Mat<double> back = group_concat(group_split(big, 3));
  CHECK(max_abs_diff(big, back) == 0.0);  // bit-exact

  CHECK_THROWS_AS(group_split(x, 3), input_error);
}

TEST_CASE("sub_block_forward with a full-keep mask equals the no-dropout path") {
  Rng rng(40);
  CsrGraph g = random_graph(rng, 8, 0.3);
  GraphContext<double> ctx = make_context(g, OpMode::gen_max);
  SubBlockParams<double> f = make_sub_block(rng, 4, OpMode::gen_max, 0);
  Mat<double> x = random_mat(rng, 8, 4);
  SharedDropoutState keep_all = make_shared_mask(8, 4, 0.0, 1);
  Mat<double> with_mask = sub_block_forward(f, x, ctx, &keep_all);
  Mat<double> without = sub_block_forward(f, x, ctx, nullptr);
  CHECK(max_abs_diff(with_mask, without) == 0.0);
}

TEST_CASE("sub_block_forward matches pencil arithmetic on a two-node instance") {
  // nodes 0 and 1 with self-loops plus the arc 0 -> 1, one channel, max agg
  CsrGraph g = build_csr({{0, 0}, {0, 1}, {1, 1}}, 2);
  GraphContext<double> ctx;
  ctx.graph = &g;
  SubBlockParams<double> f;
  f.norm.scale = Mat<double>(1, 1, {2.0});
  f.norm.shift = Mat<double>(1, 1, {0.5});
  f.norm.epsilon = 1e-6;
  f.conv.weight = Mat<double>(1, 1, {3.0});
  f.conv.bias = Mat<double>(1, 1, {-1.0});
  f.agg.kind = AggKind::max;

  Mat<double> x(2, 1, {4.0, -7.0});
  // single-channel layer norm: variance 0, so both rows normalize to the
  // shift: t1 = 0.5; relu keeps 0.5; node 0 sees {self}=0.5, node 1 sees
  // {0, self} = max(0.5, 0.5) = 0.5; conv: 0.5*3 - 1 = 0.5
  Mat<double> y = sub_block_forward(f, x, ctx, nullptr);
  CHECK(y(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(y(1, 0) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("rev_forward with zero sub-blocks is a pure residual") {
  Rng rng(41);
  CsrGraph g = random_graph(rng, 10, 0.3);
  GraphContext<double> ctx = make_context(g, OpMode::gen_max);
  RevBlockParams<double> block = make_rev_block(rng, 3, 4, OpMode::gen_max, 0);
  for (auto& f : block.sub_blocks) zero_sub_block(f);
  GroupedFeatures<double> xs = make_grouped(rng, 3, 10, 4);
  GroupedFeatures<double> ys = rev_forward(block, xs, ctx, nullptr);
  CHECK(groups_max_diff(xs, ys) == 0.0);
}

TEST_CASE("rev_forward C=2 with constant second block") {
  Rng rng(42);
  CsrGraph g = random_graph(rng, 6, 0.4);
  GraphContext<double> ctx = make_context(g, OpMode::gen_max);
  RevBlockParams<double> block = make_rev_block(rng, 2, 3, OpMode::gen_max, 0);
  zero_sub_block(block.sub_blocks[0]);
  block.sub_blocks[1].conv.weight.zero();
  block.sub_blocks[1].conv.bias = Mat<double>(1, 3, {0.5, -1.0, 2.0});

  GroupedFeatures<double> xs = make_grouped(rng, 2, 6, 3);
  GroupedFeatures<double> ys = rev_forward(block, xs, ctx, nullptr);
  CHECK(max_abs_diff(ys[0], xs[0]) == 0.0);
  for (index_t n = 0; n < 6; ++n)
    for (index_t c = 0; c < 3; ++c)
      CHECK(ys[1](n, c) == doctest::Approx(xs[1](n, c) + block.sub_blocks[1].conv.bias.data()[c]));

  // inverting the constant shift recovers the input
  GroupedFeatures<double> back = rev_inverse(block, ys, ctx, nullptr);
  CHECK(groups_max_diff(back, xs) < 1e-12);
}

TEST_CASE("rev_forward matches the straight-line reference") {
  Rng rng(43);
  for (OpMode mode : {OpMode::gen_max, OpMode::gen_softmax, OpMode::gcn, OpMode::sage}) {
    CsrGraph g = random_graph(rng, 12, 0.3, true, mode == OpMode::gen_max ? 2 : 0);
    GraphContext<double> ctx = make_context(g, mode);
    RevBlockParams<double> block = make_rev_block(rng, 3, 4, mode, g.edge_feat_dim());
    GroupedFeatures<double> xs = make_grouped(rng, 3, 12, 4);
    SharedDropoutState drop = make_shared_mask(12, 4, 0.3, 99);

    GroupedFeatures<double> got = rev_forward(block, xs, ctx, &drop);
    GroupedFeatures<double> want = revref::ref_rev_forward(block, xs, ctx, &drop);
    CHECK(groups_max_diff(got, want) < 1e-12);
  }
}

TEST_CASE("rev_inverse reconstructs the input exactly") {
  Rng rng(44);
  // identity when all sub-blocks are zero
  {
    CsrGraph g = random_graph(rng, 8, 0.3);
    GraphContext<double> ctx = make_context(g, OpMode::gen_max);
    RevBlockParams<double> block = make_rev_block(rng, 2, 4, OpMode::gen_max, 0);
    for (auto& f : block.sub_blocks) zero_sub_block(f);
    GroupedFeatures<double> xs = make_grouped(rng, 2, 8, 4);
    GroupedFeatures<double> back = rev_inverse(block, xs, ctx, nullptr);
    CHECK(groups_max_diff(back, xs) == 0.0);
  }

  // 16-layer round trip in double precision stays within 1e-9
  {
    CsrGraph g = random_graph(rng, 20, 0.25);
    GraphContext<double> ctx = make_context(g, OpMode::gen_max);
    std::vector<RevBlockParams<double>> blocks;
    for (int l = 0; l < 16; ++l) blocks.push_back(make_rev_block(rng, 2, 6, OpMode::gen_max, 0));
    SharedDropoutState drop = make_shared_mask(20, 6, 0.1, 7);

    GroupedFeatures<double> xs = make_grouped(rng, 2, 20, 6);
    GroupedFeatures<double> ys = xs;
    for (const auto& b : blocks) ys = rev_forward(b, ys, ctx, &drop);
    for (std::size_t l = blocks.size(); l-- > 0;) ys = rev_inverse(blocks[l], ys, ctx, &drop);
    CHECK(groups_max_diff(ys, xs) < 1e-9);
  }
}

TEST_CASE("invertibility holds across group counts and depths") {
  Rng rng(45);
  for (int trial = 0; trial < 12; ++trial) {
    const index_t C = 2 + static_cast<index_t>(rng.uniform_int(3));
    const index_t w = 2 + static_cast<index_t>(rng.uniform_int(6));
    const index_t n = 8 + static_cast<index_t>(rng.uniform_int(40));
    const index_t L = 1 + static_cast<index_t>(rng.uniform_int(16));
    const auto mode = static_cast<OpMode>(rng.uniform_int(4));
    CsrGraph g = random_graph(rng, n, 0.2, true, mode == OpMode::gen_max ? 2 : 0);
    GraphContext<double> ctx = make_context(g, mode);
    std::vector<RevBlockParams<double>> blocks;
    for (index_t l = 0; l < L; ++l) blocks.push_back(make_rev_block(rng, C, w, mode, g.edge_feat_dim()));
    SharedDropoutState drop = make_shared_mask(n, w, 0.2, 1000 + static_cast<std::uint64_t>(trial));

    GroupedFeatures<double> xs = make_grouped(rng, C, n, w);
    GroupedFeatures<double> ys = xs;
    for (const auto& b : blocks) ys = rev_forward(b, ys, ctx, &drop);
    for (std::size_t l = blocks.size(); l-- > 0;) ys = rev_inverse(blocks[l], ys, ctx, &drop);
    CHECK(groups_max_diff(ys, xs) < 1e-9);
  }
}

TEST_CASE("make_shared_mask examples") {
  SharedDropoutState none = make_shared_mask(4, 3, 0.0, 1);
  for (index_t i = 0; i < none.mask.mask.size(); ++i) CHECK(none.mask.mask.data()[i] == 1);

  SharedDropoutState a = make_shared_mask(32, 8, 0.25, 9);
  SharedDropoutState b = make_shared_mask(32, 8, 0.25, 9);
  for (index_t i = 0; i < a.mask.mask.size(); ++i) CHECK(a.mask.mask.data()[i] == b.mask.mask.data()[i]);

  SharedDropoutState big = make_shared_mask(10000, 64, 0.1, 5);
  double kept = 0;
  for (index_t i = 0; i < big.mask.mask.size(); ++i) kept += big.mask.mask.data()[i];
  kept /= static_cast<double>(big.mask.mask.size());
  CHECK(kept == doctest::Approx(0.9).epsilon(0.011));

  CHECK_THROWS_AS(make_shared_mask(4, 3, 1.0, 1), input_error);
}

TEST_CASE("a stale dropout mask is rejected") {
  Rng rng(46);
  CsrGraph g = random_graph(rng, 6, 0.4);
  GraphContext<double> ctx = make_context(g, OpMode::gen_max);
  RevBlockParams<double> block = make_rev_block(rng, 2, 4, OpMode::gen_max, 0);
  GroupedFeatures<double> xs = make_grouped(rng, 2, 6, 4);
  SharedDropoutState wrong = make_shared_mask(5, 4, 0.2, 3);  // built for a different subgraph
  CHECK_THROWS_AS(rev_forward(block, xs, ctx, &wrong), contract_error);
}

TEST_CASE("rev_backward with zero blocks passes gradients through") {
  Rng rng(47);
  CsrGraph g = random_graph(rng, 9, 0.3);
  GraphContext<double> ctx = make_context(g, OpMode::gen_max);
  RevBlockParams<double> block = make_rev_block(rng, 2, 4, OpMode::gen_max, 0);
  for (auto& f : block.sub_blocks) zero_sub_block(f);
  GroupedFeatures<double> xs = make_grouped(rng, 2, 9, 4);
  GroupedFeatures<double> ys = rev_forward(block, xs, ctx, nullptr);
  GroupedFeatures<double> gout = make_grouped(rng, 2, 9, 4);

  RevBlockParams<double> acc = zero_grads_like(block);
  auto [gin, xrec] = rev_backward(block, ys, gout, ctx, nullptr, acc);
  CHECK(groups_max_diff(gin, gout) == 0.0);
  CHECK(groups_max_diff(xrec, xs) == 0.0);

  // the zero-weight conv still collects weight gradients through its vjp
  RevBlockParams<double> ref_acc = zero_grads_like(block);
  revref::RefBlockTape tape;
  (void)revref::ref_rev_forward(block, xs, ctx, nullptr, &tape);
  (void)revref::ref_rev_backward(block, tape, gout, ctx, nullptr, ref_acc);
  CHECK(rel_err_vec(flatten_block_grads(acc), flatten_block_grads(ref_acc)) < 1e-12);
}

TEST_CASE("single-block gradients match finite differences") {
  Rng rng(48);
  CsrGraph g = random_graph(rng, 6, 0.4, true, 2);
  GraphContext<double> ctx = make_context(g, OpMode::gen_max);
  RevBlockParams<double> block = make_rev_block(rng, 2, 3, OpMode::gen_max, 2);
  GroupedFeatures<double> xs = make_grouped(rng, 2, 6, 3);
  SharedDropoutState drop = make_shared_mask(6, 3, 0.25, 11);
  GroupedFeatures<double> up = make_grouped(rng, 2, 6, 3);

  auto objective = [&](const std::vector<double>& theta) {
    std::size_t pos = 0;
    GroupedFeatures<double> xx = copy_groups(xs);
    RevBlockParams<double> bb = block;
    for (auto& m : xx) unflatten(theta, pos, m);
    for (auto& f : bb.sub_blocks) unflatten_sub_params(theta, pos, f);
    GroupedFeatures<double> yy = rev_forward(bb, xx, ctx, &drop);
    double obj = 0;
    for (std::size_t i = 0; i < yy.size(); ++i) obj += dot(up[i], yy[i]);
    return obj;
  };
  std::vector<double> theta;
  for (const auto& m : xs) append(theta, m);
  for (const auto& f : block.sub_blocks) append_sub_params(theta, f);

  RevBlockParams<double> acc = zero_grads_like(block);
  GroupedFeatures<double> ys = rev_forward(block, xs, ctx, &drop);
  auto [gin, xrec] = rev_backward(block, ys, up, ctx, &drop, acc);
  CHECK(groups_max_diff(xrec, xs) < 1e-10);

  std::vector<double> analytic;
  for (const auto& m : gin) append(analytic, m);
  for (const auto& f : acc.sub_blocks) append_sub_params(analytic, f);

  std::vector<double> fd = finite_diff_grad(objective, theta, 1e-5);
  CHECK(rel_err_vec(analytic, fd) < 1e-6);
}

TEST_CASE("stack_backward matches the cached-activation reference") {
  Rng rng(49);
  for (OpMode mode : {OpMode::gen_max, OpMode::gcn, OpMode::sage, OpMode::gen_softmax}) {
    const index_t C = mode == OpMode::sage ? 2 : 3;
    const index_t n = 14, w = 4, L = 8;
    CsrGraph g = random_graph(rng, n, 0.25, true, mode == OpMode::gen_max ? 2 : 0);
    GraphContext<double> ctx = make_context(g, mode);
    std::vector<RevBlockParams<double>> blocks;
    for (index_t l = 0; l < L; ++l) blocks.push_back(make_rev_block(rng, C, w, mode, g.edge_feat_dim()));
    SharedDropoutState drop = make_shared_mask(n, w, 0.15, 77);
    GroupedFeatures<double> xs = make_grouped(rng, C, n, w);
    GroupedFeatures<double> gfinal = make_grouped(rng, C, n, w);

    std::vector<const RevBlockParams<double>*> bptr;
    std::vector<RevBlockParams<double>> accs;
    for (auto& b : blocks) {
      bptr.push_back(&b);
      accs.push_back(zero_grads_like(b));
    }
    std::vector<RevBlockParams<double>*> aptr;
    for (auto& a : accs) aptr.push_back(&a);

    GroupedFeatures<double> ys = xs;
    for (const auto& b : blocks) ys = rev_forward(b, ys, ctx, &drop);
    auto result = stack_backward(bptr, std::move(ys), copy_groups(gfinal), ctx, &drop, aptr);
    CHECK(groups_max_diff(result.reconstructed_input, xs) < 1e-9);

    revref::RefStackTape tape;
    std::vector<RevBlockParams<double>> ref_accs;
    for (auto& b : blocks) ref_accs.push_back(zero_grads_like(b));
    std::vector<RevBlockParams<double>*> raptr;
    for (auto& a : ref_accs) raptr.push_back(&a);
    (void)revref::ref_stack_forward(bptr, xs, ctx, &drop, &tape);
    GroupedFeatures<double> ref_gin = revref::ref_stack_backward(bptr, tape, gfinal, ctx, &drop, raptr);

    std::vector<double> got, want;
    for (const auto& m : result.grad_input) append(got, m);
    for (const auto& m : ref_gin) append(want, m);
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      for (const auto& f : accs[l].sub_blocks) append_sub_params(got, f);
      for (const auto& f : ref_accs[l].sub_blocks) append_sub_params(want, f);
    }
    CHECK(rel_err_vec(got, want) < 1e-8);
  }
}

TEST_CASE("stack_backward over one layer reduces to rev_backward") {
  Rng rng(50);
  CsrGraph g = random_graph(rng, 10, 0.3);
  GraphContext<double> ctx = make_context(g, OpMode::gen_max);
  RevBlockParams<double> block = make_rev_block(rng, 2, 4, OpMode::gen_max, 0);
  GroupedFeatures<double> xs = make_grouped(rng, 2, 10, 4);
  GroupedFeatures<double> gfinal = make_grouped(rng, 2, 10, 4);
  SharedDropoutState drop = make_shared_mask(10, 4, 0.1, 5);

  GroupedFeatures<double> ys = rev_forward(block, xs, ctx, &drop);
  RevBlockParams<double> acc1 = zero_grads_like(block);
  auto [gin1, xrec1] = rev_backward(block, ys, gfinal, ctx, &drop, acc1);

  RevBlockParams<double> acc2 = zero_grads_like(block);
  auto result = stack_backward<double>({&block}, std::move(ys), copy_groups(gfinal), ctx, &drop, {&acc2});
  CHECK(groups_max_diff(result.grad_input, gin1) == 0.0);
  CHECK(rel_err_vec(flatten_block_grads(acc2), flatten_block_grads(acc1)) == 0.0);
}
