#pragma once

#include <optional>
#include <vector>

#include "revgnn/kernels.hpp"

namespace revgnn {

// Node features partitioned into C channel groups of width D/C.
template <class S>
using GroupedFeatures = std::vector<Mat<S>>;

enum class NormKind { layer, batch };

// Pre-activation block: GraphConv(Dropout(ReLU(Norm(x)))). Inside reversible
// stacks the norm is always a layer norm (row-local, so the inverse pass
// recomputes it without batch-statistics ordering concerns); the residual
// baseline may use batch norm instead.
template <class S>
struct SubBlockParams {
  NormParams<S> norm;
  std::optional<LinearParams<S>> edge_proj;  // raw edge features -> working width
  LinearParams<S> conv;
  AggSpec<S> agg;
  NormKind norm_kind = NormKind::layer;
  bool concat_root = false;  // SAGE-style root concatenation before the linear map
};

template <class S>
struct RevBlockParams {
  std::vector<SubBlockParams<S>> sub_blocks;  // arity C >= 2

  index_t groups() const { return static_cast<index_t>(sub_blocks.size()); }
};

// Per-graph call context: the adjacency, optional symmetric-normalization
// weights (GCN mode) and the edge features cast to the working precision.
template <class S>
struct GraphContext {
  const CsrGraph* graph = nullptr;
  std::vector<S> gcn_weights;  // empty unless the GCN operator is active
  Mat<S> edge_feat;            // empty when absent or unused by the operator
};

template <class S>
AggSpec<S> bind_spec(const AggSpec<S>& spec, const GraphContext<S>& ctx) {
  AggSpec<S> bound = spec;
  bound.edge_weights = ctx.gcn_weights.empty() ? nullptr : &ctx.gcn_weights;
  return bound;
}

// One Bernoulli pattern per optimization step, shared across layers and
// groups; the reverse pass reactivates the saved pattern.
struct SharedDropoutState {
  DropoutMask mask;
  std::uint64_t step_seed = 0;
};

inline SharedDropoutState make_shared_mask(index_t n, index_t width, double drop_prob,
                                           std::uint64_t seed) {
  require(drop_prob >= 0.0 && drop_prob < 1.0, "make_shared_mask: drop_prob must be in [0,1)");
  SharedDropoutState state;
  state.step_seed = seed;
  state.mask.keep_prob = 1.0 - drop_prob;
  TagScope tag(MemTag::mask);
  state.mask.mask = Mat<std::uint8_t>(n, width);
  for (index_t i = 0; i < n * width; ++i) {
    // counter-based draw: position i hashed with the seed
    const std::uint64_t h = splitmix64(hash_combine(seed, static_cast<std::uint64_t>(i)));
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    state.mask.mask.data()[i] = u >= drop_prob ? 1 : 0;
  }
  return state;
}

namespace detail {

template <class S>
void check_mask(const SharedDropoutState* drop, index_t rows, index_t cols) {
  if (drop == nullptr) return;
  expect(drop->mask.mask.rows() == rows && drop->mask.mask.cols() == cols,
         "shared dropout mask does not match the current activation shape (stale mask?)");
}

template <class S>
void add_inplace(Mat<S>& a, const Mat<S>& b) {
  require(a.same_shape(b), "add_inplace: shape mismatch");
  for (index_t i = 0; i < a.size(); ++i) a.data()[i] += b.data()[i];
}

template <class S>
void sub_inplace(Mat<S>& a, const Mat<S>& b) {
  require(a.same_shape(b), "sub_inplace: shape mismatch");
  for (index_t i = 0; i < a.size(); ++i) a.data()[i] -= b.data()[i];
}

// normalize + affine from precomputed row stats; same arithmetic as layer_norm
template <class S>
Mat<S> norm_affine_from_stats(const Mat<S>& x, const Mat<S>& stats, const NormParams<S>& p) {
  Mat<S> y(x.rows(), x.cols());
  for (index_t n = 0; n < x.rows(); ++n) {
    const S mean = stats(n, 0), rstd = stats(n, 1);
    const S* xr = x.row(n);
    S* yr = y.row(n);
    for (index_t c = 0; c < x.cols(); ++c)
      yr[c] = (xr[c] - mean) * rstd * p.scale.data()[c] + p.shift.data()[c];
  }
  return y;
}

// Gates an upstream gradient in place through dropout and ReLU, recomputing
// the ReLU sign on the fly from the pre-activation input and its stats
// instead of retaining the normalized tensor.
template <class S>
void gate_dropout_relu_inplace(Mat<S>& g, const Mat<S>& x, const Mat<S>& stats,
                               const NormParams<S>& p, const SharedDropoutState* drop) {
  const S inv_keep = drop ? S(1.0 / drop->mask.keep_prob) : S(1);
  for (index_t n = 0; n < x.rows(); ++n) {
    const S mean = stats(n, 0), rstd = stats(n, 1);
    const S* xr = x.row(n);
    S* gr = g.row(n);
    const std::uint8_t* mr = drop ? drop->mask.mask.row(n) : nullptr;
    for (index_t c = 0; c < x.cols(); ++c) {
      if (mr && !mr[c]) {
        gr[c] = S(0);
        continue;
      }
      const S t1 = (xr[c] - mean) * rstd * p.scale.data()[c] + p.shift.data()[c];
      gr[c] = t1 > S(0) ? gr[c] * inv_keep : S(0);
    }
  }
}

// Streaming layer-norm backward: accumulates gx into every buffer in
// g_targets and the affine gradients into acc, using only the raw input and
// cached stats. Multiple targets cover the coupling term that feeds several
// group gradients at once without materializing an extra tensor.
template <class S>
void layer_norm_vjp_accumulate(const Mat<S>& x, const Mat<S>& stats, const NormParams<S>& p,
                               const Mat<S>& gy, NormParams<S>& acc,
                               const std::vector<Mat<S>*>& g_targets) {
  const index_t d = x.cols();
  for (index_t n = 0; n < x.rows(); ++n) {
    const S mean = stats(n, 0), rstd = stats(n, 1);
    const S* xr = x.row(n);
    const S* gr = gy.row(n);
    S m1 = 0, m2 = 0;
    for (index_t c = 0; c < d; ++c) {
      const S xhat = (xr[c] - mean) * rstd;
      const S g1 = gr[c] * p.scale.data()[c];
      m1 += g1;
      m2 += g1 * xhat;
      acc.scale.data()[c] += gr[c] * xhat;
      acc.shift.data()[c] += gr[c];
    }
    m1 /= static_cast<S>(d);
    m2 /= static_cast<S>(d);
    for (Mat<S>* target : g_targets) {
      S* tr = target->row(n);
      for (index_t c = 0; c < d; ++c) {
        const S xhat = (xr[c] - mean) * rstd;
        const S g1 = gr[c] * p.scale.data()[c];
        tr[c] += rstd * (g1 - m1 - xhat * m2);
      }
    }
  }
}

// Minimal backward state for one sub-block pass: row stats of the input, the
// linear-map input, aggregation bookkeeping, and (softmax only) the message
// operands needed to recompute attention weights.
template <class S>
struct LeanTape {
  Mat<S> stats;
  Mat<S> conv_in;
  AggCache agg_cache;
  Mat<S> t3;        // retained only for softmax aggregation
  Mat<S> edge_msg;  // retained only for softmax aggregation with edge features
};

}  // namespace detail

// Dropout(ReLU(Norm(x))) followed by GraphConv. In eval mode pass
// drop == nullptr. When tape is supplied the call retains what the fused
// backward needs and nothing else.
template <class S>
Mat<S> sub_block_forward(const SubBlockParams<S>& f, const Mat<S>& x, const GraphContext<S>& ctx,
                         const SharedDropoutState* drop, detail::LeanTape<S>* tape = nullptr) {
  expect(f.norm_kind == NormKind::layer, "sub_block_forward: reversible blocks use layer norm");
  detail::check_mask<S>(drop, x.rows(), x.cols());
  const CsrGraph& g = *ctx.graph;
  const AggSpec<S> spec = bind_spec(f.agg, ctx);

  Mat<S> stats = row_stats(x, f.norm.epsilon);
  Mat<S> t = detail::norm_affine_from_stats(x, stats, f.norm);
  // ReLU and dropout applied in place
  const S inv_keep = drop ? S(1.0 / drop->mask.keep_prob) : S(1);
  for (index_t n = 0; n < t.rows(); ++n) {
    S* tr = t.row(n);
    const std::uint8_t* mr = drop ? drop->mask.mask.row(n) : nullptr;
    for (index_t c = 0; c < t.cols(); ++c) {
      S v = tr[c] > S(0) ? tr[c] : S(0);
      tr[c] = (mr && !mr[c]) ? S(0) : v * inv_keep;
    }
  }

  Mat<S> edge_msg;
  if (f.edge_proj.has_value() && !ctx.edge_feat.empty())
    edge_msg = linear(ctx.edge_feat, *f.edge_proj);

  AggCache* cache = tape ? &tape->agg_cache : nullptr;
  AggCache local_cache;
  if (spec.kind == AggKind::max && cache == nullptr) cache = &local_cache;
  Mat<S> agg = aggregate(g, t, edge_msg, spec, cache);

  Mat<S> conv_in = f.concat_root ? concat_cols(t, agg) : std::move(agg);
  if (tape) {
    tape->stats = std::move(stats);
    if (spec.kind == AggKind::softmax) {
      tape->t3 = std::move(t);
      tape->edge_msg = std::move(edge_msg);
    } else {
      t.release();
      edge_msg.release();
    }
  } else {
    t.release();
    edge_msg.release();
  }
  Mat<S> out = linear(conv_in, f.conv);
  if (tape)
    tape->conv_in = std::move(conv_in);
  return out;
}

namespace detail {

// Backward through one sub-block given its lean tape. Upstream comes in as
// `upstream`; the input gradient is accumulated into every g_targets entry.
// Parameter gradients accumulate into acc (allocated by the caller outside
// the metered scope).
template <class S>
void sub_block_vjp(const SubBlockParams<S>& f, const Mat<S>& x, const GraphContext<S>& ctx,
                   const SharedDropoutState* drop, LeanTape<S>& tape, const Mat<S>& upstream,
                   SubBlockParams<S>& acc, const std::vector<Mat<S>*>& g_targets) {
  const CsrGraph& g = *ctx.graph;
  const AggSpec<S> spec = bind_spec(f.agg, ctx);

  Mat<S> g_conv_in = linear_vjp(tape.conv_in, f.conv, upstream, acc.conv);
  tape.conv_in.release();

  Mat<S> g_agg;
  Mat<S> g_root;
  if (f.concat_root) {
    const index_t dx = x.cols();
    g_root = Mat<S>(g_conv_in.rows(), dx);
    g_agg = Mat<S>(g_conv_in.rows(), dx);
    for (index_t n = 0; n < g_conv_in.rows(); ++n)
      for (index_t c = 0; c < dx; ++c) {
        g_root(n, c) = g_conv_in(n, c);
        g_agg(n, c) = g_conv_in(n, dx + c);
      }
    g_conv_in.release();
  } else {
    g_agg = std::move(g_conv_in);
  }

  const bool wants_edge_grad = f.edge_proj.has_value() && !ctx.edge_feat.empty();
  Mat<S> g_edge_msg;
  Mat<S> g_t3 = aggregate_vjp(g, tape.t3, tape.edge_msg, spec, g_agg, &tape.agg_cache,
                              wants_edge_grad ? &g_edge_msg : nullptr);
  g_agg.release();
  tape.t3.release();
  tape.edge_msg.release();
  if (!g_edge_msg.empty()) {
    (void)linear_vjp(ctx.edge_feat, *f.edge_proj, g_edge_msg, *acc.edge_proj);
    g_edge_msg.release();
  }
  if (f.concat_root) {
    add_inplace(g_t3, g_root);
    g_root.release();
  }

  gate_dropout_relu_inplace(g_t3, x, tape.stats, f.norm, drop);
  layer_norm_vjp_accumulate(x, tape.stats, f.norm, g_t3, acc.norm, g_targets);
  tape.stats.release();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// grouped reversible coupling

template <class S>
GroupedFeatures<S> group_split(const Mat<S>& x, index_t groups) {
  require(groups >= 1, "group_split: need at least 1 group");
  require(x.cols() % groups == 0, "group_split: channel count not divisible by group count");
  const index_t w = x.cols() / groups;
  GroupedFeatures<S> out;
  out.reserve(static_cast<std::size_t>(groups));
  for (index_t k = 0; k < groups; ++k) {
    Mat<S> part(x.rows(), w);
    for (index_t n = 0; n < x.rows(); ++n)
      for (index_t c = 0; c < w; ++c) part(n, c) = x(n, k * w + c);
    out.push_back(std::move(part));
  }
  return out;
}

template <class S>
Mat<S> group_concat(const GroupedFeatures<S>& xs) {
  require(!xs.empty(), "group_concat: empty group list");
  const index_t w = xs[0].cols();
  Mat<S> out(xs[0].rows(), w * static_cast<index_t>(xs.size()));
  for (std::size_t k = 0; k < xs.size(); ++k)
    for (index_t n = 0; n < out.rows(); ++n)
      for (index_t c = 0; c < w; ++c) out(n, static_cast<index_t>(k) * w + c) = xs[k](n, c);
  return out;
}

// Forward coupling: X'_0 = sum of groups 2..C, then group i becomes
// f_i(X'_{i-1}) + X_i in sequence. Group 1 lives at vector index 0.
template <class S>
GroupedFeatures<S> rev_forward(const RevBlockParams<S>& block, const GroupedFeatures<S>& xs,
                               const GraphContext<S>& ctx, const SharedDropoutState* drop) {
  const index_t C = block.groups();
  require(static_cast<index_t>(xs.size()) == C, "rev_forward: group count mismatch");
  require(C >= 2, "rev_forward: group count must be >= 2");

  Mat<S> x0p = xs[1];
  for (index_t i = 2; i < C; ++i) detail::add_inplace(x0p, xs[static_cast<std::size_t>(i)]);

  GroupedFeatures<S> out(static_cast<std::size_t>(C));
  const Mat<S>* prev = &x0p;
  for (index_t i = 0; i < C; ++i) {
    Mat<S> fi = sub_block_forward(block.sub_blocks[static_cast<std::size_t>(i)], *prev, ctx, drop);
    detail::add_inplace(fi, xs[static_cast<std::size_t>(i)]);
    out[static_cast<std::size_t>(i)] = std::move(fi);
    prev = &out[static_cast<std::size_t>(i)];
  }
  return out;
}

// Exact inverse of rev_forward under the same dropout state.
template <class S>
GroupedFeatures<S> rev_inverse(const RevBlockParams<S>& block, const GroupedFeatures<S>& ys,
                               const GraphContext<S>& ctx, const SharedDropoutState* drop) {
  const index_t C = block.groups();
  require(static_cast<index_t>(ys.size()) == C, "rev_inverse: group count mismatch");

  GroupedFeatures<S> xs(static_cast<std::size_t>(C));
  for (index_t i = 1; i < C; ++i) {
    Mat<S> fi = sub_block_forward(block.sub_blocks[static_cast<std::size_t>(i)],
                                  ys[static_cast<std::size_t>(i - 1)], ctx, drop);
    Mat<S> xi = ys[static_cast<std::size_t>(i)];
    detail::sub_inplace(xi, fi);
    xs[static_cast<std::size_t>(i)] = std::move(xi);
  }
  Mat<S> x0p = xs[1];
  for (index_t i = 2; i < C; ++i) detail::add_inplace(x0p, xs[static_cast<std::size_t>(i)]);
  Mat<S> f1 = sub_block_forward(block.sub_blocks[0], x0p, ctx, drop);
  Mat<S> x1 = ys[0];
  detail::sub_inplace(x1, f1);
  xs[0] = std::move(x1);
  return xs;
}

// Fused inverse-and-backward for one block. Consumes the block outputs
// (their buffers are reused for the reconstructed inputs) and turns `grad`
// from output-gradients into input-gradients in place. Parameter gradients
// accumulate into acc. Peak retained memory stays a small multiple of one
// activation tensor regardless of stack depth.
template <class S>
GroupedFeatures<S> rev_backward_fused(const RevBlockParams<S>& block, GroupedFeatures<S>&& ys,
                                      GroupedFeatures<S>& grad, const GraphContext<S>& ctx,
                                      const SharedDropoutState* drop, RevBlockParams<S>& acc) {
  const index_t C = block.groups();
  require(static_cast<index_t>(ys.size()) == C && static_cast<index_t>(grad.size()) == C,
          "rev_backward: group count mismatch");

  // Groups j = C-1 .. 1 (spec indices C..2): reconstruct X_{j+1} in place,
  // then immediately backprop f_{j+1}, accumulating into grad[j-1].
  for (index_t j = C - 1; j >= 1; --j) {
    const auto uj = static_cast<std::size_t>(j);
    const SubBlockParams<S>& f = block.sub_blocks[uj];
    detail::LeanTape<S> tape;
    Mat<S> fj = sub_block_forward(f, ys[uj - 1], ctx, drop, &tape);
    detail::sub_inplace(ys[uj], fj);  // ys[j] now holds the reconstructed input group
    fj.release();
    detail::sub_block_vjp(f, ys[uj - 1], ctx, drop, tape, grad[uj], acc.sub_blocks[uj],
                          {&grad[uj - 1]});
  }

  // X'_0: alias the single summand when C == 2, otherwise materialize.
  Mat<S> x0p_storage;
  const Mat<S>* x0p = &ys[1];
  if (C > 2) {
    x0p_storage = ys[1];
    for (index_t i = 2; i < C; ++i) detail::add_inplace(x0p_storage, ys[static_cast<std::size_t>(i)]);
    x0p = &x0p_storage;
  }

  {
    const SubBlockParams<S>& f = block.sub_blocks[0];
    detail::LeanTape<S> tape;
    Mat<S> f1 = sub_block_forward(f, *x0p, ctx, drop, &tape);
    detail::sub_inplace(ys[0], f1);
    f1.release();
    // X_i for i >= 2 feeds both its own residual and X'_0, so the gradient
    // through f_1 streams into every group gradient above the first
    std::vector<Mat<S>*> targets;
    for (index_t i = 1; i < C; ++i) targets.push_back(&grad[static_cast<std::size_t>(i)]);
    detail::sub_block_vjp(f, *x0p, ctx, drop, tape, grad[0], acc.sub_blocks[0], targets);
    x0p_storage.release();
  }
  return std::move(ys);
}

// Spec-shaped wrapper: non-destructive single-block backward.
template <class S>
std::pair<GroupedFeatures<S>, GroupedFeatures<S>> rev_backward(
    const RevBlockParams<S>& block, const GroupedFeatures<S>& ys, const GroupedFeatures<S>& grad_out,
    const GraphContext<S>& ctx, const SharedDropoutState* drop, RevBlockParams<S>& acc) {
  GroupedFeatures<S> ys_copy = ys;
  GroupedFeatures<S> g = grad_out;
  GroupedFeatures<S> xs = rev_backward_fused(block, std::move(ys_copy), g, ctx, drop, acc);
  return {std::move(g), std::move(xs)};
}

template <class S>
struct StackBackwardResult {
  GroupedFeatures<S> grad_input;
  GroupedFeatures<S> reconstructed_input;
};

// Walks the stack from the last block to the first, carrying only the current
// activations and the current gradient. blocks and accs are parallel arrays;
// weight-tied stacks pass the same pointers for every layer.
template <class S>
StackBackwardResult<S> stack_backward(const std::vector<const RevBlockParams<S>*>& blocks,
                                      GroupedFeatures<S>&& ys_final, GroupedFeatures<S>&& grad_final,
                                      const GraphContext<S>& ctx, const SharedDropoutState* drop,
                                      const std::vector<RevBlockParams<S>*>& accs) {
  require(blocks.size() == accs.size(), "stack_backward: blocks/accumulators length mismatch");
  GroupedFeatures<S> ys = std::move(ys_final);
  GroupedFeatures<S> grad = std::move(grad_final);
  for (std::size_t l = blocks.size(); l-- > 0;)
    ys = rev_backward_fused(*blocks[l], std::move(ys), grad, ctx, drop, *accs[l]);
  return {std::move(grad), std::move(ys)};
}

}  // namespace revgnn
