#pragma once

#include <vector>

#include "revgnn/rev_block.hpp"

namespace revgnn {

// Non-reversible pre-activation residual stack: x_{l+1} = x_l + f(x_l) at
// full width. This is the conventional cached-activation baseline whose
// retained memory grows linearly with depth, plus the sqrt(L)-checkpointing
// variant that trades recomputation for a sublinear footprint.

template <class S>
struct ResLayerTape {
  Mat<S> t1;  // norm output, retained for the ReLU gate
  Mat<S> t3;  // aggregation input, retained only when softmax needs it back
  GraphConvTape<S> conv;
};

template <class S>
Mat<S> res_layer_forward(const SubBlockParams<S>& f, const Mat<S>& x, const GraphContext<S>& ctx,
                         const SharedDropoutState* drop, ResLayerTape<S>* tape = nullptr) {
  detail::check_mask<S>(drop, x.rows(), x.cols());
  const AggSpec<S> spec = bind_spec(f.agg, ctx);
  Mat<S> t1 = f.norm_kind == NormKind::layer ? layer_norm(x, f.norm) : batch_norm(x, f.norm);
  Mat<S> t2 = relu(t1);
  Mat<S> t3 = drop ? dropout_apply(t2, drop->mask) : std::move(t2);
  t2.release();

  GraphConvTape<S> local;
  GraphConvTape<S>& ct = tape ? tape->conv : local;
  const LinearParams<S>* edge_proj = f.edge_proj.has_value() ? &*f.edge_proj : nullptr;
  if (edge_proj != nullptr && !ctx.edge_feat.empty()) ct.edge_msg = linear(ctx.edge_feat, *edge_proj);
  Mat<S> agg = aggregate(*ctx.graph, t3, ct.edge_msg, spec, &ct.agg_cache);
  ct.conv_in = f.concat_root ? concat_cols(t3, agg) : std::move(agg);
  Mat<S> y = linear(ct.conv_in, f.conv);
  detail::add_inplace(y, x);

  if (tape) {
    tape->t1 = std::move(t1);
    if (spec.kind == AggKind::softmax) tape->t3 = std::move(t3);
  }
  return y;
}

// Backward through one residual layer from its tape. Returns the gradient
// with respect to the layer input (upstream + f-path contribution).
template <class S>
Mat<S> res_layer_vjp(const SubBlockParams<S>& f, const Mat<S>& x, const GraphContext<S>& ctx,
                     const SharedDropoutState* drop, ResLayerTape<S>& tape, const Mat<S>& gy,
                     SubBlockParams<S>& acc) {
  const AggSpec<S> spec = bind_spec(f.agg, ctx);
  const LinearParams<S>* edge_proj = f.edge_proj.has_value() ? &*f.edge_proj : nullptr;

  Mat<S> g_conv_in = linear_vjp(tape.conv.conv_in, f.conv, gy, acc.conv);
  tape.conv.conv_in.release();
  Mat<S> g_agg;
  Mat<S> g_root;
  if (f.concat_root) {
    const index_t dx = g_conv_in.cols() / 2;
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

  const bool wants_edge_grad = edge_proj != nullptr && !ctx.edge_feat.empty();
  Mat<S> g_edge_msg;
  Mat<S> g_t3 = aggregate_vjp(*ctx.graph, tape.t3, tape.conv.edge_msg, spec, g_agg, &tape.conv.agg_cache,
                              wants_edge_grad ? &g_edge_msg : nullptr);
  g_agg.release();
  tape.t3.release();
  tape.conv.edge_msg.release();
  if (!g_edge_msg.empty()) {
    (void)linear_vjp(ctx.edge_feat, *edge_proj, g_edge_msg, *acc.edge_proj);
    g_edge_msg.release();
  }
  if (f.concat_root) {
    detail::add_inplace(g_t3, g_root);
    g_root.release();
  }

  Mat<S> g_t2 = drop ? dropout_vjp(drop->mask, g_t3) : std::move(g_t3);
  g_t3.release();
  Mat<S> g_t1 = relu_vjp(tape.t1, g_t2);
  g_t2.release();
  tape.t1.release();
  Mat<S> gx = f.norm_kind == NormKind::layer ? layer_norm_vjp(x, f.norm, g_t1, acc.norm)
                                             : batch_norm_vjp(x, f.norm, g_t1, acc.norm);
  g_t1.release();
  detail::add_inplace(gx, gy);  // residual pass-through
  return gx;
}

template <class S>
struct ResStackTape {
  std::vector<Mat<S>> chain;             // x_0 .. x_L
  std::vector<ResLayerTape<S>> layers;   // one per layer
};

template <class S>
Mat<S> res_stack_forward(const std::vector<const SubBlockParams<S>*>& layers, Mat<S>&& x0,
                         const GraphContext<S>& ctx, const SharedDropoutState* drop,
                         ResStackTape<S>* tape = nullptr) {
  Mat<S> x = std::move(x0);
  if (tape) {
    tape->layers.resize(layers.size());
    tape->chain.clear();
    tape->chain.reserve(layers.size());
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Mat<S> y = res_layer_forward(*layers[l], x, ctx, drop, tape ? &tape->layers[l] : nullptr);
    if (tape)
      tape->chain.push_back(std::move(x));
    x = std::move(y);
  }
  return x;
}

// Standard cached-activation backprop; consumes the tape layer by layer.
// The chain holds the inputs x_0 .. x_{L-1}; the stack output lives with the
// caller (the head consumes it).
template <class S>
Mat<S> res_stack_backward(const std::vector<const SubBlockParams<S>*>& layers, ResStackTape<S>& tape,
                          Mat<S>&& grad_final, const GraphContext<S>& ctx,
                          const SharedDropoutState* drop,
                          const std::vector<SubBlockParams<S>*>& accs) {
  require(layers.size() == accs.size(), "res_stack_backward: accumulator length mismatch");
  expect(tape.chain.size() == layers.size(), "res_stack_backward: tape does not match stack");
  Mat<S> g = std::move(grad_final);
  for (std::size_t l = layers.size(); l-- > 0;) {
    g = res_layer_vjp(*layers[l], tape.chain[l], ctx, drop, tape.layers[l], g, *accs[l]);
    tape.chain[l].release();
  }
  return g;
}

// Gradient checkpointing: stores activations only at layer indices that are
// multiples of `every` and recomputes each segment's tape on demand during
// the backward sweep. every == 1 degenerates to full caching. Returns the
// gradient with respect to the stack input.
template <class S>
Mat<S> res_stack_checkpointed_backward(const std::vector<const SubBlockParams<S>*>& layers,
                                       const Mat<S>& x0, Mat<S>&& grad_final,
                                       const GraphContext<S>& ctx, const SharedDropoutState* drop,
                                       const std::vector<SubBlockParams<S>*>& accs, index_t every) {
  require(every >= 1, "checkpointed_backward: every must be >= 1");
  const auto L = static_cast<index_t>(layers.size());
  if (every == 1) {
    ResStackTape<S> tape;
    Mat<S> x_in = x0;
    (void)res_stack_forward(layers, std::move(x_in), ctx, drop, &tape);
    return res_stack_backward(layers, tape, std::move(grad_final), ctx, drop, accs);
  }

  // forward, retaining checkpoints only
  std::vector<Mat<S>> ckpt;
  Mat<S> x = x0;
  for (index_t l = 0; l < L; ++l) {
    if (l % every == 0) ckpt.push_back(x);
    x = res_layer_forward(*layers[static_cast<std::size_t>(l)], x, ctx, drop);
  }
  x.release();

  Mat<S> g = std::move(grad_final);
  for (index_t seg = (L - 1) / every; seg >= 0; --seg) {
    const index_t start = seg * every;
    const index_t end = std::min(L, start + every);
    // rebuild this segment with tapes from its checkpoint
    ResStackTape<S> tape;
    tape.layers.resize(static_cast<std::size_t>(end - start));
    tape.chain.reserve(static_cast<std::size_t>(end - start) + 1);
    Mat<S> cur = std::move(ckpt[static_cast<std::size_t>(seg)]);
    for (index_t l = start; l < end; ++l) {
      Mat<S> y = res_layer_forward(*layers[static_cast<std::size_t>(l)], cur, ctx, drop,
                                   &tape.layers[static_cast<std::size_t>(l - start)]);
      tape.chain.push_back(std::move(cur));
      cur = std::move(y);
    }
    cur.release();
    for (index_t l = end; l-- > start;) {
      g = res_layer_vjp(*layers[static_cast<std::size_t>(l)], tape.chain[static_cast<std::size_t>(l - start)], ctx,
                        drop, tape.layers[static_cast<std::size_t>(l - start)], g, *accs[static_cast<std::size_t>(l)]);
      tape.chain[static_cast<std::size_t>(l - start)].release();
    }
  }
  return g;
}

}  // namespace revgnn
