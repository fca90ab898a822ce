#pragma once

#include <functional>
#include <string>
#include <vector>

#include "revgnn/rev_block.hpp"

namespace revgnn {

// ---------------------------------------------------------------------------
// Broyden root finding ("good" Broyden, no line search). The inverse-Jacobian
// approximation starts at -I (matching the residual convention g(z) = f(z) - z
// near a stable fixed point) and is maintained as a sequence of rank-1
// factors; applying it costs O(dim * iters).

template <class S>
struct SolverConfig {
  index_t max_iter = 32;
  S tol_forward = 0;   // 0 = derive from sqrt(B*D) below
  S tol_backward = 0;

  static SolverConfig with_defaults(index_t max_iter, index_t b, index_t d) {
    SolverConfig cfg;
    cfg.max_iter = max_iter;
    const S root = std::sqrt(static_cast<S>(b) * static_cast<S>(d));
    cfg.tol_forward = S(1e-6) * root;
    cfg.tol_backward = S(2e-10) * root;
    return cfg;
  }
};

template <class S>
struct BroydenState {
  Mat<S> z;
  Mat<S> residual;
  std::vector<Mat<S>> rank1_us;
  std::vector<Mat<S>> rank1_vs;
  index_t iter = 0;
};

template <class S>
struct BroydenResult {
  Mat<S> z;
  S residual_norm = 0;
  index_t iters = 0;
  bool converged = false;
};

namespace detail {

template <class S>
S vec_dot(const Mat<S>& a, const Mat<S>& b) {
  S acc = 0;
  for (index_t i = 0; i < a.size(); ++i) acc += a.data()[i] * b.data()[i];
  return acc;
}

template <class S>
S vec_norm(const Mat<S>& a) {
  return std::sqrt(vec_dot(a, a));
}

// B * y with B = -I + sum u_k v_k^T
template <class S>
Mat<S> apply_inv_jac(const BroydenState<S>& st, const Mat<S>& y) {
  Mat<S> out(y.rows(), y.cols());
  for (index_t i = 0; i < y.size(); ++i) out.data()[i] = -y.data()[i];
  for (std::size_t k = 0; k < st.rank1_us.size(); ++k) {
    const S c = vec_dot(st.rank1_vs[k], y);
    for (index_t i = 0; i < y.size(); ++i) out.data()[i] += st.rank1_us[k].data()[i] * c;
  }
  return out;
}

// B^T * s
template <class S>
Mat<S> apply_inv_jac_t(const BroydenState<S>& st, const Mat<S>& s) {
  Mat<S> out(s.rows(), s.cols());
  for (index_t i = 0; i < s.size(); ++i) out.data()[i] = -s.data()[i];
  for (std::size_t k = 0; k < st.rank1_us.size(); ++k) {
    const S c = vec_dot(st.rank1_us[k], s);
    for (index_t i = 0; i < s.size(); ++i) out.data()[i] += st.rank1_vs[k].data()[i] * c;
  }
  return out;
}

}  // namespace detail

// Iterates until ||residual||_2 < tol or max_iter steps; returns the best
// iterate seen. Non-convergence is reported through the flag, never thrown;
// a non-finite residual is a solver error.
template <class S>
BroydenResult<S> broyden_solve(const std::function<Mat<S>(const Mat<S>&)>& residual_fn, Mat<S> z0,
                               index_t max_iter, S tol) {
  BroydenState<S> st;
  st.z = std::move(z0);
  st.residual = residual_fn(st.z);
  require(st.residual.same_shape(st.z), "broyden_solve: residual function must preserve dimension");

  BroydenResult<S> best;
  best.z = st.z;
  best.residual_norm = detail::vec_norm(st.residual);
  best.converged = best.residual_norm < tol;
  if (best.converged || max_iter == 0) return best;

  const auto check_finite = [&](const Mat<S>& r) {
    if (!r.all_finite())
      throw numeric_error("broyden_solve: non-finite residual at iteration " +
                          std::to_string(st.iter) + " (last norm " +
                          std::to_string(static_cast<double>(best.residual_norm)) + ")");
  };
  check_finite(st.residual);

  for (index_t k = 1; k <= max_iter; ++k) {
    Mat<S> dz = detail::apply_inv_jac(st, st.residual);
    for (index_t i = 0; i < dz.size(); ++i) dz.data()[i] = -dz.data()[i];

    Mat<S> z_new = st.z;
    detail::add_inplace(z_new, dz);
    Mat<S> g_new = residual_fn(z_new);
    st.iter = k;
    check_finite(g_new);

    Mat<S> y = g_new;
    detail::sub_inplace(y, st.residual);

    Mat<S> by = detail::apply_inv_jac(st, y);
    const S s_t_by = detail::vec_dot(dz, by);
    const S scale = detail::vec_norm(dz) * detail::vec_norm(by);
    if (std::abs(s_t_by) > scale * S(1e-12) && s_t_by != S(0)) {
      if (static_cast<index_t>(st.rank1_us.size()) >= max_iter) {
        // history cap reached; restart the inverse-Jacobian approximation
        st.rank1_us.clear();
        st.rank1_vs.clear();
      }
      TagScope solver_tag(MemTag::solver);
      Mat<S> u(dz.rows(), dz.cols());
      for (index_t i = 0; i < u.size(); ++i) u.data()[i] = (dz.data()[i] - by.data()[i]) / s_t_by;
      Mat<S> v = detail::apply_inv_jac_t(st, dz);
      st.rank1_us.push_back(std::move(u));
      st.rank1_vs.push_back(std::move(v));
    }

    st.z = std::move(z_new);
    st.residual = std::move(g_new);
    const S norm = detail::vec_norm(st.residual);
    if (norm < best.residual_norm) {
      best.z = st.z;
      best.residual_norm = norm;
    }
    best.iters = k;
    if (norm < tol) {
      best.converged = true;
      break;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// deep-equilibrium block: two graph convolutions around an injected input,
//   Z'   = GraphConv(z_in)
//   Z''  = Norm(Z' + x)
//   Z''' = GraphConv(Dropout(ReLU(Z'')))
//   Z_o  = Norm(ReLU(Z''' + Z'))

template <class S>
struct GraphConvParams {
  std::optional<LinearParams<S>> edge_proj;
  LinearParams<S> conv;
  AggSpec<S> agg;
  bool concat_root = false;
};

template <class S>
struct DeqParams {
  GraphConvParams<S> conv1;
  GraphConvParams<S> conv2;
  NormParams<S> norm1;
  NormParams<S> norm2;
  double drop = 0.0;
};

template <class S>
struct DeqTape {
  GraphConvTape<S> c1;
  GraphConvTape<S> c2;
  Mat<S> z_in;  // conv1's pre-aggregation input (softmax only)
  Mat<S> s1;    // Z' + x
  Mat<S> zpp;   // Z''
  Mat<S> t3;    // dropout output (softmax only)
  Mat<S> s2;    // Z''' + Z'
  Mat<S> r2;    // ReLU(s2)
};

template <class S>
Mat<S> apply_conv(const GraphConvParams<S>& p, const Mat<S>& x, const GraphContext<S>& ctx,
                  GraphConvTape<S>* tape) {
  const LinearParams<S>* ep = p.edge_proj.has_value() ? &*p.edge_proj : nullptr;
  return graph_conv(*ctx.graph, x, ep, p.conv, bind_spec(p.agg, ctx), p.concat_root, tape);
}

template <class S>
Mat<S> deq_block(const Mat<S>& z_in, const Mat<S>& x, const GraphContext<S>& ctx,
                 const DeqParams<S>& p, const SharedDropoutState* drop, DeqTape<S>* tape = nullptr) {
  require(z_in.same_shape(x), "deq_block: state/injection shape mismatch");
  detail::check_mask<S>(drop, z_in.rows(), z_in.cols());
  DeqTape<S> local;
  DeqTape<S>& t = tape ? *tape : local;

  Mat<S> zp = apply_conv(p.conv1, z_in, ctx, &t.c1);
  Mat<S> s1 = zp;
  detail::add_inplace(s1, x);
  Mat<S> zpp = layer_norm(s1, p.norm1);
  Mat<S> t2 = relu(zpp);
  Mat<S> t3 = drop ? dropout_apply(t2, drop->mask) : std::move(t2);
  Mat<S> zppp = apply_conv(p.conv2, t3, ctx, &t.c2);
  Mat<S> s2 = std::move(zppp);
  detail::add_inplace(s2, zp);
  Mat<S> r2 = relu(s2);
  Mat<S> out = layer_norm(r2, p.norm2);

  if (tape) {
    if (p.conv1.agg.kind == AggKind::softmax) t.z_in = z_in;
    if (p.conv2.agg.kind == AggKind::softmax) t.t3 = std::move(t3);
    t.s1 = std::move(s1);
    t.zpp = std::move(zpp);
    t.s2 = std::move(s2);
    t.r2 = std::move(r2);
  }
  return out;
}

template <class S>
struct DeqGrads {
  GraphConvGrads<S> c1;
  GraphConvGrads<S> c2;
  NormParams<S>* norm1 = nullptr;
  NormParams<S>* norm2 = nullptr;
  Mat<S>* gx = nullptr;  // optional accumulation target for the injected input
};

// VJP of deq_block at the taped point. Returns the gradient with respect to
// z_in; parameter and injection gradients accumulate into `acc`.
template <class S>
Mat<S> deq_block_vjp(const GraphContext<S>& ctx, const DeqParams<S>& p,
                     const SharedDropoutState* drop, const DeqTape<S>& tape, const Mat<S>& gy,
                     DeqGrads<S> acc) {
  const LinearParams<S>* ep1 = p.conv1.edge_proj.has_value() ? &*p.conv1.edge_proj : nullptr;
  const LinearParams<S>* ep2 = p.conv2.edge_proj.has_value() ? &*p.conv2.edge_proj : nullptr;

  Mat<S> g_r2 = layer_norm_vjp(tape.r2, p.norm2, gy, *acc.norm2);
  Mat<S> g_s2 = relu_vjp(tape.s2, g_r2);
  g_r2.release();

  Mat<S> g_t3 = graph_conv_vjp(*ctx.graph, tape.t3, ep2, p.conv2.conv, bind_spec(p.conv2.agg, ctx),
                               p.conv2.concat_root, tape.c2, g_s2, acc.c2);
  Mat<S> g_t2 = drop ? dropout_vjp(drop->mask, g_t3) : std::move(g_t3);
  g_t3.release();
  Mat<S> g_zpp = relu_vjp(tape.zpp, g_t2);
  g_t2.release();
  Mat<S> g_s1 = layer_norm_vjp(tape.s1, p.norm1, g_zpp, *acc.norm1);
  g_zpp.release();

  if (acc.gx != nullptr) detail::add_inplace(*acc.gx, g_s1);  // s1 = Z' + x

  Mat<S> g_zp = std::move(g_s1);      // via s1
  detail::add_inplace(g_zp, g_s2);    // via the internal residual s2 = Z''' + Z'
  g_s2.release();
  return graph_conv_vjp(*ctx.graph, tape.z_in, ep1, p.conv1.conv, bind_spec(p.conv1.agg, ctx),
                        p.conv1.concat_root, tape.c1, g_zp, acc.c1);
}

struct DeqDiagnostics {
  index_t forward_iters = 0;
  double forward_residual = 0.0;
  bool forward_converged = false;
  index_t backward_iters = 0;
  double backward_residual = 0.0;
  bool backward_converged = false;
};

// Solves z = deq_block(z, x, ...) from z = 0 by Broyden's method. Training
// proceeds with the best iterate when the tolerance is not met.
template <class S>
Mat<S> deq_forward(const Mat<S>& x, const GraphContext<S>& ctx, const DeqParams<S>& p,
                   const SharedDropoutState* drop, const SolverConfig<S>& cfg,
                   DeqDiagnostics* diag = nullptr) {
  auto residual = [&](const Mat<S>& z) {
    Mat<S> out = deq_block(z, x, ctx, p, drop);
    detail::sub_inplace(out, z);
    return out;
  };
  BroydenResult<S> result = broyden_solve<S>(residual, Mat<S>(x.rows(), x.cols()), cfg.max_iter,
                                             cfg.tol_forward);
  if (diag) {
    diag->forward_iters = result.iters;
    diag->forward_residual = static_cast<double>(result.residual_norm);
    diag->forward_converged = result.converged;
  }
  return std::move(result.z);
}

// Implicit-differentiation backward: solves the adjoint system
// u = grad_out + J_f(z*)^T u with Broyden (J^T-vector products are block VJPs
// at the frozen fixed point), then takes one VJP with upstream u to obtain
// parameter and injection gradients.
template <class S>
Mat<S> deq_backward(const Mat<S>& z_star, const Mat<S>& x, const GraphContext<S>& ctx,
                    const DeqParams<S>& p, const SharedDropoutState* drop, const Mat<S>& grad_out,
                    const SolverConfig<S>& cfg, DeqGrads<S> acc, DeqDiagnostics* diag = nullptr) {
  DeqTape<S> tape;
  (void)deq_block(z_star, x, ctx, p, drop, &tape);

  // scratch accumulators for the J^T-vector products (discarded)
  DeqParams<S> scratch_params;
  DeqGrads<S> scratch;
  LinearParams<S> s_c1w, s_c2w, s_c1e, s_c2e;
  NormParams<S> s_n1, s_n2;
  {
    MeterPause pause;
    auto shape_like = [](const LinearParams<S>& src) {
      LinearParams<S> out;
      out.weight = Mat<S>(src.weight.rows(), src.weight.cols());
      out.bias = Mat<S>(1, src.bias.cols());
      return out;
    };
    s_c1w = shape_like(p.conv1.conv);
    s_c2w = shape_like(p.conv2.conv);
    if (p.conv1.edge_proj.has_value()) s_c1e = shape_like(*p.conv1.edge_proj);
    if (p.conv2.edge_proj.has_value()) s_c2e = shape_like(*p.conv2.edge_proj);
    s_n1.scale = Mat<S>(1, p.norm1.scale.cols());
    s_n1.shift = Mat<S>(1, p.norm1.shift.cols());
    s_n2.scale = Mat<S>(1, p.norm2.scale.cols());
    s_n2.shift = Mat<S>(1, p.norm2.shift.cols());
  }
  scratch.c1.conv = &s_c1w;
  scratch.c2.conv = &s_c2w;
  scratch.c1.edge_proj = p.conv1.edge_proj.has_value() ? &s_c1e : nullptr;
  scratch.c2.edge_proj = p.conv2.edge_proj.has_value() ? &s_c2e : nullptr;
  scratch.norm1 = &s_n1;
  scratch.norm2 = &s_n2;

  auto adjoint_residual = [&](const Mat<S>& u) {
    Mat<S> jtu = deq_block_vjp(ctx, p, drop, tape, u, scratch);
    detail::add_inplace(jtu, grad_out);
    detail::sub_inplace(jtu, u);
    return jtu;  // J^T u + g - u
  };
  BroydenResult<S> adj = broyden_solve<S>(adjoint_residual, grad_out, cfg.max_iter, cfg.tol_backward);
  if (diag) {
    diag->backward_iters = adj.iters;
    diag->backward_residual = static_cast<double>(adj.residual_norm);
    diag->backward_converged = adj.converged;
  }

  // one real VJP with the adjoint as upstream
  return deq_block_vjp(ctx, p, drop, tape, adj.z, acc);
}

}  // namespace revgnn
